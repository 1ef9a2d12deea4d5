#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csrec/seqmodel.hpp"

namespace csrec::teacher {

using corpus::SequenceSample;
using seqmodel::ModelConfig;
using seqmodel::Parameter;
using seqmodel::RecommenderModel;
using seqmodel::TrainConfig;
using seqmodel::TrainTrace;

// sum_k P_k (log P_k - log max(Q_k, 1e-12)), with 0 log 0 = 0. Inputs must be
// probability vectors of equal length.
double kl_divergence(const Eigen::Ref<const RowVector>& p, const Eigen::Ref<const RowVector>& q);

// Low-rank global noise matrix: h(., j) = softmax over the observed item i of
// (M N)(., j), so every column is P(observed | latent j).
class NoiseModel {
 public:
  NoiseModel(int num_items, int dim, std::uint64_t seed);

  int num_items() const { return num_items_; }
  int dim() const { return dim_; }
  Parameter& m() { return m_; }
  Parameter& n() { return n_; }
  const Parameter& m() const { return m_; }
  const Parameter& n() const { return n_; }

  // |I| x |I| matrix with entry (i-1, j-1) = log h_{i,j}, floored at log 1e-12.
  // `floored`, when given, receives 1 where the floor was applied.
  Matrix log_h(Eigen::ArrayXXd* floored = nullptr) const;
  Matrix h() const;

 private:
  int num_items_;
  int dim_;
  Parameter m_;  // |I| x d
  Parameter n_;  // d x |I|
};

struct RobustLossTerms {
  double kl_side_main = 0.0;  // KL(P_g2 || P_g1)
  double kl_main_side = 0.0;  // KL(P_g1 || P_g2)
  double expectation = 0.0;   // -sum_j log(h_{i,j}) P_g1(j)
  double value = 0.0;
};

// alpha KL(P_g2||P_g1) + (1-alpha) KL(P_g1||P_g2) - sum_j log(h_{i,j}) P_g1(j),
// the last term dropped when `expectation_term` is false.
RobustLossTerms robust_loss_terms(const Eigen::Ref<const RowVector>& logits_main,
                                  const Eigen::Ref<const RowVector>& logits_side, ItemId target,
                                  const Matrix& log_h, double alpha, bool expectation_term = true);
double robust_loss(const Eigen::Ref<const RowVector>& logits_main,
                   const Eigen::Ref<const RowVector>& logits_side, ItemId target,
                   const NoiseModel& noise, double alpha, bool expectation_term = true);

// Gradient of robust_loss with respect to the main-teacher logits.
RowVector robust_loss_grad(const Eigen::Ref<const RowVector>& logits_main,
                           const Eigen::Ref<const RowVector>& logits_side, ItemId target,
                           const Matrix& log_h, double alpha, bool expectation_term = true);

// Main-teacher objective l_t = l_r + l_ce against a frozen side teacher. Owns
// the noise model's factors as extra trainable parameters.
class TrainingLevelLoss final : public seqmodel::SampleLoss {
 public:
  TrainingLevelLoss(const RecommenderModel& side, NoiseModel& noise, double alpha,
                    bool expectation_term);
  double compute(const seqmodel::BatchView& batch, const Matrix& logits, Matrix& dlogits) override;
  std::vector<Parameter*> extra_parameters() override;

  std::size_t floored_entries() const { return floored_; }
  // Terms of the last batch, per sample.
  const std::vector<RobustLossTerms>& last_terms() const { return last_terms_; }

 private:
  const RecommenderModel& side_;
  NoiseModel& noise_;
  double alpha_;
  bool expectation_;
  std::size_t floored_ = 0;
  std::vector<RobustLossTerms> last_terms_;
};

enum class Provenance : std::uint32_t {
  ModelLevel = 1,
  DataLevel = 2,
  TrainingLevel = 3,
  PopularityBaseline = 4,
};
const char* to_string(Provenance p) noexcept;

struct TeacherConfig {
  int m = 2;
  double p = 0.8;
  double alpha = 0.5;
  // Member i uses seeds[i] for init/shuffle and subsample_seeds[i] for its
  // data subsample. Training-level: index 0 = main g1, index 1 = side g2.
  std::vector<std::uint64_t> seeds;
  std::vector<std::uint64_t> subsample_seeds;
  bool expectation_term = true;
  bool average_probabilities = false;
  bool allow_duplicate_seeds = false;
  int noise_dim = 64;
  int threads = 1;

  void validate(std::size_t seeds_needed) const;
};

struct SoftLogitCache {
  Provenance provenance = Provenance::ModelLevel;
  int teacher_count = 0;
  int num_items = 0;
  std::string fingerprint;          // 64 hex chars
  std::string dataset_fingerprint;  // recorded in the sidecar
  Matrix entries;                   // one row per training sample, in sample order

  std::size_t size() const { return static_cast<std::size_t>(entries.rows()); }
};

// Ensemble predictor over member models (raw-logit mean by default).
class TeacherModule final : public seqmodel::Predictor {
 public:
  TeacherModule() = default;
  TeacherModule(std::vector<RecommenderModel> members, bool average_probabilities);

  int num_items() const override;
  Matrix predict_logits(std::span<const Sequence> batch) const override;
  const std::vector<RecommenderModel>& members() const { return members_; }

 private:
  std::vector<RecommenderModel> members_;
  bool average_probabilities_ = false;
};

struct TeacherResult {
  TeacherModule module;
  SoftLogitCache cache;
  std::vector<TrainTrace> traces;
  // Training-level only.
  std::optional<RecommenderModel> side;
  std::optional<NoiseModel> noise;
  std::size_t floored_entries = 0;
  // Which training samples each member was fit on (indices into train).
  std::vector<std::vector<std::size_t>> member_indices;
};

// Hash of the exact training samples a cache is built over.
std::string dataset_fingerprint(const std::vector<SequenceSample>& train);

SoftLogitCache build_cache(const seqmodel::Predictor& teacher,
                           const std::vector<SequenceSample>& train, Provenance provenance,
                           int teacher_count, std::string fingerprint, int batch_size = 512);

TeacherResult train_model_level(const TeacherConfig& cfg, const ModelConfig& model_cfg,
                                const TrainConfig& train_cfg,
                                const std::vector<SequenceSample>& train,
                                const std::vector<SequenceSample>& valid);
TeacherResult train_data_level(const TeacherConfig& cfg, const ModelConfig& model_cfg,
                               const TrainConfig& train_cfg,
                               const std::vector<SequenceSample>& train,
                               const std::vector<SequenceSample>& valid);
TeacherResult train_training_level(const TeacherConfig& cfg, const ModelConfig& model_cfg,
                                   const TrainConfig& train_cfg,
                                   const std::vector<SequenceSample>& train,
                                   const std::vector<SequenceSample>& valid);
// log of Laplace-smoothed training-target frequencies; one identical row per sample.
SoftLogitCache train_popularity_baseline(const std::vector<SequenceSample>& train, int num_items);

// Binary cache: magic "CSRCACHE", u32 version, u32 provenance, u64 sample
// count, u32 |I|, u32 m, 32-byte raw config fingerprint, then row-major
// little-endian f32 rows.
void save_cache(const std::string& path, const SoftLogitCache& cache);
SoftLogitCache load_cache(const std::string& path);

}  // namespace csrec::teacher
