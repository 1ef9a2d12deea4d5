#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csrec/seqmodel.hpp"
#include "csrec/teacher.hpp"

namespace csrec::distill {

using corpus::SequenceSample;
using seqmodel::ModelConfig;
using seqmodel::RecommenderModel;
using seqmodel::TrainConfig;
using seqmodel::TrainTrace;
using teacher::SoftLogitCache;

struct DistillConfig {
  double temperature = 3.0;
  double beta = 0.5;
  std::uint64_t seed = 0;
  // KL(r || P_f) instead of KL(P_f || r).
  bool conventional_direction = false;

  void validate() const;
};

// r_u = (softmax(e_u / T) + onehot(target)) / 2.
RowVector make_soft_labels(const Eigen::Ref<const RowVector>& teacher_logits, ItemId target,
                           double temperature);

struct StudentLossValue {
  double value = 0.0;
  RowVector grad;  // d value / d student logits
};

// (1 - beta) CE(logits, target) + beta KL(P_f || r_u).
StudentLossValue student_loss_with_grad(const Eigen::Ref<const RowVector>& student_logits,
                                        ItemId target, const Eigen::Ref<const RowVector>& soft_label,
                                        double beta, bool conventional_direction = false);
double student_loss(const Eigen::Ref<const RowVector>& student_logits, ItemId target,
                    const Eigen::Ref<const RowVector>& soft_label, double beta,
                    bool conventional_direction = false);

// Builds soft labels per batch from cached teacher logits, indexed by the
// training-sample position.
class StudentLoss final : public seqmodel::SampleLoss {
 public:
  StudentLoss(const SoftLogitCache& cache, const DistillConfig& cfg);
  double compute(const seqmodel::BatchView& batch, const Matrix& logits, Matrix& dlogits) override;

 private:
  const SoftLogitCache& cache_;
  DistillConfig cfg_;
};

// Throws Consistency unless the cache has one row per training sample, the
// student's catalog size, and (when recorded) the same dataset fingerprint.
void check_cache(const SoftLogitCache& cache, const std::vector<SequenceSample>& train,
                 int num_items);

struct StudentResult {
  RecommenderModel model;
  TrainTrace trace;
};

// Fresh student; model_cfg.seed and train_cfg.seed are overridden by cfg.seed.
StudentResult train_student(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            const SoftLogitCache& cache, const DistillConfig& cfg,
                            const std::vector<SequenceSample>& train,
                            const std::vector<SequenceSample>& valid);

// Base: the same student with plain cross entropy.
StudentResult train_base(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         std::uint64_t seed, const std::vector<SequenceSample>& train,
                         const std::vector<SequenceSample>& valid);

// JSON run manifest: cache fingerprint, T, beta, seed, direction.
std::string run_manifest_json(const SoftLogitCache& cache, const DistillConfig& cfg);

}  // namespace csrec::distill
