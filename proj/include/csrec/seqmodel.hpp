#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "csrec/corpus.hpp"
#include "csrec/types.hpp"

namespace csrec::seqmodel {

using corpus::SequenceSample;
using Rng = std::mt19937_64;

enum class Architecture : std::uint32_t { Recurrent = 1, SelfAttention = 2 };
const char* to_string(Architecture arch) noexcept;
Architecture architecture_from_string(const std::string& name);

struct ModelConfig {
  Architecture architecture = Architecture::Recurrent;
  int num_items = 0;
  int dim = 64;
  int max_len = 20;
  // Negative selects the encoder default: 0.5 recurrent, 0.3 self-attention.
  double dropout = -1.0;
  bool tie_weights = true;
  int heads = 2;
  int gru_layers = 1;
  std::uint64_t seed = 0;

  double effective_dropout() const;
};

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}
};

// Batch of right-aligned inputs: step t holds the item embedding of position
// t for every sequence; mask(b, t) is 1 for real items.
struct EncoderInput {
  std::vector<Matrix> steps;
  Eigen::ArrayXXd mask;  // batch x max_len
};

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Matrix encode(const EncoderInput& input) const = 0;
  // Training pass: applies dropout and keeps activations for backward().
  virtual Matrix encode_train(const EncoderInput& input, Rng& rng) = 0;
  // Accumulates parameter gradients; returns gradients for each input step.
  virtual std::vector<Matrix> backward(const Matrix& dstate) = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::unique_ptr<Encoder> clone() const = 0;
};

std::unique_ptr<Encoder> make_gru_encoder(const ModelConfig& cfg, Rng& init_rng);
std::unique_ptr<Encoder> make_attention_encoder(const ModelConfig& cfg, Rng& init_rng);

// Anything that maps sequences to full-catalog logits.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual int num_items() const = 0;
  virtual Matrix predict_logits(std::span<const Sequence> batch) const = 0;
};

// Sequence -> |I| logits (item k at column k - 1). Item embedding row 0 is the
// padding row and is held at zero.
class RecommenderModel : public Predictor {
 public:
  explicit RecommenderModel(const ModelConfig& cfg);
  RecommenderModel(const RecommenderModel& other);
  RecommenderModel& operator=(const RecommenderModel& other);
  RecommenderModel(RecommenderModel&&) noexcept = default;
  RecommenderModel& operator=(RecommenderModel&&) noexcept = default;
  ~RecommenderModel() override;

  const ModelConfig& config() const { return cfg_; }
  int num_items() const override { return cfg_.num_items; }

  RowVector forward(const Sequence& sequence) const;
  Matrix forward(std::span<const Sequence> batch) const;
  Matrix predict_logits(std::span<const Sequence> batch) const override { return forward(batch); }

  Matrix forward_train(std::span<const Sequence> batch, Rng& rng);
  void backward(const Matrix& dlogits);

  // Fixed order: item_embedding, output_bias, [output_weight], encoder params.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();
  std::size_t parameter_count() const;

 private:
  EncoderInput embed(std::span<const Sequence> batch) const;
  Matrix project(const Matrix& state) const;

  ModelConfig cfg_;
  Parameter item_embedding_;
  Parameter output_bias_;
  Parameter output_weight_;  // d x |I|, unused when tied
  std::unique_ptr<Encoder> encoder_;
  // Training cache.
  Matrix state_;
  std::vector<std::vector<ItemId>> batch_ids_;
};

// Strips leading padding and validates ids; throws Input on malformed input.
Sequence normalize_sequence(const Sequence& sequence, int num_items, int max_len);

double cross_entropy_loss(const Eigen::Ref<const RowVector>& logits, ItemId target);
// d loss / d logits = softmax(logits) - onehot(target).
RowVector cross_entropy_grad(const Eigen::Ref<const RowVector>& logits, ItemId target);

// Descending logit, ties by ascending item id.
std::vector<ItemId> top_n(const Eigen::Ref<const RowVector>& logits, int n);
std::vector<ItemId> predict_topn(const Predictor& model, const Sequence& sequence, int n);
// 1-based rank of `target` under the same ordering.
int rank_of(const Eigen::Ref<const RowVector>& logits, ItemId target);

struct TrainConfig {
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 256;
  int max_epochs = 100;
  int early_stop_patience = 10;
  int eval_batch_size = 512;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_ndcg10 = 0.0;
  double wall_seconds = 0.0;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_valid_ndcg10 = 0.0;
};

struct BatchView {
  const std::vector<SequenceSample>* samples = nullptr;
  std::span<const std::size_t> indices;
  std::span<const Sequence> sequences;

  const SequenceSample& sample(std::size_t b) const { return (*samples)[indices[b]]; }
};

// Pluggable per-sample loss. compute() returns the batch mean and writes the
// gradient of that mean with respect to the logits.
class SampleLoss {
 public:
  virtual ~SampleLoss() = default;
  virtual double compute(const BatchView& batch, const Matrix& logits, Matrix& dlogits) = 0;
  // Parameters owned by the loss that the optimizer also updates.
  virtual std::vector<Parameter*> extra_parameters() { return {}; }
};

class CrossEntropyLoss final : public SampleLoss {
 public:
  double compute(const BatchView& batch, const Matrix& logits, Matrix& dlogits) override;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, const TrainConfig& cfg);
  void step();

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch Adam on the mean sample loss, early-stopped on validation
// NDCG@10. The model is left at its best-validation parameters.
TrainTrace fit(RecommenderModel& model, const std::vector<SequenceSample>& train,
               const std::vector<SequenceSample>& valid, const TrainConfig& cfg,
               SampleLoss& loss, const EpochCallback& on_epoch = {});

double validation_ndcg10(const Predictor& model, const std::vector<SequenceSample>& samples,
                         int batch_size = 512);

void write_trace_csv(const std::string& path, const TrainTrace& trace);
TrainTrace read_trace_csv(const std::string& path);

// Binary checkpoint: magic "CSRECKPT", u32 version, u32 architecture,
// u32 |I|, u32 d, u32 L, u32 heads, u32 gru_layers, u32 tie_weights,
// f32 dropout, u64 seed, u64 parameter count, then parameters in
// parameters() order as row-major little-endian f32.
void save_checkpoint(const std::string& path, const RecommenderModel& model);
RecommenderModel load_checkpoint(const std::string& path);

}  // namespace csrec::seqmodel
