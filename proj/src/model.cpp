#include <algorithm>
#include <cmath>
#include <numeric>

#include "csrec/error.hpp"
#include "csrec/numeric.hpp"
#include "csrec/seqmodel.hpp"

namespace csrec::seqmodel {

const char* to_string(Architecture arch) noexcept {
  return arch == Architecture::Recurrent ? "recurrent" : "self_attention";
}

Architecture architecture_from_string(const std::string& name) {
  if (name == "recurrent" || name == "gru") return Architecture::Recurrent;
  if (name == "self_attention" || name == "attention") return Architecture::SelfAttention;
  throw Error(ErrorKind::Usage, "unknown architecture '" + name + "'");
}

double ModelConfig::effective_dropout() const {
  if (dropout >= 0.0) return dropout;
  return architecture == Architecture::Recurrent ? 0.5 : 0.3;
}

namespace {

void validate(const ModelConfig& cfg) {
  if (cfg.num_items < 1) throw Error(ErrorKind::Parameter, "model needs at least one item");
  if (cfg.dim < 1) throw Error(ErrorKind::Parameter, "embedding size must be positive");
  if (cfg.max_len < 1) throw Error(ErrorKind::Parameter, "max_len must be positive");
  if (cfg.effective_dropout() >= 1.0) throw Error(ErrorKind::Parameter, "dropout must be < 1");
  if (cfg.gru_layers < 1) throw Error(ErrorKind::Parameter, "gru_layers must be >= 1");
}

}  // namespace

RecommenderModel::RecommenderModel(const ModelConfig& cfg)
    : cfg_(cfg),
      item_embedding_("item_embedding", cfg.num_items + 1, cfg.dim),
      output_bias_("output_bias", 1, cfg.num_items) {
  validate(cfg);
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.dim)));
  for (Eigen::Index r = 1; r < item_embedding_.value.rows(); ++r)
    for (Eigen::Index c = 0; c < item_embedding_.value.cols(); ++c)
      item_embedding_.value(r, c) = normal(rng);
  if (!cfg.tie_weights) {
    output_weight_ = Parameter("output_weight", cfg.dim, cfg.num_items);
    for (Eigen::Index i = 0; i < output_weight_.value.size(); ++i)
      output_weight_.value.data()[i] = normal(rng);
  }
  encoder_ = cfg.architecture == Architecture::Recurrent ? make_gru_encoder(cfg, rng)
                                                         : make_attention_encoder(cfg, rng);
}

RecommenderModel::RecommenderModel(const RecommenderModel& other)
    : cfg_(other.cfg_),
      item_embedding_(other.item_embedding_),
      output_bias_(other.output_bias_),
      output_weight_(other.output_weight_),
      encoder_(other.encoder_->clone()) {}

RecommenderModel& RecommenderModel::operator=(const RecommenderModel& other) {
  if (this != &other) {
    RecommenderModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

RecommenderModel::~RecommenderModel() = default;

Sequence normalize_sequence(const Sequence& sequence, int num_items, int max_len) {
  std::size_t first = 0;
  while (first < sequence.size() && sequence[first] == kPadding) ++first;
  Sequence items(sequence.begin() + static_cast<std::ptrdiff_t>(first), sequence.end());
  for (ItemId i : items) {
    if (i == kPadding)
      throw Error(ErrorKind::Input, "padding id inside the non-padding region of a sequence");
    if (i < 0 || i > num_items)
      throw Error(ErrorKind::Input, "item id " + std::to_string(i) + " outside [0, " +
                                        std::to_string(num_items) + "]");
  }
  if (static_cast<int>(items.size()) > max_len)
    throw Error(ErrorKind::Input, "sequence has " + std::to_string(items.size()) +
                                      " items, model max_len is " + std::to_string(max_len));
  return items;
}

EncoderInput RecommenderModel::embed(std::span<const Sequence> batch) const {
  const auto B = static_cast<Eigen::Index>(batch.size());
  const int L = cfg_.max_len;
  EncoderInput in;
  in.mask = Eigen::ArrayXXd::Zero(B, L);
  in.steps.assign(static_cast<std::size_t>(L), Matrix::Zero(B, cfg_.dim));
  for (Eigen::Index b = 0; b < B; ++b) {
    const Sequence items = normalize_sequence(batch[static_cast<std::size_t>(b)], cfg_.num_items, L);
    const int offset = L - static_cast<int>(items.size());
    for (std::size_t j = 0; j < items.size(); ++j) {
      const int t = offset + static_cast<int>(j);
      in.mask(b, t) = 1.0;
      in.steps[static_cast<std::size_t>(t)].row(b) = item_embedding_.value.row(items[j]);
    }
  }
  return in;
}

Matrix RecommenderModel::project(const Matrix& state) const {
  Matrix logits(state.rows(), cfg_.num_items);
  if (cfg_.tie_weights)
    logits.noalias() = state * item_embedding_.value.bottomRows(cfg_.num_items).transpose();
  else
    logits.noalias() = state * output_weight_.value;
  logits.rowwise() += output_bias_.value.row(0);
  return logits;
}

RowVector RecommenderModel::forward(const Sequence& sequence) const {
  return forward(std::span<const Sequence>(&sequence, 1)).row(0);
}

Matrix RecommenderModel::forward(std::span<const Sequence> batch) const {
  return project(encoder_->encode(embed(batch)));
}

Matrix RecommenderModel::forward_train(std::span<const Sequence> batch, Rng& rng) {
  batch_ids_.clear();
  for (const auto& s : batch) batch_ids_.push_back(normalize_sequence(s, cfg_.num_items, cfg_.max_len));
  state_ = encoder_->encode_train(embed(batch), rng);
  return project(state_);
}

void RecommenderModel::backward(const Matrix& dlogits) {
  const int n = cfg_.num_items;
  output_bias_.grad += dlogits.colwise().sum();
  Matrix dstate;
  if (cfg_.tie_weights) {
    auto items = item_embedding_.value.bottomRows(n);
    dstate.noalias() = dlogits * items;
    item_embedding_.grad.bottomRows(n).noalias() += dlogits.transpose() * state_;
  } else {
    dstate.noalias() = dlogits * output_weight_.value.transpose();
    output_weight_.grad.noalias() += state_.transpose() * dlogits;
  }
  const std::vector<Matrix> dsteps = encoder_->backward(dstate);
  const int L = cfg_.max_len;
  for (std::size_t b = 0; b < batch_ids_.size(); ++b) {
    const auto& items = batch_ids_[b];
    const int offset = L - static_cast<int>(items.size());
    for (std::size_t j = 0; j < items.size(); ++j)
      item_embedding_.grad.row(items[j]) +=
          dsteps[static_cast<std::size_t>(offset) + j].row(static_cast<Eigen::Index>(b));
  }
  item_embedding_.grad.row(0).setZero();
}

std::vector<Parameter*> RecommenderModel::parameters() {
  std::vector<Parameter*> out{&item_embedding_, &output_bias_};
  if (!cfg_.tie_weights) out.push_back(&output_weight_);
  for (Parameter* p : encoder_->parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> RecommenderModel::parameters() const {
  auto mutable_params = const_cast<RecommenderModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

void RecommenderModel::zero_grad() {
  for (Parameter* p : parameters()) p->grad.setZero();
}

std::size_t RecommenderModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

double cross_entropy_loss(const Eigen::Ref<const RowVector>& logits, ItemId target) {
  if (target < 1 || target > logits.size())
    throw Error(ErrorKind::Input, "target " + std::to_string(target) + " outside catalog");
  if (!logits.allFinite()) throw Error(ErrorKind::Numeric, "non-finite logits in cross entropy");
  return logsumexp(logits) - logits[target - 1];
}

RowVector cross_entropy_grad(const Eigen::Ref<const RowVector>& logits, ItemId target) {
  RowVector g = softmax(logits);
  g[target - 1] -= 1.0;
  return g;
}

std::vector<ItemId> top_n(const Eigen::Ref<const RowVector>& logits, int n) {
  const auto size = static_cast<int>(logits.size());
  if (n < 1 || n > size) throw Error(ErrorKind::Parameter, "top-n cutoff outside [1, |I|]");
  std::vector<ItemId> ids(static_cast<std::size_t>(size));
  std::iota(ids.begin(), ids.end(), ItemId{1});
  auto better = [&](ItemId a, ItemId b) {
    const double la = logits[a - 1], lb = logits[b - 1];
    return la != lb ? la > lb : a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + n, ids.end(), better);
  ids.resize(static_cast<std::size_t>(n));
  return ids;
}

std::vector<ItemId> predict_topn(const Predictor& model, const Sequence& sequence, int n) {
  const Matrix logits = model.predict_logits(std::span<const Sequence>(&sequence, 1));
  return top_n(logits.row(0), n);
}

int rank_of(const Eigen::Ref<const RowVector>& logits, ItemId target) {
  if (target < 1 || target > logits.size())
    throw Error(ErrorKind::Input, "target outside catalog");
  const double t = logits[target - 1];
  int rank = 1;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    const double v = logits[k];
    if (v > t || (v == t && k < target - 1)) ++rank;
  }
  return rank;
}

}  // namespace csrec::seqmodel
