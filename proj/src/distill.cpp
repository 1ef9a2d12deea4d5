#include <cmath>

#include <json.hpp>

#include "csrec/distill.hpp"
#include "csrec/error.hpp"
#include "csrec/numeric.hpp"

namespace csrec::distill {

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw Error(ErrorKind::Parameter, "temperature must be > 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorKind::Parameter, "beta must be in [0, 1]");
}

RowVector make_soft_labels(const Eigen::Ref<const RowVector>& teacher_logits, ItemId target,
                           double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::Parameter, "temperature must be > 0");
  if (!teacher_logits.allFinite()) throw Error(ErrorKind::Numeric, "teacher logits must be finite");
  if (target < 1 || target > teacher_logits.size())
    throw Error(ErrorKind::Input, "target outside catalog");
  RowVector r = softmax(teacher_logits / temperature);
  r[target - 1] += 1.0;
  r *= 0.5;
  return r;
}

StudentLossValue student_loss_with_grad(const Eigen::Ref<const RowVector>& student_logits,
                                        ItemId target, const Eigen::Ref<const RowVector>& soft_label,
                                        double beta, bool conventional_direction) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorKind::Parameter, "beta must be in [0, 1]");
  if (soft_label.size() != student_logits.size())
    throw Error(ErrorKind::Shape, "soft label and logits disagree on catalog size");
  StudentLossValue out;
  const double ce = seqmodel::cross_entropy_loss(student_logits, target);
  const RowVector ce_grad = seqmodel::cross_entropy_grad(student_logits, target);
  const RowVector lp = log_softmax(student_logits);
  const RowVector p = lp.array().exp();
  double kl = 0.0;
  RowVector kl_grad;
  if (conventional_direction) {
    kl = teacher::kl_divergence(soft_label, p);
    kl_grad = p - soft_label;
  } else {
    kl = teacher::kl_divergence(p, soft_label);
    const RowVector log_r = soft_label.array().max(kLogFloor).log();
    const RowVector log_ratio = lp - log_r;
    kl_grad = (p.array() * (log_ratio.array() - p.dot(log_ratio))).matrix();
  }
  out.value = (1.0 - beta) * ce + beta * kl;
  out.grad = (1.0 - beta) * ce_grad + beta * kl_grad;
  return out;
}

double student_loss(const Eigen::Ref<const RowVector>& student_logits, ItemId target,
                    const Eigen::Ref<const RowVector>& soft_label, double beta,
                    bool conventional_direction) {
  return student_loss_with_grad(student_logits, target, soft_label, beta, conventional_direction)
      .value;
}

StudentLoss::StudentLoss(const SoftLogitCache& cache, const DistillConfig& cfg)
    : cache_(cache), cfg_(cfg) {
  cfg_.validate();
}

double StudentLoss::compute(const seqmodel::BatchView& batch, const Matrix& logits,
                            Matrix& dlogits) {
  const auto B = logits.rows();
  dlogits.resize(B, logits.cols());
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const std::size_t idx = batch.indices[static_cast<std::size_t>(b)];
    const ItemId target = batch.sample(static_cast<std::size_t>(b)).target;
    const RowVector r =
        make_soft_labels(cache_.entries.row(static_cast<Eigen::Index>(idx)), target, cfg_.temperature);
    const auto loss =
        student_loss_with_grad(logits.row(b), target, r, cfg_.beta, cfg_.conventional_direction);
    total += loss.value;
    dlogits.row(b) = loss.grad / static_cast<double>(B);
  }
  return total / static_cast<double>(B);
}

void check_cache(const SoftLogitCache& cache, const std::vector<SequenceSample>& train,
                 int num_items) {
  if (cache.size() != train.size())
    throw Error(ErrorKind::Consistency, "cache has " + std::to_string(cache.size()) +
                                            " rows but the training split has " +
                                            std::to_string(train.size()) + " samples");
  if (cache.num_items != num_items || cache.entries.cols() != num_items)
    throw Error(ErrorKind::Consistency, "cache catalog size " + std::to_string(cache.num_items) +
                                            " does not match student catalog " +
                                            std::to_string(num_items));
  if (!cache.dataset_fingerprint.empty() &&
      cache.dataset_fingerprint != teacher::dataset_fingerprint(train))
    throw Error(ErrorKind::Consistency, "cache was built over a different training split");
  if (!cache.entries.allFinite()) throw Error(ErrorKind::Consistency, "cache holds non-finite logits");
}

namespace {

StudentResult fit_fresh(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        std::uint64_t seed, const std::vector<SequenceSample>& train,
                        const std::vector<SequenceSample>& valid, seqmodel::SampleLoss& loss) {
  ModelConfig mc = model_cfg;
  mc.seed = seed;
  TrainConfig tc = train_cfg;
  tc.seed = seed;
  StudentResult result{RecommenderModel(mc), {}};
  result.trace = seqmodel::fit(result.model, train, valid, tc, loss);
  return result;
}

}  // namespace

StudentResult train_student(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            const SoftLogitCache& cache, const DistillConfig& cfg,
                            const std::vector<SequenceSample>& train,
                            const std::vector<SequenceSample>& valid) {
  cfg.validate();
  check_cache(cache, train, model_cfg.num_items);
  StudentLoss loss(cache, cfg);
  return fit_fresh(model_cfg, train_cfg, cfg.seed, train, valid, loss);
}

StudentResult train_base(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         std::uint64_t seed, const std::vector<SequenceSample>& train,
                         const std::vector<SequenceSample>& valid) {
  seqmodel::CrossEntropyLoss loss;
  return fit_fresh(model_cfg, train_cfg, seed, train, valid, loss);
}

std::string run_manifest_json(const SoftLogitCache& cache, const DistillConfig& cfg) {
  nlohmann::json j;
  j["cache_fingerprint"] = cache.fingerprint;
  j["dataset_fingerprint"] = cache.dataset_fingerprint;
  j["provenance"] = teacher::to_string(cache.provenance);
  j["temperature"] = cfg.temperature;
  j["beta"] = cfg.beta;
  j["seed"] = cfg.seed;
  j["kl_direction"] = cfg.conventional_direction ? "teacher_first" : "student_first";
  return j.dump(2);
}

}  // namespace csrec::distill
