#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "csrec/error.hpp"
#include "csrec/numeric.hpp"
#include "csrec/seqmodel.hpp"

namespace csrec::seqmodel {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::Parameter, "learning_rate must be > 0");
  if (early_stop_patience < 1) throw Error(ErrorKind::Parameter, "patience must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::Parameter, "batch_size must be >= 1");
  if (max_epochs < 1) throw Error(ErrorKind::Parameter, "max_epochs must be >= 1");
}

double CrossEntropyLoss::compute(const BatchView& batch, const Matrix& logits, Matrix& dlogits) {
  const auto B = logits.rows();
  dlogits.resize(B, logits.cols());
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const ItemId target = batch.sample(static_cast<std::size_t>(b)).target;
    total += cross_entropy_loss(logits.row(b), target);
    dlogits.row(b) = cross_entropy_grad(logits.row(b), target) / static_cast<double>(B);
  }
  return total / static_cast<double>(B);
}

Adam::Adam(std::vector<Parameter*> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      lr_(cfg.learning_rate),
      b1_(cfg.adam_beta1),
      b2_(cfg.adam_beta2),
      eps_(cfg.adam_eps) {
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i]->grad.array();
    m_[i].array() = b1_ * m_[i].array() + (1.0 - b1_) * g;
    v_[i].array() = b2_ * v_[i].array() + (1.0 - b2_) * g.square();
    params_[i]->value.array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double validation_ndcg10(const Predictor& model, const std::vector<SequenceSample>& samples,
                         int batch_size) {
  if (samples.empty()) throw Error(ErrorKind::UndefinedMetric, "empty validation set");
  double gain = 0.0;
  std::vector<Sequence> seqs;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    seqs.clear();
    for (std::size_t i = start; i < end; ++i) seqs.push_back(samples[i].sequence);
    const Matrix logits = model.predict_logits(seqs);
    for (std::size_t i = start; i < end; ++i) {
      const int rank = rank_of(logits.row(static_cast<Eigen::Index>(i - start)), samples[i].target);
      if (rank <= 10) gain += 1.0 / std::log2(rank + 1.0);
    }
  }
  return gain / static_cast<double>(samples.size());
}

namespace {

std::vector<Matrix> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore(const std::vector<Parameter*>& params, const std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

TrainTrace fit(RecommenderModel& model, const std::vector<SequenceSample>& train,
               const std::vector<SequenceSample>& valid, const TrainConfig& cfg,
               SampleLoss& loss, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty() || valid.empty())
    throw Error(ErrorKind::Training, "fit needs nonempty train and valid sets");
  std::vector<Parameter*> params = model.parameters();
  const std::vector<Parameter*> extra = loss.extra_parameters();
  params.insert(params.end(), extra.begin(), extra.end());
  Adam optimizer(params, cfg);
  Rng rng(cfg.seed);

  TrainTrace trace;
  trace.best_valid_ndcg10 = -1.0;
  std::vector<Matrix> best = snapshot(params);
  int since_best = 0;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Sequence> seqs;
  Matrix dlogits;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> idx(order.data() + start, end - start);
      seqs.clear();
      for (std::size_t i : idx) seqs.push_back(train[i].sequence);
      for (Parameter* p : params) p->grad.setZero();
      const Matrix logits = model.forward_train(seqs, rng);
      const BatchView view{&train, idx, seqs};
      const double batch_loss = loss.compute(view, logits, dlogits);
      if (!std::isfinite(batch_loss) || !dlogits.allFinite())
        throw Error(ErrorKind::Training, "loss became non-finite at epoch " + std::to_string(epoch));
      model.backward(dlogits);
      optimizer.step();
      loss_sum += batch_loss * static_cast<double>(idx.size());
      seen += idx.size();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.valid_ndcg10 = validation_ndcg10(model, valid, cfg.eval_batch_size);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    trace.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.valid_ndcg10 > trace.best_valid_ndcg10) {
      trace.best_valid_ndcg10 = rec.valid_ndcg10;
      trace.best_epoch = epoch;
      best = snapshot(params);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  restore(params, best);
  for (Parameter* p : params) p->grad.setZero();
  return trace;
}

void write_trace_csv(const std::string& path, const TrainTrace& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << "epoch,train_loss,valid_ndcg10,wall_seconds\n" << std::setprecision(17);
  for (const auto& e : trace.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.valid_ndcg10 << ',' << e.wall_seconds << '\n';
}

TrainTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  TrainTrace trace;
  trace.best_valid_ndcg10 = -1.0;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EpochRecord e;
    char comma = 0;
    ls >> e.epoch >> comma >> e.train_loss >> comma >> e.valid_ndcg10 >> comma >> e.wall_seconds;
    if (!ls) throw Error(ErrorKind::Parse, path + ": malformed trace row");
    trace.epochs.push_back(e);
    if (e.valid_ndcg10 > trace.best_valid_ndcg10) {
      trace.best_valid_ndcg10 = e.valid_ndcg10;
      trace.best_epoch = e.epoch;
    }
  }
  return trace;
}

}  // namespace csrec::seqmodel
