#include <algorithm>
#include <cmath>
#include <future>
#include <set>

#include "csrec/error.hpp"
#include "csrec/hashing.hpp"
#include "csrec/numeric.hpp"
#include "csrec/teacher.hpp"

namespace csrec::teacher {

const char* to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::ModelLevel: return "model_level";
    case Provenance::DataLevel: return "data_level";
    case Provenance::TrainingLevel: return "training_level";
    case Provenance::PopularityBaseline: return "popularity_baseline";
  }
  return "?";
}

void TeacherConfig::validate(std::size_t seeds_needed) const {
  if (m < 1) throw Error(ErrorKind::Parameter, "teacher count m must be >= 1");
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorKind::Parameter, "subsample ratio p must be in (0, 1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::Parameter, "alpha must be in [0, 1]");
  if (seeds.size() < seeds_needed)
    throw Error(ErrorKind::Parameter, "teacher config needs " + std::to_string(seeds_needed) +
                                          " member seeds, got " + std::to_string(seeds.size()));
  if (!allow_duplicate_seeds) {
    const std::set<std::uint64_t> distinct(seeds.begin(), seeds.begin() + static_cast<std::ptrdiff_t>(seeds_needed));
    if (distinct.size() != seeds_needed)
      throw Error(ErrorKind::Parameter, "teacher member seeds must be distinct");
  }
}

TeacherModule::TeacherModule(std::vector<RecommenderModel> members, bool average_probabilities)
    : members_(std::move(members)), average_probabilities_(average_probabilities) {
  if (members_.empty()) throw Error(ErrorKind::Parameter, "teacher module needs members");
}

int TeacherModule::num_items() const { return members_.front().num_items(); }

Matrix TeacherModule::predict_logits(std::span<const Sequence> batch) const {
  const double inv_m = 1.0 / static_cast<double>(members_.size());
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(batch.size()), num_items());
  for (const auto& member : members_) {
    const Matrix logits = member.forward(batch);
    if (average_probabilities_)
      out += softmax_rows(logits);
    else
      out += logits;
  }
  out *= inv_m;
  if (average_probabilities_) out = out.array().max(kLogFloor).log().matrix();
  return out;
}

std::string dataset_fingerprint(const std::vector<SequenceSample>& train) {
  Sha256 h;
  h.update("csrec-train-samples-v1");
  for (const auto& s : train) {
    h.update_pod(s.user_id);
    h.update_pod(s.target);
    const auto n = static_cast<std::uint64_t>(s.sequence.size());
    h.update_pod(n);
    h.update(std::as_bytes(std::span<const ItemId>(s.sequence)));
  }
  return h.hex_digest();
}

SoftLogitCache build_cache(const seqmodel::Predictor& teacher,
                           const std::vector<SequenceSample>& train, Provenance provenance,
                           int teacher_count, std::string fingerprint, int batch_size) {
  SoftLogitCache cache;
  cache.provenance = provenance;
  cache.teacher_count = teacher_count;
  cache.num_items = teacher.num_items();
  cache.fingerprint = std::move(fingerprint);
  cache.dataset_fingerprint = dataset_fingerprint(train);
  cache.entries.resize(static_cast<Eigen::Index>(train.size()), cache.num_items);
  std::vector<Sequence> seqs;
  for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(batch_size));
    seqs.clear();
    for (std::size_t i = start; i < end; ++i) seqs.push_back(train[i].sequence);
    cache.entries.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        teacher.predict_logits(seqs);
  }
  if (!cache.entries.allFinite()) throw Error(ErrorKind::Teacher, "teacher produced non-finite logits");
  return cache;
}

namespace {

std::string config_fingerprint(const TeacherConfig& cfg, const ModelConfig& model_cfg,
                               const TrainConfig& train_cfg, Provenance provenance,
                               const std::string& data_fp) {
  Sha256 h;
  h.update("csrec-teacher-v1").update(data_fp);
  h.update_pod(static_cast<std::uint32_t>(provenance));
  h.update_pod(cfg.m).update_pod(cfg.p).update_pod(cfg.alpha).update_pod(cfg.noise_dim);
  h.update_pod(static_cast<std::uint8_t>(cfg.expectation_term));
  h.update_pod(static_cast<std::uint8_t>(cfg.average_probabilities));
  for (auto s : cfg.seeds) h.update_pod(s);
  for (auto s : cfg.subsample_seeds) h.update_pod(s);
  h.update_pod(static_cast<std::uint32_t>(model_cfg.architecture)).update_pod(model_cfg.dim);
  h.update_pod(model_cfg.max_len).update_pod(model_cfg.dropout).update_pod(model_cfg.heads);
  h.update_pod(model_cfg.gru_layers).update_pod(static_cast<std::uint8_t>(model_cfg.tie_weights));
  h.update_pod(train_cfg.learning_rate).update_pod(train_cfg.batch_size);
  h.update_pod(train_cfg.max_epochs).update_pod(train_cfg.early_stop_patience);
  return h.hex_digest();
}

ModelConfig member_model(const ModelConfig& base, std::uint64_t seed) {
  ModelConfig cfg = base;
  cfg.seed = seed;
  return cfg;
}

TrainConfig member_train(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig cfg = base;
  cfg.seed = seed;
  return cfg;
}

struct MemberOutput {
  std::optional<RecommenderModel> model;
  TrainTrace trace;
};

// Fits independent members, at most `threads` at a time. Members never share
// state, so results do not depend on the thread count.
template <typename Fn>
std::vector<MemberOutput> fit_members(int count, int threads, Fn fit_one) {
  std::vector<MemberOutput> out(static_cast<std::size_t>(count));
  const int width = std::max(1, threads);
  for (int start = 0; start < count; start += width) {
    std::vector<std::future<void>> jobs;
    for (int k = start; k < std::min(count, start + width); ++k) {
      auto job = [&, k] {
        try {
          out[static_cast<std::size_t>(k)] = fit_one(k);
        } catch (const Error& e) {
          throw Error(ErrorKind::Teacher, "teacher member " + std::to_string(k) + ": " + e.what());
        }
      };
      if (width == 1)
        job();
      else
        jobs.push_back(std::async(std::launch::async, job));
    }
    for (auto& j : jobs) j.get();
  }
  return out;
}

TeacherResult assemble(std::vector<MemberOutput> members, const TeacherConfig& cfg,
                       Provenance provenance, std::string fingerprint,
                       const std::vector<SequenceSample>& train) {
  TeacherResult result;
  std::vector<RecommenderModel> models;
  for (auto& m : members) {
    models.push_back(std::move(*m.model));
    result.traces.push_back(std::move(m.trace));
  }
  result.module = TeacherModule(std::move(models), cfg.average_probabilities);
  result.cache = build_cache(result.module, train, provenance, cfg.m, std::move(fingerprint));
  return result;
}

}  // namespace

TeacherResult train_model_level(const TeacherConfig& cfg, const ModelConfig& model_cfg,
                                const TrainConfig& train_cfg,
                                const std::vector<SequenceSample>& train,
                                const std::vector<SequenceSample>& valid) {
  cfg.validate(static_cast<std::size_t>(cfg.m));
  auto members = fit_members(cfg.m, cfg.threads, [&](int k) {
    const auto seed = cfg.seeds[static_cast<std::size_t>(k)];
    MemberOutput out;
    out.model.emplace(member_model(model_cfg, seed));
    seqmodel::CrossEntropyLoss ce;
    out.trace = seqmodel::fit(*out.model, train, valid, member_train(train_cfg, seed), ce);
    return out;
  });
  auto fp = config_fingerprint(cfg, model_cfg, train_cfg, Provenance::ModelLevel,
                               dataset_fingerprint(train));
  TeacherResult result = assemble(std::move(members), cfg, Provenance::ModelLevel, fp, train);
  std::vector<std::size_t> all(train.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  result.member_indices.assign(static_cast<std::size_t>(cfg.m), all);
  return result;
}

TeacherResult train_data_level(const TeacherConfig& cfg, const ModelConfig& model_cfg,
                               const TrainConfig& train_cfg,
                               const std::vector<SequenceSample>& train,
                               const std::vector<SequenceSample>& valid) {
  cfg.validate(static_cast<std::size_t>(cfg.m));
  if (cfg.subsample_seeds.size() < static_cast<std::size_t>(cfg.m))
    throw Error(ErrorKind::Parameter, "data-level teachers need one subsample seed per member");
  std::vector<std::vector<std::size_t>> indices;
  for (int k = 0; k < cfg.m; ++k) {
    indices.push_back(corpus::subsample_indices(train.size(), cfg.p,
                                                cfg.subsample_seeds[static_cast<std::size_t>(k)]));
    if (indices.back().empty())
      throw Error(ErrorKind::Parameter, "subsample with p=" + std::to_string(cfg.p) +
                                            " leaves no training samples");
  }
  auto members = fit_members(cfg.m, cfg.threads, [&](int k) {
    const auto seed = cfg.seeds[static_cast<std::size_t>(k)];
    std::vector<SequenceSample> part;
    for (std::size_t i : indices[static_cast<std::size_t>(k)]) part.push_back(train[i]);
    MemberOutput out;
    out.model.emplace(member_model(model_cfg, seed));
    seqmodel::CrossEntropyLoss ce;
    out.trace = seqmodel::fit(*out.model, part, valid, member_train(train_cfg, seed), ce);
    return out;
  });
  auto fp = config_fingerprint(cfg, model_cfg, train_cfg, Provenance::DataLevel,
                               dataset_fingerprint(train));
  TeacherResult result = assemble(std::move(members), cfg, Provenance::DataLevel, fp, train);
  result.member_indices = std::move(indices);
  return result;
}

TeacherResult train_training_level(const TeacherConfig& cfg, const ModelConfig& model_cfg,
                                   const TrainConfig& train_cfg,
                                   const std::vector<SequenceSample>& train,
                                   const std::vector<SequenceSample>& valid) {
  cfg.validate(2);
  if (cfg.subsample_seeds.empty())
    throw Error(ErrorKind::Parameter, "training-level teachers need a subsample seed for g2");
  const auto main_seed = cfg.seeds[0];
  const auto side_seed = cfg.seeds[1];
  TeacherResult result;

  // Phase 1: side teacher on a p-subsample with cross entropy.
  const auto side_idx = corpus::subsample_indices(train.size(), cfg.p, cfg.subsample_seeds[0]);
  if (side_idx.empty()) throw Error(ErrorKind::Parameter, "side-teacher subsample is empty");
  std::vector<SequenceSample> side_part;
  for (std::size_t i : side_idx) side_part.push_back(train[i]);
  RecommenderModel side(member_model(model_cfg, side_seed));
  try {
    seqmodel::CrossEntropyLoss ce;
    result.traces.push_back(seqmodel::fit(side, side_part, valid, member_train(train_cfg, side_seed), ce));
  } catch (const Error& e) {
    throw Error(ErrorKind::Teacher, std::string("side teacher: ") + e.what());
  }

  // Phase 2: main teacher and noise model jointly under l_r + l_ce, side frozen.
  NoiseModel noise(model_cfg.num_items, cfg.noise_dim, derive_seed(main_seed, "noise"));
  RecommenderModel main_model(member_model(model_cfg, main_seed));
  TrainingLevelLoss loss(side, noise, cfg.alpha, cfg.expectation_term);
  try {
    result.traces.insert(result.traces.begin(),
                         seqmodel::fit(main_model, train, valid, member_train(train_cfg, main_seed), loss));
  } catch (const Error& e) {
    throw Error(ErrorKind::Teacher, std::string("main teacher: ") + e.what());
  }
  result.floored_entries = loss.floored_entries();

  std::vector<RecommenderModel> members;
  members.push_back(std::move(main_model));
  result.module = TeacherModule(std::move(members), false);
  auto fp = config_fingerprint(cfg, model_cfg, train_cfg, Provenance::TrainingLevel,
                               dataset_fingerprint(train));
  result.cache = build_cache(result.module, train, Provenance::TrainingLevel, 2, fp);
  std::vector<std::size_t> all(train.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  result.member_indices = {all, side_idx};
  result.side.emplace(std::move(side));
  result.noise.emplace(std::move(noise));
  return result;
}

SoftLogitCache train_popularity_baseline(const std::vector<SequenceSample>& train, int num_items) {
  if (train.empty()) throw Error(ErrorKind::EmptyInput, "popularity teacher needs training samples");
  RowVector counts = RowVector::Ones(num_items);
  for (const auto& s : train) {
    if (s.target < 1 || s.target > num_items) throw Error(ErrorKind::Input, "target outside catalog");
    counts[s.target - 1] += 1.0;
  }
  const RowVector logp = (counts / counts.sum()).array().log();
  SoftLogitCache cache;
  cache.provenance = Provenance::PopularityBaseline;
  cache.teacher_count = 1;
  cache.num_items = num_items;
  cache.dataset_fingerprint = dataset_fingerprint(train);
  Sha256 h;
  h.update("csrec-popularity-v1").update(cache.dataset_fingerprint);
  cache.fingerprint = h.hex_digest();
  cache.entries = logp.replicate(static_cast<Eigen::Index>(train.size()), 1);
  return cache;
}

}  // namespace csrec::teacher
