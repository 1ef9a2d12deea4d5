#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "csrec/error.hpp"
#include "csrec/hashing.hpp"
#include "csrec/runner.hpp"

namespace csrec::runner {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kLock = ".lock";
constexpr const char* kFailed = "FAILED";

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

bool is_bookkeeping(const fs::path& rel) {
  const auto name = rel.generic_string();
  return name == kManifest || name == kLock || name == kFailed;
}

}  // namespace

StageLock::StageLock(const fs::path& dir) : path_(dir / kLock) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid());
      const auto written = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      if (written != static_cast<ssize_t>(pid.size()))
        throw Error(ErrorKind::Io, "cannot write lock " + path_.string());
      return;
    }
    if (errno != EEXIST) throw Error(ErrorKind::Io, "cannot create lock " + path_.string());
    // A lock whose owner no longer exists is stale.
    long owner = 0;
    std::ifstream(path_) >> owner;
    if (owner > 0 && ::kill(static_cast<pid_t>(owner), 0) != 0 && errno == ESRCH) {
      fs::remove(path_);
      continue;
    }
    break;
  }
  throw Error(ErrorKind::Consistency, "stage directory " + path_.parent_path().string() +
                                          " is locked by another job");
}

StageLock::~StageLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void write_manifest(const fs::path& dir, const std::string& stage, const std::string& fingerprint,
                    const Json& details) {
  std::vector<std::string> names;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir);
    if (!is_bookkeeping(rel)) names.push_back(rel.generic_string());
  }
  std::sort(names.begin(), names.end());
  Json files = Json::object();
  for (const auto& n : names) files[n] = sha256_file((dir / n).string());
  write_json(dir / kManifest, {{"stage", stage},
                               {"fingerprint", fingerprint},
                               {"complete", true},
                               {"files", files},
                               {"details", details}});
}

Json read_manifest(const fs::path& dir) { return read_json(dir / kManifest); }

bool stage_complete(const fs::path& dir, const std::string& fingerprint) {
  if (!fs::exists(dir / kManifest)) return false;
  const Json m = read_manifest(dir);
  if (m.value("fingerprint", std::string{}) != fingerprint)
    throw Error(ErrorKind::StaleArtifact, dir.string() + ": manifest fingerprint does not match config");
  if (!m.value("complete", false)) return false;
  for (const auto& [name, hash] : m.at("files").items()) {
    const fs::path p = dir / name;
    if (!fs::exists(p) || sha256_file(p.string()) != hash.get<std::string>())
      throw Error(ErrorKind::StaleArtifact, p.string() + " changed since its manifest was written");
  }
  return true;
}

namespace {

// Runs `body` inside a locked stage directory unless a complete manifest with
// the same fingerprint already exists. A failing body leaves its partial files
// plus a FAILED marker.
template <typename Body>
bool run_stage(const fs::path& dir, const std::string& stage, const std::string& fingerprint,
               bool resume, Body body) {
  fs::create_directories(dir);
  StageLock lock(dir);
  if (resume && stage_complete(dir, fingerprint)) return true;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().filename() != kLock) fs::remove_all(entry.path());
  Json details;
  try {
    details = body(dir);
  } catch (const std::exception& e) {
    write_text(dir / kFailed, std::string(e.what()) + "\n");
    throw;
  }
  write_manifest(dir, stage, fingerprint, details);
  return false;
}

std::string seed_fp(const std::string& fp, std::uint64_t seed) {
  return sha256_hex(fp + ":" + std::to_string(seed));
}

fs::path out_root(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir); }

fs::path teacher_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return out_root(cfg) / "teachers" / teacher_fingerprint(cfg) / ("seed-" + std::to_string(seed));
}

fs::path student_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return out_root(cfg) / "students" / student_fingerprint(cfg) / ("seed-" + std::to_string(seed));
}

corpus::ColumnSchema schema_for(const DatasetSpec& d) {
  return d.format == "lastfm_tagged" ? corpus::ColumnSchema::lastfm_tagged() : corpus::ColumnSchema{};
}

Json prepare_body(const ExperimentConfig& cfg, const fs::path& dir) {
  corpus::InteractionLog raw;
  Json stats;
  if (cfg.dataset.synth) {
    const auto g = synthbench::generate(*cfg.dataset.synth);
    synthbench::save_world((dir / "world").string(), g.world);
    write_text(dir / "interactions.tsv", g.log_text);
    raw = g.log;
    stats["corrupted_events"] = g.corrupted_count();
    stats["world_fingerprint"] = g.world.fingerprint;
  } else {
    try {
      raw = corpus::load_interactions(cfg.dataset.path, schema_for(cfg.dataset));
    } catch (const Error& e) {
      throw Error(e.kind(), cfg.dataset.path + ": " + e.what());
    }
  }
  const auto log = corpus::filter_min_interactions(raw, cfg.dataset.min_interactions);
  const auto splits = corpus::build_sequences(log, {cfg.max_len, cfg.expand_windows});
  if (splits.train.empty() || splits.valid.empty() || splits.test.empty())
    throw Error(ErrorKind::EmptyAfterFilter, "dataset yields an empty split");
  corpus::write_split((dir / "train.tsv").string(), splits.train);
  corpus::write_split((dir / "valid.tsv").string(), splits.valid);
  corpus::write_split((dir / "test.tsv").string(), splits.test);
  corpus::write_id_map((dir / "users.tsv").string(), log.ids.raw_users);
  corpus::write_id_map((dir / "items.tsv").string(), log.ids.raw_items);
  const auto freq = corpus::item_frequencies(splits.train, log.catalog_size);
  const auto bins = corpus::popularity_bins(splits.train, log.catalog_size, cfg.popular_fraction);
  {
    std::ostringstream pop;
    pop << "item\tfrequency\tpopular\n";
    for (int i = 1; i <= log.catalog_size; ++i)
      pop << i << '\t' << freq[static_cast<std::size_t>(i)] << '\t' << (bins.popular(i) ? 1 : 0) << '\n';
    write_text(dir / "popularity.tsv", pop.str());
  }
  stats["users"] = log.user_count;
  stats["items"] = log.catalog_size;
  stats["interactions"] = log.events.size();
  stats["sparsity"] = log.sparsity();
  stats["raw_users"] = raw.user_count;
  stats["raw_items"] = raw.catalog_size;
  stats["raw_interactions"] = raw.events.size();
  stats["train_samples"] = splits.train.size();
  stats["valid_samples"] = splits.valid.size();
  stats["test_samples"] = splits.test.size();
  stats["skipped_users"] = splits.skipped_users;
  stats["train_windows"] = splits.train_windows;
  stats["popular_items"] = bins.popular_items.size();
  write_json(dir / "stats.json", stats);
  return Json{{"data_fingerprint", data_fingerprint(cfg)}};
}

}  // namespace

PreparedData cmd_prepare(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string fp = data_fingerprint(cfg);
  const fs::path dir = out_root(cfg) / "prepare" / fp;
  run_stage(dir, "prepare", fp, cfg.resume, [&](const fs::path& d) { return prepare_body(cfg, d); });
  PreparedData p;
  p.dir = dir;
  p.stats = read_json(dir / "stats.json");
  return p;
}

PreparedData load_prepared(const ExperimentConfig& cfg) {
  ExperimentConfig resumable = cfg;
  resumable.resume = true;
  PreparedData p = cmd_prepare(resumable);
  p.splits.train = corpus::read_split((p.dir / "train.tsv").string(), corpus::Split::Train);
  p.splits.valid = corpus::read_split((p.dir / "valid.tsv").string(), corpus::Split::Valid);
  p.splits.test = corpus::read_split((p.dir / "test.tsv").string(), corpus::Split::Test);
  p.ids.raw_users = corpus::read_id_map((p.dir / "users.tsv").string());
  p.ids.raw_items = corpus::read_id_map((p.dir / "items.tsv").string());
  p.num_items = p.stats.at("items").get<int>();
  p.bins = corpus::popularity_bins(p.splits.train, p.num_items, cfg.popular_fraction);
  if (cfg.dataset.synth) p.world = synthbench::load_world((p.dir / "world").string());
  return p;
}

namespace {

seqmodel::ModelConfig model_for(const ExperimentConfig& cfg, int num_items) {
  seqmodel::ModelConfig m = cfg.model;
  m.num_items = num_items;
  m.max_len = cfg.max_len;
  return m;
}

Json teacher_body(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed,
                  const fs::path& dir) {
  const auto model_cfg = model_for(cfg, data.num_items);
  const auto& train = data.splits.train;
  Json sidecar = {{"method", to_string(cfg.method)}, {"seed", seed}};
  Json fits = Json::array();
  teacher::SoftLogitCache cache;
  if (cfg.method == Method::SoftRecPop) {
    cache = teacher::train_popularity_baseline(train, data.num_items);
    sidecar["member_checkpoints"] = Json::array();
  } else {
    teacher::TeacherConfig tcfg = cfg.teacher;
    const int members = cfg.method == Method::CsrecT ? 2 : tcfg.m;
    const SeedPlan plan = plan_seeds(seed, members);
    tcfg.seeds = plan.members;
    tcfg.subsample_seeds = plan.subsamples;
    tcfg.threads = cfg.threads;
    teacher::TeacherResult result;
    if (cfg.method == Method::CsrecM)
      result = teacher::train_model_level(tcfg, model_cfg, cfg.train, train, data.splits.valid);
    else if (cfg.method == Method::CsrecD)
      result = teacher::train_data_level(tcfg, model_cfg, cfg.train, train, data.splits.valid);
    else
      result = teacher::train_training_level(tcfg, model_cfg, cfg.train, train, data.splits.valid);
    Json ckpts = Json::array();
    const auto& mods = result.module.members();
    for (std::size_t k = 0; k < mods.size(); ++k) {
      const std::string name = "member-" + std::to_string(k) + ".ckpt";
      seqmodel::save_checkpoint((dir / name).string(), mods[k]);
      ckpts.push_back(name);
    }
    for (std::size_t k = 0; k < result.traces.size(); ++k)
      seqmodel::write_trace_csv((dir / ("trace-" + std::to_string(k) + ".csv")).string(), result.traces[k]);
    for (std::size_t k = 0; k < result.member_indices.size(); ++k) {
      const bool side = cfg.method == Method::CsrecT && k == 1;
      fits.push_back({{"role", side ? "side" : (cfg.method == Method::CsrecT ? "main" : "member")},
                      {"seed", tcfg.seeds[k]},
                      {"samples", result.member_indices[k].size()},
                      {"epochs", result.traces[k].epochs.size()}});
    }
    if (result.side) seqmodel::save_checkpoint((dir / "side.ckpt").string(), *result.side);
    if (result.noise) {
      std::ofstream out(dir / "noise.bin", std::ios::binary | std::ios::trunc);
      for (const auto* p : {&result.noise->m(), &result.noise->n()})
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
      if (!out) throw Error(ErrorKind::Io, "failed writing noise.bin");
    }
    cache = std::move(result.cache);
    sidecar["member_checkpoints"] = ckpts;
    sidecar["seeds"] = tcfg.seeds;
    sidecar["subsample_seeds"] = cfg.method == Method::CsrecM ? Json::array() : Json(tcfg.subsample_seeds);
    sidecar["m"] = cache.teacher_count;
    if (cfg.method != Method::CsrecM) sidecar["p"] = tcfg.p;
    if (cfg.method == Method::CsrecT) {
      sidecar["alpha"] = tcfg.alpha;
      sidecar["expectation_term"] = tcfg.expectation_term;
      sidecar["floored_entries"] = result.floored_entries;
    }
    sidecar["average_probabilities"] = tcfg.average_probabilities;
  }
  teacher::save_cache((dir / "cache.bin").string(), cache);
  sidecar["provenance"] = teacher::to_string(cache.provenance);
  sidecar["fingerprint"] = cache.fingerprint;
  sidecar["dataset_fingerprint"] = cache.dataset_fingerprint;
  write_json(dir / "cache.json", sidecar);
  return Json{{"fits", fits}, {"fit_count", fits.size()}};
}

teacher::SoftLogitCache load_teacher_cache(const fs::path& dir) {
  auto cache = teacher::load_cache((dir / "cache.bin").string());
  const Json sidecar = read_json(dir / "cache.json");
  if (sidecar.at("fingerprint").get<std::string>() != cache.fingerprint)
    throw Error(ErrorKind::Consistency, dir.string() + ": cache sidecar does not match cache.bin");
  cache.dataset_fingerprint = sidecar.at("dataset_fingerprint").get<std::string>();
  return cache;
}

Json student_body(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed,
                  const fs::path& dir) {
  const auto model_cfg = model_for(cfg, data.num_items);
  const SeedPlan plan = plan_seeds(seed, 0);
  distill::StudentResult result{seqmodel::RecommenderModel(model_cfg), {}};
  Json run;
  if (cfg.method == Method::Base) {
    result = distill::train_base(model_cfg, cfg.train, plan.student, data.splits.train, data.splits.valid);
    run = {{"method", "base"}, {"seed", plan.student}};
  } else {
    const auto cache = load_teacher_cache(teacher_dir(cfg, seed));
    distill::DistillConfig dc = cfg.distill;
    dc.seed = plan.student;
    result = distill::train_student(model_cfg, cfg.train, cache, dc, data.splits.train, data.splits.valid);
    run = Json::parse(distill::run_manifest_json(cache, dc));
    run["method"] = to_string(cfg.method);
  }
  seqmodel::save_checkpoint((dir / "student.ckpt").string(), result.model);
  seqmodel::write_trace_csv((dir / "trace.csv").string(), result.trace);
  run["best_epoch"] = result.trace.best_epoch;
  run["epochs"] = result.trace.epochs.size();
  write_json(dir / "run.json", run);
  return Json{{"fits", Json::array({{{"role", "student"}, {"seed", plan.student}}})}, {"fit_count", 1}};
}

}  // namespace

TrainSummary cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const PreparedData data = load_prepared(cfg);
  TrainSummary summary;
  for (std::uint64_t seed : cfg.seeds) {
    if (cfg.method != Method::Base) {
      StageRun t;
      t.seed = seed;
      t.dir = teacher_dir(cfg, seed);
      t.skipped = run_stage(t.dir, "teacher", seed_fp(teacher_fingerprint(cfg), seed), cfg.resume,
                            [&](const fs::path& d) { return teacher_body(cfg, data, seed, d); });
      t.fits = read_manifest(t.dir).at("details").at("fit_count").get<int>();
      summary.teachers.push_back(t);
    }
    StageRun s;
    s.seed = seed;
    s.dir = student_dir(cfg, seed);
    s.skipped = run_stage(s.dir, "student", seed_fp(student_fingerprint(cfg), seed), cfg.resume,
                          [&](const fs::path& d) { return student_body(cfg, data, seed, d); });
    s.fits = 1;
    summary.students.push_back(s);
  }
  return summary;
}

namespace {

std::optional<double> teacher_gap(const ExperimentConfig& cfg, const PreparedData& data,
                                  const synthbench::CatalogView& view, std::uint64_t seed) {
  if (cfg.method == Method::Base) return std::nullopt;
  const fs::path dir = teacher_dir(cfg, seed);
  if (!stage_complete(dir, seed_fp(teacher_fingerprint(cfg), seed)))
    throw Error(ErrorKind::Evaluation, "no trained teacher for seed " + std::to_string(seed));
  const auto& contexts = data.splits.test;
  if (cfg.method == Method::SoftRecPop) {
    const auto cache = load_teacher_cache(dir);
    const Matrix logits = cache.entries.row(0).replicate(static_cast<Eigen::Index>(contexts.size()), 1);
    return synthbench::oracle_gap(logits, *data.world, view, contexts);
  }
  const Json sidecar = read_json(dir / "cache.json");
  std::vector<seqmodel::RecommenderModel> members;
  for (const auto& name : sidecar.at("member_checkpoints"))
    members.push_back(seqmodel::load_checkpoint((dir / name.get<std::string>()).string()));
  const teacher::TeacherModule module(std::move(members), sidecar.at("average_probabilities").get<bool>());
  return synthbench::oracle_gap(module, *data.world, view, contexts);
}

Json eval_body(const ExperimentConfig& cfg, const PreparedData& data, const fs::path& dir) {
  std::optional<synthbench::CatalogView> view;
  if (data.world) view = synthbench::catalog_view(*data.world, data.ids);
  std::vector<metrics::MetricReport> reports;
  std::vector<metrics::LengthBucket> buckets;
  metrics::RankOptions opts;
  opts.mask_history = cfg.mask_history;
  opts.batch_size = cfg.train.eval_batch_size;
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path sdir = student_dir(cfg, seed);
    if (!fs::exists(sdir / "student.ckpt") ||
        !stage_complete(sdir, seed_fp(student_fingerprint(cfg), seed)))
      throw Error(ErrorKind::Evaluation, "missing student checkpoint for seed " + std::to_string(seed));
    const auto model = seqmodel::load_checkpoint((sdir / "student.ckpt").string());
    const auto results = metrics::rank_all(model, data.splits.test, &data.bins, opts);
    if (buckets.empty()) buckets = metrics::length_quartiles(results);
    auto report = metrics::grouped_report(results, buckets, cfg.cutoffs, cfg.delta);
    if (view) {
      report.extras["oracle_gap"] = synthbench::oracle_gap(model, *data.world, *view, data.splits.test);
      if (const auto g = teacher_gap(cfg, data, *view, seed)) report.extras["oracle_gap_teacher"] = *g;
    }
    write_text(dir / ("seed-" + std::to_string(seed) + ".json"), metrics::report_json(report) + "\n");
    reports.push_back(std::move(report));
  }
  const auto agg = metrics::aggregate_seeds(reports);
  write_text(dir / "report.json", metrics::report_json(agg) + "\n");
  write_text(dir / "report.csv", metrics::report_csv(agg));
  write_json(dir / "context.json", {{"method", to_string(cfg.method)}, {"config", cfg.to_json()}});
  return Json{{"seeds", cfg.seeds}};
}

}  // namespace

EvalSummary cmd_evaluate(const ExperimentConfig& cfg) {
  cfg.validate();
  const PreparedData data = load_prepared(cfg);
  const std::string fp = eval_fingerprint(cfg);
  EvalSummary summary;
  summary.dir = out_root(cfg) / "reports" / fp;
  try {
    run_stage(summary.dir, "evaluate", fp, cfg.resume,
              [&](const fs::path& d) { return eval_body(cfg, data, d); });
  } catch (const Error& e) {
    if (exit_code_for(e.kind()) == 4) throw;
    throw Error(ErrorKind::Evaluation, e.what());
  }
  summary.report = metrics::report_from_json(read_text(summary.dir / "report.json"));
  for (std::uint64_t seed : cfg.seeds)
    summary.per_seed.push_back(
        metrics::report_from_json(read_text(summary.dir / ("seed-" + std::to_string(seed) + ".json"))));
  return summary;
}

const char* to_string(Sweep s) noexcept {
  switch (s) {
    case Sweep::TeacherCount: return "teacher_count";
    case Sweep::SubsampleRatio: return "subsample_ratio";
    case Sweep::Temperature: return "temperature";
    case Sweep::Beta: return "beta";
    case Sweep::ExpectationTerm: return "expectation_term";
  }
  return "?";
}

Sweep sweep_from_string(const std::string& name) {
  for (Sweep s : {Sweep::TeacherCount, Sweep::SubsampleRatio, Sweep::Temperature, Sweep::Beta,
                  Sweep::ExpectationTerm})
    if (name == to_string(s)) return s;
  throw Error(ErrorKind::Usage, "unknown sweep '" + name + "'");
}

std::vector<std::string> default_sweep_values(Sweep s) {
  switch (s) {
    case Sweep::TeacherCount: return {"1", "2", "3", "4"};
    case Sweep::SubsampleRatio: return {"0.5", "0.6", "0.7", "0.8", "0.9", "1.0"};
    case Sweep::Temperature: return {"1", "3", "6", "9"};
    case Sweep::Beta: return {"0.25", "0.5", "0.75"};
    case Sweep::ExpectationTerm: return {"with", "without"};
  }
  return {};
}

ExperimentConfig apply_sweep_value(const ExperimentConfig& cfg, Sweep sweep, const std::string& value) {
  ExperimentConfig out = cfg;
  auto number = [&](const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty())
      throw Error(ErrorKind::Usage, std::string(to_string(sweep)) + " value '" + v + "' is not a number");
    return x;
  };
  auto require = [&](std::initializer_list<Method> allowed) {
    if (std::find(allowed.begin(), allowed.end(), cfg.method) == allowed.end())
      throw Error(ErrorKind::Usage, std::string("sweep ") + to_string(sweep) +
                                        " does not apply to method " + to_string(cfg.method));
  };
  switch (sweep) {
    case Sweep::TeacherCount: {
      require({Method::CsrecM, Method::CsrecD});
      const double m = number(value);
      if (m < 1 || m != static_cast<int>(m)) throw Error(ErrorKind::Usage, "teacher_count must be a positive integer");
      out.teacher.m = static_cast<int>(m);
      break;
    }
    case Sweep::SubsampleRatio:
      require({Method::CsrecD, Method::CsrecT});
      out.teacher.p = number(value);
      out.p_set = true;
      break;
    case Sweep::Temperature:
      require({Method::SoftRecPop, Method::CsrecM, Method::CsrecD, Method::CsrecT});
      out.distill.temperature = number(value);
      break;
    case Sweep::Beta:
      require({Method::SoftRecPop, Method::CsrecM, Method::CsrecD, Method::CsrecT});
      out.distill.beta = number(value);
      break;
    case Sweep::ExpectationTerm:
      require({Method::CsrecT});
      if (value != "with" && value != "without")
        throw Error(ErrorKind::Usage, "expectation_term values are 'with' and 'without'");
      out.teacher.expectation_term = value == "with";
      break;
  }
  out.validate();
  return out;
}

AblateSummary cmd_ablate(const ExperimentConfig& cfg, Sweep sweep, std::vector<std::string> values) {
  cfg.validate();
  if (values.empty()) values = default_sweep_values(sweep);
  std::vector<ExperimentConfig> points;
  for (const auto& v : values) points.push_back(apply_sweep_value(cfg, sweep, v));
  AblateSummary summary;
  for (std::size_t i = 0; i < values.size(); ++i) {
    try {
      cmd_train(points[i]);
      const auto eval = cmd_evaluate(points[i]);
      for (const auto& [metric, mean] : eval.report.overall) {
        const auto it = eval.report.overall_std.find(metric);
        summary.rows.push_back({values[i], metric, mean, it == eval.report.overall_std.end() ? 0.0 : it->second});
      }
      for (const auto& [metric, mean] : eval.report.extras) {
        if (metric.ends_with("_std")) continue;
        const auto it = eval.report.extras.find(metric + "_std");
        summary.rows.push_back({values[i], metric, mean, it == eval.report.extras.end() ? 0.0 : it->second});
      }
    } catch (const Error& e) {
      summary.failures.emplace_back(values[i], e.what());
    }
  }
  Json key = {{"sweep", to_string(sweep)}, {"values", values}, {"base", eval_fingerprint(cfg)}};
  const std::string fp = sha256_hex(key.dump());
  const fs::path dir = out_root(cfg) / "ablations" / (std::string(to_string(sweep)) + "-" + fp.substr(0, 16));
  summary.csv_path = dir / "sweep.csv";
  run_stage(dir, "ablate", fp, false, [&](const fs::path& d) {
    std::ostringstream csv;
    csv << "sweep_value,metric,mean,std\n" << std::setprecision(17);
    for (const auto& r : summary.rows) csv << r.sweep_value << ',' << r.metric << ',' << r.mean << ',' << r.std << '\n';
    write_text(d / "sweep.csv", csv.str());
    Json failures = Json::array();
    for (const auto& [v, msg] : summary.failures) failures.push_back({{"sweep_value", v}, {"error", msg}});
    write_json(d / "failures.json", failures);
    return key;
  });
  return summary;
}

std::string cmd_report(const ExperimentConfig& cfg) {
  const fs::path root = out_root(cfg) / "reports";
  if (!fs::exists(root)) throw Error(ErrorKind::Evaluation, "no reports under " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (fs::exists(entry.path() / "report.json") && fs::exists(entry.path() / kManifest))
      dirs.push_back(entry.path());
  if (dirs.empty()) throw Error(ErrorKind::Evaluation, "no complete reports under " + root.string());
  std::sort(dirs.begin(), dirs.end());
  std::ostringstream out;
  out << std::left << std::setw(14) << "method" << std::setw(18) << "report" << std::setw(22) << "metric"
      << "mean +- std\n";
  for (const auto& d : dirs) {
    const Json ctx = read_json(d / "context.json");
    const auto report = metrics::report_from_json(read_text(d / "report.json"));
    const std::string id = d.filename().string().substr(0, 16);
    const auto line = [&](const std::string& metric, double mean, double sd) {
      out << std::left << std::setw(14) << ctx.at("method").get<std::string>() << std::setw(18) << id
          << std::setw(22) << metric << metrics::format_percent(mean) << " +- " << metrics::format_percent(sd)
          << '\n';
    };
    for (const auto& [metric, mean] : report.overall) {
      const auto it = report.overall_std.find(metric);
      line(metric, mean, it == report.overall_std.end() ? 0.0 : it->second);
    }
    for (const auto& [metric, mean] : report.extras) {
      if (metric.ends_with("_std")) continue;
      const auto it = report.extras.find(metric + "_std");
      line(metric, mean, it == report.extras.end() ? 0.0 : it->second);
    }
  }
  return out.str();
}

}  // namespace csrec::runner
