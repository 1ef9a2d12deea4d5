#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "csrec/corpus.hpp"
#include "csrec/distill.hpp"
#include "csrec/metrics.hpp"
#include "csrec/synthbench.hpp"
#include "csrec/teacher.hpp"

namespace csrec::runner {

namespace fs = std::filesystem;
using Json = nlohmann::json;

enum class Method { Base, SoftRecPop, CsrecM, CsrecD, CsrecT };
const char* to_string(Method m) noexcept;
Method method_from_string(const std::string& name);

struct DatasetSpec {
  std::string path;              // interaction log; empty when synthetic
  std::string format = "default";  // "default" or "lastfm_tagged"
  std::optional<synthbench::WorldSpec> synth;
  int min_interactions = 5;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  int max_len = 20;
  bool expand_windows = true;
  seqmodel::ModelConfig model;  // num_items and seed are filled per run
  Method method = Method::Base;
  teacher::TeacherConfig teacher;
  bool p_set = false;
  bool alpha_set = false;
  distill::DistillConfig distill;
  seqmodel::TrainConfig train;
  std::vector<int> cutoffs{10, 20};
  double delta = 4.0;
  bool mask_history = false;
  double popular_fraction = 0.2;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "runs";
  int threads = 1;
  bool resume = true;

  // Unknown keys, wrong types, and method-specific omissions raise Usage.
  static ExperimentConfig from_json(const Json& j);
  static ExperimentConfig load(const std::string& path);
  Json to_json() const;
  void validate() const;
};

// Fingerprints: hex SHA-256 over canonical JSON of every field that can change
// the stage's outputs.
std::string data_fingerprint(const ExperimentConfig& cfg);
std::string teacher_fingerprint(const ExperimentConfig& cfg);
std::string student_fingerprint(const ExperimentConfig& cfg);
std::string eval_fingerprint(const ExperimentConfig& cfg);

// Per-seed stream: splitmix64(seed ^ fnv1a64(label)).
struct SeedPlan {
  std::uint64_t student = 0;
  std::vector<std::uint64_t> members;
  std::vector<std::uint64_t> subsamples;
};
SeedPlan plan_seeds(std::uint64_t seed, int members);

// Exclusive stage-directory lock, released on destruction.
class StageLock {
 public:
  explicit StageLock(const fs::path& dir);
  ~StageLock();
  StageLock(const StageLock&) = delete;
  StageLock& operator=(const StageLock&) = delete;

 private:
  fs::path path_;
};

// manifest.json lists every other file in the directory with its SHA-256.
void write_manifest(const fs::path& dir, const std::string& stage, const std::string& fingerprint,
                    const Json& details = Json::object());
// True when a manifest with this fingerprint exists and every listed file
// hashes as recorded; StaleArtifact when the directory is inconsistent.
bool stage_complete(const fs::path& dir, const std::string& fingerprint);
Json read_manifest(const fs::path& dir);

struct PreparedData {
  fs::path dir;
  corpus::Splits splits;
  corpus::IdMap ids;
  corpus::PopularityBins bins;
  int num_items = 0;
  std::optional<synthbench::OracleWorld> world;
  Json stats;
};

PreparedData cmd_prepare(const ExperimentConfig& cfg);
PreparedData load_prepared(const ExperimentConfig& cfg);

struct StageRun {
  std::uint64_t seed = 0;
  fs::path dir;
  bool skipped = false;  // resumed from a complete manifest
  int fits = 0;
};

struct TrainSummary {
  std::vector<StageRun> teachers;
  std::vector<StageRun> students;
};

TrainSummary cmd_train(const ExperimentConfig& cfg);

struct EvalSummary {
  fs::path dir;
  metrics::MetricReport report;
  std::vector<metrics::MetricReport> per_seed;
};

EvalSummary cmd_evaluate(const ExperimentConfig& cfg);

enum class Sweep { TeacherCount, SubsampleRatio, Temperature, Beta, ExpectationTerm };
Sweep sweep_from_string(const std::string& name);
const char* to_string(Sweep s) noexcept;
std::vector<std::string> default_sweep_values(Sweep s);

struct SweepRow {
  std::string sweep_value;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
};

struct AblateSummary {
  fs::path csv_path;
  std::vector<SweepRow> rows;
  std::vector<std::pair<std::string, std::string>> failures;  // value, message
};

ExperimentConfig apply_sweep_value(const ExperimentConfig& cfg, Sweep sweep, const std::string& value);
AblateSummary cmd_ablate(const ExperimentConfig& cfg, Sweep sweep,
                         std::vector<std::string> values = {});

// Plain-text table over every aggregated report in the output directory.
std::string cmd_report(const ExperimentConfig& cfg);

}  // namespace csrec::runner
