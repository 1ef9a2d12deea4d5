// Last.FM acceptance: recurrent student, data-level teachers vs base, three
// seeds. The interaction log (user \t artist \t tag \t timestamp) is read from
// CSREC_LASTFM_PATH; without it the criterion fails with the reason.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include "csrec/runner.hpp"

using namespace csrec;
namespace fs = std::filesystem;

namespace {

constexpr const char* kName = "Last.FM trend reproduction (data-level Recall@10 gain >= 3% relative, 3 seeds)";

int report(bool pass, const std::string& detail, double seconds) {
  std::cout << (pass ? "PASS" : "FAIL") << " criterion 1: " << kName << " | " << detail << " (" << seconds << " s)"
            << std::endl;
  return pass ? 0 : 1;
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  const char* path = std::getenv("CSREC_LASTFM_PATH");
  if (!path || !fs::exists(path))
    return report(false, "Last.FM log not available; set CSREC_LASTFM_PATH to the tagged interaction file", 0.0);

  const fs::path out = fs::temp_directory_path() / "csrec_acceptance_lastfm";
  const int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  runner::Json j = {
      {"dataset", {{"path", path}, {"format", "lastfm_tagged"}, {"min_interactions", 5}}},
      {"max_len", 20},
      {"architecture", "gru"},
      {"model", {{"dim", 64}, {"gru_layers", 2}, {"dropout", 0.5}}},
      {"teacher", {{"m", 2}, {"p", 0.8}}},
      {"distill", {{"temperature", 3}, {"beta", 0.5}}},
      {"seeds", {1, 2, 3}},
      {"threads", threads},
      {"output_dir", out.string()},
  };
  std::ostringstream detail;
  try {
    auto configure = [&](const std::string& method) {
      runner::Json m = j;
      m["method"] = method;
      return runner::ExperimentConfig::from_json(m);
    };
    const auto base_cfg = configure("base");
    const auto prepared = runner::cmd_prepare(base_cfg);
    const long users = prepared.stats.at("users").get<long>();
    const long interactions = prepared.stats.at("interactions").get<long>();
    detail << "users " << users << ", interactions " << interactions << "; ";
    const bool stats_match = users == 1090 && interactions == 52551;
    if (!stats_match) detail << "[dataset statistics differ from 1090 users / 52551 interactions] ";

    runner::cmd_train(base_cfg);
    const double base = runner::cmd_evaluate(base_cfg).report.overall.at("recall@10");
    const auto dl_cfg = configure("csrec_d");
    runner::cmd_train(dl_cfg);
    const double data_level = runner::cmd_evaluate(dl_cfg).report.overall.at("recall@10");
    const double gain = (data_level - base) / base;
    detail << "base recall@10 " << base << ", data-level " << data_level << ", relative gain " << 100.0 * gain << "%";
    return report(stats_match && gain >= 0.03, detail.str(), elapsed());
  } catch (const std::exception& e) {
    detail << "[exception: " << e.what() << "]";
    return report(false, detail.str(), elapsed());
  }
}
