#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "csrec/error.hpp"
#include "csrec/runner.hpp"

namespace {

using csrec::runner::ExperimentConfig;
using csrec::runner::Json;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string method;
  std::optional<int> threads;
  std::optional<bool> resume;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Run this single seed instead of the config's seed list");
  cmd->add_option("--out", o.out, "Output directory (overrides output_dir)");
  cmd->add_option("--method", o.method, "base, softrec_pop, csrec_m, csrec_d or csrec_t");
  cmd->add_option("--threads", o.threads, "Worker threads for independent teacher members");
  cmd->add_flag("--resume,!--no-resume", o.resume, "Skip stages with a complete manifest (default)");
}

ExperimentConfig load(const CommonOptions& o) {
  ExperimentConfig cfg = ExperimentConfig::load(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.method.empty()) cfg.method = csrec::runner::method_from_string(o.method);
  if (o.threads) cfg.threads = *o.threads;
  if (o.resume) cfg.resume = *o.resume;
  cfg.validate();
  return cfg;
}

Json stage_json(const csrec::runner::StageRun& r) {
  return {{"seed", r.seed}, {"dir", r.dir.string()}, {"skipped", r.skipped}, {"fits", r.fits}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential recommendation with denoising teachers and soft-label distillation"};
  app.require_subcommand(1);
  CommonOptions prepare_o, train_o, eval_o, ablate_o, report_o;
  auto* prepare = app.add_subcommand("prepare", "Filter, split and describe the dataset");
  add_common(prepare, prepare_o);
  auto* train = app.add_subcommand("train", "Train teachers and students for every seed");
  add_common(train, train_o);
  auto* evaluate = app.add_subcommand("evaluate", "Rank the test split and write metric reports");
  add_common(evaluate, eval_o);
  auto* ablate = app.add_subcommand("ablate", "Run a one-parameter sweep end to end");
  add_common(ablate, ablate_o);
  std::string sweep;
  std::vector<std::string> values;
  ablate->add_option("--sweep", sweep,
                     "teacher_count, subsample_ratio, temperature, beta or expectation_term")
      ->required();
  ablate->add_option("--values", values, "Sweep values (defaults per sweep)")->delimiter(',');
  auto* report = app.add_subcommand("report", "Summarize every report in the output directory");
  add_common(report, report_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*prepare) {
      const auto p = csrec::runner::cmd_prepare(load(prepare_o));
      std::cout << Json{{"dir", p.dir.string()}, {"stats", p.stats}}.dump(2) << '\n';
    } else if (*train) {
      const auto s = csrec::runner::cmd_train(load(train_o));
      Json j = {{"teachers", Json::array()}, {"students", Json::array()}};
      for (const auto& r : s.teachers) j["teachers"].push_back(stage_json(r));
      for (const auto& r : s.students) j["students"].push_back(stage_json(r));
      std::cout << j.dump(2) << '\n';
    } else if (*evaluate) {
      const auto e = csrec::runner::cmd_evaluate(load(eval_o));
      std::cout << "report: " << (e.dir / "report.json").string() << '\n';
      for (const auto& [k, v] : e.report.overall)
        std::cout << k << ' ' << csrec::metrics::format_percent(v) << '\n';
      for (const auto& [k, v] : e.report.extras) std::cout << k << ' ' << v << '\n';
    } else if (*ablate) {
      const auto a = csrec::runner::cmd_ablate(load(ablate_o), csrec::runner::sweep_from_string(sweep), values);
      std::cout << "sweep: " << a.csv_path.string() << '\n';
      for (const auto& [v, msg] : a.failures) std::cerr << "sweep point " << v << " failed: " << msg << '\n';
    } else if (*report) {
      std::cout << csrec::runner::cmd_report(load(report_o));
    }
  } catch (const csrec::Error& e) {
    std::cerr << "error [" << csrec::to_string(e.kind()) << "]: " << e.what() << '\n';
    return csrec::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
