#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "csrec/error.hpp"
#include "csrec/hashing.hpp"
#include "csrec/runner.hpp"

using namespace csrec;
using namespace csrec::runner;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Usage;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// Tiny synthetic experiment; each fit takes a fraction of a second.
Json tiny_json(const fs::path& out, const std::string& method = "base") {
  Json j = Json::parse(R"({
    "dataset": {"synth": {"num_users": 40, "num_items": 16, "latent_dim": 3, "seq_len": 8,
                          "swap_prob": 0.3, "seed": 5},
                "min_interactions": 3},
    "max_len": 6,
    "architecture": "gru",
    "model": {"dim": 8},
    "teacher": {"m": 2, "p": 0.8, "alpha": 0.5, "noise_dim": 4},
    "distill": {"temperature": 3, "beta": 0.5},
    "train": {"learning_rate": 0.01, "batch_size": 32, "max_epochs": 2, "early_stop_patience": 5},
    "seeds": [1, 2]
  })");
  j["output_dir"] = out.string();
  j["method"] = method;
  return j;
}

ExperimentConfig tiny(const fs::path& out, const std::string& method = "base") {
  return ExperimentConfig::from_json(tiny_json(out, method));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CSREC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config: defaults, unknown keys, types, method requirements") {
  const auto def = ExperimentConfig::from_json(Json::parse(R"({"dataset": {"path": "x.tsv"}})"));
  CHECK(def.method == Method::Base);
  CHECK(def.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(def.cutoffs == std::vector<int>{10, 20});
  CHECK(def.distill.temperature == 3.0);
  CHECK(def.teacher.m == 2);
  CHECK(def.delta == 4.0);
  CHECK_NOTHROW(def.validate());

  auto usage = [](const char* text) {
    return kind_of([&] { ExperimentConfig::from_json(Json::parse(text)).validate(); });
  };
  CHECK(usage(R"({"dataset": {"path": "x"}, "bogus": 1})") == ErrorKind::Usage);
  CHECK(usage(R"({"dataset": {"path": "x", "colour": "red"}})") == ErrorKind::Usage);
  CHECK(usage(R"({"dataset": {"path": "x"}, "train": {"lr": 0.1}})") == ErrorKind::Usage);
  CHECK(usage(R"({"dataset": {"path": "x"}, "max_len": "ten"})") == ErrorKind::Usage);
  CHECK(usage(R"({"dataset": {"path": "x"}, "method": "magic"})") == ErrorKind::Usage);
  CHECK(usage(R"({"dataset": {"path": "x"}, "architecture": "lstm"})") == ErrorKind::Usage);
  CHECK(usage(R"({"dataset": {"path": "x"}, "method": "csrec_d"})") == ErrorKind::Usage);
  CHECK(usage(R"({"dataset": {"path": "x"}, "method": "csrec_t", "teacher": {"p": 0.8}})") == ErrorKind::Usage);
  CHECK(usage(R"({"dataset": {}})") == ErrorKind::Usage);
  CHECK(usage(R"({"dataset": {"path": "x"}, "seeds": []})") == ErrorKind::Usage);
  CHECK_NOTHROW(ExperimentConfig::from_json(Json::parse(
                    R"({"dataset": {"path": "x"}, "method": "csrec_t", "teacher": {"p": 0.8, "alpha": 0.25}})"))
                    .validate());

  // to_json round-trips through from_json.
  TempDir tmp("csrec_cfg_rt");
  const auto cfg = tiny(tmp.path, "csrec_t");
  const auto again = ExperimentConfig::from_json(cfg.to_json());
  CHECK(again.to_json() == cfg.to_json());
  CHECK(student_fingerprint(again) == student_fingerprint(cfg));
  write_file(tmp.path / "cfg.json", cfg.to_json().dump());
  CHECK(ExperimentConfig::load((tmp.path / "cfg.json").string()).to_json() == cfg.to_json());
  CHECK(kind_of([&] { ExperimentConfig::load((tmp.path / "none.json").string()); }) == ErrorKind::Usage);
  write_file(tmp.path / "broken.json", "{ not json");
  CHECK(kind_of([&] { ExperimentConfig::load((tmp.path / "broken.json").string()); }) == ErrorKind::Usage);
}

TEST_CASE("fingerprints: stage isolation and soundness") {
  TempDir tmp("csrec_fp");
  const auto base = tiny(tmp.path, "csrec_m");
  auto with = [&](auto edit) {
    auto c = base;
    edit(c);
    return c;
  };
  const auto beta = with([](ExperimentConfig& c) { c.distill.beta = 0.25; });
  CHECK(teacher_fingerprint(beta) == teacher_fingerprint(base));
  CHECK(student_fingerprint(beta) != student_fingerprint(base));
  const auto temp = with([](ExperimentConfig& c) { c.distill.temperature = 9; });
  CHECK(teacher_fingerprint(temp) == teacher_fingerprint(base));
  CHECK(student_fingerprint(temp) != student_fingerprint(base));
  const auto m3 = with([](ExperimentConfig& c) { c.teacher.m = 3; });
  CHECK(teacher_fingerprint(m3) != teacher_fingerprint(base));
  CHECK(student_fingerprint(m3) != student_fingerprint(base));
  const auto dim = with([](ExperimentConfig& c) { c.model.dim = 16; });
  CHECK(teacher_fingerprint(dim) != teacher_fingerprint(base));
  const auto lr = with([](ExperimentConfig& c) { c.train.learning_rate = 0.02; });
  CHECK(student_fingerprint(lr) != student_fingerprint(base));
  const auto world = with([](ExperimentConfig& c) { c.dataset.synth->swap_prob = 0.1; });
  CHECK(data_fingerprint(world) != data_fingerprint(base));
  CHECK(teacher_fingerprint(world) != teacher_fingerprint(base));
  const auto cut = with([](ExperimentConfig& c) { c.cutoffs = {5}; });
  CHECK(student_fingerprint(cut) == student_fingerprint(base));
  CHECK(eval_fingerprint(cut) != eval_fingerprint(base));
  // Bookkeeping fields never change results.
  const auto bookkeeping = with([](ExperimentConfig& c) {
    c.threads = 4;
    c.resume = false;
    c.output_dir = "/elsewhere";
  });
  CHECK(data_fingerprint(bookkeeping) == data_fingerprint(base));
  CHECK(teacher_fingerprint(bookkeeping) == teacher_fingerprint(base));
  CHECK(student_fingerprint(bookkeeping) == student_fingerprint(base));
  CHECK(eval_fingerprint(bookkeeping) == eval_fingerprint(base));
  // The subsample ratio is irrelevant to model-level teachers but not to data-level ones.
  const auto p = with([](ExperimentConfig& c) { c.teacher.p = 0.5; });
  CHECK(teacher_fingerprint(p) == teacher_fingerprint(base));
  auto d = base;
  d.method = Method::CsrecD;
  auto d2 = d;
  d2.teacher.p = 0.5;
  CHECK(teacher_fingerprint(d) != teacher_fingerprint(d2));
  CHECK(teacher_fingerprint(d) != teacher_fingerprint(base));
  // Dataset files are fingerprinted by content.
  write_file(tmp.path / "a.tsv", "1\t1\t1\n");
  write_file(tmp.path / "b.tsv", "1\t1\t1\n");
  auto fa = ExperimentConfig::from_json(Json::parse(R"({"dataset": {"path": ")" + (tmp.path / "a.tsv").string() + R"("}})"));
  auto fb = fa;
  fb.dataset.path = (tmp.path / "b.tsv").string();
  CHECK(data_fingerprint(fa) == data_fingerprint(fb));
  write_file(tmp.path / "b.tsv", "1\t2\t1\n");
  CHECK(data_fingerprint(fa) != data_fingerprint(fb));
}

TEST_CASE("seed plan: deterministic, distinct, stable under added members") {
  const auto two = plan_seeds(7, 2);
  const auto three = plan_seeds(7, 3);
  CHECK(two.members.size() == 2);
  CHECK(two.subsamples.size() == 2);
  CHECK(three.members[0] == two.members[0]);
  CHECK(three.members[1] == two.members[1]);
  CHECK(three.subsamples[1] == two.subsamples[1]);
  CHECK(two.student == three.student);
  CHECK(two.student == derive_seed(7, "student"));
  std::set<std::uint64_t> all{three.student, three.members[0], three.members[1], three.members[2],
                              three.subsamples[0], three.subsamples[1], three.subsamples[2]};
  CHECK(all.size() == 7);
  CHECK(plan_seeds(8, 2).student != two.student);
}

TEST_CASE("manifest: completeness, tamper detection") {
  TempDir tmp("csrec_manifest");
  const fs::path dir = tmp.path / "stage";
  fs::create_directories(dir / "sub");
  write_file(dir / "a.txt", "alpha");
  write_file(dir / "sub" / "b.txt", "beta");
  CHECK_FALSE(stage_complete(dir, "fp"));
  write_manifest(dir, "demo", "fp", {{"k", 1}});
  const auto m = read_manifest(dir);
  CHECK(m.at("stage") == "demo");
  CHECK(m.at("files").size() == 2);
  CHECK(m.at("files").at("sub/b.txt") == sha256_hex("beta"));
  CHECK(m.at("details").at("k") == 1);
  CHECK(stage_complete(dir, "fp"));
  CHECK(kind_of([&] { stage_complete(dir, "other"); }) == ErrorKind::StaleArtifact);
  write_file(dir / "a.txt", "tampered");
  CHECK(kind_of([&] { stage_complete(dir, "fp"); }) == ErrorKind::StaleArtifact);
  fs::remove(dir / "a.txt");
  CHECK(kind_of([&] { stage_complete(dir, "fp"); }) == ErrorKind::StaleArtifact);
}

TEST_CASE("stage lock: exclusive, released, stale owner recovered") {
  TempDir tmp("csrec_lock");
  {
    StageLock lock(tmp.path);
    CHECK(fs::exists(tmp.path / ".lock"));
    CHECK(kind_of([&] { StageLock again(tmp.path); }) == ErrorKind::Consistency);
  }
  CHECK_FALSE(fs::exists(tmp.path / ".lock"));
  // A pid above any pid_max cannot be alive.
  write_file(tmp.path / ".lock", "99999999");
  CHECK_NOTHROW(StageLock recovered(tmp.path));
}

TEST_CASE("pipeline: prepare is idempotent and describes the data") {
  TempDir tmp("csrec_prepare");
  const auto cfg = tiny(tmp.path);
  const auto p1 = cmd_prepare(cfg);
  for (const char* key : {"users", "items", "interactions", "sparsity", "train_samples", "valid_samples",
                          "test_samples", "popular_items", "corrupted_events", "world_fingerprint"})
    CHECK(p1.stats.contains(key));
  for (const char* file : {"train.tsv", "valid.tsv", "test.tsv", "users.tsv", "items.tsv", "popularity.tsv",
                           "stats.json", "world.json", "world.bin", "interactions.tsv", "manifest.json"})
    CHECK(fs::exists(p1.dir / file));
  const std::string manifest = slurp(p1.dir / "manifest.json");
  const auto p2 = cmd_prepare(cfg);
  CHECK(p2.dir == p1.dir);
  CHECK(slurp(p2.dir / "manifest.json") == manifest);
  auto fresh = cfg;
  fresh.resume = false;
  const auto p3 = cmd_prepare(fresh);
  CHECK(slurp(p3.dir / "manifest.json") == manifest);
  const auto loaded = load_prepared(cfg);
  CHECK(loaded.world.has_value());
  CHECK(loaded.num_items == p1.stats.at("items").get<int>());
  CHECK(loaded.splits.test.size() == p1.stats.at("test_samples").get<std::size_t>());

  // A missing dataset is a data error.
  auto missing = ExperimentConfig::from_json(Json::parse(R"({"dataset": {"path": "/nonexistent/log.tsv"}})"));
  missing.output_dir = tmp.path.string();
  CHECK(exit_code_for(kind_of([&] { cmd_prepare(missing); })) == 2);
}

TEST_CASE("pipeline: dispatch, resume, tamper detection and reports") {
  TempDir tmp("csrec_pipeline");
  const auto base = tiny(tmp.path, "base");
  const auto bt = cmd_train(base);
  CHECK(bt.teachers.empty());
  REQUIRE(bt.students.size() == 2);
  for (const char* f : {"student.ckpt", "trace.csv", "run.json", "manifest.json"})
    CHECK(fs::exists(bt.students[0].dir / f));

  auto m = tiny(tmp.path, "csrec_m");
  const auto mt = cmd_train(m);
  REQUIRE(mt.teachers.size() == 2);
  for (const auto& t : mt.teachers) {
    CHECK_FALSE(t.skipped);
    CHECK(t.fits == 2);
    for (const char* f : {"member-0.ckpt", "member-1.ckpt", "cache.bin", "cache.json", "trace-0.csv"})
      CHECK(fs::exists(t.dir / f));
    const auto sidecar = Json::parse(slurp(t.dir / "cache.json"));
    CHECK(sidecar.at("seeds").size() == 2);
    CHECK(sidecar.at("member_checkpoints").size() == 2);
  }
  CHECK(mt.teachers[0].dir != mt.teachers[1].dir);

  // Rerun performs no training.
  const auto again = cmd_train(m);
  for (const auto& r : again.teachers) CHECK(r.skipped);
  for (const auto& r : again.students) CHECK(r.skipped);

  // Interrupted after teachers: only the student stage reruns.
  fs::remove_all(mt.students[0].dir);
  const auto resumed = cmd_train(m);
  CHECK(resumed.teachers[0].skipped);
  CHECK_FALSE(resumed.students[0].skipped);
  CHECK(resumed.students[1].skipped);
  CHECK(slurp(resumed.students[0].dir / "trace.csv") == slurp(mt.students[0].dir / "trace.csv"));

  // A beta sweep reuses the teacher stage.
  auto beta = m;
  beta.distill.beta = 0.25;
  const auto bs = cmd_train(beta);
  CHECK(bs.teachers[0].skipped);
  CHECK_FALSE(bs.students[0].skipped);

  // Tampered artifacts are refused; no-resume rebuilds them.
  {
    std::fstream f(mt.teachers[0].dir / "cache.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  CHECK(kind_of([&] { cmd_train(m); }) == ErrorKind::StaleArtifact);
  auto rebuild = m;
  rebuild.resume = false;
  CHECK_NOTHROW(cmd_train(rebuild));
  CHECK_NOTHROW(cmd_train(m));

  // Evaluation: plain, filtered and grouped metrics plus oracle gaps.
  const auto ev = cmd_evaluate(m);
  for (const char* key : {"recall@10", "ndcg@10", "recall@20", "recall+@10", "ndcg+@10"})
    CHECK(ev.report.overall.count(key) == 1);
  CHECK(ev.report.seed_count == 2);
  CHECK(ev.per_seed.size() == 2);
  CHECK(ev.report.extras.count("oracle_gap") == 1);
  CHECK(ev.report.extras.count("oracle_gap_teacher") == 1);
  CHECK(ev.report.groups.size() >= 3);
  for (const char* f : {"report.json", "report.csv", "seed-1.json", "seed-2.json", "context.json"})
    CHECK(fs::exists(ev.dir / f));
  const auto bev = cmd_evaluate(base);
  CHECK(bev.report.extras.count("oracle_gap") == 1);
  CHECK(bev.report.extras.count("oracle_gap_teacher") == 0);
  const auto table = cmd_report(m);
  CHECK(table.find("csrec_m") != std::string::npos);
  CHECK(table.find("base") != std::string::npos);
  CHECK(table.find("oracle_gap") != std::string::npos);

  // Pipeline determinism: a fresh output tree reproduces the report.
  TempDir other("csrec_pipeline_copy");
  auto copy = m;
  copy.output_dir = other.path.string();
  cmd_train(copy);
  CHECK(slurp(cmd_evaluate(copy).dir / "report.json") == slurp(ev.dir / "report.json"));
}

TEST_CASE("pipeline: beta = 0 student reproduces base; evaluation errors name the seed") {
  TempDir tmp("csrec_beta0");
  const auto base = tiny(tmp.path, "base");
  auto zero = tiny(tmp.path, "softrec_pop");
  zero.distill.beta = 0.0;
  cmd_train(base);
  cmd_train(zero);
  const auto a = cmd_evaluate(base);
  const auto b = cmd_evaluate(zero);
  CHECK(a.report.overall == b.report.overall);
  for (std::size_t s = 0; s < a.per_seed.size(); ++s) CHECK(a.per_seed[s].overall == b.per_seed[s].overall);

  auto unseen = base;
  unseen.seeds = {1, 9};
  try {
    cmd_evaluate(unseen);
    FAIL("expected an evaluation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Evaluation);
    CHECK(std::string(e.what()).find("seed 9") != std::string::npos);
  }
}

TEST_CASE("pipeline: failing stages leave a marker") {
  TempDir tmp("csrec_failed");
  auto cfg = tiny(tmp.path, "csrec_d");
  cfg.train.learning_rate = 1e308;
  cfg.train.max_epochs = 4;
  const auto kind = kind_of([&] { cmd_train(cfg); });
  CHECK(exit_code_for(kind) == 3);
  bool marker = false;
  for (const auto& e : fs::recursive_directory_iterator(tmp.path / "teachers"))
    if (e.path().filename() == "FAILED") marker = true;
  CHECK(marker);
}

TEST_CASE("ablation sweeps: CSV shape, failure isolation, fingerprint isolation") {
  TempDir tmp("csrec_ablate");
  auto cfg = tiny(tmp.path, "csrec_d");
  cfg.seeds = {1};
  const auto sweep = cmd_ablate(cfg, Sweep::TeacherCount, {"1", "2"});
  CHECK(sweep.failures.empty());
  const auto csv = slurp(sweep.csv_path);
  CHECK(csv.rfind("sweep_value,metric,mean,std\n", 0) == 0);
  CHECK(csv.find("\n1,recall@10,") != std::string::npos);
  CHECK(csv.find("\n2,recall@10,") != std::string::npos);
  CHECK(csv.find("oracle_gap_teacher") != std::string::npos);
  std::set<std::string> teacher_fps;
  for (const auto& e : fs::directory_iterator(tmp.path / "teachers")) teacher_fps.insert(e.path().filename().string());
  CHECK(teacher_fps.size() == 2);
  CHECK(Json::parse(slurp(sweep.csv_path.parent_path() / "failures.json")).empty());

  // A bad point is recorded and the others still run.
  const auto mixed = cmd_ablate(cfg, Sweep::SubsampleRatio, {"0.001", "1.0"});
  REQUIRE(mixed.failures.size() == 1);
  CHECK(mixed.failures[0].first == "0.001");
  CHECK(slurp(mixed.csv_path).find("\n1.0,recall@10,") != std::string::npos);

  CHECK(default_sweep_values(Sweep::TeacherCount) == std::vector<std::string>{"1", "2", "3", "4"});
  CHECK(default_sweep_values(Sweep::SubsampleRatio).size() == 6);
  CHECK(default_sweep_values(Sweep::Temperature) == std::vector<std::string>{"1", "3", "6", "9"});
  CHECK(default_sweep_values(Sweep::ExpectationTerm) == std::vector<std::string>{"with", "without"});
  CHECK(apply_sweep_value(cfg, Sweep::Beta, "0.75").distill.beta == 0.75);
  CHECK_FALSE(apply_sweep_value(tiny(tmp.path, "csrec_t"), Sweep::ExpectationTerm, "without").teacher.expectation_term);
  CHECK(kind_of([&] { apply_sweep_value(cfg, Sweep::Temperature, "hot"); }) == ErrorKind::Usage);
  CHECK(kind_of([] { sweep_from_string("depth"); }) == ErrorKind::Usage);
}

TEST_CASE("command line: subcommands and exit codes") {
  TempDir tmp("csrec_cli");
  const auto cfg_path = tmp.path / "cfg.json";
  write_file(cfg_path, tiny_json(tmp.path / "out").dump());
  const std::string cfg = " --config " + cfg_path.string();
  CHECK(run_cli("") == 1);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("train") == 1);
  CHECK(run_cli("frobnicate" + cfg) == 1);
  write_file(tmp.path / "bad.json", R"({"dataset": {"path": "x"}, "nope": 1})");
  CHECK(run_cli("prepare --config " + (tmp.path / "bad.json").string()) == 1);
  write_file(tmp.path / "nodata.json", R"({"dataset": {"path": "/nonexistent.tsv"}})");
  CHECK(run_cli("prepare --config " + (tmp.path / "nodata.json").string() + " --out " + (tmp.path / "o2").string()) == 2);
  CHECK(run_cli("evaluate" + cfg) == 4);
  CHECK(run_cli("report" + cfg) == 4);
  CHECK(run_cli("prepare" + cfg) == 0);
  CHECK(run_cli("train" + cfg + " --seed 1 --method csrec_m --threads 2") == 0);
  CHECK(run_cli("evaluate" + cfg + " --seed 1 --method csrec_m") == 0);
  CHECK(run_cli("report" + cfg) == 0);
  CHECK(run_cli("train" + cfg + " --seed 1 --method csrec_m --no-resume") == 0);
  CHECK(run_cli("ablate" + cfg + " --seed 1 --method csrec_t --sweep expectation_term") == 0);
  CHECK(run_cli("ablate" + cfg + " --sweep nonsense") == 1);
  CHECK(run_cli("train" + cfg + " --method csrec_q") == 1);
  Json diverge = tiny_json(tmp.path / "out3");
  diverge["train"]["learning_rate"] = 1e308;
  diverge["train"]["max_epochs"] = 4;
  write_file(tmp.path / "diverge.json", diverge.dump());
  CHECK(run_cli("train --seed 1 --config " + (tmp.path / "diverge.json").string()) == 3);
}
