#include <doctest.h>

#include <cmath>
#include <random>

#include <json.hpp>

#include "csrec/distill.hpp"
#include "csrec/error.hpp"
#include "csrec/numeric.hpp"
#include "oracles.hpp"

using namespace csrec;
using namespace csrec::distill;

namespace {

oracle::Vec to_vec(const Eigen::Ref<const RowVector>& r) { return {r.data(), r.data() + r.size()}; }

RowVector random_logits(std::mt19937_64& rng, int n, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  RowVector z(n);
  for (int k = 0; k < n; ++k) z[k] = normal(rng);
  return z;
}

double entropy(const RowVector& p) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
  return h;
}

std::vector<SequenceSample> toy_samples(int count, int items, int len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> item(1, items);
  std::uniform_int_distribution<int> length(1, len);
  std::vector<SequenceSample> out;
  for (int s = 0; s < count; ++s) {
    SequenceSample sample;
    sample.sequence.assign(static_cast<std::size_t>(len), 0);
    const int n = length(rng);
    for (int t = len - n; t < len; ++t) sample.sequence[static_cast<std::size_t>(t)] = item(rng);
    sample.target = sample.sequence.back() % items + 1;
    sample.user_id = s + 1;
    out.push_back(sample);
  }
  return out;
}

ModelConfig toy_model() {
  ModelConfig cfg;
  cfg.num_items = 7;
  cfg.dim = 6;
  cfg.max_len = 5;
  cfg.dropout = 0.2;
  return cfg;
}

TrainConfig quick_train() {
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 4;
  tc.early_stop_patience = 2;
  tc.learning_rate = 0.01;
  return tc;
}

SoftLogitCache random_cache(const std::vector<SequenceSample>& train, int items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SoftLogitCache cache;
  cache.provenance = teacher::Provenance::ModelLevel;
  cache.teacher_count = 2;
  cache.num_items = items;
  cache.fingerprint = std::string(64, 'c');
  cache.dataset_fingerprint = teacher::dataset_fingerprint(train);
  cache.entries.resize(static_cast<Eigen::Index>(train.size()), items);
  for (Eigen::Index r = 0; r < cache.entries.rows(); ++r) cache.entries.row(r) = random_logits(rng, items, 2.0);
  return cache;
}

}  // namespace

TEST_CASE("soft labels: closed forms and the large-temperature limit") {
  RowVector e(2);
  e << 0.0, 0.0;
  const auto r = make_soft_labels(e, 1, 1.0);
  CHECK(r[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(0.25).epsilon(1e-15));
  e << std::log(3.0), 0.0;
  const auto r2 = make_soft_labels(e, 1, 1.0);
  CHECK(std::abs(r2[0] - 0.875) < 1e-15);
  CHECK(std::abs(r2[1] - 0.125) < 1e-15);
  std::mt19937_64 rng(3);
  const RowVector z = random_logits(rng, 9, 4.0);
  const auto smooth = make_soft_labels(z, 4, 1e6);
  for (int k = 0; k < 9; ++k) CHECK(std::abs(smooth[k] - (0.5 / 9.0 + (k == 3 ? 0.5 : 0.0))) < 1e-4);
  const auto ref = oracle::soft_label(to_vec(z), 4, 3.0);
  const auto got = make_soft_labels(z, 4, 3.0);
  for (int k = 0; k < 9; ++k) CHECK(std::abs(got[k] - ref[static_cast<std::size_t>(k)]) < 1e-15);
  CHECK_THROWS_AS(make_soft_labels(z, 4, 0.0), Error);
  CHECK_THROWS_AS(make_soft_labels(z, 4, -1.0), Error);
  CHECK_THROWS_AS(make_soft_labels(z, 10, 1.0), Error);
  RowVector bad = z;
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(make_soft_labels(bad, 1, 1.0), Error);
}

TEST_CASE("soft labels: normalization and target mass over random draws") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> size(2, 40);
  std::uniform_real_distribution<double> temp(0.05, 20.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = size(rng);
    const RowVector e = random_logits(rng, n, 10.0);
    const ItemId target = 1 + trial % n;
    const auto r = make_soft_labels(e, target, temp(rng));
    CHECK(std::abs(r.sum() - 1.0) < 1e-6);
    CHECK(r[target - 1] >= 0.5);
    CHECK((r.array() >= 0.0).all());
    CHECK((r.array() <= 1.0).all());
  }
}

TEST_CASE("soft labels: entropy is non-decreasing in temperature") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const RowVector e = random_logits(rng, 12, 3.0);
    double previous = -1.0;
    for (double t : {1.0, 3.0, 6.0, 9.0}) {
      const double h = entropy(softmax(e / t));
      CHECK(h >= previous - 1e-12);
      previous = h;
    }
  }
}

TEST_CASE("student loss: degenerate weights and brute-force agreement") {
  std::mt19937_64 rng(13);
  const RowVector z = random_logits(rng, 3, 1.5);
  const RowVector teacher_logits = random_logits(rng, 3, 1.5);
  const auto r = make_soft_labels(teacher_logits, 2, 3.0);
  CHECK(student_loss(z, 2, r, 0.0) == seqmodel::cross_entropy_loss(z, 2));
  CHECK(std::abs(student_loss(z, 2, r, 0.5) - oracle::student_loss(to_vec(z), 2, to_vec(r), 0.5)) < 1e-8);
  // P_f = r with beta = 1 gives zero.
  const RowVector matched = r.array().log();
  CHECK(std::abs(student_loss(matched, 2, r, 1.0)) < 1e-12);
  // Strictly positive on finite logits.
  for (int trial = 0; trial < 200; ++trial) {
    const RowVector s = random_logits(rng, 6, 3.0);
    const auto label = make_soft_labels(random_logits(rng, 6, 3.0), 1 + trial % 6, 2.0);
    for (double beta : {0.0, 0.25, 0.5, 0.75})
      CHECK(student_loss(s, 1 + trial % 6, label, beta) > 0.0);
    CHECK(student_loss(s, 1 + trial % 6, label, 1.0) >= 0.0);
  }
  // Conventional direction swaps the KL arguments.
  const double conv = student_loss(z, 2, r, 1.0, true);
  CHECK(std::abs(conv - oracle::kl(to_vec(r), oracle::softmax(to_vec(z)))) < 1e-12);
  CHECK_THROWS_AS(student_loss(z, 2, r, 1.5), Error);
}

TEST_CASE("student loss gradient matches finite differences") {
  std::mt19937_64 rng(17);
  for (bool conventional : {false, true}) {
    for (int trial = 0; trial < 20; ++trial) {
      const RowVector z = random_logits(rng, 6, 2.0);
      const ItemId target = 1 + trial % 6;
      const auto r = make_soft_labels(random_logits(rng, 6, 2.0), target, 1.0 + trial % 9);
      const double beta = 0.25 * (trial % 5);
      const auto v = student_loss_with_grad(z, target, r, beta, conventional);
      CHECK(v.value == doctest::Approx(student_loss(z, target, r, beta, conventional)).epsilon(1e-14));
      const auto num = oracle::finite_difference(
          [&](const oracle::Vec& x) {
            const RowVector s = Eigen::Map<const RowVector>(x.data(), 6);
            return student_loss(s, target, r, beta, conventional);
          },
          to_vec(z));
      CHECK(oracle::relative_error(to_vec(v.grad), num) < 1e-6);
    }
  }
}

TEST_CASE("distill config validation") {
  DistillConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.temperature = 1.0;
  cfg.beta = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.beta = 1.0;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("cache consistency is checked before training") {
  const auto train = toy_samples(30, 7, 5, 21);
  auto cache = random_cache(train, 7, 1);
  CHECK_NOTHROW(check_cache(cache, train, 7));
  auto missing = cache;
  missing.entries.conservativeResize(missing.entries.rows() - 1, Eigen::NoChange);
  auto kind_of = [&](const SoftLogitCache& c, int items) {
    try {
      check_cache(c, train, items);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Usage;
  };
  CHECK(kind_of(missing, 7) == ErrorKind::Consistency);
  CHECK(kind_of(cache, 8) == ErrorKind::Consistency);
  auto foreign = cache;
  foreign.dataset_fingerprint = std::string(64, '0');
  CHECK(kind_of(foreign, 7) == ErrorKind::Consistency);
  auto nan = cache;
  nan.entries(3, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK(kind_of(nan, 7) == ErrorKind::Consistency);
  DistillConfig cfg;
  cfg.seed = 5;
  try {
    train_student(toy_model(), quick_train(), missing, cfg, train, train);
    FAIL("expected a consistency error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Consistency);
  }
}

TEST_CASE("beta = 0 reproduces the cross-entropy student bit for bit") {
  const auto train = toy_samples(50, 7, 5, 31);
  const auto valid = toy_samples(12, 7, 5, 32);
  const auto cache = random_cache(train, 7, 2);
  DistillConfig cfg;
  cfg.beta = 0.0;
  cfg.seed = 77;
  const auto student = train_student(toy_model(), quick_train(), cache, cfg, train, valid);
  const auto base = train_base(toy_model(), quick_train(), 77, train, valid);
  REQUIRE(student.trace.epochs.size() == base.trace.epochs.size());
  for (std::size_t e = 0; e < base.trace.epochs.size(); ++e) {
    CHECK(student.trace.epochs[e].train_loss == base.trace.epochs[e].train_loss);
    CHECK(student.trace.epochs[e].valid_ndcg10 == base.trace.epochs[e].valid_ndcg10);
  }
  const auto ps = student.model.parameters();
  const auto pb = base.model.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK((ps[i]->value - pb[i]->value).cwiseAbs().maxCoeff() == 0.0);

  // A nonzero weight changes the run; a fresh student is independent of the cache values at beta = 0.
  cfg.beta = 0.5;
  const auto mixed = train_student(toy_model(), quick_train(), cache, cfg, train, valid);
  CHECK(mixed.trace.epochs[0].train_loss != base.trace.epochs[0].train_loss);
}

TEST_CASE("student loss over a batch indexes the cache by sample position") {
  const auto train = toy_samples(6, 5, 4, 41);
  const auto cache = random_cache(train, 5, 3);
  DistillConfig cfg;
  cfg.temperature = 2.0;
  cfg.beta = 0.4;
  StudentLoss loss(cache, cfg);
  std::vector<std::size_t> idx{4, 1, 5};
  std::vector<Sequence> seqs;
  for (auto i : idx) seqs.push_back(train[i].sequence);
  std::mt19937_64 rng(2);
  Matrix logits(3, 5);
  for (int b = 0; b < 3; ++b) logits.row(b) = random_logits(rng, 5, 1.0);
  Matrix dlogits;
  const double value = loss.compute({&train, idx, seqs}, logits, dlogits);
  double expected = 0.0;
  for (int b = 0; b < 3; ++b) {
    const auto& s = train[idx[static_cast<std::size_t>(b)]];
    const auto r = oracle::soft_label(to_vec(cache.entries.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(b)]))), s.target, 2.0);
    expected += oracle::student_loss(to_vec(logits.row(b)), s.target, r, 0.4);
  }
  CHECK(std::abs(value - expected / 3.0) < 1e-12);
  CHECK(dlogits.rows() == 3);
}

TEST_CASE("run manifest records the distillation settings") {
  const auto train = toy_samples(4, 5, 4, 51);
  const auto cache = random_cache(train, 5, 4);
  DistillConfig cfg;
  cfg.temperature = 6.0;
  cfg.beta = 0.75;
  cfg.seed = 12;
  const auto j = nlohmann::json::parse(run_manifest_json(cache, cfg));
  CHECK(j.at("cache_fingerprint") == cache.fingerprint);
  CHECK(j.at("temperature") == 6.0);
  CHECK(j.at("beta") == 0.75);
  CHECK(j.at("seed") == 12);
  CHECK(j.at("kl_direction") == "student_first");
  CHECK(j.at("dataset_fingerprint") == cache.dataset_fingerprint);
}
