#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "csrec/error.hpp"
#include "csrec/hashing.hpp"
#include "csrec/numeric.hpp"
#include "csrec/synthbench.hpp"
#include "csrec/teacher.hpp"

namespace csrec::synthbench {

void WorldSpec::validate() const {
  if (num_users < 1 || num_items < 2)
    throw Error(ErrorKind::Parameter, "world needs >= 1 user and >= 2 items");
  if (latent_dim < 1 || latent_dim >= std::min(num_users, num_items))
    throw Error(ErrorKind::Parameter, "latent dim k must satisfy 1 <= k < min(|U|, |I|)");
  if (seq_len < 3) throw Error(ErrorKind::Parameter, "seq_len must be >= 3");
  if (!(transition_weight >= 0.0 && transition_weight <= 1.0))
    throw Error(ErrorKind::Parameter, "transition_weight must be in [0, 1]");
  if (!(swap_prob >= 0.0 && swap_prob <= 1.0))
    throw Error(ErrorKind::Parameter, "swap_prob must be in [0, 1]");
  if (!std::isfinite(popularity_exponent) || !(affinity_scale > 0.0))
    throw Error(ErrorKind::Parameter, "popularity_exponent must be finite and affinity_scale > 0");
}

namespace {

std::string world_fingerprint(const OracleWorld& w) {
  Sha256 h;
  h.update("csrec-world-v1").update(spec_json(w.spec));
  h.update(std::as_bytes(std::span<const double>(w.user_factors.data(),
                                                  static_cast<std::size_t>(w.user_factors.size()))));
  h.update(std::as_bytes(std::span<const double>(w.item_factors.data(),
                                                  static_cast<std::size_t>(w.item_factors.size()))));
  h.update(std::as_bytes(std::span<const int>(w.popularity_rank)));
  return h.hex_digest();
}

// Zipf over popularity ranks: weight(i) = rank(i)^-s.
class PopularitySampler {
 public:
  explicit PopularitySampler(const OracleWorld& w) {
    std::vector<double> weights(w.popularity_rank.size());
    for (std::size_t i = 0; i < weights.size(); ++i)
      weights[i] = std::pow(static_cast<double>(w.popularity_rank[i]), -w.spec.popularity_exponent);
    dist_ = std::discrete_distribution<int>(weights.begin(), weights.end());
  }
  // Rejection on the clean item yields the Zipf law conditioned on != clean.
  ItemId draw_excluding(ItemId clean, std::mt19937_64& rng) {
    for (;;) {
      const ItemId item = dist_(rng) + 1;
      if (item != clean) return item;
    }
  }

 private:
  std::discrete_distribution<int> dist_;
};

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

ItemId sample_from(const RowVector& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<ItemId>(i + 1);
  }
  return static_cast<ItemId>(p.size());
}

}  // namespace

OracleWorld make_world(const WorldSpec& spec) {
  spec.validate();
  OracleWorld w;
  w.spec = spec;
  const double sigma = std::sqrt(spec.affinity_scale / std::sqrt(static_cast<double>(spec.latent_dim)));
  std::mt19937_64 rng(derive_seed(spec.seed, "factors"));
  std::normal_distribution<double> normal(0.0, sigma);
  w.user_factors.resize(spec.num_users, spec.latent_dim);
  w.item_factors.resize(spec.num_items, spec.latent_dim);
  for (Eigen::Index i = 0; i < w.user_factors.size(); ++i) w.user_factors.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < w.item_factors.size(); ++i) w.item_factors.data()[i] = normal(rng);
  std::vector<int> order(static_cast<std::size_t>(spec.num_items));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 pop_rng(derive_seed(spec.seed, "popularity"));
  std::shuffle(order.begin(), order.end(), pop_rng);
  w.popularity_rank.assign(order.size(), 0);
  for (std::size_t r = 0; r < order.size(); ++r)
    w.popularity_rank[static_cast<std::size_t>(order[r])] = static_cast<int>(r + 1);
  w.fingerprint = world_fingerprint(w);
  return w;
}

RowVector oracle_distribution(const OracleWorld& world, int world_user,
                              const Sequence& world_history) {
  if (world_user < 1 || world_user > world.num_users())
    throw Error(ErrorKind::HandleMismatch, "user " + std::to_string(world_user) + " is not in the world");
  ItemId last = kPadding;
  for (ItemId item : world_history) {
    if (item == kPadding) continue;
    if (item < 1 || item > world.num_items())
      throw Error(ErrorKind::HandleMismatch, "item " + std::to_string(item) + " is not in the world");
    last = item;
  }
  const double lambda = world.spec.transition_weight;
  RowVector score = (1.0 - lambda) * (world.item_factors * world.user_factors.row(world_user - 1).transpose()).transpose();
  if (last != kPadding)
    score += lambda * (world.item_factors * world.item_factors.row(last - 1).transpose()).transpose();
  if (!score.allFinite()) throw Error(ErrorKind::Numeric, "oracle scores are not finite");
  return softmax(score);
}

std::size_t Generated::corrupted_count() const {
  return static_cast<std::size_t>(std::count(corrupted.begin(), corrupted.end(), true));
}

Generated generate(const WorldSpec& spec) {
  Generated g;
  g.world = make_world(spec);
  PopularitySampler popularity(g.world);
  std::ostringstream text;
  text << "user\titem\ttimestamp\trating\n";
  std::bernoulli_distribution swap(spec.swap_prob);
  std::uniform_real_distribution<double> high(4.0, 5.0);
  std::uniform_real_distribution<double> low(1.0, 3.0);
  for (int u = 1; u <= spec.num_users; ++u) {
    std::mt19937_64 rng(derive_seed(spec.seed, "user:" + std::to_string(u)));
    Sequence history;
    for (int t = 0; t < spec.seq_len; ++t) {
      const RowVector p = oracle_distribution(g.world, u, history);
      const ItemId clean = sample_from(p, rng);
      const bool corrupt = swap(rng);
      const ItemId logged = corrupt ? popularity.draw_excluding(clean, rng) : clean;
      const double rating = corrupt ? low(rng) : high(rng);
      history.push_back(logged);
      g.corrupted.push_back(corrupt);
      text << u << '\t' << logged << '\t' << t + 1 << '\t' << format_double(rating) << '\n';
    }
  }
  g.log_text = text.str();
  g.log = corpus::parse_interactions(g.log_text);
  return g;
}

CatalogView catalog_view(const OracleWorld& world, const corpus::IdMap& ids) {
  auto parse = [](const std::string& raw, int limit, const char* what) {
    int v = 0;
    const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (res.ec != std::errc{} || res.ptr != raw.data() + raw.size() || v < 1 || v > limit)
      throw Error(ErrorKind::HandleMismatch, std::string(what) + " id '" + raw + "' is not in the world");
    return v;
  };
  CatalogView view;
  for (const auto& raw : ids.raw_users) view.world_user.push_back(parse(raw, world.num_users(), "user"));
  for (const auto& raw : ids.raw_items) view.world_item.push_back(parse(raw, world.num_items(), "item"));
  return view;
}

RowVector oracle_distribution_dense(const OracleWorld& world, const CatalogView& view,
                                    const corpus::SequenceSample& context) {
  if (context.user_id < 1 || static_cast<std::size_t>(context.user_id) > view.world_user.size())
    throw Error(ErrorKind::HandleMismatch, "context user outside the dataset");
  Sequence history;
  for (ItemId item : context.sequence) {
    if (item == kPadding) continue;
    if (item < 1 || static_cast<std::size_t>(item) > view.world_item.size())
      throw Error(ErrorKind::HandleMismatch, "context item outside the dataset");
    history.push_back(view.world_item[static_cast<std::size_t>(item - 1)]);
  }
  const RowVector full =
      oracle_distribution(world, view.world_user[static_cast<std::size_t>(context.user_id - 1)], history);
  RowVector dense(static_cast<Eigen::Index>(view.world_item.size()));
  for (std::size_t k = 0; k < view.world_item.size(); ++k)
    dense[static_cast<Eigen::Index>(k)] = full[view.world_item[k] - 1];
  return dense / dense.sum();
}

double oracle_gap(const Matrix& logits, const OracleWorld& world, const CatalogView& view,
                  const std::vector<corpus::SequenceSample>& contexts) {
  if (contexts.empty()) throw Error(ErrorKind::UndefinedMetric, "oracle_gap over no contexts");
  if (logits.rows() != static_cast<Eigen::Index>(contexts.size()) ||
      logits.cols() != static_cast<Eigen::Index>(view.world_item.size()))
    throw Error(ErrorKind::Shape, "oracle_gap logits do not match contexts x catalog");
  double total = 0.0;
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    const RowVector oracle = oracle_distribution_dense(world, view, contexts[c]);
    total += teacher::kl_divergence(oracle, softmax(logits.row(static_cast<Eigen::Index>(c))));
  }
  return total / static_cast<double>(contexts.size());
}

double oracle_gap(const seqmodel::Predictor& model, const OracleWorld& world,
                  const CatalogView& view, const std::vector<corpus::SequenceSample>& contexts,
                  int batch_size) {
  if (contexts.empty()) throw Error(ErrorKind::UndefinedMetric, "oracle_gap over no contexts");
  Matrix logits(static_cast<Eigen::Index>(contexts.size()), model.num_items());
  std::vector<Sequence> seqs;
  const auto batch = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < contexts.size(); start += batch) {
    const std::size_t end = std::min(contexts.size(), start + batch);
    seqs.clear();
    for (std::size_t i = start; i < end; ++i) seqs.push_back(contexts[i].sequence);
    logits.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        model.predict_logits(seqs);
  }
  return oracle_gap(logits, world, view, contexts);
}

std::string spec_json(const WorldSpec& spec) {
  nlohmann::ordered_json j;
  j["num_users"] = spec.num_users;
  j["num_items"] = spec.num_items;
  j["latent_dim"] = spec.latent_dim;
  j["seq_len"] = spec.seq_len;
  j["transition_weight"] = spec.transition_weight;
  j["swap_prob"] = spec.swap_prob;
  j["popularity_exponent"] = spec.popularity_exponent;
  j["affinity_scale"] = spec.affinity_scale;
  j["seed"] = spec.seed;
  return j.dump();
}

WorldSpec spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("world spec JSON: ") + e.what());
  }
  WorldSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "num_users") s.num_users = value.get<int>();
    else if (key == "num_items") s.num_items = value.get<int>();
    else if (key == "latent_dim") s.latent_dim = value.get<int>();
    else if (key == "seq_len") s.seq_len = value.get<int>();
    else if (key == "transition_weight") s.transition_weight = value.get<double>();
    else if (key == "swap_prob") s.swap_prob = value.get<double>();
    else if (key == "popularity_exponent") s.popularity_exponent = value.get<double>();
    else if (key == "affinity_scale") s.affinity_scale = value.get<double>();
    else if (key == "seed") s.seed = value.get<std::uint64_t>();
    else throw Error(ErrorKind::Usage, "unknown world spec key '" + key + "'");
  }
  s.validate();
  return s;
}

namespace {

constexpr std::array<char, 8> kWorldMagic{'C', 'S', 'R', 'W', 'O', 'R', 'L', 'D'};

void write_block(std::ostream& out, const double* data, Eigen::Index n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

void save_world(const std::string& stem, const OracleWorld& world) {
  {
    std::ofstream out(stem + ".bin", std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + stem + ".bin");
    out.write(kWorldMagic.data(), kWorldMagic.size());
    const std::uint32_t header[] = {1U, static_cast<std::uint32_t>(world.num_users()),
                                    static_cast<std::uint32_t>(world.num_items()),
                                    static_cast<std::uint32_t>(world.spec.latent_dim)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    write_block(out, world.user_factors.data(), world.user_factors.size());
    write_block(out, world.item_factors.data(), world.item_factors.size());
    out.write(reinterpret_cast<const char*>(world.popularity_rank.data()),
              static_cast<std::streamsize>(world.popularity_rank.size() * sizeof(int)));
    if (!out) throw Error(ErrorKind::Io, "failed writing " + stem + ".bin");
  }
  nlohmann::ordered_json j;
  j["spec"] = nlohmann::json::parse(spec_json(world.spec));
  j["fingerprint"] = world.fingerprint;
  j["factors"] = std::filesystem::path(stem + ".bin").filename().string();
  std::ofstream out(stem + ".json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + stem + ".json");
  out << j.dump(2) << '\n';
}

OracleWorld load_world(const std::string& stem) {
  std::ifstream jin(stem + ".json");
  if (!jin) throw Error(ErrorKind::Io, "cannot open " + stem + ".json");
  std::stringstream buf;
  buf << jin.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, stem + ".json: " + e.what());
  }
  OracleWorld w;
  w.spec = spec_from_json(j.at("spec").dump());
  std::ifstream in(stem + ".bin", std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + stem + ".bin");
  std::array<char, 8> magic{};
  std::uint32_t header[4] = {};
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || magic != kWorldMagic || header[0] != 1U)
    throw Error(ErrorKind::Io, stem + ".bin: not a world file");
  if (static_cast<int>(header[1]) != w.spec.num_users || static_cast<int>(header[2]) != w.spec.num_items ||
      static_cast<int>(header[3]) != w.spec.latent_dim)
    throw Error(ErrorKind::Consistency, stem + ": factor shapes disagree with the spec");
  w.user_factors.resize(w.spec.num_users, w.spec.latent_dim);
  w.item_factors.resize(w.spec.num_items, w.spec.latent_dim);
  w.popularity_rank.assign(static_cast<std::size_t>(w.spec.num_items), 0);
  in.read(reinterpret_cast<char*>(w.user_factors.data()),
          static_cast<std::streamsize>(w.user_factors.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(w.item_factors.data()),
          static_cast<std::streamsize>(w.item_factors.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(w.popularity_rank.data()),
          static_cast<std::streamsize>(w.popularity_rank.size() * sizeof(int)));
  if (!in) throw Error(ErrorKind::Io, stem + ".bin: truncated");
  w.fingerprint = world_fingerprint(w);
  if (w.fingerprint != j.at("fingerprint").get<std::string>())
    throw Error(ErrorKind::Consistency, stem + ": factors do not match the recorded fingerprint");
  return w;
}

}  // namespace csrec::synthbench
