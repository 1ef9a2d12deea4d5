#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csrec/corpus.hpp"
#include "csrec/seqmodel.hpp"

namespace csrec::synthbench {

struct WorldSpec {
  int num_users = 500;
  int num_items = 200;
  int latent_dim = 8;
  int seq_len = 10;
  // Weight of last-item similarity against user affinity in the oracle logit.
  double transition_weight = 0.5;
  double swap_prob = 0.3;
  double popularity_exponent = 1.0;
  // Standard deviation of a user-item affinity score at initialization.
  double affinity_scale = 2.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Ground-truth world. Ids here are world ids: users 1..|U|, items 1..|I|.
struct OracleWorld {
  WorldSpec spec;
  Matrix user_factors;           // |U| x k
  Matrix item_factors;           // |I| x k
  std::vector<int> popularity_rank;  // rank (1 = most popular) of item i at index i - 1
  std::string fingerprint;

  int num_items() const { return spec.num_items; }
  int num_users() const { return spec.num_users; }
};

OracleWorld make_world(const WorldSpec& spec);

struct Generated {
  OracleWorld world;
  std::string log_text;  // corpus text format with header
  corpus::InteractionLog log;
  std::vector<bool> corrupted;  // per emitted event, in log_text order
  std::size_t corrupted_count() const;
};

Generated generate(const WorldSpec& spec);

// Exact P(i | user, history) over the full world catalog; depends on the last
// history item only.
RowVector oracle_distribution(const OracleWorld& world, int world_user,
                              const Sequence& world_history);

// Dense-id view of a prepared dataset over a world, from the corpus id maps.
struct CatalogView {
  std::vector<int> world_user;  // index dense user - 1
  std::vector<int> world_item;  // index dense item - 1
};

CatalogView catalog_view(const OracleWorld& world, const corpus::IdMap& ids);

// Oracle over the dense catalog: world probabilities of retained items,
// renormalized.
RowVector oracle_distribution_dense(const OracleWorld& world, const CatalogView& view,
                                    const corpus::SequenceSample& context);

// Mean over contexts of KL(oracle || softmax(logits row)).
double oracle_gap(const Matrix& logits, const OracleWorld& world, const CatalogView& view,
                  const std::vector<corpus::SequenceSample>& contexts);
double oracle_gap(const seqmodel::Predictor& model, const OracleWorld& world,
                  const CatalogView& view, const std::vector<corpus::SequenceSample>& contexts,
                  int batch_size = 512);

std::string spec_json(const WorldSpec& spec);
WorldSpec spec_from_json(const std::string& text);

// <stem>.json holds the spec and fingerprint; <stem>.bin the factors as f64.
void save_world(const std::string& stem, const OracleWorld& world);
OracleWorld load_world(const std::string& stem);

}  // namespace csrec::synthbench
