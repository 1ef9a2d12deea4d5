#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csrec/types.hpp"

namespace csrec::corpus {

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;
  std::optional<double> rating;
};

// Raw ids by dense id: raw_users[u - 1] is the raw id of dense user u.
struct IdMap {
  std::vector<std::string> raw_users;
  std::vector<std::string> raw_items;
};

// Events are grouped by dense user id and time-ascending within each user.
struct InteractionLog {
  std::vector<Interaction> events;
  int catalog_size = 0;
  int user_count = 0;
  IdMap ids;

  double sparsity() const;
};

// Zero-based column positions of each field in an input row.
struct ColumnSchema {
  int user = 0;
  int item = 1;
  int timestamp = 2;
  int rating = 3;  // -1: never read a rating; otherwise optional per row

  static ColumnSchema lastfm_tagged();  // user \t artist \t tag \t timestamp
};

InteractionLog load_interactions(const std::string& path, const ColumnSchema& format = {});
InteractionLog parse_interactions(const std::string& text, const ColumnSchema& format = {});

InteractionLog filter_min_interactions(const InteractionLog& log, int k = 5);

enum class Split : std::uint8_t { Train, Valid, Test };
const char* to_string(Split split) noexcept;

struct SequenceSample {
  Sequence sequence;  // length max_len, left-padded with kPadding
  ItemId target = 0;
  std::optional<double> target_rating;
  UserId user_id = 0;
  Split split = Split::Train;

  // Non-padding items of the input.
  int true_length() const;
};

struct BuildOptions {
  int max_len = 20;
  // Emit one sample per target position inside each training window instead of
  // one sample per window.
  bool expand_windows = true;
};

struct Splits {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> valid;
  std::vector<SequenceSample> test;
  std::size_t skipped_users = 0;
  std::size_t train_windows = 0;
};

Splits build_sequences(const InteractionLog& log, const BuildOptions& options);

std::vector<std::size_t> subsample_indices(std::size_t n, double p, std::uint64_t seed);
std::vector<SequenceSample> subsample(const std::vector<SequenceSample>& samples, double p,
                                      std::uint64_t seed);

struct PopularityBins {
  std::vector<ItemId> popular_items;  // ascending id
  std::vector<ItemId> niche_items;    // ascending id
  std::vector<bool> is_popular;       // indexed by item id, size catalog + 1

  bool popular(ItemId item) const { return is_popular.at(static_cast<std::size_t>(item)); }
};

// Item frequency over training targets and input occurrences.
std::vector<std::int64_t> item_frequencies(const std::vector<SequenceSample>& train,
                                           int catalog_size);
PopularityBins popularity_bins(const std::vector<SequenceSample>& train, int catalog_size,
                               double popular_fraction = 0.2);

struct UserRemoval {
  InteractionLog log;
  double sparsity = 0.0;
  std::size_t removed_users = 0;
};

UserRemoval remove_users(const InteractionLog& log, double fraction, std::uint64_t seed,
                         int min_interactions = 5);

// Split file: `user_id \t seq \t target \t rating-or-dash` per line.
void write_split(const std::string& path, const std::vector<SequenceSample>& samples);
std::vector<SequenceSample> read_split(const std::string& path, Split split);
std::string format_sample(const SequenceSample& sample);

// Id-map file: `raw_id \t dense_id` per line.
void write_id_map(const std::string& path, const std::vector<std::string>& raw_by_dense);
std::vector<std::string> read_id_map(const std::string& path);

}  // namespace csrec::corpus
