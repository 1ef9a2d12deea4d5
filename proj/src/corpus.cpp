#include "csrec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string_view>
#include <unordered_map>

#include "csrec/error.hpp"

namespace csrec::corpus {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  const char delim = line.find('\t') != std::string_view::npos ? '\t' : ',';
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    std::string_view f = line.substr(start, pos == std::string_view::npos ? pos : pos - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\r')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\r')) f.remove_suffix(1);
    fields.push_back(f);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

bool is_numeric(std::string_view s) {
  if (s.empty()) return false;
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& why) {
  throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + why);
}

// Assigns dense ids by order of first appearance.
class Densifier {
 public:
  int id_for(std::string_view raw) {
    auto [it, inserted] = ids_.try_emplace(std::string(raw), static_cast<int>(raw_.size()) + 1);
    if (inserted) raw_.emplace_back(raw);
    return it->second;
  }
  std::vector<std::string> take() { return std::move(raw_); }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> raw_;
};

void sort_events(std::vector<Interaction>& events) {
  std::stable_sort(events.begin(), events.end(), [](const Interaction& a, const Interaction& b) {
    if (a.user != b.user) return a.user < b.user;
    return a.timestamp < b.timestamp;
  });
}

// Re-densifies user and item ids, keeping the relative order of surviving ids.
InteractionLog redensify(std::vector<Interaction> events, const IdMap& old_ids, int old_users,
                         int old_items) {
  std::vector<int> user_map(static_cast<std::size_t>(old_users) + 1, 0);
  std::vector<int> item_map(static_cast<std::size_t>(old_items) + 1, 0);
  for (const auto& e : events) {
    user_map[static_cast<std::size_t>(e.user)] = 1;
    item_map[static_cast<std::size_t>(e.item)] = 1;
  }
  InteractionLog out;
  for (int u = 1; u <= old_users; ++u) {
    if (user_map[static_cast<std::size_t>(u)]) {
      user_map[static_cast<std::size_t>(u)] = ++out.user_count;
      if (!old_ids.raw_users.empty())
        out.ids.raw_users.push_back(old_ids.raw_users[static_cast<std::size_t>(u) - 1]);
    }
  }
  for (int i = 1; i <= old_items; ++i) {
    if (item_map[static_cast<std::size_t>(i)]) {
      item_map[static_cast<std::size_t>(i)] = ++out.catalog_size;
      if (!old_ids.raw_items.empty())
        out.ids.raw_items.push_back(old_ids.raw_items[static_cast<std::size_t>(i) - 1]);
    }
  }
  for (auto& e : events) {
    e.user = user_map[static_cast<std::size_t>(e.user)];
    e.item = item_map[static_cast<std::size_t>(e.item)];
  }
  out.events = std::move(events);
  return out;
}

}  // namespace

double InteractionLog::sparsity() const {
  if (user_count == 0 || catalog_size == 0) return 1.0;
  return 1.0 - static_cast<double>(events.size()) /
                   (static_cast<double>(user_count) * static_cast<double>(catalog_size));
}

ColumnSchema ColumnSchema::lastfm_tagged() { return ColumnSchema{0, 1, 3, -1}; }

InteractionLog parse_interactions(const std::string& text, const ColumnSchema& format) {
  const int needed = std::max({format.user, format.item, format.timestamp}) + 1;
  Densifier users;
  Densifier items;
  std::vector<Interaction> events;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (view.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto fields = split_fields(view);
    if (first_content) {
      first_content = false;
      if (!is_numeric(fields.front())) continue;  // header
    }
    if (static_cast<int>(fields.size()) < needed)
      parse_fail(line_no, "expected at least " + std::to_string(needed) + " fields, got " +
                              std::to_string(fields.size()));
    const auto user_f = fields[static_cast<std::size_t>(format.user)];
    const auto item_f = fields[static_cast<std::size_t>(format.item)];
    const auto ts_f = fields[static_cast<std::size_t>(format.timestamp)];
    if (user_f.empty() || item_f.empty()) parse_fail(line_no, "empty user or item id");
    Interaction ev;
    auto [tp, tec] = std::from_chars(ts_f.data(), ts_f.data() + ts_f.size(), ev.timestamp);
    if (tec != std::errc() || tp != ts_f.data() + ts_f.size())
      parse_fail(line_no, "timestamp is not an integer: '" + std::string(ts_f) + "'");
    if (format.rating >= 0 && static_cast<int>(fields.size()) > format.rating) {
      const auto r_f = fields[static_cast<std::size_t>(format.rating)];
      if (!r_f.empty() && r_f != "-") {
        double r = 0;
        auto [rp, rec] = std::from_chars(r_f.data(), r_f.data() + r_f.size(), r);
        if (rec != std::errc() || rp != r_f.data() + r_f.size())
          parse_fail(line_no, "rating is not a number: '" + std::string(r_f) + "'");
        if (!(r >= 0.0 && r <= 5.0)) parse_fail(line_no, "rating outside [0, 5]");
        ev.rating = r;
      }
    }
    ev.user = users.id_for(user_f);
    ev.item = items.id_for(item_f);
    events.push_back(ev);
  }
  if (events.empty()) throw Error(ErrorKind::EmptyInput, "no interaction rows");
  InteractionLog log;
  log.ids.raw_users = users.take();
  log.ids.raw_items = items.take();
  log.user_count = static_cast<int>(log.ids.raw_users.size());
  log.catalog_size = static_cast<int>(log.ids.raw_items.size());
  sort_events(events);
  log.events = std::move(events);
  return log;
}

InteractionLog load_interactions(const std::string& path, const ColumnSchema& format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_interactions(ss.str(), format);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

InteractionLog filter_min_interactions(const InteractionLog& log, int k) {
  if (k < 1) throw Error(ErrorKind::Parameter, "min interactions must be >= 1");
  std::vector<Interaction> events = log.events;
  while (true) {
    std::vector<int> ucount(static_cast<std::size_t>(log.user_count) + 1, 0);
    std::vector<int> icount(static_cast<std::size_t>(log.catalog_size) + 1, 0);
    for (const auto& e : events) {
      ++ucount[static_cast<std::size_t>(e.user)];
      ++icount[static_cast<std::size_t>(e.item)];
    }
    const auto before = events.size();
    std::erase_if(events, [&](const Interaction& e) {
      return ucount[static_cast<std::size_t>(e.user)] < k ||
             icount[static_cast<std::size_t>(e.item)] < k;
    });
    if (events.size() == before) break;
  }
  if (events.empty())
    throw Error(ErrorKind::EmptyAfterFilter,
                "filtering with k=" + std::to_string(k) + " removed every interaction");
  return redensify(std::move(events), log.ids, log.user_count, log.catalog_size);
}

const char* to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

int SequenceSample::true_length() const {
  return static_cast<int>(std::count_if(sequence.begin(), sequence.end(),
                                        [](ItemId i) { return i != kPadding; }));
}

namespace {

SequenceSample make_sample(std::span<const Interaction> history, std::size_t begin,
                           std::size_t target_pos, int max_len, Split split) {
  SequenceSample s;
  s.sequence.assign(static_cast<std::size_t>(max_len), kPadding);
  const std::size_t available = target_pos - begin;
  const std::size_t take = std::min<std::size_t>(available, static_cast<std::size_t>(max_len));
  for (std::size_t j = 0; j < take; ++j)
    s.sequence[static_cast<std::size_t>(max_len) - take + j] = history[target_pos - take + j].item;
  s.target = history[target_pos].item;
  s.target_rating = history[target_pos].rating;
  s.user_id = history[target_pos].user;
  s.split = split;
  return s;
}

}  // namespace

Splits build_sequences(const InteractionLog& log, const BuildOptions& options) {
  if (options.max_len < 2) throw Error(ErrorKind::Parameter, "max_len must be >= 2");
  const auto L = static_cast<std::size_t>(options.max_len);
  Splits out;
  std::span<const Interaction> all(log.events);
  std::size_t start = 0;
  while (start < all.size()) {
    std::size_t end = start;
    while (end < all.size() && all[end].user == all[start].user) ++end;
    const auto history = all.subspan(start, end - start);
    start = end;
    const std::size_t n = history.size();
    if (n < 3) {
      ++out.skipped_users;
      continue;
    }
    out.test.push_back(make_sample(history, 0, n - 1, options.max_len, Split::Test));
    out.valid.push_back(make_sample(history, 0, n - 2, options.max_len, Split::Valid));
    const std::size_t train_len = n - 2;
    for (std::size_t w = 0; w < train_len; w += L) {
      const std::size_t w_end = std::min(train_len, w + L);
      if (w_end - w < 2) continue;
      ++out.train_windows;
      if (options.expand_windows) {
        for (std::size_t t = w + 1; t < w_end; ++t)
          out.train.push_back(make_sample(history, w, t, options.max_len, Split::Train));
      } else {
        out.train.push_back(make_sample(history, w, w_end - 1, options.max_len, Split::Train));
      }
    }
  }
  return out;
}

std::vector<std::size_t> subsample_indices(std::size_t n, double p, std::uint64_t seed) {
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorKind::Parameter, "subsample ratio must be in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::floor(p * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (keep >= n) return idx;
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `keep` slots are a uniform sample.
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<SequenceSample> subsample(const std::vector<SequenceSample>& samples, double p,
                                      std::uint64_t seed) {
  for (const auto& s : samples)
    if (s.split != Split::Train)
      throw Error(ErrorKind::Parameter, "subsample operates on the training split only");
  std::vector<SequenceSample> out;
  for (std::size_t i : subsample_indices(samples.size(), p, seed)) out.push_back(samples[i]);
  return out;
}

std::vector<std::int64_t> item_frequencies(const std::vector<SequenceSample>& train,
                                           int catalog_size) {
  std::vector<std::int64_t> freq(static_cast<std::size_t>(catalog_size) + 1, 0);
  auto bump = [&](ItemId i) {
    if (i < 0 || i > catalog_size) throw Error(ErrorKind::Input, "item id out of range");
    ++freq[static_cast<std::size_t>(i)];
  };
  for (const auto& s : train) {
    bump(s.target);
    for (ItemId i : s.sequence)
      if (i != kPadding) bump(i);
  }
  freq[0] = 0;
  return freq;
}

PopularityBins popularity_bins(const std::vector<SequenceSample>& train, int catalog_size,
                               double popular_fraction) {
  if (train.empty()) throw Error(ErrorKind::EmptyInput, "popularity bins need training samples");
  const auto freq = item_frequencies(train, catalog_size);
  std::vector<ItemId> order(static_cast<std::size_t>(catalog_size));
  std::iota(order.begin(), order.end(), ItemId{1});
  std::stable_sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
    return freq[static_cast<std::size_t>(a)] > freq[static_cast<std::size_t>(b)];
  });
  const auto n_pop = static_cast<std::size_t>(
      std::ceil(popular_fraction * static_cast<double>(catalog_size) - 1e-9));
  PopularityBins bins;
  bins.is_popular.assign(static_cast<std::size_t>(catalog_size) + 1, false);
  for (std::size_t r = 0; r < n_pop && r < order.size(); ++r)
    bins.is_popular[static_cast<std::size_t>(order[r])] = true;
  for (ItemId i = 1; i <= catalog_size; ++i)
    (bins.is_popular[static_cast<std::size_t>(i)] ? bins.popular_items : bins.niche_items)
        .push_back(i);
  return bins;
}

UserRemoval remove_users(const InteractionLog& log, double fraction, std::uint64_t seed,
                         int min_interactions) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw Error(ErrorKind::Parameter, "user removal fraction must be in [0, 1)");
  const auto drop = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(log.user_count) + 1e-9));
  std::vector<bool> dropped(static_cast<std::size_t>(log.user_count) + 1, false);
  if (drop > 0) {
    // Keep-set sampled with the same routine as training subsamples.
    const double keep_ratio = 1.0 - static_cast<double>(drop) / log.user_count;
    const auto keep = subsample_indices(static_cast<std::size_t>(log.user_count), keep_ratio, seed);
    std::fill(dropped.begin(), dropped.end(), true);
    for (std::size_t k : keep) dropped[k + 1] = false;
  }
  std::vector<Interaction> events;
  for (const auto& e : log.events)
    if (!dropped[static_cast<std::size_t>(e.user)]) events.push_back(e);
  if (events.empty()) throw Error(ErrorKind::EmptyAfterFilter, "user removal left no users");
  InteractionLog reduced = redensify(std::move(events), log.ids, log.user_count, log.catalog_size);
  UserRemoval out;
  out.removed_users = static_cast<std::size_t>(log.user_count - reduced.user_count);
  out.log = filter_min_interactions(reduced, min_interactions);
  out.sparsity = out.log.sparsity();
  return out;
}

std::string format_sample(const SequenceSample& s) {
  std::ostringstream os;
  os << s.user_id << '\t';
  for (std::size_t j = 0; j < s.sequence.size(); ++j) os << (j ? " " : "") << s.sequence[j];
  os << '\t' << s.target << '\t';
  if (s.target_rating) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, *s.target_rating);
    os << std::string_view(buf, static_cast<std::size_t>(p - buf));
  } else {
    os << '-';
  }
  return os.str();
}

void write_split(const std::string& path, const std::vector<SequenceSample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  for (const auto& s : samples) out << format_sample(s) << '\n';
}

std::vector<SequenceSample> read_split(const std::string& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::vector<SequenceSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, '\t')) cols.push_back(col);
    if (cols.size() != 4) parse_fail(line_no, path + ": expected 4 tab-separated columns");
    SequenceSample s;
    s.split = split;
    s.user_id = std::stoi(cols[0]);
    std::istringstream seq(cols[1]);
    ItemId v = 0;
    while (seq >> v) s.sequence.push_back(v);
    s.target = std::stoi(cols[2]);
    if (cols[3] != "-") s.target_rating = std::stod(cols[3]);
    out.push_back(std::move(s));
  }
  return out;
}

void write_id_map(const std::string& path, const std::vector<std::string>& raw_by_dense) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  for (std::size_t i = 0; i < raw_by_dense.size(); ++i) out << raw_by_dense[i] << '\t' << i + 1 << '\n';
}

std::vector<std::string> read_id_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::vector<std::string> raw;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw Error(ErrorKind::Parse, path + ": malformed id map line");
    const auto dense = std::stoul(line.substr(tab + 1));
    if (dense != raw.size() + 1) throw Error(ErrorKind::Parse, path + ": id map not contiguous");
    raw.push_back(line.substr(0, tab));
  }
  return raw;
}

}  // namespace csrec::corpus
