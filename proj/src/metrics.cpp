#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "csrec/error.hpp"
#include "csrec/metrics.hpp"

namespace csrec::metrics {

std::vector<RankResult> rank_all(const seqmodel::Predictor& model,
                                 const std::vector<SequenceSample>& samples,
                                 const PopularityBins* bins, const RankOptions& options) {
  std::vector<RankResult> out;
  out.reserve(samples.size());
  std::vector<Sequence> seqs;
  const auto batch = static_cast<std::size_t>(std::max(1, options.batch_size));
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    seqs.clear();
    for (std::size_t i = start; i < end; ++i) seqs.push_back(samples[i].sequence);
    Matrix logits = model.predict_logits(seqs);
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = samples[i];
      auto row = logits.row(static_cast<Eigen::Index>(i - start));
      if (options.mask_history)
        for (ItemId item : s.sequence)
          if (item != kPadding && item != s.target)
            row[item - 1] = -std::numeric_limits<double>::infinity();
      RankResult r;
      r.user_id = s.user_id;
      r.rank = seqmodel::rank_of(row, s.target);
      r.target_rating = s.target_rating;
      r.popular_target = bins ? bins->popular(s.target) : false;
      r.history_length = s.true_length();
      out.push_back(r);
    }
  }
  return out;
}

namespace {

void require_nonempty(const std::vector<RankResult>& results, int n) {
  if (results.empty()) throw Error(ErrorKind::UndefinedMetric, "metric over an empty result set");
  if (n < 1) throw Error(ErrorKind::Parameter, "cutoff n must be >= 1");
}

double gain(int rank, int n) { return rank <= n ? 1.0 / std::log2(rank + 1.0) : 0.0; }

}  // namespace

double recall_at_n(const std::vector<RankResult>& results, int n) {
  require_nonempty(results, n);
  std::size_t hits = 0;
  for (const auto& r : results) hits += r.rank <= n ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(results.size());
}

double ndcg_at_n(const std::vector<RankResult>& results, int n) {
  require_nonempty(results, n);
  double total = 0.0;
  for (const auto& r : results) total += gain(r.rank, n);
  return 100.0 * total / static_cast<double>(results.size());
}

FilteredMetrics filtered_metrics(const std::vector<RankResult>& results, int n, double delta) {
  require_nonempty(results, n);
  FilteredMetrics f;
  double hits = 0.0;
  double total = 0.0;
  for (const auto& r : results) {
    if (!r.target_rating) throw Error(ErrorKind::UndefinedMetric, "filtered metrics need ratings");
    if (*r.target_rating < delta) continue;
    ++f.qualifying;
    hits += r.rank <= n ? 1.0 : 0.0;
    total += gain(r.rank, n);
  }
  if (f.qualifying == 0)
    throw Error(ErrorKind::UndefinedMetric, "no result has a rating >= delta");
  f.recall = 100.0 * hits / static_cast<double>(f.qualifying);
  f.ndcg = 100.0 * total / static_cast<double>(f.qualifying);
  return f;
}

MetricValues compute_values(const std::vector<RankResult>& results, const std::vector<int>& cutoffs,
                            double delta) {
  MetricValues v;
  const bool rated = !results.empty() &&
                     std::all_of(results.begin(), results.end(),
                                 [](const RankResult& r) { return r.target_rating.has_value(); });
  const bool any_positive =
      rated && std::any_of(results.begin(), results.end(),
                           [delta](const RankResult& r) { return *r.target_rating >= delta; });
  for (int n : cutoffs) {
    const std::string suffix = "@" + std::to_string(n);
    v["recall" + suffix] = recall_at_n(results, n);
    v["ndcg" + suffix] = ndcg_at_n(results, n);
    if (any_positive) {
      const auto f = filtered_metrics(results, n, delta);
      v["recall+" + suffix] = f.recall;
      v["ndcg+" + suffix] = f.ndcg;
    }
  }
  return v;
}

std::string LengthBucket::name() const {
  return "length:" + std::to_string(lo) + "-" + std::to_string(hi);
}

std::vector<LengthBucket> length_quartiles(const std::vector<RankResult>& results) {
  if (results.empty()) return {};
  std::vector<int> lengths;
  for (const auto& r : results) lengths.push_back(r.history_length);
  std::sort(lengths.begin(), lengths.end());
  const auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(lengths.size()))) - 1;
    return lengths[std::min(idx, lengths.size() - 1)];
  };
  const int bounds[] = {at(0.25), at(0.5), at(0.75), lengths.back()};
  std::vector<LengthBucket> buckets;
  int lo = lengths.front();
  for (int hi : bounds) {
    if (hi < lo) continue;
    buckets.push_back({lo, hi});
    lo = hi + 1;
  }
  return buckets;
}

MetricReport grouped_report(const std::vector<RankResult>& results,
                            const std::vector<LengthBucket>& length_buckets,
                            const std::vector<int>& cutoffs, double delta) {
  MetricReport report;
  report.cutoffs = cutoffs;
  report.overall = compute_values(results, cutoffs, delta);
  auto add_group = [&](std::string name, auto pred) {
    std::vector<RankResult> subset;
    for (const auto& r : results)
      if (pred(r)) subset.push_back(r);
    GroupReport g;
    g.name = std::move(name);
    g.size = subset.size();
    g.defined = !subset.empty();
    if (g.defined) g.values = compute_values(subset, cutoffs, delta);
    report.groups.push_back(std::move(g));
  };
  add_group("popular", [](const RankResult& r) { return r.popular_target; });
  add_group("niche", [](const RankResult& r) { return !r.popular_target; });
  for (const auto& b : length_buckets)
    add_group(b.name(), [&b](const RankResult& r) {
      return r.history_length >= b.lo && r.history_length <= b.hi;
    });
  return report;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

void aggregate_values(const std::vector<const MetricValues*>& values, MetricValues& mean,
                      MetricValues& stdev) {
  for (const auto& [key, _] : *values.front()) {
    std::vector<double> xs;
    for (const auto* v : values) xs.push_back(v->at(key));
    std::tie(mean[key], stdev[key]) = mean_std(xs);
  }
}

std::set<std::string> keys(const MetricValues& v) {
  std::set<std::string> out;
  for (const auto& [k, _] : v) out.insert(k);
  return out;
}

}  // namespace

MetricReport aggregate_seeds(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw Error(ErrorKind::Consistency, "aggregate_seeds needs at least one report");
  const auto& first = reports.front();
  for (const auto& r : reports) {
    if (keys(r.overall) != keys(first.overall) || r.groups.size() != first.groups.size())
      throw Error(ErrorKind::Consistency, "seed reports have mismatched metric sets");
    for (std::size_t g = 0; g < r.groups.size(); ++g)
      if (r.groups[g].name != first.groups[g].name)
        throw Error(ErrorKind::Consistency, "seed reports have mismatched groups");
  }
  MetricReport out;
  out.cutoffs = first.cutoffs;
  out.seed_count = reports.size();
  std::vector<const MetricValues*> overall;
  for (const auto& r : reports) overall.push_back(&r.overall);
  aggregate_values(overall, out.overall, out.overall_std);
  for (std::size_t g = 0; g < first.groups.size(); ++g) {
    GroupReport group;
    group.name = first.groups[g].name;
    std::vector<const MetricValues*> defined;
    for (const auto& r : reports) {
      group.size += r.groups[g].size;
      if (r.groups[g].defined) defined.push_back(&r.groups[g].values);
    }
    group.defined = !defined.empty();
    if (group.defined) {
      for (const auto* v : defined)
        if (keys(*v) != keys(*defined.front()))
          throw Error(ErrorKind::Consistency, "group " + group.name + " has mismatched metrics");
      aggregate_values(defined, group.values, out.group_std[group.name]);
    }
    out.groups.push_back(std::move(group));
  }
  std::map<std::string, std::vector<double>> extras;
  for (const auto& r : reports)
    for (const auto& [k, v] : r.extras) extras[k].push_back(v);
  for (const auto& [k, xs] : extras) {
    if (xs.size() != reports.size())
      throw Error(ErrorKind::Consistency, "extra metric " + k + " missing from some seeds");
    const auto [m, s] = mean_std(xs);
    out.extras[k] = m;
    out.extras[k + "_std"] = s;
  }
  return out;
}

std::string format_percent(double value) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << value;
  return os.str();
}

std::string report_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["cutoffs"] = report.cutoffs;
  j["seed_count"] = report.seed_count;
  j["overall"] = report.overall;
  j["overall_std"] = report.overall_std;
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (const auto& g : report.groups) {
    nlohmann::ordered_json jg;
    jg["name"] = g.name;
    jg["size"] = g.size;
    jg["defined"] = g.defined;
    jg["values"] = g.values;
    const auto it = report.group_std.find(g.name);
    jg["std"] = it == report.group_std.end() ? MetricValues{} : it->second;
    groups.push_back(jg);
  }
  j["groups"] = groups;
  j["extras"] = report.extras;
  return j.dump(2);
}

MetricReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("report JSON: ") + e.what());
  }
  MetricReport r;
  r.cutoffs = j.at("cutoffs").get<std::vector<int>>();
  r.seed_count = j.at("seed_count").get<std::size_t>();
  r.overall = j.at("overall").get<MetricValues>();
  r.overall_std = j.at("overall_std").get<MetricValues>();
  for (const auto& jg : j.at("groups")) {
    GroupReport g;
    g.name = jg.at("name").get<std::string>();
    g.size = jg.at("size").get<std::size_t>();
    g.defined = jg.at("defined").get<bool>();
    g.values = jg.at("values").get<MetricValues>();
    auto stdev = jg.at("std").get<MetricValues>();
    if (!stdev.empty()) r.group_std[g.name] = std::move(stdev);
    r.groups.push_back(std::move(g));
  }
  r.extras = j.at("extras").get<std::map<std::string, double>>();
  return r;
}

std::string report_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "metric,group,mean,std,seeds\n" << std::setprecision(17);
  const auto row = [&](const std::string& metric, const std::string& group, double mean,
                       double stdev) {
    os << metric << ',' << group << ',' << mean << ',' << stdev << ',' << report.seed_count << '\n';
  };
  const auto std_of = [](const MetricValues& s, const std::string& k) {
    const auto it = s.find(k);
    return it == s.end() ? 0.0 : it->second;
  };
  for (const auto& [k, v] : report.overall) row(k, "overall", v, std_of(report.overall_std, k));
  for (const auto& g : report.groups) {
    if (!g.defined) continue;
    const auto it = report.group_std.find(g.name);
    for (const auto& [k, v] : g.values)
      row(k, g.name, v, it == report.group_std.end() ? 0.0 : std_of(it->second, k));
  }
  for (const auto& [k, v] : report.extras) {
    if (k.size() > 4 && k.ends_with("_std")) continue;
    row(k, "overall", v, std_of(report.extras, k + "_std"));
  }
  return os.str();
}

}  // namespace csrec::metrics
