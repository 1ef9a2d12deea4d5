#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "csrec/corpus.hpp"
#include "csrec/seqmodel.hpp"

namespace csrec::metrics {

using corpus::PopularityBins;
using corpus::SequenceSample;

struct RankResult {
  UserId user_id = 0;
  int rank = 0;  // 1-based over the full catalog
  std::optional<double> target_rating;
  bool popular_target = false;
  int history_length = 0;  // non-padding inputs
};

struct RankOptions {
  // Push already-seen input items below every unseen item.
  bool mask_history = false;
  int batch_size = 512;
};

std::vector<RankResult> rank_all(const seqmodel::Predictor& model,
                                 const std::vector<SequenceSample>& samples,
                                 const PopularityBins* bins = nullptr,
                                 const RankOptions& options = {});

// Percentages in [0, 100].
double recall_at_n(const std::vector<RankResult>& results, int n);
double ndcg_at_n(const std::vector<RankResult>& results, int n);

struct FilteredMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t qualifying = 0;
};
FilteredMetrics filtered_metrics(const std::vector<RankResult>& results, int n, double delta = 4.0);

// Metric name -> percentage, e.g. "recall@10", "ndcg+@10".
using MetricValues = std::map<std::string, double>;

struct GroupReport {
  std::string name;
  std::size_t size = 0;
  bool defined = true;
  MetricValues values;
};

struct MetricReport {
  std::vector<int> cutoffs;
  MetricValues overall;
  std::vector<GroupReport> groups;
  // Populated by aggregate_seeds.
  MetricValues overall_std;
  std::map<std::string, MetricValues> group_std;
  std::size_t seed_count = 1;
  std::map<std::string, double> extras;  // e.g. oracle_gap
};

// Plain metrics plus filtered ones when every result carries a rating and at
// least one reaches delta.
MetricValues compute_values(const std::vector<RankResult>& results, const std::vector<int>& cutoffs,
                            double delta = 4.0);

struct LengthBucket {
  int lo = 0;  // inclusive
  int hi = 0;  // inclusive
  std::string name() const;
};

// Quartile boundaries of the history lengths; duplicate buckets are merged.
std::vector<LengthBucket> length_quartiles(const std::vector<RankResult>& results);

MetricReport grouped_report(const std::vector<RankResult>& results,
                            const std::vector<LengthBucket>& length_buckets,
                            const std::vector<int>& cutoffs = {10, 20}, double delta = 4.0);

// Mean and sample standard deviation per metric across seed reports.
MetricReport aggregate_seeds(const std::vector<MetricReport>& reports);

std::string report_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text);
// metric,group,mean,std,seeds
std::string report_csv(const MetricReport& report);

// Three decimal places, matching the reporting convention.
std::string format_percent(double value);

}  // namespace csrec::metrics
