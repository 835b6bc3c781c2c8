#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"
#include "dataio/dataio.hpp"

#include <json.hpp>

namespace avloc::evalkit {

// Upsampled per-source localization maps plus the class each map claims.
struct HeatmapPrediction {
  Tensor maps;  // (K,H,W)
  std::vector<std::string> classes;
};

// Per-source intersection-over-union against the class-matched ground-truth
// box. Each map is binarized at threshold_frac * its maximum; a source whose
// class has no box scores 0; when several boxes share the class the best
// score wins.
std::vector<double> ciou(const HeatmapPrediction& pred, const std::vector<dataio::GtBox>& gt,
                         double threshold_frac = 0.5);

enum class SampleRule { all_sources_pass, mean_sources };

// Collapse per-source scores into one sample score. all_sources_pass makes a
// sample succeed at threshold t only if every source scores >= t, which is
// the min over sources.
double reduce_sample(const std::vector<double>& source_scores, SampleRule rule);

double success_rate(const std::vector<double>& sample_scores, double threshold);

// Mean success rate over thresholds 0.00,0.05,...,0.95 with the >= convention
// (so an all-zero score list yields exactly 1/20).
double auc(const std::vector<double>& sample_scores);

// All-points interpolated precision/recall area. Returns 0 (and sets
// *no_positives when given) if nothing succeeded.
double average_precision(const std::vector<double>& confidences,
                         const std::vector<unsigned char>& successes,
                         bool* no_positives = nullptr);

struct PerSample {
  std::string clip_id;
  double score = 0.0;       // sample-level localization score
  double confidence = 0.0;  // max map value
  bool success = false;     // score >= metric threshold
  int K = 1;
};

struct MetricReport {
  std::string mode;  // "single" | "multi"
  double ap = 0.0;       // CAP in multi mode
  double iou_at_thr = 0.0;  // IoU@0.5 single / CIoU@0.3 multi
  double auc_value = 0.0;
  double threshold = 0.5;
  int flagged = 0;  // samples skipped due to prediction/ground-truth mismatch
  std::vector<PerSample> per_sample;
};

nlohmann::json metric_report_to_json(const MetricReport& r);
std::string metric_report_table(const MetricReport& r);
std::string metric_report_csv(const MetricReport& r);

}  // namespace avloc::evalkit
