#include "evalkit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "core/error.hpp"

namespace avloc::evalkit {

std::vector<double> ciou(const HeatmapPrediction& pred, const std::vector<dataio::GtBox>& gt,
                         double threshold_frac) {
  if (pred.maps.ndim() != 3) throw ValidationError("ciou expects (K,H,W) maps");
  const int K = pred.maps.dim(0), H = pred.maps.dim(1), W = pred.maps.dim(2);
  if (static_cast<int>(pred.classes.size()) != K)
    throw ValidationError("ciou: one class per source map required");
  std::vector<double> scores(static_cast<std::size_t>(K), 0.0);
  for (int k = 0; k < K; ++k) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) mx = std::max(mx, pred.maps.at(k, y, x));
    // Non-positive maxima leave nothing selectable.
    if (!(mx > 0.0)) continue;
    const double thr = threshold_frac * mx;
    double best = 0.0;
    bool matched = false;
    for (const auto& box : gt) {
      if (box.cls != pred.classes[static_cast<std::size_t>(k)]) continue;
      matched = true;
      long long inter = 0, mask_area = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          if (pred.maps.at(k, y, x) >= thr) {
            ++mask_area;
            if (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1) ++inter;
          }
        }
      const long long box_area =
          static_cast<long long>(box.x1 - box.x0) * (box.y1 - box.y0);
      const long long uni = mask_area + box_area - inter;
      best = std::max(best, uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0);
    }
    scores[static_cast<std::size_t>(k)] = matched ? best : 0.0;
  }
  return scores;
}

double reduce_sample(const std::vector<double>& source_scores, SampleRule rule) {
  if (source_scores.empty()) throw ValidationError("reduce_sample: no sources");
  if (rule == SampleRule::all_sources_pass)
    return *std::min_element(source_scores.begin(), source_scores.end());
  return std::accumulate(source_scores.begin(), source_scores.end(), 0.0) /
         static_cast<double>(source_scores.size());
}

double success_rate(const std::vector<double>& sample_scores, double threshold) {
  if (sample_scores.empty()) throw ValidationError("success_rate over an empty set");
  std::size_t hits = 0;
  for (double s : sample_scores)
    if (s >= threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(sample_scores.size());
}

double auc(const std::vector<double>& sample_scores) {
  if (sample_scores.empty()) throw ValidationError("auc over an empty set");
  double acc = 0.0;
  for (int i = 0; i < 20; ++i) acc += success_rate(sample_scores, i * 0.05);
  return acc / 20.0;
}

double average_precision(const std::vector<double>& confidences,
                         const std::vector<unsigned char>& successes, bool* no_positives) {
  if (confidences.size() != successes.size())
    throw ValidationError("average_precision: size mismatch");
  if (confidences.empty()) throw ValidationError("average_precision over an empty set");
  const std::size_t n = confidences.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidences[a] > confidences[b];
  });
  std::size_t positives = 0;
  for (unsigned char s : successes) positives += s ? 1 : 0;
  if (no_positives) *no_positives = positives == 0;
  if (positives == 0) return 0.0;

  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (successes[order[rank]]) ++tp;
    precision[rank] = static_cast<double>(tp) / static_cast<double>(rank + 1);
  }
  // all-points interpolation: precision envelope from the right
  for (std::size_t rank = n - 1; rank-- > 0;)
    precision[rank] = std::max(precision[rank], precision[rank + 1]);
  double ap = 0.0;
  for (std::size_t rank = 0; rank < n; ++rank)
    if (successes[order[rank]]) ap += precision[rank];
  return ap / static_cast<double>(positives);
}

nlohmann::json metric_report_to_json(const MetricReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : r.per_sample)
    per.push_back({{"clip_id", s.clip_id},
                   {"score", s.score},
                   {"confidence", s.confidence},
                   {"success", s.success},
                   {"K", s.K}});
  const char* ap_name = r.mode == "multi" ? "cap" : "ap";
  const char* iou_name = r.mode == "multi" ? "ciou_at_03" : "iou_at_05";
  return nlohmann::json{{"mode", r.mode},          {ap_name, r.ap},
                        {iou_name, r.iou_at_thr},  {"auc", r.auc_value},
                        {"threshold", r.threshold}, {"flagged", r.flagged},
                        {"n_samples", r.per_sample.size()}, {"per_sample", per}};
}

std::string metric_report_table(const MetricReport& r) {
  std::ostringstream os;
  const bool multi = r.mode == "multi";
  os << "mode: " << r.mode << "  samples: " << r.per_sample.size() << "\n";
  os << (multi ? "CAP" : "AP") << ": " << r.ap << "\n";
  os << (multi ? "CIoU@" : "IoU@") << r.threshold << ": " << r.iou_at_thr << "\n";
  os << "AUC: " << r.auc_value << "\n";
  if (r.flagged) os << "flagged samples: " << r.flagged << "\n";
  return os.str();
}

std::string metric_report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "clip_id,score,confidence,success,K\n";
  for (const auto& s : r.per_sample)
    os << s.clip_id << "," << s.score << "," << s.confidence << "," << (s.success ? 1 : 0) << ","
       << s.K << "\n";
  return os.str();
}

}  // namespace avloc::evalkit
