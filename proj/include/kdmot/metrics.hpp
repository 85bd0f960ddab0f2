#pragma once

// CLEAR-MOT and identity metrics on MOTChallenge-style sequences.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kdmot/mot_data.hpp"

namespace kdmot {

struct AssignmentResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), ascending rows
  double total_cost = 0.0;
};

namespace detail {
AssignmentResult solve_assignment(const Eigen::MatrixXd& cost);
}

/// Minimum-cost assignment covering the smaller side of a rectangular matrix.
/// Among optimal assignments (within 1e-9 relative) the lexicographically
/// smallest one wins: row 0 takes the lowest feasible column, then row 1, ...
/// Rectangular input is padded with zero-cost dummies placed after the real
/// rows/columns. Throws DomainError on NaN or infinite entries.
template <typename Derived>
AssignmentResult hungarian(const Eigen::MatrixBase<Derived>& cost) {
  return detail::solve_assignment(cost.template cast<double>().eval());
}

/// Intersection over union. 0 for disjoint boxes or zero-area input.
double iou(const BBox& a, const BBox& b);

/// Box restricted to [0, width] x [0, height].
BBox clamp_to_image(const BBox& box, int image_width, int image_height);

inline constexpr double kDefaultIouThreshold = 0.5;

struct ClearMatch {
  int frame = 0;
  int gt_id = 0;
  int pred_id = 0;
  double iou = 0.0;
};

struct FrameCounts {
  int frame = 0;
  std::size_t gt = 0, pred = 0, matches = 0, fp = 0, fn = 0, idsw = 0;
};

struct ClearCounts {
  std::vector<FrameCounts> frames;
  std::vector<ClearMatch> matches;  // frame order, then gt id
  std::size_t fp = 0, fn = 0, idsw = 0;
  std::size_t gt_total = 0, pred_total = 0;
};

/// Frame-by-frame matching. Pairs from the previous frame are kept while their
/// IoU stays at or above the threshold; the rest are assigned with cost 1 - IoU.
/// Boxes are clamped to the ground-truth image before any overlap is measured.
ClearCounts clear_match(const Sequence& gt, const Sequence& pred, double iou_threshold = kDefaultIouThreshold);

/// 1 - (FN + FP + IDSW) / gt_total. Throws DomainError when gt_total is 0.
double mota(const ClearCounts& counts, std::size_t gt_total);
inline double mota(const ClearCounts& counts) { return mota(counts, counts.gt_total); }

enum class MotpMode { distance, overlap };
std::string_view to_string(MotpMode mode);
MotpMode parse_motp_mode(std::string_view text);

/// Mean (1 - IoU) in distance mode, mean IoU in overlap mode; empty without matches.
std::optional<double> motp(const ClearCounts& counts, MotpMode mode = MotpMode::distance);

struct IdentityCounts {
  std::size_t idtp = 0, idfp = 0, idfn = 0;
};

/// Globally optimal one-to-one gt/pred track mapping maximising IDTP.
IdentityCounts identity_counts(const Sequence& gt, const Sequence& pred, double iou_threshold = kDefaultIouThreshold);

/// 2 IDTP / (2 IDTP + IDFP + IDFN); 1 when both sequences are empty.
double idf1(const IdentityCounts& counts);
inline double idf1(const Sequence& gt, const Sequence& pred, double iou_threshold = kDefaultIouThreshold) {
  return idf1(identity_counts(gt, pred, iou_threshold));
}

struct MtMl {
  std::size_t mt = 0, ml = 0, tracks = 0;
  double mt_pct() const { return tracks == 0 ? 0.0 : 100.0 * static_cast<double>(mt) / static_cast<double>(tracks); }
  double ml_pct() const { return tracks == 0 ? 0.0 : 100.0 * static_cast<double>(ml) / static_cast<double>(tracks); }
};

/// Mostly tracked: matched in at least 80% of the track's boxes. Mostly lost:
/// matched in at most 20%. Both bounds inclusive.
MtMl mt_ml(const Sequence& gt, const ClearCounts& counts);

struct EvalOptions {
  double iou_threshold = kDefaultIouThreshold;
  MotpMode motp_mode = MotpMode::distance;
};

struct MetricRow {
  std::string sequence;
  double mota = 0.0;
  std::optional<double> motp;
  double idf1 = 0.0;
  MtMl mt_ml;
  // raw counts behind the ratios
  std::size_t gt_total = 0, pred_total = 0, fp = 0, fn = 0, idsw = 0, matches = 0;
  double motp_sum = 0.0;  // sum of per-match distances (or overlaps)
  IdentityCounts identity;
};

struct MetricReport {
  EvalOptions options;
  std::vector<MetricRow> rows;
  MetricRow overall;
};

/// Per-sequence rows plus an "OVERALL" row pooled from summed counts.
/// Sequences pair up by name; throws DomainError when the name sets differ.
MetricReport evaluate(const std::vector<Sequence>& gt, const std::vector<Sequence>& pred, const EvalOptions& options = {});

/// Overall row from summed counts of the given rows.
MetricRow pooled_row(const std::vector<MetricRow>& rows, std::string name = "OVERALL");

/// Concatenates per-sequence rows and re-pools the overall row. Throws
/// DomainError when options differ or a sequence name repeats.
MetricReport merge_metric_reports(const std::vector<MetricReport>& reports);

inline constexpr int kReportSchemaVersion = 1;
inline constexpr std::string_view kReportCsvHeader = "sequence,MOTA,MOTP,IDF1,MT,ML";

/// CSV with columns sequence,MOTA,MOTP,IDF1,MT,ML. MOTA, MOTP and IDF1 are
/// fractions; MT and ML are track counts; missing MOTP is left blank.
std::string format_report_csv(const MetricReport& report);
std::string format_report_json(const MetricReport& report);
/// Throws ParseError on malformed input or a schema version mismatch.
MetricReport parse_report_json(std::string_view text);

}  // namespace kdmot
