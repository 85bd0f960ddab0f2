#include "kdmot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "kdmot/error.hpp"

namespace kdmot {

// ---------------------------------------------------------------------------
// Assignment

namespace detail {

namespace {

/// Shortest augmenting path solver with potentials on a square matrix.
/// Returns col_of_row and leaves u, v as dual potentials.
std::vector<std::size_t> solve_square(const Eigen::MatrixXd& a, std::vector<double>& u, std::vector<double>& v) {
  const std::size_t n = static_cast<std::size_t>(a.rows());
  const double inf = std::numeric_limits<double>::infinity();
  u.assign(n + 1, 0.0);
  v.assign(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of(n);
  for (std::size_t j = 1; j <= n; ++j) col_of[p[j] - 1] = j - 1;
  return col_of;
}

}  // namespace

AssignmentResult solve_assignment(const Eigen::MatrixXd& cost) {
  const auto rows = static_cast<std::size_t>(cost.rows());
  const auto cols = static_cast<std::size_t>(cost.cols());
  for (Eigen::Index i = 0; i < cost.size(); ++i) {
    if (std::isnan(cost.data()[i])) throw DomainError("hungarian: cost matrix contains NaN");
    if (!std::isfinite(cost.data()[i])) throw DomainError("hungarian: cost matrix contains an infinite entry");
  }
  AssignmentResult result;
  if (rows == 0 || cols == 0) return result;

  const std::size_t n = std::max(rows, cols);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  a.topLeftCorner(cost.rows(), cost.cols()) = cost;

  std::vector<double> u, v;
  std::vector<std::size_t> col_of = solve_square(a, u, v);
  std::vector<std::size_t> row_of(n);
  for (std::size_t i = 0; i < n; ++i) row_of[col_of[i]] = i;

  // Every optimal assignment lives on the zero-reduced-cost edges. Walk rows in
  // order and move each onto its lowest tight column that still admits a
  // perfect matching of the rows below it.
  const double tol = 1e-9 * (1.0 + a.cwiseAbs().maxCoeff());
  const auto tight = [&](std::size_t i, std::size_t j) {
    return a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - u[i + 1] - v[j + 1] <= tol;
  };
  std::vector<char> locked(n, 0);
  std::vector<char> seen(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (locked[j] || !tight(i, j)) continue;
      if (col_of[i] == j) break;
      const std::size_t target = col_of[i];
      std::fill(seen.begin(), seen.end(), 0);
      std::function<bool(std::size_t)> reroute = [&](std::size_t row) {
        for (std::size_t c = 0; c < n; ++c) {
          if (c == j || locked[c] || seen[c] || !tight(row, c)) continue;
          seen[c] = 1;
          if (c == target || reroute(row_of[c])) {
            col_of[row] = c;
            row_of[c] = row;
            return true;
          }
        }
        return false;
      };
      if (reroute(row_of[j])) {
        col_of[i] = j;
        row_of[j] = i;
        break;
      }
    }
    locked[col_of[i]] = 1;
  }

  for (std::size_t i = 0; i < rows; ++i) {
    if (col_of[i] >= cols) continue;
    result.pairs.emplace_back(i, col_of[i]);
    result.total_cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col_of[i]));
  }
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Overlap

double iou(const BBox& a, const BBox& b) {
  const double area_a = a.width * a.height;
  const double area_b = b.width * b.height;
  if (!(area_a > 0.0) || !(area_b > 0.0)) return 0.0;
  const double iw = std::min(a.right(), b.right()) - std::max(a.left, b.left);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top, b.top);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (area_a + area_b - inter);
}

BBox clamp_to_image(const BBox& box, int image_width, int image_height) {
  BBox out = box;
  const double left = std::clamp(box.left, 0.0, static_cast<double>(image_width));
  const double top = std::clamp(box.top, 0.0, static_cast<double>(image_height));
  const double right = std::clamp(box.right(), 0.0, static_cast<double>(image_width));
  const double bottom = std::clamp(box.bottom(), 0.0, static_cast<double>(image_height));
  out.left = left;
  out.top = top;
  out.width = right - left;
  out.height = bottom - top;
  return out;
}

namespace {

std::vector<int> union_frames(const Sequence& a, const Sequence& b) {
  std::set<int> all(a.frames().begin(), a.frames().end());
  all.insert(b.frames().begin(), b.frames().end());
  return {all.begin(), all.end()};
}

std::vector<BBox> clamped(std::span<const BBox> boxes, const Sequence& frame_of) {
  std::vector<BBox> out;
  out.reserve(boxes.size());
  for (const BBox& b : boxes) out.push_back(clamp_to_image(b, frame_of.image_width(), frame_of.image_height()));
  return out;
}

void check_threshold(double t) {
  if (!(t > 0.0 && t <= 1.0)) throw DomainError(fmt::format("iou threshold must be in (0, 1], got {}", t));
}

}  // namespace

// ---------------------------------------------------------------------------
// CLEAR

ClearCounts clear_match(const Sequence& gt, const Sequence& pred, double iou_threshold) {
  check_threshold(iou_threshold);
  ClearCounts counts;
  std::map<int, int> previous;    // gt id -> pred id, last processed frame only
  std::map<int, int> last_match;  // gt id -> pred id, most recent match ever

  for (const int frame : union_frames(gt, pred)) {
    const std::vector<BBox> g = clamped(gt.boxes_in(frame), gt);
    const std::vector<BBox> p = clamped(pred.boxes_in(frame), gt);
    FrameCounts fc;
    fc.frame = frame;
    fc.gt = g.size();
    fc.pred = p.size();

    std::vector<char> g_used(g.size(), 0), p_used(p.size(), 0);
    std::vector<ClearMatch> frame_matches;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto it = previous.find(g[i].track_id);
      if (it == previous.end()) continue;
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[j].track_id != it->second) continue;
        const double o = iou(g[i], p[j]);
        if (o >= iou_threshold) {
          g_used[i] = p_used[j] = 1;
          frame_matches.push_back({frame, g[i].track_id, p[j].track_id, o});
        }
        break;
      }
    }

    std::vector<std::size_t> gi, pj;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!g_used[i]) gi.push_back(i);
    for (std::size_t j = 0; j < p.size(); ++j)
      if (!p_used[j]) pj.push_back(j);
    if (!gi.empty() && !pj.empty()) {
      // Forbidden pairs cost more than any set of admissible ones can save.
      const double forbidden = static_cast<double>(std::min(gi.size(), pj.size())) + 1.0;
      Eigen::MatrixXd cost(static_cast<Eigen::Index>(gi.size()), static_cast<Eigen::Index>(pj.size()));
      Eigen::MatrixXd overlap(cost.rows(), cost.cols());
      for (std::size_t r = 0; r < gi.size(); ++r) {
        for (std::size_t c = 0; c < pj.size(); ++c) {
          const double o = iou(g[gi[r]], p[pj[c]]);
          overlap(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = o;
          cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = o >= iou_threshold ? 1.0 - o : forbidden;
        }
      }
      for (const auto& [r, c] : hungarian(cost).pairs) {
        const double o = overlap(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        if (o < iou_threshold) continue;
        frame_matches.push_back({frame, g[gi[r]].track_id, p[pj[c]].track_id, o});
      }
    }

    std::sort(frame_matches.begin(), frame_matches.end(),
              [](const ClearMatch& x, const ClearMatch& y) { return x.gt_id < y.gt_id; });
    previous.clear();
    for (const ClearMatch& m : frame_matches) {
      const auto it = last_match.find(m.gt_id);
      if (it != last_match.end() && it->second != m.pred_id) ++fc.idsw;
      last_match[m.gt_id] = m.pred_id;
      previous[m.gt_id] = m.pred_id;
      counts.matches.push_back(m);
    }
    fc.matches = frame_matches.size();
    fc.fn = fc.gt - fc.matches;
    fc.fp = fc.pred - fc.matches;
    counts.fp += fc.fp;
    counts.fn += fc.fn;
    counts.idsw += fc.idsw;
    counts.gt_total += fc.gt;
    counts.pred_total += fc.pred;
    counts.frames.push_back(fc);
  }
  return counts;
}

double mota(const ClearCounts& counts, std::size_t gt_total) {
  if (gt_total == 0) throw DomainError("MOTA is undefined without ground-truth boxes");
  return 1.0 - static_cast<double>(counts.fn + counts.fp + counts.idsw) / static_cast<double>(gt_total);
}

std::string_view to_string(MotpMode mode) { return mode == MotpMode::distance ? "distance" : "overlap"; }

MotpMode parse_motp_mode(std::string_view text) {
  if (text == "distance") return MotpMode::distance;
  if (text == "overlap") return MotpMode::overlap;
  throw DomainError(fmt::format("unknown MOTP mode '{}' (expected distance or overlap)", text));
}

namespace {

double motp_sum(const ClearCounts& counts, MotpMode mode) {
  double total = 0.0;
  for (const ClearMatch& m : counts.matches) total += mode == MotpMode::distance ? 1.0 - m.iou : m.iou;
  return total;
}

}  // namespace

std::optional<double> motp(const ClearCounts& counts, MotpMode mode) {
  if (counts.matches.empty()) return std::nullopt;
  return motp_sum(counts, mode) / static_cast<double>(counts.matches.size());
}

// ---------------------------------------------------------------------------
// Identity

IdentityCounts identity_counts(const Sequence& gt, const Sequence& pred, double iou_threshold) {
  check_threshold(iou_threshold);
  std::vector<int> gt_ids, pred_ids;
  for (const auto& [id, boxes] : gt.tracks()) gt_ids.push_back(id);
  for (const auto& [id, boxes] : pred.tracks()) pred_ids.push_back(id);
  const auto index_of = [](const std::vector<int>& ids, int id) {
    return static_cast<Eigen::Index>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };

  Eigen::MatrixXd overlap_frames =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(gt_ids.size()), static_cast<Eigen::Index>(pred_ids.size()));
  for (const int frame : union_frames(gt, pred)) {
    const std::vector<BBox> g = clamped(gt.boxes_in(frame), gt);
    const std::vector<BBox> p = clamped(pred.boxes_in(frame), gt);
    for (const BBox& a : g)
      for (const BBox& b : p)
        if (iou(a, b) >= iou_threshold) overlap_frames(index_of(gt_ids, a.track_id), index_of(pred_ids, b.track_id)) += 1;
  }

  IdentityCounts out;
  double idtp = 0.0;
  if (overlap_frames.size() > 0) {
    for (const auto& [r, c] : hungarian(-overlap_frames).pairs)
      idtp += overlap_frames(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  out.idtp = static_cast<std::size_t>(idtp);
  out.idfn = gt.boxes().size() - out.idtp;
  out.idfp = pred.boxes().size() - out.idtp;
  return out;
}

double idf1(const IdentityCounts& c) {
  const std::size_t denom = 2 * c.idtp + c.idfp + c.idfn;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(c.idtp) / static_cast<double>(denom);
}

MtMl mt_ml(const Sequence& gt, const ClearCounts& counts) {
  std::map<int, std::size_t> matched;
  for (const ClearMatch& m : counts.matches) ++matched[m.gt_id];
  MtMl out;
  for (const auto& [id, boxes] : gt.tracks()) {
    const std::size_t lifespan = boxes.size();
    const std::size_t hit = matched.count(id) ? matched.at(id) : 0;
    ++out.tracks;
    if (5 * hit >= 4 * lifespan) ++out.mt;
    if (5 * hit <= lifespan) ++out.ml;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

namespace {

void finish_row(MetricRow& row) {
  if (row.gt_total == 0) throw DomainError(fmt::format("sequence '{}' has no ground-truth boxes", row.sequence));
  row.mota = 1.0 - static_cast<double>(row.fn + row.fp + row.idsw) / static_cast<double>(row.gt_total);
  row.motp.reset();
  if (row.matches > 0) row.motp = row.motp_sum / static_cast<double>(row.matches);
  row.idf1 = idf1(row.identity);
}

}  // namespace

MetricReport evaluate(const std::vector<Sequence>& gt, const std::vector<Sequence>& pred, const EvalOptions& options) {
  check_threshold(options.iou_threshold);
  std::map<std::string, const Sequence*> by_name;
  for (const Sequence& p : pred) {
    if (!by_name.emplace(p.name(), &p).second) throw DomainError(fmt::format("duplicate prediction sequence '{}'", p.name()));
  }
  std::set<std::string> gt_names;
  for (const Sequence& g : gt) {
    if (!gt_names.insert(g.name()).second) throw DomainError(fmt::format("duplicate ground-truth sequence '{}'", g.name()));
    if (!by_name.count(g.name())) throw DomainError(fmt::format("no prediction for sequence '{}'", g.name()));
  }
  for (const auto& [name, seq] : by_name) {
    if (!gt_names.count(name)) throw DomainError(fmt::format("prediction '{}' has no ground truth", name));
  }

  MetricReport report;
  report.options = options;
  for (const Sequence& g : gt) {
    const Sequence& p = *by_name.at(g.name());
    const ClearCounts counts = clear_match(g, p, options.iou_threshold);
    MetricRow row;
    row.sequence = g.name();
    row.gt_total = counts.gt_total;
    row.pred_total = counts.pred_total;
    row.fp = counts.fp;
    row.fn = counts.fn;
    row.idsw = counts.idsw;
    row.matches = counts.matches.size();
    row.motp_sum = motp_sum(counts, options.motp_mode);
    row.identity = identity_counts(g, p, options.iou_threshold);
    row.mt_ml = mt_ml(g, counts);
    finish_row(row);

    report.rows.push_back(std::move(row));
  }
  if (report.rows.empty()) throw DomainError("evaluate: no sequences");
  report.overall = pooled_row(report.rows);
  return report;
}

MetricRow pooled_row(const std::vector<MetricRow>& rows, std::string name) {
  MetricRow all;
  all.sequence = std::move(name);
  for (const MetricRow& row : rows) {
    all.gt_total += row.gt_total;
    all.pred_total += row.pred_total;
    all.fp += row.fp;
    all.fn += row.fn;
    all.idsw += row.idsw;
    all.matches += row.matches;
    all.motp_sum += row.motp_sum;
    all.identity.idtp += row.identity.idtp;
    all.identity.idfp += row.identity.idfp;
    all.identity.idfn += row.identity.idfn;
    all.mt_ml.mt += row.mt_ml.mt;
    all.mt_ml.ml += row.mt_ml.ml;
    all.mt_ml.tracks += row.mt_ml.tracks;
  }
  finish_row(all);
  return all;
}

MetricReport merge_metric_reports(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw DomainError("no metric reports to merge");
  MetricReport merged;
  merged.options = reports.front().options;
  std::set<std::string> names;
  for (const MetricReport& r : reports) {
    if (r.options.iou_threshold != merged.options.iou_threshold || r.options.motp_mode != merged.options.motp_mode) {
      throw DomainError("cannot merge metric reports computed with different options");
    }
    for (const MetricRow& row : r.rows) {
      if (!names.insert(row.sequence).second) throw DomainError(fmt::format("sequence '{}' appears twice", row.sequence));
      merged.rows.push_back(row);
    }
  }
  merged.overall = pooled_row(merged.rows);
  return merged;
}

std::string format_report_csv(const MetricReport& report) {
  std::string out(kReportCsvHeader);
  out += '\n';
  const auto line = [&](const MetricRow& r) {
    out += fmt::format("{},{},{},{},{},{}\n", r.sequence, r.mota, r.motp ? fmt::format("{}", *r.motp) : "", r.idf1,
                       r.mt_ml.mt, r.mt_ml.ml);
  };
  for (const MetricRow& r : report.rows) line(r);
  if (!report.rows.empty()) line(report.overall);
  return out;
}

namespace {

using nlohmann::json;

json row_to_json(const MetricRow& r) {
  return json{{"sequence", r.sequence},
              {"MOTA", r.mota},
              {"MOTP", r.motp ? json(*r.motp) : json(nullptr)},
              {"IDF1", r.idf1},
              {"MT", r.mt_ml.mt},
              {"ML", r.mt_ml.ml},
              {"MT_pct", r.mt_ml.mt_pct()},
              {"ML_pct", r.mt_ml.ml_pct()},
              {"tracks", r.mt_ml.tracks},
              {"gt", r.gt_total},
              {"pred", r.pred_total},
              {"FP", r.fp},
              {"FN", r.fn},
              {"IDSW", r.idsw},
              {"matches", r.matches},
              {"motp_sum", r.motp_sum},
              {"IDTP", r.identity.idtp},
              {"IDFP", r.identity.idfp},
              {"IDFN", r.identity.idfn}};
}

MetricRow row_from_json(const json& j) {
  MetricRow r;
  r.sequence = j.at("sequence").get<std::string>();
  r.mota = j.at("MOTA").get<double>();
  if (!j.at("MOTP").is_null()) r.motp = j.at("MOTP").get<double>();
  r.idf1 = j.at("IDF1").get<double>();
  r.mt_ml.mt = j.at("MT").get<std::size_t>();
  r.mt_ml.ml = j.at("ML").get<std::size_t>();
  r.mt_ml.tracks = j.at("tracks").get<std::size_t>();
  r.gt_total = j.at("gt").get<std::size_t>();
  r.pred_total = j.at("pred").get<std::size_t>();
  r.fp = j.at("FP").get<std::size_t>();
  r.fn = j.at("FN").get<std::size_t>();
  r.idsw = j.at("IDSW").get<std::size_t>();
  r.matches = j.at("matches").get<std::size_t>();
  r.motp_sum = j.at("motp_sum").get<double>();
  r.identity.idtp = j.at("IDTP").get<std::size_t>();
  r.identity.idfp = j.at("IDFP").get<std::size_t>();
  r.identity.idfn = j.at("IDFN").get<std::size_t>();
  return r;
}

}  // namespace

std::string format_report_json(const MetricReport& report) {
  json rows = json::array();
  for (const MetricRow& r : report.rows) rows.push_back(row_to_json(r));
  const json doc{{"schema_version", kReportSchemaVersion},
                 {"kind", "metric_report"},
                 {"columns", {"sequence", "MOTA", "MOTP", "IDF1", "MT", "ML"}},
                 {"iou_threshold", report.options.iou_threshold},
                 {"motp_mode", std::string(to_string(report.options.motp_mode))},
                 {"rows", rows},
                 {"overall", row_to_json(report.overall)}};
  return doc.dump(2) + "\n";
}

MetricReport parse_report_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    const int version = doc.at("schema_version").get<int>();
    if (version != kReportSchemaVersion) {
      throw ParseError(fmt::format("unsupported metric report schema version {}", version), 0);
    }
    if (doc.at("kind").get<std::string>() != "metric_report") throw ParseError("not a metric report", 0);
    MetricReport report;
    report.options.iou_threshold = doc.at("iou_threshold").get<double>();
    report.options.motp_mode = parse_motp_mode(doc.at("motp_mode").get<std::string>());
    for (const json& r : doc.at("rows")) report.rows.push_back(row_from_json(r));
    report.overall = row_from_json(doc.at("overall"));
    return report;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("metric report: {}", e.what()), 0);
  } catch (const DomainError& e) {
    throw ParseError(fmt::format("metric report: {}", e.what()), 0);
  }
}

}  // namespace kdmot
