#include <doctest.h>

#include <cmath>
#include <limits>

#include "kdmot/error.hpp"
#include "kdmot/metrics.hpp"
#include "kdmot/random.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace kdmot;

namespace {

BBox box(int frame, int id, double left, double top, double w = 2, double h = 2) {
  BBox b;
  b.frame = frame;
  b.track_id = id;
  b.left = left;
  b.top = top;
  b.width = w;
  b.height = h;
  return b;
}

Sequence seq(std::vector<BBox> boxes, int n_frames = 4, std::string name = "s") {
  std::vector<int> frames;
  for (int f = 1; f <= n_frames; ++f) frames.push_back(f);
  return Sequence(std::move(name), 100, 100, 30.0, frames, std::move(boxes));
}

}  // namespace

TEST_CASE("iou") {
  CHECK(iou(box(1, 1, 0, 0, 1, 1), box(1, 1, 0.5, 0, 1, 1)) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(box(1, 1, 3, 4), box(1, 2, 3, 4)) == 1.0);
  CHECK(iou(box(1, 1, 0, 0), box(1, 2, 5, 5)) == 0.0);
  CHECK(iou(box(1, 1, 0, 0), box(1, 2, 2, 0)) == 0.0);  // touching edges
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const BBox a = box(1, 1, rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0.1, 4), rng.uniform(0.1, 4));
    const BBox b = box(1, 1, rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0.1, 4), rng.uniform(0.1, 4));
    CHECK(iou(a, b) == iou(b, a));
    CHECK(iou(a, b) >= 0.0);
    CHECK(iou(a, b) < 1.0);
  }
}

TEST_CASE("hungarian") {
  SUBCASE("examples") {
    Eigen::Matrix2d c;
    c << 1, 2, 2, 1;
    const AssignmentResult r = hungarian(c);
    CHECK(r.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});
    CHECK(r.total_cost == 2.0);
    CHECK(hungarian(Eigen::Matrix3d::Ones() - Eigen::Matrix3d::Identity()).total_cost == 0.0);
    Eigen::MatrixXd one(1, 1);
    one << 5;
    CHECK(hungarian(one).pairs.size() == 1);
    CHECK(hungarian(one).total_cost == 5.0);
    CHECK(hungarian(Eigen::MatrixXd(0, 3)).pairs.empty());
  }
  SUBCASE("ties resolve to the lowest row, then lowest column") {
    const AssignmentResult r = hungarian(Eigen::Matrix3d::Zero());
    CHECK(r.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}, {2, 2}});
    Eigen::Matrix3d c;
    c << 1, 0, 0,  //
        0, 1, 0,   //
        0, 0, 1;
    CHECK(hungarian(c).pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 2}, {2, 0}});
  }
  SUBCASE("rectangular") {
    Eigen::MatrixXd c(2, 3);
    c << 5, 1, 9,  //
        1, 5, 9;
    const AssignmentResult r = hungarian(c);
    CHECK(r.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}});
    CHECK(r.total_cost == 2.0);
    CHECK(hungarian(Eigen::MatrixXd(c.transpose())).total_cost == 2.0);
  }
  SUBCASE("non-finite costs") {
    Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
    c(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(hungarian(c), DomainError);
    c(1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(hungarian(c), DomainError);
  }
  SUBCASE("matches permutation brute force on small integer matrices") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
      const auto rows = static_cast<Eigen::Index>(rng.integer(1, 6));
      const auto cols = static_cast<Eigen::Index>(rng.integer(1, 6));
      Eigen::MatrixXd c(rows, cols);
      for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<double>(rng.integer(0, 3));
      const std::size_t n = static_cast<std::size_t>(std::max(rows, cols));
      std::vector<std::vector<double>> padded(n, std::vector<double>(n, 0.0));
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) padded[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = c(i, j);
      double best = 0.0;
      const auto perm = oracle::brute_force_assignment(padded, best);
      std::vector<std::pair<std::size_t, std::size_t>> expected;
      for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r)
        if (perm[r] < static_cast<std::size_t>(cols)) expected.emplace_back(r, perm[r]);
      const AssignmentResult got = hungarian(c);
      CHECK(got.total_cost == best);
      CHECK(got.pairs == expected);
    }
  }
}

TEST_CASE("clear_match and mota") {
  std::vector<BBox> track;
  for (int f = 1; f <= 4; ++f) track.push_back(box(f, 1, 10 + f, 10));
  const Sequence gt = seq(track);

  SUBCASE("identical prediction") {
    const ClearCounts c = clear_match(gt, gt);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.idsw == 0);
    CHECK(c.matches.size() == 4);
    for (const ClearMatch& m : c.matches) CHECK(m.iou == 1.0);
    CHECK(mota(c) == 1.0);
    CHECK(*motp(c, MotpMode::overlap) == 1.0);
    CHECK(*motp(c, MotpMode::distance) == 0.0);
  }
  SUBCASE("id change at frame 3") {
    std::vector<BBox> pred = track;
    pred[2].track_id = pred[3].track_id = 7;
    const ClearCounts c = clear_match(gt, seq(pred));
    CHECK(c.idsw == 1);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.frames[2].idsw == 1);
  }
  SUBCASE("empty prediction") {
    const ClearCounts c = clear_match(gt, seq({}));
    CHECK(c.fn == 4);
    CHECK(c.fp == 0);
    CHECK_FALSE(motp(c).has_value());
    CHECK(mota(c) == 0.0);
  }
  SUBCASE("carried pairs survive a better competitor") {
    // frame 1: gt 1 matches pred 5. frame 2: pred 6 overlaps perfectly, pred 5 still above threshold.
    const Sequence g = seq({box(1, 1, 0, 0, 4, 4), box(2, 1, 0, 0, 4, 4)}, 2);
    const Sequence p = seq({box(1, 5, 0, 0, 4, 4), box(2, 5, 0, 1, 4, 4), box(2, 6, 0, 0, 4, 4)}, 2);
    const ClearCounts c = clear_match(g, p);
    CHECK(c.idsw == 0);
    CHECK(c.fp == 1);
    CHECK(c.matches[1].pred_id == 5);
  }
  SUBCASE("boxes are clamped to the image before matching") {
    const Sequence g("s", 10, 10, 30.0, {1}, {box(1, 1, 8, 0, 4, 2)});
    const Sequence p("s", 10, 10, 30.0, {1}, {box(1, 1, 8, 0, 2, 2)});
    CHECK(clear_match(g, p).matches.at(0).iou == 1.0);
  }
  SUBCASE("formula") {
    ClearCounts c;
    c.fn = 1;
    c.fp = 1;
    CHECK(mota(c, 10) == doctest::Approx(0.8));
    c.fn = 0;
    c.fp = 5;
    CHECK(mota(c, 2) == -1.5);
    CHECK_THROWS_AS(mota(c, 0), DomainError);
  }
  SUBCASE("motp means") {
    ClearCounts c;
    c.matches = {{1, 1, 1, 1.0}, {1, 2, 2, 0.5}};
    CHECK(*motp(c, MotpMode::overlap) == 0.75);
    CHECK(*motp(c, MotpMode::distance) == 0.25);
  }
  CHECK_THROWS_AS(clear_match(gt, gt, 0.0), DomainError);
}

TEST_CASE("idf1") {
  std::vector<BBox> track;
  for (int f = 1; f <= 4; ++f) track.push_back(box(f, 1, 10 + f, 10));
  const Sequence gt = seq(track);
  CHECK(idf1(gt, gt) == 1.0);
  std::vector<BBox> split = track;
  split[2].track_id = split[3].track_id = 2;
  const IdentityCounts c = identity_counts(gt, seq(split));
  CHECK(c.idtp == 2);
  CHECK(c.idfp == 2);
  CHECK(c.idfn == 2);
  CHECK(idf1(c) == 0.5);
  CHECK(idf1(gt, seq({})) == 0.0);
  CHECK(idf1(seq({}), seq({})) == 1.0);
}

TEST_CASE("mt_ml") {
  std::vector<BBox> g, p;
  for (int f = 1; f <= 10; ++f) {
    g.push_back(box(f, 1, 0, 0));   // matched everywhere
    g.push_back(box(f, 2, 20, 0));  // matched once
    g.push_back(box(f, 3, 40, 0));  // matched 8 of 10
    g.push_back(box(f, 4, 60, 0));  // matched 2 of 10
    g.push_back(box(f, 5, 80, 0));  // matched 5 of 10
    p.push_back(box(f, 1, 0, 0));
    if (f == 1) p.push_back(box(f, 2, 20, 0));
    if (f <= 8) p.push_back(box(f, 3, 40, 0));
    if (f <= 2) p.push_back(box(f, 4, 60, 0));
    if (f <= 5) p.push_back(box(f, 5, 80, 0));
  }
  const Sequence gt = seq(g, 10), pred = seq(p, 10);
  const MtMl m = mt_ml(gt, clear_match(gt, pred));
  CHECK(m.tracks == 5);
  CHECK(m.mt == 2);
  CHECK(m.ml == 2);
  CHECK(m.mt_pct() == 40.0);
  CHECK(m.ml_pct() == 40.0);
}

TEST_CASE("random scenarios match the enumeration oracles") {
  Rng rng(2024);
  int switches = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const scenario::Scenario s = scenario::random_scenario(rng);
    const ClearCounts c = clear_match(s.gt, s.pred);
    const oracle::Clear o = oracle::clear(s.frames, s.gt_boxes, s.pred_boxes, 10, 10, 0.5);
    REQUIRE(c.fp == o.fp);
    REQUIRE(c.fn == o.fn);
    REQUIRE(c.idsw == o.idsw);
    REQUIRE(c.matches.size() == o.matches);
    switches += static_cast<int>(o.idsw);
    if (o.gt > 0) CHECK(mota(c) == 1.0 - static_cast<double>(o.fn + o.fp + o.idsw) / static_cast<double>(o.gt));
    if (o.matches > 0) {
      CHECK(*motp(c, MotpMode::overlap) == o.overlap_sum / static_cast<double>(o.matches));
      CHECK(*motp(c, MotpMode::distance) == o.distance_sum / static_cast<double>(o.matches));
    }
    const std::size_t idtp = oracle::best_idtp(s.gt_boxes, s.pred_boxes, 10, 10, 0.5);
    CHECK(identity_counts(s.gt, s.pred).idtp == idtp);
    const double expected_idf1 =
        s.gt_boxes.empty() && s.pred_boxes.empty()
            ? 1.0
            : 2.0 * static_cast<double>(idtp) / static_cast<double>(s.gt_boxes.size() + s.pred_boxes.size());
    CHECK(idf1(s.gt, s.pred) == expected_idf1);
    CHECK(idf1(s.gt, s.pred) == idf1(s.pred, s.gt));

    std::map<int, std::size_t> lifespan;
    for (const oracle::Box& b : s.gt_boxes) ++lifespan[b.id];
    std::size_t mt = 0, ml = 0;
    for (const auto& [id, len] : lifespan) {
      const double ratio = static_cast<double>(o.matched_per_gt.count(id) ? o.matched_per_gt.at(id) : 0) / static_cast<double>(len);
      mt += ratio >= 0.8;
      ml += ratio <= 0.2;
    }
    const MtMl m = mt_ml(s.gt, c);
    CHECK(m.tracks == lifespan.size());
    CHECK(m.mt == mt);
    CHECK(m.ml == ml);
  }
  CHECK(switches > 0);
}

TEST_CASE("evaluate pools counts") {
  // sequence a: 1 gt box, 3 false positives -> MOTA -2. sequence b: 9 perfect boxes -> MOTA 1.
  std::vector<BBox> ga{box(1, 1, 0, 0)}, pa{box(1, 1, 0, 0), box(1, 2, 20, 0), box(1, 3, 40, 0), box(1, 4, 60, 0)};
  std::vector<BBox> gb;
  for (int f = 1; f <= 3; ++f)
    for (int id = 1; id <= 3; ++id) gb.push_back(box(f, id, 20.0 * id, 0));
  const std::vector<Sequence> gt{seq(ga, 1, "a"), seq(gb, 3, "b")};
  const std::vector<Sequence> pred{seq(gb, 3, "b"), seq(pa, 1, "a")};
  const MetricReport r = evaluate(gt, pred);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].mota == -2.0);
  CHECK(r.rows[1].mota == 1.0);
  CHECK(r.overall.mota == doctest::Approx(1.0 - 3.0 / 10.0));
  CHECK(r.overall.mota != doctest::Approx((r.rows[0].mota + r.rows[1].mota) / 2));
  CHECK(r.overall.mt_ml.tracks == 4);
  CHECK(r.overall.mt_ml.mt == 4);
  CHECK(*r.rows[1].motp == 0.0);

  SUBCASE("csv column order") {
    const std::string csv = format_report_csv(r);
    CHECK(csv.rfind("sequence,MOTA,MOTP,IDF1,MT,ML\n", 0) == 0);
    CHECK(csv.find("\nb,1,0,1,3,0\n") != std::string::npos);
    CHECK(csv.find("\nOVERALL,") != std::string::npos);
  }
  SUBCASE("json round trip") {
    const MetricReport back = parse_report_json(format_report_json(r));
    CHECK(format_report_json(back) == format_report_json(r));
    CHECK(back.overall.mota == r.overall.mota);
    CHECK_THROWS_AS(parse_report_json("{\"schema_version\": 99}"), ParseError);
    CHECK_THROWS_AS(parse_report_json("not json"), ParseError);
  }
  SUBCASE("name mismatch") {
    CHECK_THROWS_AS(evaluate(gt, {seq(gb, 3, "b")}), DomainError);
    CHECK_THROWS_AS(evaluate(gt, {seq(gb, 3, "b"), seq(pa, 1, "c")}), DomainError);
  }
}
