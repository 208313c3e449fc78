#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "autopose/metrics.hpp"
#include "autopose/rng.hpp"

using namespace autopose;

namespace {

KeypointSet kps(std::vector<std::array<double, 2>> pts, std::vector<int> vis, double scale,
                double k_uniform = 0.1) {
  KeypointSet s;
  s.points = std::move(pts);
  s.visibility = std::move(vis);
  s.scale = scale;
  s.k.assign(s.points.size(), k_uniform);
  return s;
}

// Independent AP computation for fixtures whose instances are spatially
// disjoint: per image, each detection pairs with the ground truth of highest
// OKS via exhaustive assignment, then precision/recall is integrated on the
// 101-point grid written out longhand.
double oracle_ap_at(const std::vector<std::vector<InstancePrediction>>& preds,
                    const std::vector<std::vector<InstanceGroundTruth>>& gts, double thr) {
  struct Det {
    double score;
    bool tp;
  };
  std::vector<Det> dets;
  int num_gt = 0;
  for (std::size_t img = 0; img < preds.size(); ++img) {
    for (const auto& g : gts[img]) {
      bool any = false;
      for (int v : g.kps.visibility) any = any || v > 0;
      if (any) ++num_gt;
    }
    // exhaustive max-cardinality matching (fixtures are tiny)
    const auto& ds = preds[img];
    std::vector<int> best_assign(ds.size(), -1);
    int best_matches = -1;
    std::vector<int> assign(ds.size(), -1);
    std::function<void(std::size_t, std::vector<bool>&, int)> rec =
        [&](std::size_t d, std::vector<bool>& used, int matches) {
          if (d == ds.size()) {
            if (matches > best_matches) {
              best_matches = matches;
              best_assign = assign;
            }
            return;
          }
          rec(d + 1, used, matches);  // leave unmatched
          for (std::size_t g = 0; g < gts[img].size(); ++g) {
            if (used[g]) continue;
            bool any = false;
            for (int v : gts[img][g].kps.visibility) any = any || v > 0;
            if (!any) continue;
            auto o = oks(ds[d].kps, gts[img][g].kps);
            if (!o || *o < thr) continue;
            used[g] = true;
            assign[d] = static_cast<int>(g);
            rec(d + 1, used, matches + 1);
            assign[d] = -1;
            used[g] = false;
          }
        };
    std::vector<bool> used(gts[img].size(), false);
    rec(0, used, 0);
    for (std::size_t d = 0; d < ds.size(); ++d)
      dets.push_back({ds[d].score, best_assign[d] >= 0});
  }
  std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });
  std::vector<double> prec, rec_v;
  int tp = 0, fp = 0;
  for (const auto& d : dets) {
    d.tp ? ++tp : ++fp;
    prec.push_back(double(tp) / (tp + fp));
    rec_v.push_back(double(tp) / num_gt);
  }
  for (int i = int(prec.size()) - 2; i >= 0; --i) prec[std::size_t(i)] = std::max(prec[std::size_t(i)], prec[std::size_t(i) + 1]);
  double ap = 0;
  for (int r = 0; r <= 100; ++r) {
    double target = r / 100.0;
    double p = 0;
    for (std::size_t j = 0; j < rec_v.size(); ++j)
      if (rec_v[j] >= target) {
        p = prec[j];
        break;
      }
    ap += p;
  }
  return ap / 101.0;
}

}  // namespace

TEST_CASE("heatmap_mse basics") {
  Tensor<double> a(shape4(1, 2, 3, 3), 0.5), b(shape4(1, 2, 3, 3), 0.5);
  Tensor<double> vis({1, 2}, 1.0);
  CHECK(heatmap_mse(a, b, vis) == 0.0);
  for (auto& v : a.data) v += 0.25;  // constant offset c
  CHECK_THAT(heatmap_mse(a, b, vis), Catch::Matchers::WithinRel(0.0625, 1e-12));
  // garbage in an invisible channel leaves the loss unchanged
  Tensor<double> vis2({1, 2});
  vis2.data = {1, 0};
  const double before = heatmap_mse(a, b, vis2);
  for (int i = 9; i < 18; ++i) a.data[std::size_t(i)] = 1e6;
  CHECK(heatmap_mse(a, b, vis2) == before);
  CHECK_THROWS_AS(heatmap_mse(a, Tensor<double>(shape4(1, 2, 2, 2)), vis), std::invalid_argument);
}

TEST_CASE("decode_keypoints") {
  SECTION("gaussian peak decodes near its center") {
    Tensor<double> hm({1, 16, 12});
    const double cx = 10, cy = 7, sigma = 2.0;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 12; ++x)
        hm.data[std::size_t(y * 12 + x)] =
            std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma));
    for (bool refine : {false, true}) {
      auto kp = decode_keypoints(hm, refine);
      CHECK(std::abs(kp[0].x - 40.0) <= 2.0);
      CHECK(std::abs(kp[0].y - 28.0) <= 2.0);
      CHECK(kp[0].score > 0.9);
    }
  }
  SECTION("uniform heatmap resolves to the first index") {
    Tensor<double> hm({2, 4, 5}, 0.125);
    auto kp = decode_keypoints(hm, true);
    CHECK(kp[0].x == 0.0);
    CHECK(kp[0].y == 0.0);
    CHECK(kp[1].x == 0.0);
  }
  SECTION("border peaks stay in bounds") {
    Tensor<double> hm({1, 4, 5});
    hm.data[19] = 5.0;  // bottom-right corner
    auto kp = decode_keypoints(hm, true);
    CHECK(kp[0].x == 16.0);
    CHECK(kp[0].y == 12.0);
  }
}

TEST_CASE("oks unit cases") {
  SECTION("exact prediction scores 1") {
    auto gt = kps({{3, 4}, {10, 2}}, {2, 1}, 5.0);
    CHECK(*oks(gt, gt) == 1.0);
  }
  SECTION("distance s*k*sqrt(2) gives exp(-1) to 1e-12") {
    auto gt = kps({{10, 10}}, {2}, 2.0, 0.5);  // s*k = 1
    auto pred = kps({{11, 11}}, {2}, 2.0, 0.5);
    CHECK_THAT(*oks(pred, gt), Catch::Matchers::WithinAbs(std::exp(-1.0), 1e-12));
  }
  SECTION("invisible keypoints are masked") {
    auto gt = kps({{5, 5}, {7, 7}}, {2, 0}, 3.0);
    auto pred = kps({{5, 5}, {9999, -9999}}, {2, 0}, 3.0);
    CHECK(*oks(pred, gt) == 1.0);
  }
  SECTION("no visible keypoints is undefined") {
    auto gt = kps({{5, 5}}, {0}, 3.0);
    CHECK_FALSE(oks(gt, gt).has_value());
  }
  SECTION("rigid translation and joint rescale invariance") {
    Rng rng(3);
    auto gt = kps({{3, 4}, {8, 1}, {2, 9}}, {2, 2, 1}, 4.0);
    auto pred = kps({{3.5, 4.2}, {7.1, 1.3}, {2.2, 8.5}}, {2, 2, 2}, 4.0);
    const double base = *oks(pred, gt);
    auto gt2 = gt;
    auto pred2 = pred;
    for (auto* s : {&gt2, &pred2})
      for (auto& p : s->points) {
        p[0] += 17.5;
        p[1] -= 3.25;
      }
    CHECK_THAT(*oks(pred2, gt2), Catch::Matchers::WithinAbs(base, 1e-12));
    auto gt3 = gt;
    auto pred3 = pred;
    for (auto* s : {&gt3, &pred3}) {
      for (auto& p : s->points) {
        p[0] *= 3.0;
        p[1] *= 3.0;
      }
      s->scale *= 3.0;
    }
    CHECK_THAT(*oks(pred3, gt3), Catch::Matchers::WithinAbs(base, 1e-10));
  }
  SECTION("mismatched sizes and bad scale are rejected") {
    auto gt = kps({{1, 1}}, {2}, 2.0);
    auto pred = kps({{1, 1}, {2, 2}}, {2, 2}, 2.0);
    CHECK_THROWS_AS(oks(pred, gt), std::invalid_argument);
    auto bad = kps({{1, 1}}, {2}, 0.0);
    CHECK_THROWS_AS(oks(gt, bad), std::invalid_argument);
  }
}

TEST_CASE("average precision") {
  SECTION("perfect predictions score AP = AR = 1") {
    std::vector<std::vector<InstancePrediction>> preds(3);
    std::vector<std::vector<InstanceGroundTruth>> gts(3);
    Rng rng(5);
    for (int img = 0; img < 3; ++img)
      for (int i = 0; i < 2; ++i) {
        auto g = kps({{rng.uniform(10, 50), rng.uniform(10, 50)},
                      {rng.uniform(60, 90), rng.uniform(60, 90)}},
                     {2, 2}, 40.0);
        gts[std::size_t(img)].push_back({g, 40.0 * 40.0});
        preds[std::size_t(img)].push_back({g, rng.uniform(0.5, 1.0)});
      }
    auto r = average_precision(preds, gts);
    CHECK_THAT(r.ap, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(r.ar, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(r.ap50, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK(r.ap_m > 0.99);  // all areas are medium here
    CHECK(r.ap_l == -1.0);
  }
  SECTION("uniform OKS 0.6 passes AP50 and fails AP75") {
    // single keypoint at distance d with exp(-d^2/(2 s^2 k^2)) = 0.6
    const double s = 10.0, k = 0.1;
    const double d = std::sqrt(-2.0 * s * s * k * k * std::log(0.6));
    std::vector<std::vector<InstancePrediction>> preds(4);
    std::vector<std::vector<InstanceGroundTruth>> gts(4);
    for (int img = 0; img < 4; ++img) {
      auto g = kps({{50, 50}}, {2}, s, k);
      auto p = kps({{50 + d, 50}}, {2}, s, k);
      gts[std::size_t(img)].push_back({g, s * s});
      preds[std::size_t(img)].push_back({p, 0.9});
    }
    auto r = average_precision(preds, gts);
    CHECK_THAT(r.ap50, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK(r.ap75 == 0.0);
  }
  SECTION("five-instance fixture matches the exhaustive matcher") {
    // 3 images, 5 instances, mixed quality, one false positive, one miss
    std::vector<std::vector<InstancePrediction>> preds(3);
    std::vector<std::vector<InstanceGroundTruth>> gts(3);
    auto inst = [&](double cx, double cy) {
      return kps({{cx, cy}, {cx + 8, cy + 2}, {cx - 5, cy + 6}}, {2, 2, 2}, 30.0);
    };
    auto shift = [](KeypointSet s, double dx) {
      for (auto& p : s.points) p[0] += dx;
      return s;
    };
    gts[0].push_back({inst(40, 40), 900});
    gts[0].push_back({inst(160, 40), 900});
    gts[1].push_back({inst(40, 140), 900});
    gts[1].push_back({inst(160, 140), 900});
    gts[2].push_back({inst(100, 100), 900});
    preds[0].push_back({shift(inst(40, 40), 0.5), 0.95});
    preds[0].push_back({shift(inst(160, 40), 3.0), 0.90});
    preds[1].push_back({shift(inst(40, 140), 6.0), 0.85});
    preds[1].push_back({inst(300, 300), 0.80});  // false positive, far away
    // gts[1][1] has no prediction; gts[2][0] gets a mediocre one
    preds[2].push_back({shift(inst(100, 100), 4.5), 0.70});
    auto r = average_precision(preds, gts);
    for (double thr : {0.5, 0.75, 0.95}) {
      auto mine = average_precision(preds, gts, {thr});
      CHECK_THAT(mine.ap, Catch::Matchers::WithinAbs(oracle_ap_at(preds, gts, thr), 1e-12));
    }
    double mean = 0;
    for (double thr : oks_thresholds()) mean += oracle_ap_at(preds, gts, thr);
    CHECK_THAT(r.ap, Catch::Matchers::WithinAbs(mean / 10.0, 1e-12));
  }
  SECTION("improving one prediction never lowers AP (monotonicity)") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::vector<InstancePrediction>> preds(2);
      std::vector<std::vector<InstanceGroundTruth>> gts(2);
      for (int img = 0; img < 2; ++img)
        for (int i = 0; i < 2; ++i) {
          double cx = 40 + 80 * i, cy = 40 + 60 * img;
          auto g = kps({{cx, cy}, {cx + 6, cy - 3}}, {2, 2}, 25.0);
          gts[std::size_t(img)].push_back({g, 625});
          auto p = g;
          for (auto& pt : p.points) {
            pt[0] += rng.uniform(-6, 6);
            pt[1] += rng.uniform(-6, 6);
          }
          preds[std::size_t(img)].push_back({p, rng.uniform(0.1, 1.0)});
        }
      const double before = average_precision(preds, gts).ap;
      // move one prediction halfway to its ground truth
      auto& p = preds[0][0].kps;
      const auto& g = gts[0][0].kps;
      for (std::size_t k2 = 0; k2 < p.points.size(); ++k2) {
        p.points[k2][0] = 0.5 * (p.points[k2][0] + g.points[k2][0]);
        p.points[k2][1] = 0.5 * (p.points[k2][1] + g.points[k2][1]);
      }
      CHECK(average_precision(preds, gts).ap >= before - 1e-12);
    }
  }
  SECTION("empty ground truth is an error") {
    std::vector<std::vector<InstancePrediction>> preds(1);
    std::vector<std::vector<InstanceGroundTruth>> gts(1);
    CHECK_THROWS_AS(average_precision(preds, gts), std::invalid_argument);
  }
}

TEST_CASE("pck") {
  SECTION("exact predictions give 100 percent everywhere") {
    std::vector<KeypointSet> gts, preds;
    Rng rng(9);
    for (int i = 0; i < 4; ++i) {
      auto g = kps({{rng.uniform(0, 50), rng.uniform(0, 50)}, {rng.uniform(0, 50), 30}}, {2, 2}, 10);
      gts.push_back(g);
      preds.push_back(g);
    }
    auto r = pck(preds, gts, std::vector<double>(4, 20.0));
    CHECK(r.total == 100.0);
    for (double j : r.per_joint) CHECK(j == 100.0);
  }
  SECTION("boundary distance is inclusive") {
    auto g = kps({{10, 10}}, {2}, 5);
    auto p = kps({{10 + 0.5 * 8.0, 10}}, {2}, 5);  // exactly threshold * normalizer
    auto r = pck({p}, {g}, {8.0}, 0.5);
    CHECK(r.total == 100.0);
    auto p2 = kps({{10 + 0.5 * 8.0 + 1e-6, 10}}, {2}, 5);
    CHECK(pck({p2}, {g}, {8.0}, 0.5).total == 0.0);
  }
  SECTION("hand-computed fixture") {
    // 10 instances, 2 joints; joint 0 correct in 7, joint 1 correct in 4,
    // with one invisible joint-1 annotation (9 visible)
    std::vector<KeypointSet> gts, preds;
    std::vector<double> norms(10, 10.0);
    for (int i = 0; i < 10; ++i) {
      auto g = kps({{20, 20}, {40, 40}}, {2, i == 9 ? 0 : 2}, 10);
      auto p = g;
      if (i >= 7) p.points[0][0] += 6.0;               // joint 0 wrong in 3
      if (i >= 4 && i != 9) p.points[1][1] += 5.001;   // joint 1 wrong in 5 of 9 visible
      gts.push_back(g);
      preds.push_back(p);
    }
    auto r = pck(preds, gts, norms, 0.5);
    CHECK_THAT(r.per_joint[0], Catch::Matchers::WithinAbs(70.0, 1e-9));
    CHECK_THAT(r.per_joint[1], Catch::Matchers::WithinAbs(100.0 * 4 / 9, 1e-9));
    CHECK_THAT(r.total, Catch::Matchers::WithinAbs(100.0 * 11 / 19, 1e-9));
  }
  CHECK_THROWS_AS(pck({}, {}, {}), std::invalid_argument);
}

TEST_CASE("flip-averaged inference") {
  SECTION("identity network: un-flipping cancels the mirror exactly") {
    Tensor<double> img(shape4(1, 1, 2, 2));
    img.data = {1, 2, 3, 4};
    auto fwd = [](const Tensor<double>& x) { return x; };
    auto out = flip_average_inference(fwd, img, {});
    CHECK(out.data == img.data);
    // a network that constantly returns the plain image exposes the mirror:
    // the un-flipped branch then contributes mirror(image)
    auto fwd_const = [&img](const Tensor<double>&) { return img; };
    auto mixed = flip_average_inference(fwd_const, img, {});
    CHECK(mixed.data == std::vector<double>{1.5, 1.5, 3.5, 3.5});
  }
  SECTION("symmetric input is a fixed point") {
    Tensor<double> img(shape4(1, 2, 2, 4));
    img.data = {1, 2, 2, 1, 5, 0, 0, 5, 1, 2, 2, 1, 5, 0, 0, 5};  // both channels symmetric, equal
    auto fwd = [](const Tensor<double>& x) { return x; };
    auto once = flip_average_inference(fwd, img, {{0, 1}});
    CHECK(once.data == img.data);
    auto twice = flip_average_inference(fwd, once, {{0, 1}});
    CHECK(twice.data == once.data);
  }
  SECTION("invalid pair maps are rejected") {
    Tensor<double> img(shape4(1, 2, 2, 2), 1.0);
    auto fwd = [](const Tensor<double>& x) { return x; };
    CHECK_THROWS_AS(flip_average_inference(fwd, img, {{0, 5}}), std::invalid_argument);
    CHECK_THROWS_AS(flip_average_inference(fwd, img, {{1, 1}}), std::invalid_argument);
  }
}

TEST_CASE("flop accounting") {
  SECTION("single 3x3 conv fixture") {
    auto r = count_flops({{"conv", 3, 16, 32, 64, 48}});
    CHECK(r.macs == 14155776);
    CHECK(r.flops() == 2 * 14155776);
  }
  SECTION("doubling channels multiplies conv MACs by 4") {
    auto a = count_flops({{"conv", 3, 16, 32, 64, 48}});
    auto b = count_flops({{"conv", 3, 32, 64, 64, 48}});
    CHECK(b.macs == 4 * a.macs);
  }
  CHECK(count_flops({}).macs == 0);
}
