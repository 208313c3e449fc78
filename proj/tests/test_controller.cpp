#include <catch2/catch_amalgamated.hpp>

#include "autopose/controller.hpp"

using namespace autopose;

namespace {

Controller<double>::Config small_cfg(int B = 2, int steps = 2) {
  Controller<double>::Config c;
  c.B = B;
  c.steps = steps;
  c.hidden = 16;
  c.embed = 8;
  return c;
}

void randomize_heads(Controller<double>& ctrl, unsigned seed, double mag = 1.0) {
  Rng rng(seed);
  for (auto& v : ctrl.params().at("ctrl.out.w").value.data) v = rng.normal(0, mag);
  for (auto& v : ctrl.params().at("ctrl.out.b").value.data) v = rng.normal(0, mag);
}

std::vector<std::string> snapshot(ParamStore<double>& ps) {
  std::vector<std::string> out;
  for (auto& [name, p] : ps) {
    std::string s;
    for (double v : p.value.data) s += std::to_string(v) + ",";
    out.push_back(name + "=" + s);
  }
  return out;
}

}  // namespace

TEST_CASE("fresh policy is uniform Bernoulli(0.5)") {
  Controller<double> ctrl(small_cfg(4, 3), 1);
  Rng rng(2);
  const int n = 10000;
  std::vector<double> rate(12, 0.0);
  for (int i = 0; i < n; ++i) {
    auto s = ctrl.sample(rng);
    CHECK_THAT(s.log_prob, Catch::Matchers::WithinRel(12.0 * std::log(0.5), 1e-9));
    CHECK_THAT(s.entropy, Catch::Matchers::WithinRel(12.0 * std::log(2.0), 1e-9));
    for (int t = 0; t < 3; ++t)
      for (int b = 0; b < 4; ++b) rate[static_cast<std::size_t>(4 * t + b)] += s.scales[t][b];
  }
  for (double r : rate) {
    CHECK(r / n > 0.47);
    CHECK(r / n < 0.53);
  }
}

TEST_CASE("sampling is deterministic given the seed") {
  Controller<double> ctrl(small_cfg(3, 2), 5);
  randomize_heads(ctrl, 6);
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) {
    auto sa = ctrl.sample(a);
    auto sb = ctrl.sample(b);
    CHECK(sa.scales == sb.scales);
    CHECK(sa.log_prob == sb.log_prob);
  }
}

TEST_CASE("log_prob_of agrees with sample() and normalizes") {
  Controller<double> ctrl(small_cfg(2, 2), 7);
  randomize_heads(ctrl, 8);
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    auto s = ctrl.sample(rng);
    CHECK_THAT(ctrl.log_prob_of(s.scales), Catch::Matchers::WithinRel(s.log_prob, 1e-10));
  }
  // exhaustive: probabilities over all 2^(steps*B) trajectories sum to 1
  double total = 0.0;
  for (int code = 0; code < 16; ++code) {
    std::vector<ScaleVector> traj = {{(code >> 0) & 1, (code >> 1) & 1},
                                     {(code >> 2) & 1, (code >> 3) & 1}};
    const double lp = ctrl.log_prob_of(traj);
    CHECK(lp < 0.0);
    total += std::exp(lp);
  }
  CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-6));
}

TEST_CASE("saturated logits drive log_prob toward zero") {
  Controller<double> ctrl(small_cfg(2, 2), 10);
  ctrl.params().at("ctrl.out.b").value.data = {40.0, 40.0, 0.0};
  std::vector<ScaleVector> ones = {{1, 1}, {1, 1}};
  const double lp = ctrl.log_prob_of(ones);
  CHECK(lp < 0.0);
  CHECK(lp > -1e-9);
}

TEST_CASE("empirical trajectory frequency matches exp(log_prob)") {
  Controller<double> ctrl(small_cfg(2, 1), 11);
  randomize_heads(ctrl, 12, 0.7);
  std::vector<ScaleVector> target = {{1, 0}};
  const double p = std::exp(ctrl.log_prob_of(target));
  Rng rng(13);
  const int n = 50000;
  int hits = 0;
  for (int i = 0; i < n; ++i)
    if (ctrl.sample(rng).scales == target) ++hits;
  const double freq = static_cast<double>(hits) / n;
  const double se = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(freq - p) < 3.0 * se + 1e-12);
}

TEST_CASE("log_prob_of validates trajectory shape") {
  Controller<double> ctrl(small_cfg(2, 2), 14);
  CHECK_THROWS_AS(ctrl.log_prob_of({{1, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(ctrl.log_prob_of({{1, 0, 1}, {0, 0, 0}}), std::invalid_argument);
}

TEST_CASE("zero-advantage update leaves parameters untouched") {
  Controller<double> ctrl(small_cfg(2, 2), 15);
  auto cfg = ctrl.cfg();
  Rng rng(16);
  auto s1 = ctrl.sample(rng);
  auto s2 = ctrl.sample(rng);
  BaselineState baseline;
  baseline.value = 0.37;
  Controller<double> copy(cfg, 15);
  // disable the entropy bonus for exactness
  Controller<double>::Config c2 = cfg;
  c2.entropy_bonus = 0.0;
  Controller<double> ctrl2(c2, 15);
  ctrl2.reinforce_update({{s1, 0.37}, {s2, 0.37}}, baseline, 0.01);
  CHECK(snapshot(ctrl2.params()) == snapshot(copy.params()));
  // baseline EMA still advances after the (zero) step
  CHECK_THAT(baseline.value, Catch::Matchers::WithinRel(0.37, 1e-12));
}

TEST_CASE("positive advantage raises trajectory log-probability") {
  Controller<double> ctrl(small_cfg(2, 2), 17);
  Rng rng(18);
  auto s = ctrl.sample(rng);
  const double before = ctrl.log_prob_of(s.scales);
  BaselineState baseline;  // value 0
  ctrl.reinforce_update({{s, 1.0}}, baseline, 0.01);
  CHECK(ctrl.log_prob_of(s.scales) > before);
}

TEST_CASE("probability mass moves from negative to positive advantage") {
  Controller<double> ctrl(small_cfg(2, 1), 19);
  std::vector<ScaleVector> tpos = {{1, 1}};
  std::vector<ScaleVector> tneg = {{0, 0}};
  // symmetric start: fresh policy gives both trajectories probability 1/4
  CHECK_THAT(ctrl.log_prob_of(tpos), Catch::Matchers::WithinRel(ctrl.log_prob_of(tneg), 1e-12));
  PolicySample pos, neg;
  pos.scales = tpos;
  neg.scales = tneg;
  BaselineState baseline;
  for (int i = 0; i < 5; ++i) ctrl.reinforce_update({{pos, 0.3}, {neg, -0.3}}, baseline, 0.02);
  CHECK(ctrl.log_prob_of(tpos) > ctrl.log_prob_of(tneg));
}

TEST_CASE("non-finite rewards are rejected") {
  Controller<double> ctrl(small_cfg(2, 2), 20);
  Rng rng(21);
  auto s = ctrl.sample(rng);
  BaselineState baseline;
  CHECK_THROWS_AS(
      ctrl.reinforce_update({{s, std::numeric_limits<double>::quiet_NaN()}}, baseline, 0.01),
      std::invalid_argument);
  CHECK_THROWS_AS(
      ctrl.reinforce_update({{s, std::numeric_limits<double>::infinity()}}, baseline, 0.01),
      std::invalid_argument);
  CHECK_THROWS_AS(ctrl.reinforce_update({}, baseline, 0.01), std::invalid_argument);
}

TEST_CASE("single-branch mode emits at most one active bit per step") {
  auto cfg = small_cfg(4, 3);
  cfg.single_branch = true;
  Controller<double> ctrl(cfg, 22);
  randomize_heads(ctrl, 23, 0.5);
  Rng rng(24);
  for (int i = 0; i < 200; ++i) {
    auto s = ctrl.sample(rng);
    for (const auto& sv : s.scales) {
      int active = 0;
      for (int b : sv) active += b;
      CHECK(active <= 1);
    }
    CHECK_THAT(ctrl.log_prob_of(s.scales), Catch::Matchers::WithinRel(s.log_prob, 1e-10));
  }
  // probabilities over the (B+1)^steps single-branch trajectories sum to 1
  double total = 0.0;
  for (int c0 = 0; c0 <= 4; ++c0)
    for (int c1 = 0; c1 <= 4; ++c1)
      for (int c2 = 0; c2 <= 4; ++c2) {
        std::vector<ScaleVector> traj(3, ScaleVector(4, 0));
        if (c0 < 4) traj[0][static_cast<std::size_t>(c0)] = 1;
        if (c1 < 4) traj[1][static_cast<std::size_t>(c1)] = 1;
        if (c2 < 4) traj[2][static_cast<std::size_t>(c2)] = 1;
        total += std::exp(ctrl.log_prob_of(traj));
      }
  CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-6));
  // multi-hot trajectories are rejected in this mode
  CHECK_THROWS_AS(ctrl.log_prob_of({{1, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}}),
                  std::invalid_argument);
}

TEST_CASE("greedy sample is the modal trajectory and is stable") {
  Controller<double> ctrl(small_cfg(2, 2), 25);
  randomize_heads(ctrl, 26, 2.0);
  auto g1 = ctrl.greedy_sample();
  auto g2 = ctrl.greedy_sample();
  CHECK(g1.scales == g2.scales);
  // no sampled trajectory beats the greedy one by more than prefix effects:
  // check greedy log-prob is the max over exhaustive enumeration
  double best = -1e300;
  std::vector<ScaleVector> best_traj;
  for (int code = 0; code < 16; ++code) {
    std::vector<ScaleVector> traj = {{(code >> 0) & 1, (code >> 1) & 1},
                                     {(code >> 2) & 1, (code >> 3) & 1}};
    const double lp = ctrl.log_prob_of(traj);
    if (lp > best) {
      best = lp;
      best_traj = traj;
    }
  }
  // greedy is stepwise-modal; on this fixture it coincides with the argmax
  CHECK(ctrl.log_prob_of(g1.scales) >= best - 1e-9);
}

TEST_CASE("REINFORCE learns the all-active bandit") {
  // reward = fraction of active bits; 200 steps must exceed 0.9 mean reward
  auto cfg = small_cfg(4, 3);
  cfg.hidden = 32;
  Controller<double> ctrl(cfg, 27);
  Rng rng(28);
  BaselineState baseline;
  auto mean_reward = [&](int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      auto s = ctrl.sample(rng);
      double r = 0.0;
      for (const auto& sv : s.scales)
        for (int b : sv) r += b;
      acc += r / 12.0;
    }
    return acc / n;
  };
  const double before = mean_reward(50);
  CHECK(before < 0.6);
  for (int step = 0; step < 200; ++step) {
    std::vector<std::pair<PolicySample, double>> batch;
    for (int k = 0; k < 4; ++k) {
      auto s = ctrl.sample(rng);
      double r = 0.0;
      for (const auto& sv : s.scales)
        for (int b : sv) r += b;
      batch.push_back({s, r / 12.0});
    }
    ctrl.reinforce_update(batch, baseline, 0.05);
  }
  const double after = mean_reward(50);
  INFO("mean reward before " << before << " after " << after);
  CHECK(after > 0.9);
}
