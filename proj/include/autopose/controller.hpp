#pragma once

#include "genotype.hpp"
#include "tape.hpp"

namespace autopose {

struct PolicySample {
  std::vector<ScaleVector> scales;
  double log_prob = 0.0;
  double entropy = 0.0;
};

struct BaselineState {
  double value = 0.0;
};

// LSTM policy over per-stage binary scale vectors. At every step the
// previous sample is embedded and fed back; each branch bit is an
// independent Bernoulli head. The output projection starts at zero so a
// fresh policy is exactly uniform. In single-branch mode each step is one
// (B+1)-way categorical choice (one active branch, or none).
template <typename T>
class Controller {
 public:
  struct Config {
    int B = 4;
    int steps = 3;  // scale vectors per trajectory
    int hidden = 64;
    int embed = 16;
    double entropy_bonus = 1e-4;
    double baseline_decay = 0.95;
    bool single_branch = false;
  };

  Controller(Config cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.B < 1 || cfg.steps < 1 || cfg.hidden < 1 || cfg.embed < 1)
      throw std::invalid_argument("controller: bad config");
    Rng rng(seed);
    const int H = cfg.hidden, E = cfg.embed;
    const double r = 1.0 / std::sqrt(static_cast<double>(H));
    init_uniform(params_.create("ctrl.w_ih", {4 * H, E}), r, rng);
    init_uniform(params_.create("ctrl.w_hh", {4 * H, H}), r, rng);
    params_.create("ctrl.bias", {4 * H});
    init_uniform(params_.create("ctrl.embed.w", {E, cfg.B}), 0.5, rng);
    params_.create("ctrl.embed.b", {E});
    params_.create("ctrl.start", {E});
    params_.create("ctrl.h0", {H});
    params_.create("ctrl.c0", {H});
    params_.create("ctrl.out.w", {cfg.B + 1, H});  // zero-init: uniform policy
    params_.create("ctrl.out.b", {cfg.B + 1});
  }

  const Config& cfg() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  Adam<T>& optimizer() { return opt_; }

  PolicySample sample(Rng& rng) {
    PolicySample out;
    Tape<T> t;
    auto [lp, ent] = rollout(t, &out.scales, &rng, false);
    out.log_prob = static_cast<double>(t.val(lp).data[0]);
    out.entropy = static_cast<double>(t.val(ent).data[0]);
    return out;
  }

  // Most-probable trajectory (bit = p >= 0.5; argmax category in
  // single-branch mode). Stable across repeated calls.
  PolicySample greedy_sample() {
    PolicySample out;
    Tape<T> t;
    auto [lp, ent] = rollout(t, &out.scales, nullptr, true);
    out.log_prob = static_cast<double>(t.val(lp).data[0]);
    out.entropy = static_cast<double>(t.val(ent).data[0]);
    return out;
  }

  double log_prob_of(const std::vector<ScaleVector>& scales) {
    check_shape(scales);
    auto traj = scales;
    Tape<T> t;
    auto [lp, ent] = rollout(t, &traj, nullptr, false);
    return static_cast<double>(t.val(lp).data[0]);
  }

  double entropy_of(const std::vector<ScaleVector>& scales) {
    check_shape(scales);
    auto traj = scales;
    Tape<T> t;
    auto [lp, ent] = rollout(t, &traj, nullptr, false);
    return static_cast<double>(t.val(ent).data[0]);
  }

  // One REINFORCE ascent step over a batch of (trajectory, reward) pairs.
  // The baseline EMA is updated after the gradient step.
  void reinforce_update(const std::vector<std::pair<PolicySample, double>>& samples,
                        BaselineState& baseline, double lr) {
    if (samples.empty()) throw std::invalid_argument("reinforce_update: no samples");
    double mean_r = 0.0;
    for (const auto& [s, r] : samples) {
      if (!std::isfinite(r)) throw std::invalid_argument("reinforce_update: non-finite reward");
      mean_r += r;
    }
    mean_r /= static_cast<double>(samples.size());

    params_.zero_grads();
    Tape<T> t;
    std::vector<int> terms;
    for (const auto& [s, r] : samples) {
      auto traj = s.scales;
      auto [lp, ent] = rollout(t, &traj, nullptr, false);
      terms.push_back(scale(t, lp, -(r - baseline.value)));
      if (cfg_.entropy_bonus != 0.0) terms.push_back(scale(t, ent, -cfg_.entropy_bonus));
    }
    t.backward(add_n(t, terms));
    opt_.lr = lr;
    opt_.step(params_);
    params_.zero_grads();
    baseline.value = cfg_.baseline_decay * baseline.value +
                     (1.0 - cfg_.baseline_decay) * mean_r;
  }

 private:
  void check_shape(const std::vector<ScaleVector>& scales) const {
    if (static_cast<int>(scales.size()) != cfg_.steps)
      throw std::invalid_argument("controller: trajectory must have " +
                                  std::to_string(cfg_.steps) + " scale vectors");
    for (const auto& sv : scales) {
      if (static_cast<int>(sv.size()) != cfg_.B)
        throw std::invalid_argument("controller: scale vector length mismatch");
      if (cfg_.single_branch) {
        int active = 0;
        for (int b : sv) active += b;
        if (active > 1)
          throw std::invalid_argument("controller: single-branch trajectory has >1 active bit");
      }
    }
  }

  // Runs the policy. If rng != nullptr (or greedy), emits a trajectory into
  // *scales; otherwise *scales must hold the trajectory to score. Returns
  // nodes for (sum log prob, sum stepwise entropy).
  std::pair<int, int> rollout(Tape<T>& t, std::vector<ScaleVector>* scales, Rng* rng, bool greedy) {
    const int H = cfg_.hidden, B = cfg_.B;
    const bool emitting = rng != nullptr || greedy;
    if (emitting) scales->clear();
    int h = t.use(params_.at("ctrl.h0"));
    int c = t.use(params_.at("ctrl.c0"));
    int x = t.use(params_.at("ctrl.start"));
    const int w_ih = t.use(params_.at("ctrl.w_ih"));
    const int w_hh = t.use(params_.at("ctrl.w_hh"));
    const int bias = t.use(params_.at("ctrl.bias"));
    const int w_o = t.use(params_.at("ctrl.out.w"));
    const int b_o = t.use(params_.at("ctrl.out.b"));
    std::vector<int> logps, ents;
    for (int step = 0; step < cfg_.steps; ++step) {
      int gates = add(t, linear(t, x, w_ih, bias), linear(t, h, w_hh, -1));
      int ig = sigmoid(t, chunk(t, gates, 0, H));
      int fg = sigmoid(t, chunk(t, gates, H, H));
      int gg = tanh_op(t, chunk(t, gates, 2 * H, H));
      int og = sigmoid(t, chunk(t, gates, 3 * H, H));
      c = add(t, mul(t, fg, c), mul(t, ig, gg));
      h = mul(t, og, tanh_op(t, c));
      int logits_all = linear(t, h, w_o, b_o);
      ScaleVector bits(static_cast<std::size_t>(B), 0);
      if (cfg_.single_branch) {
        int choice;
        if (emitting) {
          const auto& lv = t.val(logits_all);
          std::vector<double> p = softmax_values(lv);
          choice = greedy ? static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin())
                          : draw_categorical(p, *rng);
        } else {
          choice = B;  // "no branch"
          for (int b = 0; b < B; ++b)
            if ((*scales)[static_cast<std::size_t>(step)][static_cast<std::size_t>(b)]) choice = b;
        }
        if (choice < B) bits[static_cast<std::size_t>(choice)] = 1;
        logps.push_back(categorical_logprob(t, logits_all, choice));
        ents.push_back(categorical_entropy(t, logits_all));
      } else {
        int logits = chunk(t, logits_all, 0, B);
        if (emitting) {
          const auto& lv = t.val(logits);
          for (int b = 0; b < B; ++b) {
            const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(lv.data[b])));
            bits[static_cast<std::size_t>(b)] = greedy ? (p >= 0.5 ? 1 : 0)
                                                       : (rng->bernoulli(p) ? 1 : 0);
          }
        } else {
          bits = (*scales)[static_cast<std::size_t>(step)];
        }
        std::vector<int> ibits(bits.begin(), bits.end());
        logps.push_back(bernoulli_logprob(t, logits, ibits));
        ents.push_back(bernoulli_entropy(t, logits));
      }
      if (emitting) scales->push_back(bits);
      // feed the embedded sample into the next step
      Tensor<T> bt({B});
      for (int b = 0; b < B; ++b) bt.data[b] = static_cast<T>(bits[static_cast<std::size_t>(b)]);
      x = linear(t, t.leaf(std::move(bt)), t.use(params_.at("ctrl.embed.w")),
                 t.use(params_.at("ctrl.embed.b")));
    }
    return {add_n(t, logps), add_n(t, ents)};
  }

  static std::vector<double> softmax_values(const Tensor<T>& logits) {
    double m = logits.data[0];
    for (T v : logits.data) m = std::max(m, static_cast<double>(v));
    std::vector<double> p(logits.data.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::exp(static_cast<double>(logits.data[i]) - m);
      z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
  }

  static int draw_categorical(const std::vector<double>& p, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
  }

  Config cfg_;
  ParamStore<T> params_;
  Adam<T> opt_;
};

}  // namespace autopose
