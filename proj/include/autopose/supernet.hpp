#pragma once

#include <optional>

#include "genotype.hpp"
#include "nn.hpp"

namespace autopose {

enum class MixMode {
  Stochastic,     // softmax((alpha + gumbel)/tau)
  Deterministic,  // softmax(alpha/tau), no noise
  Discretized,    // one-hot argmax(alpha)
};

struct SupernetConfig {
  GenoConfig geno;
  int input_h = 256;
  int input_w = 192;
  int num_keypoints = 17;
  double tau_start = 5.0;
  double tau_end = 0.5;
  bool preact = false;                 // conv ops as BN->ReLU->conv
  std::string head_fusion = "concat";  // "concat" | "sum"
  int stem_expansion = 4;              // bottleneck reduction factor

  int num_modules() const { return geno.num_stages * geno.modules_per_stage; }
  int branch_scale(int b) const { return 1 << (b + 2); }  // 0-based branch

  std::pair<int, int> branch_dims(int b) const {
    const int s = branch_scale(b);
    return {(input_h + s - 1) / s, (input_w + s - 1) / s};
  }

  void check() const {
    geno.check();
    // the 4x branch carries the output heatmap and must divide exactly;
    // coarser branches use ceiling division
    if (input_h % 4 != 0 || input_w % 4 != 0)
      throw std::invalid_argument("supernet: input size " + std::to_string(input_h) + "x" +
                                  std::to_string(input_w) + " must be divisible by 4");
    if (num_keypoints < 1) throw std::invalid_argument("supernet: num_keypoints must be positive");
    if (tau_start <= 0 || tau_end <= 0)
      throw std::invalid_argument("supernet: temperatures must be positive");
    if (head_fusion != "concat" && head_fusion != "sum")
      throw std::invalid_argument("supernet: head_fusion must be concat or sum");
  }

  std::string fingerprint() const {
    std::ostringstream os;
    os << geno.fingerprint() << ";in=" << input_h << "x" << input_w << ";kp=" << num_keypoints
       << ";head=" << head_fusion << ";preact=" << (preact ? 1 : 0);
    return os.str();
  }
};

// Test hook: suppresses selected aggregation branch edges entirely (the term
// is omitted from the node sum, not zero-weighted).
struct BranchEdgeMask {
  std::vector<int> masked_branches;  // 1-based source branches to drop
  bool masked(int branch1b) const {
    for (int b : masked_branches)
      if (b == branch1b) return true;
    return false;
  }
};

// Relaxed op mixture on one edge: out = sum_k w_k * inputs[k] with
// w = softmax((alpha + noise)/tau). `noise` empty means deterministic mode.
template <typename T>
int gumbel_softmax_mix(Tape<T>& t, int alpha_edge, const std::vector<int>& inputs_per_op,
                       double tau, const std::vector<double>& noise) {
  if (tau <= 0.0) throw std::invalid_argument("gumbel_softmax_mix: tau must be positive");
  if (t.val(alpha_edge).numel() != static_cast<std::int64_t>(inputs_per_op.size()))
    throw std::invalid_argument("gumbel_softmax_mix: alpha length mismatch");
  int shifted = alpha_edge;
  if (!noise.empty()) {
    if (noise.size() != inputs_per_op.size())
      throw std::invalid_argument("gumbel_softmax_mix: noise length mismatch");
    Tensor<T> g({static_cast<int>(noise.size())});
    for (std::size_t i = 0; i < noise.size(); ++i) g.data[i] = static_cast<T>(noise[i]);
    shifted = add_const(t, alpha_edge, g);
  }
  int w = softmax_vec(t, scale(t, shifted, 1.0 / tau));
  return weighted_sum(t, inputs_per_op, w);
}

template <typename T>
class Supernet {
 public:
  Supernet(SupernetConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.check();
    Rng rng(init_seed);
    build_params(rng);
  }

  const SupernetConfig& cfg() const { return cfg_; }
  ParamStore<T>& weights() { return weights_; }
  ParamStore<T>& alphas() { return alphas_; }
  const ParamStore<T>& weights() const { return weights_; }
  const ParamStore<T>& alphas() const { return alphas_; }

  // --- stem ---------------------------------------------------------------

  std::vector<int> stem_forward(Tape<T>& t, int img) {
    const auto& shape = t.val(img).shape;
    if (shape.size() != 4 || shape[1] != 3)
      throw std::invalid_argument("stem: expects NCHW images with 3 channels");
    if (shape[2] != cfg_.input_h || shape[3] != cfg_.input_w)
      throw std::invalid_argument("stem: image size mismatch with config");
    const auto& ch = cfg_.geno.channels;
    int x = conv_bn_relu(t, img, "stem.c1", 2, 1);
    x = conv_bn_relu(t, x, "stem.c2", 2, 1);
    x = bottleneck(t, x);
    std::vector<int> bundle = {x};
    for (int b = 1; b < cfg_.geno.B; ++b)
      bundle.push_back(conv_bn_relu(t, bundle.back(), "stem.down" + std::to_string(b), 2, 1));
    for (int b = 0; b < cfg_.geno.B; ++b) {
      auto [h, w] = cfg_.branch_dims(b);
      const auto& s = t.val(bundle[b]).shape;
      if (s[2] != h || s[3] != w || s[1] != ch[b])
        throw std::runtime_error("stem: branch shape bug");
    }
    return bundle;
  }

  // --- cells ----------------------------------------------------------------

  // which: 0 = I1, 1 = I2.
  int individual_cell_forward(Tape<T>& t, int module, int branch, int which, int x, MixMode mode,
                              Rng* gumbel, double tau) {
    const int C = cfg_.geno.channels[branch];
    if (t.val(x).shape[1] != C)
      throw std::invalid_argument("individual cell: input channel mismatch");
    const std::string wkey = module_key(module, branch) + (which == 0 ? "i1." : "i2.");
    const std::string akey = alpha_key(module, branch, which);
    std::vector<int> nodes = {x};
    int edge = 0;
    for (int i = 1; i <= cfg_.geno.K_I; ++i) {
      std::vector<int> terms;
      for (int j = 0; j < i; ++j)
        terms.push_back(mixed_op(t, nodes[j], wkey + "e" + std::to_string(edge) + ".",
                                 akey + "e" + std::to_string(edge), mode, gumbel, tau, branch)),
            ++edge;
      nodes.push_back(add_n(t, terms));
    }
    std::vector<int> inner(nodes.begin() + 1, nodes.end());
    return conv1x1_out(t, concat_channels(t, inner), wkey + "out");
  }

  // srcs: one node per source branch at its native scale/channels.
  int aggregation_cell_forward(Tape<T>& t, int module, int branch, const std::vector<int>& srcs,
                               MixMode mode, Rng* gumbel, double tau,
                               const BranchEdgeMask* mask = nullptr) {
    const int B = cfg_.geno.B;
    if (static_cast<int>(srcs.size()) != B)
      throw std::invalid_argument("aggregation cell: bundle must contain all branches");
    const std::string wkey = module_key(module, branch) + "agg.";
    auto [th, tw] = cfg_.branch_dims(branch);
    // resample + project every source to this branch's scale and width
    std::vector<int> proj(srcs.size());
    for (int sb = 0; sb < B; ++sb) {
      int x = srcs[sb];
      const std::string pk = wkey + "proj" + std::to_string(sb + 1);
      if (sb < branch) {  // finer -> strided 1x1 conv
        const int stride = 1 << (branch - sb);
        x = conv2d(t, x, t.use(weights_.at(pk + ".w")), t.use(weights_.at(pk + ".b")), stride, 0);
      } else if (sb == branch) {
        x = conv2d(t, x, t.use(weights_.at(pk + ".w")), t.use(weights_.at(pk + ".b")), 1, 0);
      } else {  // coarser -> nearest upsample + 1x1 conv
        x = nearest_resize(t, x, th, tw);
        x = conv2d(t, x, t.use(weights_.at(pk + ".w")), t.use(weights_.at(pk + ".b")), 1, 0);
      }
      proj[sb] = x;
    }
    if (cfg_.geno.no_agg) {  // plain fusion: concat + 1x1 conv, no searchable edges
      return conv1x1_out(t, concat_channels(t, proj), wkey + "fuse");
    }
    const std::string akey = alpha_key(module, branch, 2);
    const int KM = cfg_.geno.K_M;
    std::vector<int> nodes = {-1};  // aggregation nodes are 1-based; no node 0
    int intra = 0;
    const int intra_count = aggregation_intra_edge_count(KM);
    for (int i = 1; i <= KM; ++i) {
      std::vector<int> terms;
      for (int j = 1; j < i; ++j)
        terms.push_back(mixed_op(t, nodes[j], wkey + "e" + std::to_string(intra) + ".",
                                 akey + "e" + std::to_string(intra), mode, gumbel, tau, branch)),
            ++intra;
      for (int sb = 0; sb < B; ++sb) {
        const int flat = intra_count + (i - 1) * B + sb;
        if (mask && mask->masked(sb + 1)) {
          if (mode == MixMode::Stochastic && gumbel)  // keep the noise stream aligned
            for (int k = 0; k < kNumOps; ++k) gumbel->gumbel();
          continue;
        }
        terms.push_back(mixed_op(t, proj[sb], wkey + "be" + std::to_string(flat) + ".",
                                 akey + "e" + std::to_string(flat), mode, gumbel, tau, branch));
      }
      if (terms.empty()) {
        // every input masked away: the node is an empty sum
        const auto& ps = t.val(proj[0]).shape;
        nodes.push_back(t.leaf(Tensor<T>(ps)));
      } else {
        nodes.push_back(add_n(t, terms));
      }
    }
    std::vector<int> inner(nodes.begin() + 1, nodes.end());
    return conv1x1_out(t, concat_channels(t, inner), wkey + "out");
  }

  // --- multi-scale module ---------------------------------------------------

  std::vector<int> multi_scale_module_forward(Tape<T>& t, int module, const std::vector<int>& in,
                                              const ScaleVector& beta, MixMode mode, Rng* gumbel,
                                              double tau, const BranchEdgeMask* mask = nullptr) {
    const int B = cfg_.geno.B;
    if (static_cast<int>(beta.size()) != B)
      throw std::invalid_argument("module: beta length must equal B");
    std::vector<int> srcs(in);
    for (int b = 0; b < B; ++b) {
      if (!beta[b]) continue;  // deactivated: cells untouched, raw input feeds aggregation
      int x = individual_cell_forward(t, module, b, 0, in[b], mode, gumbel, tau);
      x = individual_cell_forward(t, module, b, 1, x, mode, gumbel, tau);
      srcs[b] = x;
    }
    std::vector<int> out(in);
    for (int b = 0; b < B; ++b)
      if (beta[b]) out[b] = aggregation_cell_forward(t, module, b, srcs, mode, gumbel, tau, mask);
    return out;
  }

  // --- head -------------------------------------------------------------------

  int head_forward(Tape<T>& t, const std::vector<int>& bundle) {
    if (static_cast<int>(bundle.size()) != cfg_.geno.B)
      throw std::invalid_argument("head: bundle must contain all branches");
    auto [h0, w0] = cfg_.branch_dims(0);
    if (cfg_.head_fusion == "sum") {
      std::vector<int> projected;
      for (int b = 0; b < cfg_.geno.B; ++b) {
        int x = bundle[b];
        if (b > 0) x = nearest_resize(t, x, h0, w0);
        const std::string pk = "head.proj" + std::to_string(b + 1);
        projected.push_back(
            conv2d(t, x, t.use(weights_.at(pk + ".w")), t.use(weights_.at(pk + ".b")), 1, 0));
      }
      return conv2d(t, add_n(t, projected), t.use(weights_.at("head.out.w")),
                    t.use(weights_.at("head.out.b")), 1, 1);
    }
    std::vector<int> ups = {bundle[0]};
    for (int b = 1; b < cfg_.geno.B; ++b) ups.push_back(nearest_resize(t, bundle[b], h0, w0));
    return conv2d(t, concat_channels(t, ups), t.use(weights_.at("head.out.w")),
                  t.use(weights_.at("head.out.b")), 1, 1);
  }

  // --- full supernet ----------------------------------------------------------

  // module_betas: one ScaleVector per module (stage-level vectors must be
  // broadcast by the caller; see expand_stage_betas).
  int forward(Tape<T>& t, const Tensor<T>& images, const std::vector<ScaleVector>& module_betas,
              MixMode mode, Rng* gumbel, double tau, const BranchEdgeMask* mask = nullptr) {
    if (static_cast<int>(module_betas.size()) != cfg_.num_modules())
      throw std::invalid_argument("supernet: need one scale vector per module");
    if (mode == MixMode::Stochastic && gumbel == nullptr)
      throw std::invalid_argument("supernet: stochastic mode needs a noise source");
    int img = t.leaf(images);
    std::vector<int> bundle = stem_forward(t, img);
    for (int m = 0; m < cfg_.num_modules(); ++m)
      bundle = multi_scale_module_forward(t, m, bundle, module_betas[static_cast<std::size_t>(m)],
                                          mode, gumbel, tau, mask);
    return head_forward(t, bundle);
  }

  // Sum of per-edge Shannon entropies (nats) of softmax(alpha).
  double alpha_entropy() const {
    double h = 0.0;
    for (const auto& [name, p] : alphas_) {
      std::vector<double> logits(p.value.data.begin(), p.value.data.end());
      h += entropy_of_logits(logits);
    }
    return h;
  }

  int alpha_edge_count() const { return static_cast<int>(alphas_.size()); }

  std::string alpha_name(int module, int branch, int role, int edge) const {
    return alpha_key(module, branch, role) + "e" + std::to_string(edge);
  }

 private:
  std::string module_key(int module, int branch) const {
    return "m" + std::to_string(module) + ".b" + std::to_string(branch + 1) + ".";
  }

  // role: 0 = I1, 1 = I2, 2 = aggregation. Stage-derived so alpha sharing
  // follows the genotype convention.
  std::string alpha_key(int module, int branch, int role) const {
    const int stage = module / cfg_.geno.modules_per_stage;
    return "alpha." + cell_key_for(cfg_.geno, stage, branch, role) + ".";
  }

  int conv_bn_relu(Tape<T>& t, int x, const std::string& key, int stride, int pad) {
    int y = conv2d(t, x, t.use(weights_.at(key + ".w")), -1, stride, pad);
    y = batchnorm(t, y, t.use(weights_.at(key + ".g")), t.use(weights_.at(key + ".b")));
    return relu(t, y);
  }

  int conv1x1_out(Tape<T>& t, int x, const std::string& key) {
    return conv2d(t, x, t.use(weights_.at(key + ".w")), t.use(weights_.at(key + ".b")), 1, 0);
  }

  int bottleneck(Tape<T>& t, int x) {
    int y = conv_bn_relu(t, x, "stem.bneck1", 1, 0);
    y = conv_bn_relu(t, y, "stem.bneck2", 1, 1);
    int z = conv2d(t, y, t.use(weights_.at("stem.bneck3.w")), -1, 1, 0);
    z = batchnorm(t, z, t.use(weights_.at("stem.bneck3.g")), t.use(weights_.at("stem.bneck3.b")));
    return relu(t, add(t, z, x));
  }

  // One relaxed edge: all six candidate ops mixed by softmaxed alpha (or the
  // argmax op alone in discretized mode).
  int mixed_op(Tape<T>& t, int x, const std::string& wkey, const std::string& akey, MixMode mode,
               Rng* gumbel, double tau, int branch) {
    if (mode == MixMode::Discretized) {
      const auto& a = alphas_.at(akey).value;
      int best = 0;
      for (int k = 1; k < kNumOps; ++k)
        if (a.data[k] > a.data[best]) best = k;
      return op_forward(t, x, wkey, static_cast<OpKind>(best));
    }
    std::vector<int> ops(kNumOps);
    for (int k = 0; k < kNumOps; ++k) ops[k] = op_forward(t, x, wkey, static_cast<OpKind>(k));
    std::vector<double> noise;
    if (mode == MixMode::Stochastic) {
      noise.resize(kNumOps);
      for (auto& g : noise) g = gumbel->gumbel();
    }
    return gumbel_softmax_mix(t, t.use(alphas_.at(akey)), ops, tau, noise);
  }

  int op_forward(Tape<T>& t, int x, const std::string& wkey, OpKind op) {
    switch (op) {
      case OpKind::Conv1x1:
        return conv_op(t, x, wkey + "c1", 0);
      case OpKind::Conv3x3:
        return conv_op(t, x, wkey + "c3", 1);
      case OpKind::Conv5x5:
        return conv_op(t, x, wkey + "c5", 2);
      case OpKind::AvgPool3x3:
        return avgpool3(t, x);
      case OpKind::MaxPool3x3:
        return maxpool3(t, x);
      case OpKind::Skip:
        return x;
    }
    throw std::logic_error("unreachable");
  }

  int conv_op(Tape<T>& t, int x, const std::string& key, int pad) {
    if (cfg_.preact) {
      int y = batchnorm(t, x, t.use(weights_.at(key + ".g")), t.use(weights_.at(key + ".b")));
      y = relu(t, y);
      return conv2d(t, y, t.use(weights_.at(key + ".w")), -1, 1, pad);
    }
    int y = conv2d(t, x, t.use(weights_.at(key + ".w")), -1, 1, pad);
    y = batchnorm(t, y, t.use(weights_.at(key + ".g")), t.use(weights_.at(key + ".b")));
    return relu(t, y);
  }

  // --- parameter construction -------------------------------------------------

  void make_conv_bn(const std::string& key, int cout, int cin, int k, Rng& rng) {
    init_he_normal(weights_.create(key + ".w", {cout, cin, k, k}), cin * k * k, rng);
    init_const(weights_.create(key + ".g", {cout}), 1.0);
    init_const(weights_.create(key + ".b", {cout}), 0.0);
  }

  void make_conv_bias(const std::string& key, int cout, int cin, int k, Rng& rng) {
    init_he_normal(weights_.create(key + ".w", {cout, cin, k, k}), cin * k * k, rng);
    init_const(weights_.create(key + ".b", {cout}), 0.0);
  }

  void make_edge_ops(const std::string& prefix, int c, Rng& rng) {
    make_conv_bn(prefix + "c1", c, c, 1, rng);
    make_conv_bn(prefix + "c3", c, c, 3, rng);
    make_conv_bn(prefix + "c5", c, c, 5, rng);
  }

  void build_params(Rng& rng) {
    const auto& ch = cfg_.geno.channels;
    const int B = cfg_.geno.B;
    make_conv_bn("stem.c1", ch[0], 3, 3, rng);
    make_conv_bn("stem.c2", ch[0], ch[0], 3, rng);
    const int mid = std::max(1, ch[0] / cfg_.stem_expansion);
    make_conv_bn("stem.bneck1", mid, ch[0], 1, rng);
    make_conv_bn("stem.bneck2", mid, mid, 3, rng);
    make_conv_bn("stem.bneck3", ch[0], mid, 1, rng);
    for (int b = 1; b < B; ++b)
      make_conv_bn("stem.down" + std::to_string(b), ch[b], ch[b - 1], 3, rng);

    for (int m = 0; m < cfg_.num_modules(); ++m)
      for (int b = 0; b < B; ++b) {
        const std::string mk = module_key(m, b);
        for (const char* role : {"i1.", "i2."}) {
          for (int e = 0; e < individual_edge_count(cfg_.geno.K_I); ++e)
            make_edge_ops(mk + role + "e" + std::to_string(e) + ".", ch[b], rng);
          make_conv_bias(mk + role + "out", ch[b], cfg_.geno.K_I * ch[b], 1, rng);
        }
        // aggregation: projections always exist; edges unless plain fusion
        for (int sb = 0; sb < B; ++sb)
          make_conv_bias(mk + "agg.proj" + std::to_string(sb + 1), ch[b], ch[sb], 1, rng);
        if (cfg_.geno.no_agg) {
          make_conv_bias(mk + "agg.fuse", ch[b], B * ch[b], 1, rng);
        } else {
          for (int e = 0; e < aggregation_intra_edge_count(cfg_.geno.K_M); ++e)
            make_edge_ops(mk + "agg.e" + std::to_string(e) + ".", ch[b], rng);
          const int intra = aggregation_intra_edge_count(cfg_.geno.K_M);
          for (int e = intra; e < aggregation_edge_count(cfg_.geno.K_M, B); ++e)
            make_edge_ops(mk + "agg.be" + std::to_string(e) + ".", ch[b], rng);
          make_conv_bias(mk + "agg.out", ch[b], cfg_.geno.K_M * ch[b], 1, rng);
        }
      }

    if (cfg_.head_fusion == "sum") {
      for (int b = 0; b < B; ++b)
        make_conv_bias("head.proj" + std::to_string(b + 1), ch[0], ch[b], 1, rng);
      make_conv_bias("head.out", cfg_.num_keypoints, ch[0], 3, rng);
    } else {
      int total = 0;
      for (int b = 0; b < B; ++b) total += ch[b];
      make_conv_bias("head.out", cfg_.num_keypoints, total, 3, rng);
    }

    // alpha logits, zero-initialized (uniform mixture)
    for (const auto& [key, role] : distinct_cell_keys(cfg_.geno)) {
      const int edges = role == CellGenotype::Role::Individual
                            ? individual_edge_count(cfg_.geno.K_I)
                            : aggregation_edge_count(cfg_.geno.K_M, cfg_.geno.B);
      for (int e = 0; e < edges; ++e)
        alphas_.create("alpha." + key + ".e" + std::to_string(e), {kNumOps});
    }
  }

  SupernetConfig cfg_;
  ParamStore<T> weights_;
  ParamStore<T> alphas_;
};

// Broadcast per-stage scale vectors to one per module.
inline std::vector<ScaleVector> expand_stage_betas(const GenoConfig& cfg,
                                                   const std::vector<ScaleVector>& betas) {
  if (cfg.convention.per_module_scales) {
    if (static_cast<int>(betas.size()) != cfg.num_stages * cfg.modules_per_stage)
      throw std::invalid_argument("expand_stage_betas: need one vector per module");
    return betas;
  }
  if (static_cast<int>(betas.size()) != cfg.num_stages)
    throw std::invalid_argument("expand_stage_betas: need one vector per stage");
  std::vector<ScaleVector> out;
  for (int s = 0; s < cfg.num_stages; ++s)
    for (int m = 0; m < cfg.modules_per_stage; ++m) out.push_back(betas[static_cast<std::size_t>(s)]);
  return out;
}

}  // namespace autopose
