#pragma once

#include <gmpxx.h>

#include <array>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json_util.hpp"
#include "rng.hpp"

namespace autopose {

// ---------------------------------------------------------------------------
// Operation set
// ---------------------------------------------------------------------------

enum class OpKind : int {
  Conv1x1 = 0,
  Conv3x3 = 1,
  Conv5x5 = 2,
  AvgPool3x3 = 3,
  MaxPool3x3 = 4,
  Skip = 5,
};

inline constexpr int kNumOps = 6;

inline const std::array<std::string, kNumOps>& op_names() {
  static const std::array<std::string, kNumOps> names = {"conv1x1",    "conv3x3",    "conv5x5",
                                                         "avgpool3x3", "maxpool3x3", "skip"};
  return names;
}

inline const std::string& op_name(OpKind k) { return op_names()[static_cast<int>(k)]; }

inline std::optional<OpKind> op_from_name(const std::string& s) {
  for (int i = 0; i < kNumOps; ++i)
    if (op_names()[i] == s) return static_cast<OpKind>(i);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Architecture encoding
// ---------------------------------------------------------------------------

struct GenotypeError : std::runtime_error {
  explicit GenotypeError(const std::string& m) : std::runtime_error(m) {}
};

// Cell-sharing convention. The default matches the searcher: one cell per
// branch shared across all stages and modules, I1/I2 sharing one genotype,
// one scale vector per stage.
struct Convention {
  bool i12_distinct = false;
  bool share_across_branches = false;
  bool per_stage_cells = false;
  bool per_module_scales = false;

  std::string str() const {
    std::string s;
    s += share_across_branches ? "branch-shared" : "per-branch";
    s += i12_distinct ? ",i12-distinct" : ",i12-shared";
    s += per_stage_cells ? ",per-stage-cells" : ",stage-shared";
    s += per_module_scales ? ",per-module-scales" : ",per-stage-scales";
    return s;
  }
  static Convention parse(const std::string& s) {
    Convention c;
    c.share_across_branches = s.find("branch-shared") != std::string::npos;
    c.i12_distinct = s.find("i12-distinct") != std::string::npos;
    c.per_stage_cells = s.find("per-stage-cells") != std::string::npos;
    c.per_module_scales = s.find("per-module-scales") != std::string::npos;
    return c;
  }

  bool operator==(const Convention&) const = default;
};

struct GenoConfig {
  int B = 4;
  int num_stages = 3;
  int modules_per_stage = 2;
  int K_I = 4;
  int K_M = 2;  // 0 disables aggregation cells
  std::vector<int> channels = {16, 32, 64, 128};
  Convention convention;
  bool no_agg = false;  // aggregation replaced by plain fusion (no searchable edges)

  bool has_agg_cells() const { return K_M > 0 && !no_agg; }

  int num_scale_vectors() const {
    return num_stages * (convention.per_module_scales ? modules_per_stage : 1);
  }

  void check() const {
    if (B < 1 || num_stages < 1 || modules_per_stage < 1 || K_I < 1 || K_M < 0)
      throw GenotypeError("config: B, num_stages, modules_per_stage, K_I must be positive and "
                          "K_M nonnegative");
    if (static_cast<int>(channels.size()) != B)
      throw GenotypeError("config: channels list length must equal B");
    for (int c : channels)
      if (c < 1) throw GenotypeError("config: channels must be positive");
  }

  std::string fingerprint() const {
    std::ostringstream os;
    os << "B=" << B << ";S=" << num_stages << ";M=" << modules_per_stage << ";KI=" << K_I
       << ";KM=" << K_M << ";C=";
    for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
    os << ";conv=" << convention.str() << ";noagg=" << (no_agg ? 1 : 0);
    return os.str();
  }

  bool operator==(const GenoConfig&) const = default;
};

struct CellEdge {
  int node;  // 1-based target node
  int src;   // individual: 0 = cell input, j >= 1 = node j; aggregation intra: node j >= 1
  OpKind op;
  bool operator==(const CellEdge&) const = default;
};

struct BranchEdge {
  int node;    // 1-based target node
  int branch;  // 1..B source branch
  OpKind op;
  bool operator==(const BranchEdge&) const = default;
};

struct CellGenotype {
  enum class Role { Individual, Aggregation };
  Role role = Role::Individual;
  int num_nodes = 0;
  std::vector<CellEdge> edges;
  std::vector<BranchEdge> branch_edges;  // aggregation cells only

  bool operator==(const CellGenotype&) const = default;
};

// Number of intra edges each cell role carries, per the topology invariants.
inline int individual_edge_count(int k_i) { return k_i * (k_i + 1) / 2; }
inline int aggregation_intra_edge_count(int k_m) { return k_m * (k_m - 1) / 2; }
inline int aggregation_edge_count(int k_m, int b) {
  return aggregation_intra_edge_count(k_m) + k_m * b;
}

using ScaleVector = std::vector<int>;  // entries 0/1, length B

struct Genotype {
  GenoConfig config;
  std::map<std::string, CellGenotype> cells;
  std::vector<ScaleVector> scales;

  bool operator==(const Genotype&) const = default;
};

// Distinct cell keys under the sharing convention, in canonical (sorted) order.
inline std::vector<std::pair<std::string, CellGenotype::Role>> distinct_cell_keys(
    const GenoConfig& cfg) {
  std::vector<std::pair<std::string, CellGenotype::Role>> keys;
  std::vector<std::string> stage_prefixes;
  if (cfg.convention.per_stage_cells)
    for (int s = 1; s <= cfg.num_stages; ++s) stage_prefixes.push_back("s" + std::to_string(s) + ".");
  else
    stage_prefixes.push_back("");
  std::vector<std::string> branch_prefixes;
  if (cfg.convention.share_across_branches)
    branch_prefixes.push_back("");
  else
    for (int b = 1; b <= cfg.B; ++b) branch_prefixes.push_back("b" + std::to_string(b) + ".");
  std::vector<std::string> ind_roles =
      cfg.convention.i12_distinct ? std::vector<std::string>{"i1", "i2"}
                                  : std::vector<std::string>{"i"};
  for (const auto& sp : stage_prefixes)
    for (const auto& bp : branch_prefixes) {
      for (const auto& r : ind_roles)
        keys.emplace_back(sp + bp + r, CellGenotype::Role::Individual);
      if (cfg.has_agg_cells()) keys.emplace_back(sp + bp + "agg", CellGenotype::Role::Aggregation);
    }
  std::sort(keys.begin(), keys.end());
  return keys;
}

// Maps a concrete (stage, branch, role) to its cell key under the convention.
// role: 0 = I1, 1 = I2, 2 = aggregation.
inline std::string cell_key_for(const GenoConfig& cfg, int stage, int branch, int role) {
  std::string key;
  if (cfg.convention.per_stage_cells) key += "s" + std::to_string(stage + 1) + ".";
  if (!cfg.convention.share_across_branches) key += "b" + std::to_string(branch + 1) + ".";
  if (role == 2)
    key += "agg";
  else if (cfg.convention.i12_distinct)
    key += role == 0 ? "i1" : "i2";
  else
    key += "i";
  return key;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline std::vector<std::string> validate_genotype(const Genotype& g) {
  std::vector<std::string> bad;
  try {
    g.config.check();
  } catch (const std::exception& e) {
    bad.emplace_back(e.what());
    return bad;
  }
  const auto& cfg = g.config;
  auto keys = distinct_cell_keys(cfg);
  if (g.cells.size() != keys.size())
    bad.push_back("cells: expected " + std::to_string(keys.size()) + " entries, got " +
                  std::to_string(g.cells.size()));
  for (const auto& [key, role] : keys) {
    auto it = g.cells.find(key);
    if (it == g.cells.end()) {
      bad.push_back("cells: missing '" + key + "'");
      continue;
    }
    const CellGenotype& c = it->second;
    if (c.role != role) bad.push_back("cell " + key + ": wrong role");
    const int K = role == CellGenotype::Role::Individual ? cfg.K_I : cfg.K_M;
    if (c.num_nodes != K)
      bad.push_back("cell " + key + ": num_nodes " + std::to_string(c.num_nodes) + " != " +
                    std::to_string(K));
    // expected intra-edge topology: node i has edges from all predecessors
    std::vector<CellEdge> want;
    const int lo = role == CellGenotype::Role::Individual ? 0 : 1;
    for (int i = 1; i <= K; ++i)
      for (int j = lo; j < i; ++j) want.push_back({i, j, OpKind::Skip});
    if (c.edges.size() != want.size()) {
      bad.push_back("cell " + key + ": expected " + std::to_string(want.size()) +
                    " intra edges, got " + std::to_string(c.edges.size()));
    } else {
      for (std::size_t e = 0; e < want.size(); ++e)
        if (c.edges[e].node != want[e].node || c.edges[e].src != want[e].src)
          bad.push_back("cell " + key + ": edge " + std::to_string(e) + " targets (" +
                        std::to_string(c.edges[e].node) + "," + std::to_string(c.edges[e].src) +
                        "), expected (" + std::to_string(want[e].node) + "," +
                        std::to_string(want[e].src) + ")");
    }
    if (role == CellGenotype::Role::Aggregation) {
      if (static_cast<int>(c.branch_edges.size()) != K * cfg.B)
        bad.push_back("cell " + key + ": expected " + std::to_string(K * cfg.B) +
                      " branch edges, got " + std::to_string(c.branch_edges.size()));
      else
        for (int i = 1; i <= K; ++i)
          for (int b = 1; b <= cfg.B; ++b) {
            const auto& be = c.branch_edges[static_cast<std::size_t>(i - 1) * cfg.B + (b - 1)];
            if (be.node != i || be.branch != b)
              bad.push_back("cell " + key + ": branch edge out of canonical order");
          }
    } else if (!c.branch_edges.empty()) {
      bad.push_back("cell " + key + ": individual cell must not have branch edges");
    }
  }
  for (const auto& [key, c] : g.cells) {
    bool known = false;
    for (const auto& [k, r] : keys) known = known || k == key;
    if (!known) bad.push_back("cells: unexpected key '" + key + "'");
  }
  if (static_cast<int>(g.scales.size()) != cfg.num_scale_vectors())
    bad.push_back("scales: expected " + std::to_string(cfg.num_scale_vectors()) +
                  " vectors, got " + std::to_string(g.scales.size()));
  for (std::size_t i = 0; i < g.scales.size(); ++i) {
    if (static_cast<int>(g.scales[i].size()) != cfg.B)
      bad.push_back("scales[" + std::to_string(i) + "]: length " +
                    std::to_string(g.scales[i].size()) + " != B=" + std::to_string(cfg.B));
    for (int v : g.scales[i])
      if (v != 0 && v != 1) bad.push_back("scales[" + std::to_string(i) + "]: entries must be 0/1");
  }
  return bad;
}

inline void require_valid(const Genotype& g) {
  auto bad = validate_genotype(g);
  if (!bad.empty()) {
    std::string msg = "invalid genotype:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw GenotypeError(msg);
  }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline std::string encode_genotype(const Genotype& g) {
  require_valid(g);
  nlohmann::json j;
  j["format_version"] = 1;
  nlohmann::json cfg;
  cfg["B"] = g.config.B;
  cfg["num_stages"] = g.config.num_stages;
  cfg["modules_per_stage"] = g.config.modules_per_stage;
  cfg["K_I"] = g.config.K_I;
  cfg["K_M"] = g.config.K_M;
  cfg["channels"] = g.config.channels;
  cfg["convention"] = g.config.convention.str();
  cfg["no_agg"] = g.config.no_agg;
  j["config"] = cfg;
  nlohmann::json cells = nlohmann::json::object();
  for (const auto& [key, c] : g.cells) {
    nlohmann::json jc;
    jc["role"] = c.role == CellGenotype::Role::Individual ? "individual" : "aggregation";
    jc["num_nodes"] = c.num_nodes;
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : c.edges)
      edges.push_back({{"node", e.node}, {"src", e.src}, {"op", op_name(e.op)}});
    jc["edges"] = edges;
    if (c.role == CellGenotype::Role::Aggregation) {
      nlohmann::json bes = nlohmann::json::array();
      for (const auto& e : c.branch_edges)
        bes.push_back({{"node", e.node}, {"branch", e.branch}, {"op", op_name(e.op)}});
      jc["branch_edges"] = bes;
    }
    cells[key] = jc;
  }
  j["cells"] = cells;
  nlohmann::json scales = nlohmann::json::array();
  for (const auto& sv : g.scales) scales.push_back(sv);
  j["scales"] = scales;
  return json_canonical(j);
}

inline Genotype decode_genotype(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw GenotypeError(std::string("genotype parse error: ") + e.what());
  }
  auto need = [&](const nlohmann::json& o, const char* k) -> const nlohmann::json& {
    if (!o.contains(k)) throw GenotypeError(std::string("genotype: missing field '") + k + "'");
    return o.at(k);
  };
  if (need(j, "format_version").get<int>() != 1)
    throw GenotypeError("genotype: unsupported format_version");
  Genotype g;
  const auto& cfg = need(j, "config");
  g.config.B = need(cfg, "B").get<int>();
  g.config.num_stages = need(cfg, "num_stages").get<int>();
  g.config.modules_per_stage = need(cfg, "modules_per_stage").get<int>();
  g.config.K_I = need(cfg, "K_I").get<int>();
  g.config.K_M = need(cfg, "K_M").get<int>();
  g.config.channels = need(cfg, "channels").get<std::vector<int>>();
  g.config.convention = Convention::parse(need(cfg, "convention").get<std::string>());
  g.config.no_agg = need(cfg, "no_agg").get<bool>();
  auto parse_op = [](const nlohmann::json& e) {
    const std::string s = e.at("op").get<std::string>();
    auto op = op_from_name(s);
    if (!op) throw GenotypeError("genotype: unknown op '" + s + "' (valid: conv1x1, conv3x3, "
                                 "conv5x5, avgpool3x3, maxpool3x3, skip)");
    return *op;
  };
  for (const auto& [key, jc] : need(j, "cells").items()) {
    CellGenotype c;
    const std::string role = need(jc, "role").get<std::string>();
    if (role == "individual")
      c.role = CellGenotype::Role::Individual;
    else if (role == "aggregation")
      c.role = CellGenotype::Role::Aggregation;
    else
      throw GenotypeError("genotype: unknown cell role '" + role + "'");
    c.num_nodes = need(jc, "num_nodes").get<int>();
    for (const auto& e : need(jc, "edges"))
      c.edges.push_back({e.at("node").get<int>(), e.at("src").get<int>(), parse_op(e)});
    if (jc.contains("branch_edges"))
      for (const auto& e : jc.at("branch_edges"))
        c.branch_edges.push_back({e.at("node").get<int>(), e.at("branch").get<int>(), parse_op(e)});
    g.cells.emplace(key, std::move(c));
  }
  for (const auto& sv : need(j, "scales")) g.scales.push_back(sv.get<std::vector<int>>());
  require_valid(g);
  return g;
}

// ---------------------------------------------------------------------------
// Random genotypes
// ---------------------------------------------------------------------------

// Cell skeleton with the canonical edge topology, all ops `skip`.
inline CellGenotype make_cell_skeleton(CellGenotype::Role role, int num_nodes, int B) {
  CellGenotype c;
  c.role = role;
  c.num_nodes = num_nodes;
  const int lo = role == CellGenotype::Role::Individual ? 0 : 1;
  for (int i = 1; i <= num_nodes; ++i)
    for (int j = lo; j < i; ++j) c.edges.push_back({i, j, OpKind::Skip});
  if (role == CellGenotype::Role::Aggregation)
    for (int i = 1; i <= num_nodes; ++i)
      for (int b = 1; b <= B; ++b) c.branch_edges.push_back({i, b, OpKind::Skip});
  return c;
}

// Uniform op per edge, independent Bernoulli(0.5) per scale bit.
inline Genotype random_genotype(const GenoConfig& cfg, std::uint64_t seed) {
  cfg.check();
  Rng rng(seed);
  Genotype g;
  g.config = cfg;
  for (const auto& [key, role] : distinct_cell_keys(cfg)) {
    CellGenotype c = make_cell_skeleton(
        role, role == CellGenotype::Role::Individual ? cfg.K_I : cfg.K_M, cfg.B);
    for (auto& e : c.edges) e.op = static_cast<OpKind>(rng.uniform_int(0, kNumOps - 1));
    for (auto& e : c.branch_edges) e.op = static_cast<OpKind>(rng.uniform_int(0, kNumOps - 1));
    g.cells.emplace(key, std::move(c));
  }
  for (int s = 0; s < cfg.num_scale_vectors(); ++s) {
    ScaleVector sv(static_cast<std::size_t>(cfg.B));
    for (auto& b : sv) b = rng.bernoulli(0.5) ? 1 : 0;
    g.scales.push_back(std::move(sv));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Search-space cardinality
// ---------------------------------------------------------------------------

struct SpaceSize {
  mpz_class exact;
  std::string decimal;
  std::string scientific;  // "m.mmmmmm e NN"-style rendering
  long exponent10 = 0;
};

inline SpaceSize count_search_space(const GenoConfig& cfg) {
  cfg.check();
  long total_edges = 0;
  for (const auto& [key, role] : distinct_cell_keys(cfg))
    total_edges += role == CellGenotype::Role::Individual
                       ? individual_edge_count(cfg.K_I)
                       : aggregation_edge_count(cfg.K_M, cfg.B);
  const long scale_bits = static_cast<long>(cfg.num_scale_vectors()) * cfg.B;
  mpz_class n = 1;
  mpz_mul_2exp(n.get_mpz_t(), n.get_mpz_t(), static_cast<mp_bitcnt_t>(scale_bits));
  mpz_class six = 6;
  mpz_class p;
  mpz_pow_ui(p.get_mpz_t(), six.get_mpz_t(), static_cast<unsigned long>(total_edges));
  n *= p;
  SpaceSize out;
  out.exact = n;
  out.decimal = n.get_str();
  out.exponent10 = static_cast<long>(out.decimal.size()) - 1;
  std::string mant = out.decimal.substr(0, 1);
  if (out.decimal.size() > 1) mant += "." + out.decimal.substr(1, 6);
  out.scientific = mant + "e+" + std::to_string(out.exponent10);
  return out;
}

// Sum of Shannon entropies (nats) of per-edge softmax distributions given raw
// logit vectors; shared by supernet alpha tracking and tests.
inline double entropy_of_logits(const std::vector<double>& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  double h = 0.0;
  for (double v : logits) {
    const double p = std::exp(v - m) / z;
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace autopose
