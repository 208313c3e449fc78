#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "autopose/genotype.hpp"

using namespace autopose;

namespace {

GenoConfig tiny_config() {
  GenoConfig cfg;
  cfg.B = 1;
  cfg.num_stages = 1;
  cfg.modules_per_stage = 1;
  cfg.K_I = 1;
  cfg.K_M = 1;
  cfg.channels = {4};
  return cfg;
}

// Enumerates every genotype of a (small) config by walking an odometer over
// all edge-op assignments and scale-bit patterns, and counts the distinct
// serialized documents. Independent of the closed-form count.
long brute_force_count(const GenoConfig& cfg) {
  auto keys = distinct_cell_keys(cfg);
  // collect mutable edge slots across all distinct cells
  Genotype g;
  g.config = cfg;
  long num_edges = 0;
  for (const auto& [key, role] : keys) {
    auto c = make_cell_skeleton(role, role == CellGenotype::Role::Individual ? cfg.K_I : cfg.K_M,
                                cfg.B);
    num_edges += static_cast<long>(c.edges.size() + c.branch_edges.size());
    g.cells.emplace(key, std::move(c));
  }
  const int V = cfg.num_scale_vectors();
  g.scales.assign(static_cast<std::size_t>(V), ScaleVector(static_cast<std::size_t>(cfg.B), 0));

  std::set<std::string> seen;
  std::vector<int> ops(static_cast<std::size_t>(num_edges), 0);
  while (true) {
    // apply op assignment
    std::size_t idx = 0;
    for (auto& [key, c] : g.cells) {
      for (auto& e : c.edges) e.op = static_cast<OpKind>(ops[idx++]);
      for (auto& e : c.branch_edges) e.op = static_cast<OpKind>(ops[idx++]);
    }
    for (long bits = 0; bits < (1L << (V * cfg.B)); ++bits) {
      long v = bits;
      for (int s = 0; s < V; ++s)
        for (int b = 0; b < cfg.B; ++b) {
          g.scales[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)] = v & 1;
          v >>= 1;
        }
      seen.insert(encode_genotype(g));
    }
    // odometer
    std::size_t d = 0;
    while (d < ops.size() && ++ops[d] == kNumOps) ops[d++] = 0;
    if (d == ops.size()) break;
  }
  return static_cast<long>(seen.size());
}

}  // namespace

TEST_CASE("minimal genotype round-trips") {
  GenoConfig cfg = tiny_config();
  cfg.K_M = 1;
  Genotype g;
  g.config = cfg;
  for (const auto& [key, role] : distinct_cell_keys(cfg))
    g.cells.emplace(key, make_cell_skeleton(
                             role, role == CellGenotype::Role::Individual ? cfg.K_I : cfg.K_M,
                             cfg.B));
  g.scales = {{1}};
  const std::string doc = encode_genotype(g);
  CHECK(decode_genotype(doc) == g);
  CHECK(encode_genotype(g) == doc);  // byte-stable
}

TEST_CASE("document carries the literal scale bit string") {
  GenoConfig cfg;
  cfg.channels = {8, 16, 24, 32};
  Genotype g = random_genotype(cfg, 7);
  g.scales[0] = {1, 0, 1, 0};
  const std::string doc = encode_genotype(g);
  CHECK(doc.find("[1,0,1,0]") != std::string::npos);
}

TEST_CASE("changing one edge op changes exactly one line") {
  GenoConfig cfg = tiny_config();
  cfg.K_I = 3;
  Genotype a = random_genotype(cfg, 1);
  Genotype b = a;
  auto& cell = b.cells.at("b1.i");
  cell.edges[2].op = cell.edges[2].op == OpKind::Conv3x3 ? OpKind::Conv5x5 : OpKind::Conv3x3;
  std::istringstream sa(encode_genotype(a)), sb(encode_genotype(b));
  std::string la, lb;
  int diffs = 0;
  std::string diff_line;
  while (std::getline(sa, la) && std::getline(sb, lb))
    if (la != lb) {
      ++diffs;
      diff_line = lb;
    }
  CHECK(diffs == 1);
  CHECK(diff_line.find("\"op\"") != std::string::npos);
}

TEST_CASE("decode/encode is the identity on random genotypes") {
  std::vector<GenoConfig> cfgs;
  cfgs.push_back(GenoConfig{});  // paper default
  GenoConfig c2 = tiny_config();
  c2.B = 2;
  c2.channels = {4, 8};
  c2.K_I = 2;
  c2.convention.i12_distinct = true;
  cfgs.push_back(c2);
  GenoConfig c3 = tiny_config();
  c3.num_stages = 2;
  c3.convention.per_stage_cells = true;
  c3.convention.per_module_scales = true;
  c3.modules_per_stage = 2;
  cfgs.push_back(c3);
  GenoConfig c4 = tiny_config();
  c4.no_agg = true;
  cfgs.push_back(c4);
  for (const auto& cfg : cfgs)
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      Genotype g = random_genotype(cfg, seed);
      CHECK(validate_genotype(g).empty());
      CHECK(decode_genotype(encode_genotype(g)) == g);
    }
}

TEST_CASE("decode rejects bad documents") {
  Genotype g = random_genotype(tiny_config(), 3);
  std::string doc = encode_genotype(g);

  SECTION("unknown op") {
    auto pos = doc.find("\"op\": \"");
    REQUIRE(pos != std::string::npos);
    std::string bad = doc;
    auto end = bad.find('"', pos + 7);
    bad.replace(pos + 7, end - pos - 7, "conv7x7");
    REQUIRE_THROWS_WITH(decode_genotype(bad), Catch::Matchers::ContainsSubstring("conv7x7"));
  }
  SECTION("scale vector length mismatch") {
    GenoConfig cfg;
    cfg.channels = {8, 16, 24, 32};
    Genotype g4 = random_genotype(cfg, 4);
    std::string doc4 = encode_genotype(g4);
    // replace the first stage's 4-bit vector with a 3-bit one
    auto pos = doc4.find("[1,", doc4.find("\"scales\""));
    if (pos == std::string::npos) pos = doc4.find("[0,", doc4.find("\"scales\""));
    REQUIRE(pos != std::string::npos);
    auto end = doc4.find(']', pos);
    doc4.replace(pos, end - pos + 1, "[1,0,1]");
    REQUIRE_THROWS_AS(decode_genotype(doc4), GenotypeError);
  }
  SECTION("malformed document") {
    REQUIRE_THROWS_WITH(decode_genotype(doc.substr(0, doc.size() / 2)),
                        Catch::Matchers::ContainsSubstring("parse error"));
  }
  SECTION("missing field") {
    REQUIRE_THROWS_AS(decode_genotype("{\"format_version\": 1}"), GenotypeError);
  }
}

TEST_CASE("random_genotype is deterministic and unbiased") {
  GenoConfig cfg;
  cfg.channels = {8, 16, 24, 32};
  CHECK(random_genotype(cfg, 42) == random_genotype(cfg, 42));
  CHECK_FALSE(random_genotype(cfg, 42) == random_genotype(cfg, 43));

  const int n = 10000;
  std::vector<double> bit_rate(4, 0.0);
  std::vector<double> op_freq(kNumOps, 0.0);
  for (int s = 0; s < n; ++s) {
    Genotype g = random_genotype(cfg, static_cast<std::uint64_t>(s));
    for (int b = 0; b < 4; ++b) bit_rate[b] += g.scales[0][b];
    op_freq[static_cast<int>(g.cells.at("b1.i").edges[0].op)] += 1.0;
  }
  for (int b = 0; b < 4; ++b) {
    CHECK(bit_rate[b] / n > 0.47);
    CHECK(bit_rate[b] / n < 0.53);
  }
  for (int k = 0; k < kNumOps; ++k) {
    CHECK(op_freq[k] / n > 1.0 / 6 - 0.02);
    CHECK(op_freq[k] / n < 1.0 / 6 + 0.02);
  }
}

TEST_CASE("count_search_space matches brute-force enumeration") {
  // (a) single branch, single edge: 2 * 6 = 12
  GenoConfig a = tiny_config();
  a.K_M = 0;
  auto sa = count_search_space(a);
  CHECK(sa.exact == 12);
  CHECK(brute_force_count(a) == 12);

  // (b) K_I=2 (3 edges) + K_M=1 aggregation (1 branch edge)
  GenoConfig b = tiny_config();
  b.K_I = 2;
  auto sb = count_search_space(b);
  CHECK(sb.exact == 2 * 6 * 6 * 6 * 6);
  CHECK(brute_force_count(b) == sb.exact.get_si());

  // (c) two branches sharing one cell genotype
  GenoConfig c = tiny_config();
  c.B = 2;
  c.channels = {4, 8};
  c.convention.share_across_branches = true;
  auto sc = count_search_space(c);
  CHECK(sc.exact == 4 * 6 * 6 * 6);  // 1 ind edge + (0 intra + 2 branch) agg edges
  CHECK(brute_force_count(c) == sc.exact.get_si());

  // (d) per-stage cells with distinct I1/I2
  GenoConfig d = tiny_config();
  d.num_stages = 2;
  d.K_M = 0;
  d.convention.per_stage_cells = true;
  d.convention.i12_distinct = true;
  auto sd = count_search_space(d);
  CHECK(sd.exact == 4 * 6 * 6 * 6 * 6);
  CHECK(brute_force_count(d) == sd.exact.get_si());
}

TEST_CASE("paper-default search space lands near the published size") {
  auto s = count_search_space(GenoConfig{});
  CHECK(s.exponent10 >= 56);
  CHECK(s.exponent10 <= 65);
  CHECK(s.scientific.find("e+") != std::string::npos);
}

TEST_CASE("count_search_space rejects non-positive configs") {
  GenoConfig bad = tiny_config();
  bad.K_I = 0;
  CHECK_THROWS_AS(count_search_space(bad), GenotypeError);
  bad = tiny_config();
  bad.B = -1;
  CHECK_THROWS_AS(count_search_space(bad), GenotypeError);
}

TEST_CASE("edge count formulas") {
  CHECK(individual_edge_count(4) == 10);
  CHECK(individual_edge_count(1) == 1);
  CHECK(aggregation_edge_count(2, 4) == 9);
  CHECK(aggregation_edge_count(1, 2) == 2);
}
