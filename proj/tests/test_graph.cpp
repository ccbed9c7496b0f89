#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "ifl/graph.hpp"

using namespace ifl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("iflgcl-test-" + std::to_string(Catch::rngSeed()) + "-" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

void write_manifest(const fs::path& dir, int n, int f, bool labels = true) {
  write_file(dir / "manifest.json",
             std::string("{\"edges\":\"edges.tsv\",\"features\":\"features.csv\","
                         "\"labels\":") +
                 (labels ? "\"labels.txt\"" : "null") + ",\"num_nodes\":" + std::to_string(n) +
                 ",\"feature_dim\":" + std::to_string(f) + "}");
}

}  // namespace

TEST_CASE("load_dataset on a 3-node path graph") {
  TempDir dir;
  write_manifest(dir.path, 3, 2);
  write_file(dir.path / "edges.tsv", "0\t1\n1\t2\n");
  write_file(dir.path / "features.csv", "1,0\n0,1\n0.5,0.5\n");
  write_file(dir.path / "labels.txt", "0\n1\n0\n");
  const Graph g = load_dataset((dir.path / "manifest.json").string());
  REQUIRE(g.num_nodes == 3);
  REQUIRE(g.feature_dim() == 2);
  REQUIRE(g.undirected_edges().size() == 2);
  REQUIRE(g.adjacency.has_entry(1, 0));  // symmetrized
  REQUIRE(*g.num_classes == 2);
  REQUIRE(g.features.at(2, 0) == 0.5);
}

TEST_CASE("load_dataset deduplicates bidirectional edge lines") {
  TempDir dir;
  write_manifest(dir.path, 2, 1, false);
  write_file(dir.path / "edges.tsv", "0\t1\n1\t0\n");
  write_file(dir.path / "features.csv", "1\n2\n");
  const Graph g = load_dataset((dir.path / "manifest.json").string());
  REQUIRE(g.undirected_edges().size() == 1);
  REQUIRE(g.adjacency.nnz() == 2);  // one entry per direction
}

TEST_CASE("load_dataset hard errors") {
  TempDir dir;
  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_dataset((dir.path / "nope.json").string()), DataError);
  }
  SECTION("node index out of range") {
    write_manifest(dir.path, 2, 1, false);
    write_file(dir.path / "edges.tsv", "0\t5\n");
    write_file(dir.path / "features.csv", "1\n2\n");
    REQUIRE_THROWS_AS(load_dataset((dir.path / "manifest.json").string()), DataError);
  }
  SECTION("ragged feature rows") {
    write_manifest(dir.path, 2, 2, false);
    write_file(dir.path / "edges.tsv", "0\t1\n");
    write_file(dir.path / "features.csv", "1,2\n3\n");
    REQUIRE_THROWS_AS(load_dataset((dir.path / "manifest.json").string()), DataError);
  }
  SECTION("non-finite feature") {
    write_manifest(dir.path, 2, 1, false);
    write_file(dir.path / "edges.tsv", "0\t1\n");
    write_file(dir.path / "features.csv", "1\ninf\n");
    REQUIRE_THROWS_AS(load_dataset((dir.path / "manifest.json").string()), DataError);
  }
  SECTION("label count mismatch") {
    write_manifest(dir.path, 2, 1);
    write_file(dir.path / "edges.tsv", "0\t1\n");
    write_file(dir.path / "features.csv", "1\n2\n");
    write_file(dir.path / "labels.txt", "0\n");
    REQUIRE_THROWS_AS(load_dataset((dir.path / "manifest.json").string()), DataError);
  }
}

TEST_CASE("export then ingest round-trips the graph") {
  SbmSpec spec;
  spec.block_sizes = {6, 5};
  spec.p_in = 0.7;
  spec.p_out = 0.1;
  spec.feature_dim = 4;
  spec.seed = 42;
  const Graph g = sbm_generate(spec);

  TempDir dir;
  const std::string manifest = save_dataset(g, dir.path.string());
  const Graph back = load_dataset(manifest);
  REQUIRE(back.num_nodes == g.num_nodes);
  REQUIRE(back.undirected_edges() == g.undirected_edges());
  REQUIRE(back.features.values() == g.features.values());
  REQUIRE(*back.labels == *g.labels);

  // Second round trip is byte-identical.
  TempDir dir2;
  save_dataset(back, dir2.path.string());
  for (const char* name : {"edges.tsv", "features.csv", "labels.txt", "manifest.json"}) {
    std::ifstream a(dir.path / name), b(dir2.path / name);
    const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    REQUIRE(sa == sb);
  }
}

TEST_CASE("sbm_generate") {
  SECTION("two cliques under p_in=1, p_out=0") {
    SbmSpec spec;
    spec.block_sizes = {3, 3};
    spec.p_in = 1.0;
    spec.p_out = 0.0;
    spec.feature_dim = 2;
    const Graph g = sbm_generate(spec);
    REQUIRE(g.undirected_edges().size() == 6);  // 2 * C(3,2)
    for (const auto& [i, j] : g.undirected_edges()) REQUIRE((*g.labels)[i] == (*g.labels)[j]);
  }
  SECTION("edgeless graph under p=0") {
    SbmSpec spec;
    spec.block_sizes = {4};
    spec.p_in = 0.0;
    spec.p_out = 0.0;
    spec.feature_dim = 2;
    REQUIRE(sbm_generate(spec).undirected_edges().empty());
  }
  SECTION("edge counts sit within 4 sigma of the binomial expectation") {
    SbmSpec spec;
    spec.block_sizes = {20, 20};
    spec.p_in = 0.5;
    spec.p_out = 0.05;
    spec.feature_dim = 4;
    spec.seed = 3;
    const Graph g = sbm_generate(spec);
    int intra = 0, inter = 0;
    for (const auto& [i, j] : g.undirected_edges())
      ((*g.labels)[i] == (*g.labels)[j] ? intra : inter) += 1;
    // Intra: 2*C(20,2)=380 trials at 0.5; inter: 400 trials at 0.05.
    const double mu_intra = 380 * 0.5, sd_intra = std::sqrt(380 * 0.25);
    const double mu_inter = 400 * 0.05, sd_inter = std::sqrt(400 * 0.05 * 0.95);
    REQUIRE(std::abs(intra - mu_intra) < 4 * sd_intra);
    REQUIRE(std::abs(inter - mu_inter) < 4 * sd_inter);
  }
  SECTION("fixed seed is bit-reproducible") {
    SbmSpec spec;
    spec.block_sizes = {5, 7};
    spec.p_in = 0.6;
    spec.p_out = 0.2;
    spec.feature_dim = 3;
    spec.seed = 9;
    const Graph a = sbm_generate(spec), b = sbm_generate(spec);
    REQUIRE(a.features.values() == b.features.values());
    REQUIRE(a.undirected_edges() == b.undirected_edges());
  }
  SECTION("block means are orthogonal with the requested norm") {
    SbmSpec spec;
    spec.block_sizes = {30, 30, 30};
    spec.p_in = 0.0;
    spec.p_out = 0.0;
    spec.feature_dim = 8;
    spec.mean_scale = 4.0;
    spec.noise_sigma = 0.0;  // features equal the block means exactly
    const Graph g = sbm_generate(spec);
    for (int b1 = 0; b1 < 3; ++b1) {
      double norm = 0.0, cross = 0.0;
      for (int k = 0; k < 8; ++k) {
        norm += g.features.at(b1 * 30, k) * g.features.at(b1 * 30, k);
        cross += g.features.at(b1 * 30, k) * g.features.at(((b1 + 1) % 3) * 30, k);
      }
      REQUIRE(std::sqrt(norm) == Catch::Approx(4.0).epsilon(1e-12));
      REQUIRE(std::abs(cross) < 1e-10);
    }
  }
  SECTION("spec validation") {
    SbmSpec spec;
    spec.block_sizes = {4, 4};
    spec.p_in = 0.1;
    spec.p_out = 0.5;  // p_out > p_in
    REQUIRE_THROWS_AS(sbm_generate(spec), std::invalid_argument);
    spec.p_out = 0.05;
    spec.feature_dim = 1;  // fewer dims than blocks
    REQUIRE_THROWS_AS(sbm_generate(spec), std::invalid_argument);
  }
}

TEST_CASE("normalize_adjacency") {
  auto graph_from_edges = [](int n, std::vector<std::pair<int, int>> edges) {
    Graph g;
    g.num_nodes = n;
    g.features = Tensor(n, 1, 1.0);
    std::set<std::pair<int, int>> pairs(edges.begin(), edges.end());
    g.adjacency = detail::adjacency_from_pairs(n, pairs);
    return g;
  };
  SECTION("single node") {
    const SparseMatrix a = normalize_adjacency(graph_from_edges(1, {}));
    REQUIRE(to_dense(a).at(0, 0) == 1.0);
  }
  SECTION("one edge") {
    const Tensor a = to_dense(normalize_adjacency(graph_from_edges(2, {{0, 1}})));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) REQUIRE(a.at(i, j) == Catch::Approx(0.5).epsilon(1e-15));
  }
  SECTION("triangle") {
    const Tensor a =
        to_dense(normalize_adjacency(graph_from_edges(3, {{0, 1}, {1, 2}, {0, 2}})));
    for (double v : a.values()) REQUIRE(v == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SECTION("row sums are 1 on regular graphs and the matrix is symmetric") {
    // 4-cycle: every node has degree 2.
    const Graph g = graph_from_edges(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
    const Tensor a = to_dense(normalize_adjacency(g));
    for (int i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 4; ++j) {
        sum += a.at(i, j);
        REQUIRE(std::abs(a.at(i, j) - a.at(j, i)) < 1e-15);
      }
      REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("make_split") {
  auto labeled_graph = [](int n) {
    Graph g;
    g.num_nodes = n;
    g.features = Tensor(n, 1, 1.0);
    g.adjacency = SparseMatrix(n, n);
    g.labels = std::vector<int>(n, 0);
    g.num_classes = 1;
    return g;
  };
  SECTION("sizes for N=10 at 1:1:8") {
    const SplitMasks m = make_split(labeled_graph(10), 1, 1, 8, 0);
    REQUIRE(m.train.size() == 1);
    REQUIRE(m.valid.size() == 1);
    REQUIRE(m.test.size() == 8);
  }
  SECTION("same seed twice gives identical masks") {
    const Graph g = labeled_graph(50);
    const SplitMasks a = make_split(g, 1, 1, 8, 7), b = make_split(g, 1, 1, 8, 7);
    REQUIRE(a.train == b.train);
    REQUIRE(a.valid == b.valid);
    REQUIRE(a.test == b.test);
    REQUIRE(make_split(g, 1, 1, 8, 8).train != a.train);
  }
  SECTION("floor-and-remainder rounding at Cora scale") {
    const SplitMasks m = make_split(labeled_graph(2708), 1, 1, 8, 1);
    REQUIRE(m.train.size() == 270);
    REQUIRE(m.valid.size() == 270);
    REQUIRE(m.test.size() == 2168);
  }
  SECTION("masks are disjoint and cover every node") {
    const SplitMasks m = make_split(labeled_graph(97), 1, 1, 8, 3);
    std::vector<int> all;
    all.insert(all.end(), m.train.begin(), m.train.end());
    all.insert(all.end(), m.valid.begin(), m.valid.end());
    all.insert(all.end(), m.test.begin(), m.test.end());
    std::sort(all.begin(), all.end());
    REQUIRE(static_cast<int>(all.size()) == 97);
    for (int i = 0; i < 97; ++i) REQUIRE(all[i] == i);
  }
  SECTION("missing labels") {
    Graph g;
    g.num_nodes = 4;
    g.features = Tensor(4, 1, 1.0);
    g.adjacency = SparseMatrix(4, 4);
    REQUIRE_THROWS_AS(make_split(g, 1, 1, 8, 0), DataError);
  }
}
