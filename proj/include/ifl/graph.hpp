#pragma once

// Graph data model: manifest-driven ingestion, stochastic block model
// generation with planted block semantics, GCN adjacency normalization,
// and seeded train/valid/test splits.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ifl/errors.hpp"
#include "ifl/rng.hpp"
#include "ifl/sparse.hpp"
#include "ifl/tensor.hpp"

namespace ifl {

struct Graph {
  int num_nodes = 0;
  Tensor features;           // N x F
  SparseMatrix adjacency;    // N x N, symmetric, no self-loops
  std::optional<std::vector<int>> labels;
  std::optional<int> num_classes;

  int feature_dim() const { return features.cols(); }

  // Undirected edges as (i, j) with i < j.
  std::vector<std::pair<int, int>> undirected_edges() const {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < adjacency.rows(); ++r)
      for (int k = adjacency.row_begin(r); k < adjacency.row_end(r); ++k)
        if (r < adjacency.col_at(k)) out.emplace_back(r, adjacency.col_at(k));
    return out;
  }

  std::vector<int> degrees() const {
    std::vector<int> deg(num_nodes, 0);
    for (int r = 0; r < adjacency.rows(); ++r) deg[r] = adjacency.row_end(r) - adjacency.row_begin(r);
    return deg;
  }
};

struct SplitMasks {
  std::vector<int> train, valid, test;
  std::uint64_t seed = 0;
};

struct SbmSpec {
  std::vector<int> block_sizes;
  double p_in = 0.5;
  double p_out = 0.05;
  int feature_dim = 8;
  double mean_scale = 4.0;   // norm of each block's mean vector
  double noise_sigma = 1.0;  // per-dimension Gaussian noise
  std::uint64_t seed = 0;

  int total_nodes() const {
    int n = 0;
    for (int b : block_sizes) n += b;
    return n;
  }

  void validate() const {
    if (block_sizes.empty()) throw std::invalid_argument("SbmSpec: no blocks");
    for (int b : block_sizes)
      if (b <= 0) throw std::invalid_argument("SbmSpec: block sizes must be positive");
    if (!(p_out >= 0.0 && p_out <= p_in && p_in <= 1.0))
      throw std::invalid_argument("SbmSpec: need 0 <= p_out <= p_in <= 1");
    if (feature_dim < static_cast<int>(block_sizes.size()))
      throw std::invalid_argument("SbmSpec: feature_dim must be >= number of blocks for orthogonal means");
    if (mean_scale < 0.0 || noise_sigma < 0.0)
      throw std::invalid_argument("SbmSpec: negative feature scale");
  }
};

namespace detail {

inline SparseMatrix adjacency_from_pairs(int n, const std::set<std::pair<int, int>>& pairs) {
  std::vector<std::tuple<int, int, double>> entries;
  entries.reserve(pairs.size() * 2);
  for (const auto& [i, j] : pairs) {
    entries.emplace_back(i, j, 1.0);
    entries.emplace_back(j, i, 1.0);
  }
  return SparseMatrix::from_coo(n, n, std::move(entries));
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

// Manifest: {"edges": path, "features": path, "labels": path|null,
//            "num_nodes": int, "feature_dim": int}
// Edge file: one "src<TAB>dst" line per undirected edge, 0-based.
// Features: CSV, one row per node, exactly feature_dim finite decimals.
// Labels: one non-negative int per line.
inline Graph load_dataset(const std::string& manifest_path, bool row_normalize = false) {
  namespace fs = std::filesystem;
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError("cannot open manifest: " + manifest_path);
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest parse error in " + manifest_path + ": " + e.what());
  }
  for (const auto& key : {"edges", "features", "labels", "num_nodes", "feature_dim"})
    if (!manifest.contains(key)) throw DataError("manifest missing key '" + std::string(key) + "'");

  const fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) { return (base / p).string(); };

  const int n = manifest.at("num_nodes").get<int>();
  const int f = manifest.at("feature_dim").get<int>();
  if (n <= 0 || f <= 0) throw DataError("manifest: num_nodes and feature_dim must be positive");

  // Edges: symmetrized, deduplicated; self-loops dropped.
  std::set<std::pair<int, int>> pairs;
  {
    const std::string path = resolve(manifest.at("edges").get<std::string>());
    std::ifstream in(path);
    if (!in) throw DataError("cannot open edge file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      long src = -1, dst = -1;
      if (!(ls >> src >> dst))
        throw DataError(path + ":" + std::to_string(lineno) + ": expected 'src<TAB>dst'");
      if (src < 0 || src >= n || dst < 0 || dst >= n)
        throw DataError(path + ":" + std::to_string(lineno) + ": node index out of range [0," +
                        std::to_string(n) + ")");
      if (src == dst) continue;
      pairs.emplace(std::min(src, dst), std::max(src, dst));
    }
  }

  // Features.
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(n) * f);
  {
    const std::string path = resolve(manifest.at("features").get<std::string>());
    std::ifstream in(path);
    if (!in) throw DataError("cannot open feature file: " + path);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ++rows;
      if (rows > n) throw DataError(path + ": more feature rows than num_nodes");
      std::istringstream ls(line);
      std::string cell;
      int count = 0;
      while (std::getline(ls, cell, ',')) {
        ++count;
        if (count > f)
          throw DataError(path + ":" + std::to_string(rows) + ": row has more than " +
                          std::to_string(f) + " values");
        std::size_t used = 0;
        double v;
        try {
          v = std::stod(cell, &used);
        } catch (const std::exception&) {
          throw DataError(path + ":" + std::to_string(rows) + ": bad number '" + cell + "'");
        }
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size())
          throw DataError(path + ":" + std::to_string(rows) + ": bad number '" + cell + "'");
        if (!std::isfinite(v))
          throw DataError(path + ":" + std::to_string(rows) + ": non-finite feature value");
        flat.push_back(v);
      }
      if (count != f)
        throw DataError(path + ":" + std::to_string(rows) + ": expected " + std::to_string(f) +
                        " values, got " + std::to_string(count));
    }
    if (rows != n)
      throw DataError(path + ": expected " + std::to_string(n) + " feature rows, got " +
                      std::to_string(rows));
  }

  Graph g;
  g.num_nodes = n;
  g.features = Tensor::from_values(n, f, std::move(flat));
  g.adjacency = detail::adjacency_from_pairs(n, pairs);

  // Labels (optional).
  if (!manifest.at("labels").is_null()) {
    const std::string path = resolve(manifest.at("labels").get<std::string>());
    std::ifstream in(path);
    if (!in) throw DataError("cannot open label file: " + path);
    std::vector<int> labels;
    labels.reserve(n);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      long y;
      try {
        y = std::stol(line);
      } catch (const std::exception&) {
        throw DataError(path + ": bad label '" + line + "'");
      }
      if (y < 0) throw DataError(path + ": negative label");
      labels.push_back(static_cast<int>(y));
    }
    if (static_cast<int>(labels.size()) != n)
      throw DataError(path + ": expected " + std::to_string(n) + " labels, got " +
                      std::to_string(labels.size()));
    g.num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
    g.labels = std::move(labels);
  }

  if (row_normalize) {
    auto& x = g.features.values();
    for (int i = 0; i < n; ++i) {
      double norm = 0.0;
      for (int k = 0; k < f; ++k) norm += x[static_cast<std::size_t>(i) * f + k] * x[static_cast<std::size_t>(i) * f + k];
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (int k = 0; k < f; ++k) x[static_cast<std::size_t>(i) * f + k] /= norm;
    }
  }
  return g;
}

// Writes the manifest plus edge/feature/label files into out_dir. Returns
// the manifest path. Numeric formatting round-trips doubles exactly.
inline std::string save_dataset(const Graph& g, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  {
    std::ofstream out(dir / "edges.tsv");
    if (!out) throw DataError("cannot write " + (dir / "edges.tsv").string());
    for (const auto& [i, j] : g.undirected_edges()) out << i << '\t' << j << '\n';
  }
  {
    std::ofstream out(dir / "features.csv");
    if (!out) throw DataError("cannot write " + (dir / "features.csv").string());
    const int f = g.feature_dim();
    for (int i = 0; i < g.num_nodes; ++i) {
      for (int k = 0; k < f; ++k) {
        if (k) out << ',';
        out << detail::format_double(g.features.at(i, k));
      }
      out << '\n';
    }
  }
  if (g.labels) {
    std::ofstream out(dir / "labels.txt");
    if (!out) throw DataError("cannot write " + (dir / "labels.txt").string());
    for (int y : *g.labels) out << y << '\n';
  }

  nlohmann::json manifest = {
      {"edges", "edges.tsv"},
      {"features", "features.csv"},
      {"labels", g.labels ? nlohmann::json("labels.txt") : nlohmann::json(nullptr)},
      {"num_nodes", g.num_nodes},
      {"feature_dim", g.feature_dim()},
  };
  const std::string manifest_path = (dir / "manifest.json").string();
  std::ofstream out(manifest_path);
  if (!out) throw DataError("cannot write " + manifest_path);
  out << manifest.dump(2) << '\n';
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

// Planted-community graph: intra-block edges with p_in, inter-block with
// p_out; features are the block's mean vector (orthonormal basis rows scaled
// to mean_scale) plus N(0, noise_sigma^2) per dimension; labels are block ids.
inline Graph sbm_generate(const SbmSpec& spec) {
  spec.validate();
  const int n = spec.total_nodes();
  const int b = static_cast<int>(spec.block_sizes.size());
  const int f = spec.feature_dim;

  std::vector<int> block_of(n);
  {
    int node = 0;
    for (int blk = 0; blk < b; ++blk)
      for (int k = 0; k < spec.block_sizes[blk]; ++k) block_of[node++] = blk;
  }

  // Orthonormal block means via Gram-Schmidt on seeded Gaussian rows; rows
  // are kept unit-norm during elimination and scaled at the end.
  std::vector<std::vector<double>> means(b, std::vector<double>(f));
  {
    Rng rng(mix_seed(spec.seed, 1));
    for (auto& row : means)
      for (auto& x : row) x = rng.normal();
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < i; ++j) {
        double dot = 0.0;
        for (int k = 0; k < f; ++k) dot += means[i][k] * means[j][k];
        for (int k = 0; k < f; ++k) means[i][k] -= dot * means[j][k];
      }
      double norm = 0.0;
      for (int k = 0; k < f; ++k) norm += means[i][k] * means[i][k];
      norm = std::sqrt(norm);
      if (norm < 1e-9) throw NumericError("sbm_generate: degenerate basis draw");
      for (int k = 0; k < f; ++k) means[i][k] /= norm;
    }
    for (auto& row : means)
      for (auto& x : row) x *= spec.mean_scale;
  }

  std::vector<double> flat(static_cast<std::size_t>(n) * f);
  {
    Rng rng(mix_seed(spec.seed, 2));
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < f; ++k)
        flat[static_cast<std::size_t>(i) * f + k] =
            means[block_of[i]][k] + spec.noise_sigma * rng.normal();
  }

  std::set<std::pair<int, int>> pairs;
  {
    Rng rng(mix_seed(spec.seed, 3));
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double p = block_of[i] == block_of[j] ? spec.p_in : spec.p_out;
        if (rng.bernoulli(p)) pairs.emplace(i, j);
      }
  }

  Graph g;
  g.num_nodes = n;
  g.features = Tensor::from_values(n, f, std::move(flat));
  g.adjacency = detail::adjacency_from_pairs(n, pairs);
  g.labels = block_of;
  g.num_classes = b;
  return g;
}

// ---------------------------------------------------------------------------
// Normalization and splits
// ---------------------------------------------------------------------------

// Symmetric GCN normalization of A+I: entry (i,j) is 1/sqrt(d_i d_j) with
// d the degree in A+I.
inline SparseMatrix normalize_adjacency(const Graph& g) {
  const int n = g.num_nodes;
  std::vector<double> deg(n, 1.0);  // self-loop
  for (int r = 0; r < n; ++r) deg[r] += g.adjacency.row_end(r) - g.adjacency.row_begin(r);

  std::vector<std::tuple<int, int, double>> entries;
  entries.reserve(g.adjacency.nnz() + n);
  for (int r = 0; r < n; ++r) {
    entries.emplace_back(r, r, 1.0 / deg[r]);
    for (int k = g.adjacency.row_begin(r); k < g.adjacency.row_end(r); ++k) {
      const int c = g.adjacency.col_at(k);
      entries.emplace_back(r, c, 1.0 / std::sqrt(deg[r] * deg[c]));
    }
  }
  return SparseMatrix::from_coo(n, n, std::move(entries));
}

// Seeded permutation, then contiguous slices; train/valid sizes floor to the
// ratio, remainder goes to test. Masks are returned sorted.
inline SplitMasks make_split(const Graph& g, int train_parts, int valid_parts, int test_parts,
                             std::uint64_t seed) {
  if (!g.labels) throw DataError("make_split: dataset has no labels");
  if (train_parts <= 0 || valid_parts <= 0 || test_parts <= 0)
    throw std::invalid_argument("make_split: ratio components must be positive");
  const int n = g.num_nodes;
  const double total = train_parts + valid_parts + test_parts;

  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng rng(mix_seed(seed, 0x517u));
  rng.shuffle(perm);

  const int n_train = static_cast<int>(std::floor(n * train_parts / total));
  const int n_valid = static_cast<int>(std::floor(n * valid_parts / total));
  SplitMasks masks;
  masks.seed = seed;
  masks.train.assign(perm.begin(), perm.begin() + n_train);
  masks.valid.assign(perm.begin() + n_train, perm.begin() + n_train + n_valid);
  masks.test.assign(perm.begin() + n_train + n_valid, perm.end());
  std::sort(masks.train.begin(), masks.train.end());
  std::sort(masks.valid.begin(), masks.valid.end());
  std::sort(masks.test.begin(), masks.test.end());
  return masks;
}

}  // namespace ifl
