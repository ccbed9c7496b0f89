#pragma once

// Command implementations behind the CLI: dataset generation, pre-training
// with artifact emission, probing, the similarity audit, hyper-parameter
// sweeps, and the self-test. The CLI front end only parses flags and maps
// errors to exit codes; everything here is callable from tests.

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ifl/augment.hpp"
#include "ifl/encoder.hpp"
#include "ifl/eval.hpp"
#include "ifl/graph.hpp"
#include "ifl/selftest.hpp"
#include "ifl/trainer.hpp"

namespace ifl::cmd {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Digests and ids
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a_file(const std::string& path, std::uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open for digest: " + path);
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Strict JSON helpers (unknown keys are config errors)
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw ConfigError(ctx + ": unknown key '" + item.key() + "'");
}

template <typename T>
T get_required(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) throw ConfigError(ctx + ": missing required key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + ": bad type for '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + ": bad type for '" + key + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset source: a manifest path or an inline block-model spec
// ---------------------------------------------------------------------------

struct DatasetSource {
  std::string manifest_path;        // empty when generated
  std::optional<SbmSpec> sbm;
  bool row_normalize = false;
};

inline SbmSpec parse_sbm_spec(const json& j, const std::string& ctx) {
  detail::check_keys(j, {"blocks", "p_in", "p_out", "feature_dim", "mean_scale", "noise_sigma",
                         "seed"},
                     ctx);
  SbmSpec spec;
  spec.block_sizes = detail::get_required<std::vector<int>>(j, "blocks", ctx);
  spec.p_in = detail::get_required<double>(j, "p_in", ctx);
  spec.p_out = detail::get_required<double>(j, "p_out", ctx);
  spec.feature_dim = detail::get_required<int>(j, "feature_dim", ctx);
  spec.mean_scale = detail::get_or<double>(j, "mean_scale", 4.0, ctx);
  spec.noise_sigma = detail::get_or<double>(j, "noise_sigma", 1.0, ctx);
  spec.seed = detail::get_or<std::uint64_t>(j, "seed", 0, ctx);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  return spec;
}

inline json sbm_spec_json(const SbmSpec& spec) {
  return {{"blocks", spec.block_sizes},   {"p_in", spec.p_in},
          {"p_out", spec.p_out},          {"feature_dim", spec.feature_dim},
          {"mean_scale", spec.mean_scale}, {"noise_sigma", spec.noise_sigma},
          {"seed", spec.seed}};
}

inline Graph load_source(const DatasetSource& source) {
  if (source.sbm) {
    Graph g = sbm_generate(*source.sbm);
    if (source.row_normalize) {
      // Route through the loader's convention: normalize rows in place.
      auto& x = g.features.values();
      const int f = g.feature_dim();
      for (int i = 0; i < g.num_nodes; ++i) {
        double norm = 0.0;
        for (int k = 0; k < f; ++k)
          norm += x[static_cast<std::size_t>(i) * f + k] * x[static_cast<std::size_t>(i) * f + k];
        norm = std::sqrt(norm);
        if (norm > 0.0)
          for (int k = 0; k < f; ++k) x[static_cast<std::size_t>(i) * f + k] /= norm;
      }
    }
    return g;
  }
  return load_dataset(source.manifest_path, source.row_normalize);
}

inline std::string source_digest(const DatasetSource& source) {
  if (source.sbm) {
    const std::string dump = sbm_spec_json(*source.sbm).dump();
    return hex64(fnv1a(dump.data(), dump.size()));
  }
  std::uint64_t h = fnv1a_file(source.manifest_path, 0xcbf29ce484222325ull);
  // Referenced files participate too.
  std::ifstream mf(source.manifest_path);
  json manifest;
  mf >> manifest;
  const auto base = std::filesystem::path(source.manifest_path).parent_path();
  for (const char* key : {"edges", "features", "labels"})
    if (manifest.contains(key) && manifest.at(key).is_string())
      h = fnv1a_file((base / manifest.at(key).get<std::string>()).string(), h);
  return hex64(h);
}

// ---------------------------------------------------------------------------
// Pre-train configuration
// ---------------------------------------------------------------------------

struct PretrainConfig {
  DatasetSource source;
  TrainConfig train;
  int split_ratio[3] = {1, 1, 8};
  std::uint64_t split_seed = 0;
  json resolved;  // every default materialized; reruns are bit-identical
};

inline AugmentConfig parse_augment(const json& j, std::uint64_t seed) {
  detail::check_keys(j, {"edge_drop", "feature_mask", "mode", "view1", "view2"}, "augment");
  AugmentConfig cfg;
  cfg.edge_drop = detail::get_or<double>(j, "edge_drop", 0.2, "augment");
  cfg.feature_mask = detail::get_or<double>(j, "feature_mask", 0.2, "augment");
  const std::string mode = detail::get_or<std::string>(j, "mode", "uniform", "augment");
  if (mode == "uniform")
    cfg.mode = DropMode::Uniform;
  else if (mode == "degree_adaptive")
    cfg.mode = DropMode::DegreeAdaptive;
  else
    throw ConfigError("augment.mode must be 'uniform' or 'degree_adaptive'");
  for (int view = 1; view <= 2; ++view) {
    const char* key = view == 1 ? "view1" : "view2";
    if (!j.contains(key)) continue;
    const json& vj = j.at(key);
    detail::check_keys(vj, {"edge_drop", "feature_mask"}, std::string("augment.") + key);
    ViewParams p{cfg.edge_drop, cfg.feature_mask};
    p.edge_drop = detail::get_or<double>(vj, "edge_drop", p.edge_drop, key);
    p.feature_mask = detail::get_or<double>(vj, "feature_mask", p.feature_mask, key);
    (view == 1 ? cfg.view1 : cfg.view2) = p;
  }
  cfg.seed = seed;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("augment: ") + e.what());
  }
  return cfg;
}

// The method-defining knobs (threshold, tau, warmup_epochs, update_interval,
// max_rounds) have no silent defaults.
inline PretrainConfig parse_pretrain_config(const json& j, const std::string& config_dir) {
  const std::string ctx = "config";
  detail::check_keys(
      j,
      {"dataset", "sbm", "row_normalize_features", "warmup_epochs", "update_interval",
       "max_rounds", "threshold", "tau", "beta", "learning_rate", "seed", "optimizer",
       "freeze_views", "hidden_dim", "output_dim", "probe_every", "intra_view_negatives",
       "projection_head", "purity_supsim", "augment", "split"},
      ctx);

  PretrainConfig cfg;
  const bool has_dataset = j.contains("dataset");
  const bool has_sbm = j.contains("sbm");
  if (has_dataset == has_sbm)
    throw ConfigError("config: exactly one of 'dataset' or 'sbm' is required");
  if (has_dataset) {
    std::string path = detail::get_required<std::string>(j, "dataset", ctx);
    std::filesystem::path p(path);
    if (p.is_relative()) p = std::filesystem::path(config_dir) / p;
    cfg.source.manifest_path = std::filesystem::weakly_canonical(p).string();
  } else {
    cfg.source.sbm = parse_sbm_spec(j.at("sbm"), "config.sbm");
  }
  cfg.source.row_normalize = detail::get_or<bool>(j, "row_normalize_features", false, ctx);

  TrainConfig& t = cfg.train;
  t.warmup_epochs = detail::get_required<int>(j, "warmup_epochs", ctx);
  t.update_interval = detail::get_required<int>(j, "update_interval", ctx);
  t.max_rounds = detail::get_required<int>(j, "max_rounds", ctx);
  t.threshold = detail::get_required<double>(j, "threshold", ctx);
  t.tau = detail::get_required<double>(j, "tau", ctx);
  t.beta = detail::get_or<double>(j, "beta", 1.0, ctx);
  t.lr = detail::get_or<double>(j, "learning_rate", 5e-4, ctx);
  t.seed = detail::get_or<std::uint64_t>(j, "seed", 0, ctx);
  const std::string opt = detail::get_or<std::string>(j, "optimizer", "adam", ctx);
  if (opt == "adam")
    t.optimizer = OptimizerKind::Adam;
  else if (opt == "sgd")
    t.optimizer = OptimizerKind::Sgd;
  else
    throw ConfigError("config: optimizer must be 'adam' or 'sgd'");
  t.freeze_views = detail::get_or<bool>(j, "freeze_views", false, ctx);
  t.hidden_dim = detail::get_or<int>(j, "hidden_dim", 256, ctx);
  t.output_dim = detail::get_or<int>(j, "output_dim", 128, ctx);
  t.probe_every = detail::get_or<int>(j, "probe_every", 0, ctx);
  t.intra_view_negatives = detail::get_or<bool>(j, "intra_view_negatives", true, ctx);
  t.projection_head = detail::get_or<bool>(j, "projection_head", false, ctx);
  t.purity_supsim = detail::get_or<bool>(j, "purity_supsim", false, ctx);
  t.augment = parse_augment(j.contains("augment") ? j.at("augment") : json::object(), t.seed);

  if (j.contains("split")) {
    const json& sj = j.at("split");
    detail::check_keys(sj, {"ratio", "seed"}, "split");
    const auto ratio = detail::get_or<std::vector<int>>(sj, "ratio", {1, 1, 8}, "split");
    if (ratio.size() != 3) throw ConfigError("split.ratio must have three components");
    for (int i = 0; i < 3; ++i) cfg.split_ratio[i] = ratio[i];
    cfg.split_seed = detail::get_or<std::uint64_t>(sj, "seed", t.seed, "split");
  } else {
    cfg.split_seed = t.seed;
  }

  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  // Materialize the resolved document.
  json r;
  if (cfg.source.sbm)
    r["sbm"] = sbm_spec_json(*cfg.source.sbm);
  else
    r["dataset"] = cfg.source.manifest_path;
  r["row_normalize_features"] = cfg.source.row_normalize;
  r["warmup_epochs"] = t.warmup_epochs;
  r["update_interval"] = t.update_interval;
  r["max_rounds"] = t.max_rounds;
  r["threshold"] = t.threshold;
  r["tau"] = t.tau;
  r["beta"] = t.beta;
  r["learning_rate"] = t.lr;
  r["seed"] = t.seed;
  r["optimizer"] = t.optimizer == OptimizerKind::Adam ? "adam" : "sgd";
  r["freeze_views"] = t.freeze_views;
  r["hidden_dim"] = t.hidden_dim;
  r["output_dim"] = t.output_dim;
  r["probe_every"] = t.probe_every;
  r["intra_view_negatives"] = t.intra_view_negatives;
  r["projection_head"] = t.projection_head;
  r["purity_supsim"] = t.purity_supsim;
  json aug;
  aug["edge_drop"] = t.augment.edge_drop;
  aug["feature_mask"] = t.augment.feature_mask;
  aug["mode"] = t.augment.mode == DropMode::Uniform ? "uniform" : "degree_adaptive";
  if (t.augment.view1)
    aug["view1"] = {{"edge_drop", t.augment.view1->edge_drop},
                    {"feature_mask", t.augment.view1->feature_mask}};
  if (t.augment.view2)
    aug["view2"] = {{"edge_drop", t.augment.view2->edge_drop},
                    {"feature_mask", t.augment.view2->feature_mask}};
  r["augment"] = aug;
  r["split"] = {{"ratio", {cfg.split_ratio[0], cfg.split_ratio[1], cfg.split_ratio[2]}},
                {"seed", cfg.split_seed}};
  cfg.resolved = r;
  return cfg;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("JSON parse error in " + path + ": " + e.what());
  }
  return j;
}

// ---------------------------------------------------------------------------
// gen-sbm
// ---------------------------------------------------------------------------

struct GenSbmOptions {
  SbmSpec spec;
  std::string out_dir;
};

inline std::string cmd_gen_sbm(const GenSbmOptions& opt) {
  const Graph g = sbm_generate(opt.spec);
  const std::string manifest = save_dataset(g, opt.out_dir);
  std::ofstream spec_out(std::filesystem::path(opt.out_dir) / "sbm_spec.json");
  spec_out << sbm_spec_json(opt.spec).dump(2) << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  bool baseline_mode = false;       // force max_rounds = 0 (plain InfoNCE)
  bool algorithm1_literal = false;  // freeze views + plain SGD
};

struct PretrainOutcome {
  RunReport report;
  std::string run_id;
  std::string out_dir;
  json report_json;
};

inline json report_to_json(const RunReport& report, const json& resolved_config,
                           const std::string& run_id, const json& dataset_info) {
  json rounds = json::array();
  for (const auto& r : report.rounds) {
    json rj;
    rj["round"] = r.round;
    rj["unlabeled_pos"] = r.unlabeled_pos;
    rj["same_class_ratio"] =
        r.same_class_ratio ? json(*r.same_class_ratio) : json(nullptr);
    rj["sup_sim"] = r.sup_sim ? json(*r.sup_sim) : json(nullptr);
    rj["probe_valid_accuracy"] =
        r.probe_valid_accuracy ? json(*r.probe_valid_accuracy) : json(nullptr);
    rounds.push_back(rj);
  }
  json j;
  j["schema_version"] = 1;
  j["run_id"] = run_id;
  j["config"] = resolved_config;
  j["dataset"] = dataset_info;
  j["losses"] = report.losses;
  j["rounds"] = rounds;
  j["warmup_probe_accuracy"] =
      report.warmup_probe_accuracy ? json(*report.warmup_probe_accuracy) : json(nullptr);
  j["best"] = report.best_params
                  ? json({{"round", report.best_round},
                          {"valid_accuracy", report.best_valid_accuracy}})
                  : json(nullptr);
  j["artifacts"] = {{"final_checkpoint", "final.ckpt"},
                    {"best_checkpoint", report.best_params ? json("best.ckpt") : json(nullptr)},
                    {"loss_csv", "loss.csv"},
                    {"rounds_csv", "rounds.csv"}};
  j["wall_seconds"] = report.wall_seconds;
  return j;
}

// Structural validation of a run report against the published schema.
inline void validate_report(const json& j) {
  auto fail = [](const std::string& what) { throw DataError("report schema: " + what); };
  if (!j.is_object()) fail("not an object");
  for (const char* key : {"schema_version", "run_id", "config", "dataset", "losses", "rounds",
                          "warmup_probe_accuracy", "best", "artifacts", "wall_seconds"})
    if (!j.contains(key)) fail(std::string("missing '") + key + "'");
  if (!j.at("schema_version").is_number_integer()) fail("schema_version not an integer");
  if (!j.at("run_id").is_string()) fail("run_id not a string");
  if (!j.at("config").is_object()) fail("config not an object");
  if (!j.at("losses").is_array()) fail("losses not an array");
  for (const auto& x : j.at("losses"))
    if (!x.is_number()) fail("losses entry not a number");
  if (!j.at("rounds").is_array()) fail("rounds not an array");
  for (const auto& r : j.at("rounds")) {
    for (const char* key :
         {"round", "unlabeled_pos", "same_class_ratio", "sup_sim", "probe_valid_accuracy"})
      if (!r.contains(key)) fail(std::string("round record missing '") + key + "'");
    if (!r.at("round").is_number_integer()) fail("round not an integer");
    if (!r.at("unlabeled_pos").is_number_integer()) fail("unlabeled_pos not an integer");
    for (const char* key : {"same_class_ratio", "sup_sim", "probe_valid_accuracy"})
      if (!r.at(key).is_null() && !r.at(key).is_number())
        fail(std::string(key) + " not number|null");
  }
  if (!j.at("artifacts").is_object()) fail("artifacts not an object");
  if (!j.at("wall_seconds").is_number()) fail("wall_seconds not a number");
}

inline PretrainOutcome cmd_pretrain(const PretrainOptions& opt) {
  namespace fs = std::filesystem;
  json config_json = load_json_file(opt.config_path);
  if (opt.seed_override) config_json["seed"] = *opt.seed_override;
  if (opt.baseline_mode) config_json["max_rounds"] = 0;
  if (opt.algorithm1_literal) {
    config_json["freeze_views"] = true;
    config_json["optimizer"] = "sgd";
  }
  PretrainConfig cfg =
      parse_pretrain_config(config_json, fs::path(opt.config_path).parent_path().string());

  const Graph g = load_source(cfg.source);
  const std::string digest = source_digest(cfg.source);
  const std::string run_id =
      hex64(fnv1a(cfg.resolved.dump().data(), cfg.resolved.dump().size(),
                  fnv1a(digest.data(), digest.size())));

  std::optional<SplitMasks> masks;
  if (cfg.train.probe_every > 0) {
    if (!g.labels) throw DataError("pretrain: probe_every > 0 requires labels");
    masks = make_split(g, cfg.split_ratio[0], cfg.split_ratio[1], cfg.split_ratio[2],
                       cfg.split_seed);
  }

  RunReport report = run_algorithm1(g, cfg.train, masks);

  fs::create_directories(opt.out_dir);
  const fs::path dir(opt.out_dir);
  save_checkpoint((dir / "final.ckpt").string(), report.final_params);
  if (report.best_params) save_checkpoint((dir / "best.ckpt").string(), *report.best_params);
  {
    std::ofstream out(dir / "loss.csv");
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < report.losses.size(); ++e)
      out << e << ',' << ifl::detail::format_double(report.losses[e]) << '\n';
  }
  {
    std::ofstream out(dir / "rounds.csv");
    out << "round,unlabeled_pos,same_class_ratio\n";
    for (const auto& r : report.rounds) {
      out << r.round << ',' << r.unlabeled_pos << ',';
      if (r.same_class_ratio) out << ifl::detail::format_double(*r.same_class_ratio);
      out << '\n';
    }
  }
  json dataset_info = {{"digest", digest},
                       {"num_nodes", g.num_nodes},
                       {"feature_dim", g.feature_dim()},
                       {"num_classes", g.num_classes ? json(*g.num_classes) : json(nullptr)},
                       {"source", cfg.source.sbm ? json("sbm") : json(cfg.source.manifest_path)}};
  json report_json = report_to_json(report, cfg.resolved, run_id, dataset_info);
  if (cfg.train.purity_supsim) {
    const SupervisedConfig sup = run_supervised_config(cfg.train);
    report_json["supervised_reference"] = {{"hidden_dim", sup.hidden_dim},
                                           {"epochs", sup.epochs},
                                           {"learning_rate", sup.lr},
                                           {"seed", sup.seed}};
  }
  validate_report(report_json);
  {
    std::ofstream out(dir / "report.json");
    out << report_json.dump(2) << '\n';
  }
  {
    json manifest = {{"run_id", run_id},
                     {"config", cfg.resolved},
                     {"dataset_digest", digest},
                     {"outputs", {"report.json", "final.ckpt", "loss.csv", "rounds.csv"}}};
    if (report.best_params) manifest["outputs"].push_back("best.ckpt");
    std::ofstream out(dir / "run_manifest.json");
    out << manifest.dump(2) << '\n';
  }
  return {std::move(report), run_id, opt.out_dir, report_json};
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

struct ProbeOptions {
  std::string checkpoint_path;
  std::string dataset_path;
  bool row_normalize = false;
  int split_ratio[3] = {1, 1, 8};
  std::uint64_t split_seed = 0;
  ProbeConfig probe;
  std::string out_path;  // optional JSON output file
};

struct ProbeOutcome {
  ProbeResult result;
  json result_json;
};

inline ProbeOutcome cmd_probe(const ProbeOptions& opt) {
  const EncoderParams params = load_checkpoint(opt.checkpoint_path);
  const Graph g = load_dataset(opt.dataset_path, opt.row_normalize);
  if (!g.labels) throw DataError("probe: dataset has no labels");
  if (params.feature_dim() != g.feature_dim())
    throw DataError("probe: checkpoint expects feature_dim=" +
                    std::to_string(params.feature_dim()) + " but dataset has feature_dim=" +
                    std::to_string(g.feature_dim()));

  const SplitMasks masks =
      make_split(g, opt.split_ratio[0], opt.split_ratio[1], opt.split_ratio[2], opt.split_seed);
  // The probe always sees the original graph, never an augmented view.
  const Tensor embeddings = encode(params, normalize_adjacency(g), g.features);
  const ProbeResult result =
      linear_probe(embeddings, *g.labels, *g.num_classes, masks, opt.probe);

  json j;
  j["accuracies"] = result.accuracies;
  j["mean"] = result.mean;
  j["stddev"] = result.stddev;
  j["split"] = {{"ratio", {opt.split_ratio[0], opt.split_ratio[1], opt.split_ratio[2]}},
                {"seed", opt.split_seed},
                {"sizes", {masks.train.size(), masks.valid.size(), masks.test.size()}}};
  j["probe"] = {{"repeats", opt.probe.repeats},
                {"epochs", opt.probe.epochs},
                {"learning_rate", opt.probe.lr},
                {"seed", opt.probe.seed}};
  j["checkpoint"] = opt.checkpoint_path;
  j["dataset"] = opt.dataset_path;
  if (!opt.out_path.empty()) {
    std::ofstream out(opt.out_path);
    if (!out) throw DataError("cannot write " + opt.out_path);
    out << j.dump(2) << '\n';
  }
  return {result, j};
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

struct AuditOptions {
  std::string dataset_path;
  bool row_normalize = false;
  std::string out_dir;
  int top_k = 20;
  AugmentConfig augment;
  SupervisedConfig supervised;
};

struct AuditOutcome {
  BiasAudit audit;
  json summary;
};

inline AuditOutcome cmd_audit(const AuditOptions& opt) {
  namespace fs = std::filesystem;
  const Graph g = load_dataset(opt.dataset_path, opt.row_normalize);
  const BiasAudit audit = bias_audit(g, opt.augment, opt.supervised, opt.top_k);

  fs::create_directories(opt.out_dir);
  {
    std::ofstream out(fs::path(opt.out_dir) / "audit.csv");
    for (int i = 0; i < audit.excerpt.rows(); ++i) {
      for (int j = 0; j < audit.excerpt.cols(); ++j) {
        if (j) out << ',';
        out << ifl::detail::format_double(audit.excerpt.at(i, j));
      }
      out << '\n';
    }
  }
  json summary;
  summary["exceed_fraction"] = audit.exceed_fraction;
  summary["top_k"] = opt.top_k;
  summary["num_nodes"] = g.num_nodes;
  summary["augment"] = {{"edge_drop", opt.augment.edge_drop},
                        {"feature_mask", opt.augment.feature_mask},
                        {"mode", opt.augment.mode == DropMode::Uniform ? "uniform"
                                                                       : "degree_adaptive"},
                        {"seed", opt.augment.seed}};
  summary["supervised"] = {{"hidden_dim", opt.supervised.hidden_dim},
                           {"epochs", opt.supervised.epochs},
                           {"learning_rate", opt.supervised.lr},
                           {"seed", opt.supervised.seed}};
  {
    std::ofstream out(fs::path(opt.out_dir) / "audit.json");
    out << summary.dump(2) << '\n';
  }
  {
    json manifest = {{"config", summary},
                     {"dataset", opt.dataset_path},
                     {"outputs", {"audit.csv", "audit.json"}}};
    std::ofstream out(fs::path(opt.out_dir) / "run_manifest.json");
    out << manifest.dump(2) << '\n';
  }
  return {audit, summary};
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
  std::string sweep_path;
  std::string out_dir;
};

struct SweepRow {
  std::map<std::string, double> axis_values;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::optional<double> probe_mean, probe_std;
  std::optional<std::size_t> final_unlabeled_pos;
  std::optional<double> final_same_class_ratio;
};

inline int sweep_thread_cap() {
  if (const char* env = std::getenv("IFLG_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

inline std::vector<SweepRow> cmd_sweep(const SweepOptions& opt) {
  namespace fs = std::filesystem;
  const json spec = load_json_file(opt.sweep_path);
  detail::check_keys(spec, {"base", "axes", "seeds", "max_runs", "probe"}, "sweep");

  json base;
  if (!spec.contains("base")) throw ConfigError("sweep: missing 'base'");
  if (spec.at("base").is_string()) {
    fs::path p(spec.at("base").get<std::string>());
    if (p.is_relative()) p = fs::path(opt.sweep_path).parent_path() / p;
    base = load_json_file(p.string());
  } else if (spec.at("base").is_object()) {
    base = spec.at("base");
  } else {
    throw ConfigError("sweep: 'base' must be a config object or a path");
  }

  static const std::set<std::string> kAxes = {"threshold", "warmup_epochs", "update_interval",
                                              "beta", "tau"};
  std::vector<std::pair<std::string, std::vector<double>>> axes;
  if (spec.contains("axes")) {
    if (!spec.at("axes").is_object()) throw ConfigError("sweep: 'axes' must be an object");
    for (const auto& item : spec.at("axes").items()) {
      if (!kAxes.count(item.key()))
        throw ConfigError("sweep: unknown axis '" + item.key() + "'");
      std::vector<double> values;
      try {
        values = item.value().get<std::vector<double>>();
      } catch (const json::exception&) {
        throw ConfigError("sweep: axis '" + item.key() + "' must be an array of numbers");
      }
      if (values.empty()) throw ConfigError("sweep: axis '" + item.key() + "' is empty");
      std::sort(values.begin(), values.end());
      axes.emplace_back(item.key(), std::move(values));
    }
    std::sort(axes.begin(), axes.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  std::vector<std::uint64_t> seeds =
      detail::get_or<std::vector<std::uint64_t>>(spec, "seeds", {0}, "sweep");
  if (seeds.empty()) throw ConfigError("sweep: 'seeds' is empty");
  std::sort(seeds.begin(), seeds.end());
  const int max_runs = detail::get_or<int>(spec, "max_runs", 256, "sweep");

  ProbeConfig probe_cfg;
  if (spec.contains("probe")) {
    const json& pj = spec.at("probe");
    detail::check_keys(pj, {"repeats", "epochs", "lr", "seed"}, "sweep.probe");
    probe_cfg.repeats = detail::get_or<int>(pj, "repeats", 3, "sweep.probe");
    probe_cfg.epochs = detail::get_or<int>(pj, "epochs", 300, "sweep.probe");
    probe_cfg.lr = detail::get_or<double>(pj, "lr", 1e-2, "sweep.probe");
    probe_cfg.seed = detail::get_or<std::uint64_t>(pj, "seed", 0, "sweep.probe");
  }

  // Cartesian product in lexicographic order (axes sorted by name, values
  // ascending), then seeds ascending.
  std::size_t combos = 1;
  for (const auto& [name, values] : axes) combos *= values.size();
  const std::size_t total = combos * seeds.size();
  if (total == 0) throw ConfigError("sweep: empty grid");
  if (total > static_cast<std::size_t>(max_runs))
    throw ConfigError("sweep: grid size " + std::to_string(total) + " exceeds max_runs " +
                      std::to_string(max_runs));

  std::vector<SweepRow> rows(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rest = idx;
    const std::uint64_t seed = seeds[rest % seeds.size()];
    rest /= seeds.size();
    SweepRow& row = rows[idx];
    row.seed = seed;
    for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
      row.axis_values[it->first] = it->second[rest % it->second.size()];
      rest /= it->second.size();
    }
  }

  // Dataset and config dir shared read-only across workers.
  const std::string config_dir = fs::path(opt.sweep_path).parent_path().string();
  const PretrainConfig probe_base = parse_pretrain_config(base, config_dir);
  const Graph graph = load_source(probe_base.source);

  auto run_row = [&](SweepRow& row) {
    try {
      json cj = base;
      for (const auto& [name, value] : row.axis_values) {
        if (name == "warmup_epochs" || name == "update_interval")
          cj[name] = static_cast<int>(value);
        else
          cj[name] = value;
      }
      cj["seed"] = row.seed;
      const PretrainConfig cfg = parse_pretrain_config(cj, config_dir);
      std::optional<SplitMasks> masks;
      if (cfg.train.probe_every > 0)
        masks = make_split(graph, cfg.split_ratio[0], cfg.split_ratio[1], cfg.split_ratio[2],
                           cfg.split_seed);
      const RunReport report = run_algorithm1(graph, cfg.train, masks);
      if (!report.rounds.empty()) {
        row.final_unlabeled_pos = report.rounds.back().unlabeled_pos;
        row.final_same_class_ratio = report.rounds.back().same_class_ratio;
      }
      if (graph.labels) {
        const SplitMasks probe_masks = make_split(graph, cfg.split_ratio[0], cfg.split_ratio[1],
                                                  cfg.split_ratio[2], cfg.split_seed);
        const Tensor h = encode(report.final_params, normalize_adjacency(graph), graph.features);
        const ProbeResult pr =
            linear_probe(h, *graph.labels, *graph.num_classes, probe_masks, probe_cfg);
        row.probe_mean = pr.mean;
        row.probe_std = pr.stddev;
      }
    } catch (const std::exception& e) {
      std::string msg = e.what();
      for (auto& ch : msg)
        if (ch == ',' || ch == '\n') ch = ';';
      row.status = "error: " + msg;
    }
  };

  const int workers = static_cast<int>(
      std::min(static_cast<std::size_t>(sweep_thread_cap()), total));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      while (true) {
        const std::size_t idx = next.fetch_add(1);
        if (idx >= total) return;
        run_row(rows[idx]);
      }
    });
  for (auto& t : pool) t.join();

  // The aggregator is the only writer.
  fs::create_directories(opt.out_dir);
  {
    std::ofstream out(fs::path(opt.out_dir) / "sweep.csv");
    for (const auto& [name, values] : axes) out << name << ',';
    out << "seed,status,probe_mean,probe_std,final_unlabeled_pos,final_same_class_ratio\n";
    for (const auto& row : rows) {
      for (const auto& [name, values] : axes)
        out << ifl::detail::format_double(row.axis_values.at(name)) << ',';
      out << row.seed << ',' << row.status << ',';
      if (row.probe_mean) out << ifl::detail::format_double(*row.probe_mean);
      out << ',';
      if (row.probe_std) out << ifl::detail::format_double(*row.probe_std);
      out << ',';
      if (row.final_unlabeled_pos) out << *row.final_unlabeled_pos;
      out << ',';
      if (row.final_same_class_ratio)
        out << ifl::detail::format_double(*row.final_same_class_ratio);
      out << '\n';
    }
  }
  {
    json manifest = {{"spec", spec},
                     {"rows", total},
                     {"outputs", {"sweep.csv"}}};
    std::ofstream out(fs::path(opt.out_dir) / "sweep_manifest.json");
    out << manifest.dump(2) << '\n';
  }
  return rows;
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

inline int cmd_selftest(std::ostream& out) {
  const auto checks = selftest::run_all();
  int failures = 0;
  for (const auto& c : checks) {
    if (c.pass) {
      out << "[ok]   " << c.name << '\n';
    } else {
      out << "[FAIL] " << c.name << (c.detail.empty() ? "" : " — " + c.detail) << '\n';
      ++failures;
    }
  }
  out << (failures ? "selftest: FAILED " : "selftest: passed ") << (checks.size() - failures)
      << "/" << checks.size() << " checks\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace ifl::cmd
