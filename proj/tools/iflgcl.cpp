// Command-line front end. Subcommands: gen-sbm, pretrain, probe, audit,
// sweep, selftest. Exit codes: 0 success, 2 config error, 3 data error,
// 4 numeric divergence, 5 internal error.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ifl/commands.hpp"

namespace {

ifl::AugmentConfig augment_from_flags(double edge_drop, double feature_mask,
                                      const std::string& mode, std::uint64_t seed) {
  ifl::AugmentConfig cfg;
  cfg.edge_drop = edge_drop;
  cfg.feature_mask = feature_mask;
  if (mode == "uniform")
    cfg.mode = ifl::DropMode::Uniform;
  else if (mode == "degree_adaptive")
    cfg.mode = ifl::DropMode::DegreeAdaptive;
  else
    throw ifl::ConfigError("--aug-mode must be 'uniform' or 'degree_adaptive'");
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Graph contrastive pre-training with similarity-guided resampling"};
  app.require_subcommand(1);

  // --- gen-sbm ---------------------------------------------------------
  auto* gen = app.add_subcommand("gen-sbm", "Generate a planted-community dataset");
  std::vector<int> blocks{20, 20};
  ifl::SbmSpec spec;
  std::string gen_out;
  gen->add_option("--blocks", blocks, "Block sizes, e.g. --blocks 20 20")->expected(-1);
  gen->add_option("--p-in", spec.p_in, "Intra-block edge probability");
  gen->add_option("--p-out", spec.p_out, "Inter-block edge probability");
  gen->add_option("--feature-dim", spec.feature_dim, "Feature dimension");
  gen->add_option("--mean-scale", spec.mean_scale, "Norm of each block mean");
  gen->add_option("--noise-sigma", spec.noise_sigma, "Per-dimension feature noise");
  gen->add_option("--seed", spec.seed, "Generator seed");
  gen->add_option("--out-dir", gen_out, "Output directory")->required();

  // --- pretrain --------------------------------------------------------
  auto* pre = app.add_subcommand("pretrain", "Run the pre-training schedule");
  ifl::cmd::PretrainOptions popt;
  std::uint64_t pre_seed = 0;
  bool pre_seed_set = false;
  std::string pre_mode;
  pre->add_option("--config", popt.config_path, "JSON config path")->required();
  pre->add_option("--out-dir", popt.out_dir, "Output directory")->required();
  pre->add_option("--seed", pre_seed, "Override the config seed")
      ->each([&](const std::string&) { pre_seed_set = true; });
  pre->add_option("--mode", pre_mode, "'baseline' forces max_rounds=0");
  pre->add_flag("--algorithm1-literal", popt.algorithm1_literal,
                "Freeze views and use plain SGD");

  // --- probe -----------------------------------------------------------
  auto* probe = app.add_subcommand("probe", "Linear-probe a checkpoint");
  ifl::cmd::ProbeOptions bopt;
  std::vector<int> probe_ratio{1, 1, 8};
  probe->add_option("--checkpoint", bopt.checkpoint_path, "Checkpoint path")->required();
  probe->add_option("--dataset", bopt.dataset_path, "Dataset manifest path")->required();
  probe->add_flag("--row-normalize", bopt.row_normalize, "L2-normalize feature rows");
  probe->add_option("--split-ratio", probe_ratio, "train valid test parts")->expected(3);
  probe->add_option("--split-seed", bopt.split_seed, "Split seed");
  probe->add_option("--repeats", bopt.probe.repeats, "Probe repeats");
  probe->add_option("--probe-epochs", bopt.probe.epochs, "Probe epochs");
  probe->add_option("--probe-lr", bopt.probe.lr, "Probe learning rate");
  probe->add_option("--probe-seed", bopt.probe.seed, "Probe init seed");
  probe->add_option("--out", bopt.out_path, "Write the result JSON here");

  // --- audit -----------------------------------------------------------
  auto* audit = app.add_subcommand("audit", "Similarity rearrangement audit");
  ifl::cmd::AuditOptions aopt;
  double aud_edge_drop = 0.2, aud_feature_mask = 0.2;
  std::string aud_mode = "uniform";
  std::uint64_t aud_seed = 0;
  audit->add_option("--dataset", aopt.dataset_path, "Dataset manifest path")->required();
  audit->add_option("--out-dir", aopt.out_dir, "Output directory")->required();
  audit->add_flag("--row-normalize", aopt.row_normalize, "L2-normalize feature rows");
  audit->add_option("--top-k", aopt.top_k, "Columns of the excerpt after the diagonal");
  audit->add_option("--edge-drop", aud_edge_drop, "Augmentation edge drop");
  audit->add_option("--feature-mask", aud_feature_mask, "Augmentation feature mask");
  audit->add_option("--aug-mode", aud_mode, "uniform|degree_adaptive");
  audit->add_option("--seed", aud_seed, "Augmentation seed");
  audit->add_option("--sup-hidden", aopt.supervised.hidden_dim, "Supervised encoder width");
  audit->add_option("--sup-epochs", aopt.supervised.epochs, "Supervised epochs");
  audit->add_option("--sup-lr", aopt.supervised.lr, "Supervised learning rate");
  audit->add_option("--sup-seed", aopt.supervised.seed, "Supervised init seed");

  // --- sweep -----------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "Hyper-parameter sweep");
  ifl::cmd::SweepOptions sopt;
  sweep->add_option("--spec", sopt.sweep_path, "Sweep spec JSON")->required();
  sweep->add_option("--out-dir", sopt.out_dir, "Output directory")->required();

  // --- selftest ----------------------------------------------------------
  auto* selftest = app.add_subcommand("selftest", "Gradient and oracle self-checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    spec.block_sizes = blocks;
    const std::string manifest = ifl::cmd::cmd_gen_sbm({spec, gen_out});
    std::cout << "wrote " << manifest << "\n";
    return 0;
  }
  if (pre->parsed()) {
    if (pre_seed_set) popt.seed_override = pre_seed;
    if (!pre_mode.empty()) {
      if (pre_mode != "baseline") throw ifl::ConfigError("--mode only supports 'baseline'");
      popt.baseline_mode = true;
    }
    const auto outcome = ifl::cmd::cmd_pretrain(popt);
    std::cout << "run " << outcome.run_id << ": " << outcome.report.losses.size()
              << " epochs, final loss "
              << (outcome.report.losses.empty() ? 0.0 : outcome.report.losses.back())
              << ", artifacts in " << outcome.out_dir << "\n";
    return 0;
  }
  if (probe->parsed()) {
    for (int i = 0; i < 3; ++i) bopt.split_ratio[i] = probe_ratio[i];
    const auto outcome = ifl::cmd::cmd_probe(bopt);
    std::cout << outcome.result_json.dump(2) << "\n";
    return 0;
  }
  if (audit->parsed()) {
    aopt.augment = augment_from_flags(aud_edge_drop, aud_feature_mask, aud_mode, aud_seed);
    const auto outcome = ifl::cmd::cmd_audit(aopt);
    std::cout << outcome.summary.dump(2) << "\n";
    return 0;
  }
  if (sweep->parsed()) {
    const auto rows = ifl::cmd::cmd_sweep(sopt);
    std::size_t failed = 0;
    for (const auto& r : rows)
      if (r.status != "ok") ++failed;
    std::cout << "sweep: " << rows.size() << " rows, " << failed << " failed, results in "
              << sopt.out_dir << "/sweep.csv\n";
    return 0;
  }
  if (selftest->parsed()) return ifl::cmd::cmd_selftest(std::cout);
  return 5;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ifl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ifl::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ifl::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 5;
  }
}
