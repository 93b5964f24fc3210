// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset generation, training, evaluation, the
// ablation and region-III suites, and gradient verification.
//
// Exit codes: 0 success, 1 verification failure, 2 usage/config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "insure/config.hpp"
#include "insure/eval.hpp"
#include "insure/gradcheck.hpp"
#include "insure/losses.hpp"
#include "insure/model.hpp"
#include "insure/rng.hpp"
#include "insure/synth.hpp"
#include "insure/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace insure;

namespace {

constexpr const char* kArtifactVersion = "insure-lab 1.0";

json config_json(const config::RunConfig& cfg) {
  json j = json::object();
  for (const auto& [key, value] : cfg.items()) j[key] = value;
  return j;
}

json base_manifest(const std::string& command, const config::RunConfig& cfg) {
  json j;
  j["artifact"] = kArtifactVersion;
  j["format"] = "insure-manifest v1";
  j["command"] = command;
  j["config"] = config_json(cfg);
  j["config_hash"] = std::to_string(config::config_hash(cfg));
  return j;
}

void write_manifest(const json& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LookupError("cannot open '" + path + "' for writing");
  out << manifest.dump(2) << "\n";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    seeds.push_back(std::strtoull(tok.c_str(), nullptr, 10));
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path, long seed_override) {
  config::RunConfig cfg = config::load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  const synth::SynthDataset ds =
      synth::generate(cfg.region_spec(), cfg.n_domains, cfg.n_classes, cfg.n_per_domain, cfg.seed);
  synth::save_dataset(ds, out_path);

  std::cout << "wrote " << out_path << ": " << ds.size() << " samples, " << ds.dim() << " dims, "
            << ds.n_domains << " domains, " << ds.n_classes << " classes\n";
  std::cout << "region summary: I=" << ds.dims_in(synth::Region::I).size()
            << " II=" << ds.dims_in(synth::Region::II).size()
            << " III=" << ds.dims_in(synth::Region::III).size()
            << " IV=" << ds.dims_in(synth::Region::IV).size() << " (noise_std=" << ds.noise_std
            << ", mixing=" << (ds.mixing == synth::Mixing::kIdentity ? "identity" : "random-orthogonal")
            << ")\n";

  json manifest = base_manifest("gen-data", cfg);
  manifest["seed"] = cfg.seed;
  manifest["outputs"] = {out_path};
  write_manifest(manifest, out_path + ".manifest.json");
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path, int holdout,
              long seed_override, const std::string& out_dir) {
  config::RunConfig cfg = config::load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  const synth::SynthDataset full = synth::load_dataset(data_path);

  synth::SynthDataset train_set = full;
  synth::SynthDataset test_set;
  bool have_test = false;
  if (holdout >= 0) {
    auto [tr, te] = synth::split_leave_one_out(full, holdout);
    train_set = std::move(tr);
    test_set = std::move(te);
    have_test = true;
  }

  fs::create_directories(out_dir);
  const train::TrainResult result = train::train(cfg.train_config(), train_set);

  const std::string ckpt_path = out_dir + "/checkpoint.txt";
  const std::string metrics_path = out_dir + "/metrics.csv";
  const std::string manifest_path = out_dir + "/manifest.json";

  model::Checkpoint ckpt;
  ckpt.raw = result.raw;
  ckpt.sma = result.sma;
  ckpt.config_hash = config::config_hash(cfg);
  model::save_checkpoint(ckpt, ckpt_path);
  {
    std::ofstream metrics(metrics_path);
    train::write_metrics_csv(result.metrics, metrics);
  }

  json manifest = base_manifest("train", cfg);
  manifest["seed"] = cfg.seed;
  manifest["data"] = data_path;
  manifest["holdout_domain"] = holdout >= 0 ? json(holdout) : json(nullptr);
  manifest["outputs"] = {ckpt_path, metrics_path};
  manifest["aborted"] = result.metrics.aborted;
  write_manifest(manifest, manifest_path);

  if (result.metrics.aborted) {
    std::cerr << "training aborted at step " << result.metrics.abort_step << ": "
              << result.metrics.abort_reason << " (last-good checkpoint written)\n";
    return 1;
  }

  const model::ModelParams& inference = result.inference_params();
  std::cout << "trained " << cfg.steps << " steps; mask on "
            << (inference.mask_logits.array() < 0.0).count() << "/" << inference.mask_logits.cols()
            << "\n";
  std::cout << "train accuracy " << eval::accuracy(inference, train_set, model::MaskKind::kHard);
  if (have_test)
    std::cout << ", held-out accuracy " << eval::accuracy(inference, test_set, model::MaskKind::kHard);
  std::cout << "\n";
  std::cout << "wrote " << ckpt_path << ", " << metrics_path << ", " << manifest_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, int holdout,
             const std::string& mask_mode) {
  const model::Checkpoint ckpt = model::load_checkpoint(ckpt_path);
  const synth::SynthDataset full = synth::load_dataset(data_path);
  const model::MaskKind kind =
      mask_mode == "soft" ? model::MaskKind::kSoft : model::MaskKind::kHard;

  const model::ModelParams& params = ckpt.sma ? *ckpt.sma : ckpt.raw;
  synth::SynthDataset eval_set = full;
  if (holdout >= 0) {
    auto [tr, te] = synth::split_leave_one_out(full, holdout);
    eval_set = std::move(te);
  }

  std::cout << "accuracy (" << mask_mode << " mask): "
            << eval::accuracy(params, eval_set, kind) << "\n";
  if (params.config.probe && eval_set.has_region_map &&
      eval_set.mixing == synth::Mixing::kIdentity) {
    const eval::MaskRecovery rec = eval::mask_recovery(params, eval_set);
    std::cout << "mask recovery vs regions III+IV: precision=";
    if (rec.precision)
      std::cout << *rec.precision;
    else
      std::cout << "null (mask all off)";
    std::cout << " recall=" << rec.recall << " (on " << rec.on_count << "/"
              << params.mask_logits.cols() << " dims)\n";
  } else {
    std::cout << "mask recovery: skipped (needs probe-mode checkpoint, identity mixing and a "
                 "region map)\n";
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_path,
               const std::string& out_dir, const std::string& seeds_csv, int jobs) {
  config::RunConfig cfg = config::load_config(config_path);
  const synth::SynthDataset ds = synth::load_dataset(data_path);
  const std::vector<std::uint64_t> seeds = parse_seed_list(seeds_csv);

  const eval::AblationResult result = eval::run_ablation(ds, cfg.train_config(), seeds, jobs);

  fs::create_directories(out_dir);
  const std::string table_path = out_dir + "/ablation.csv";
  const std::string stats_path = out_dir + "/seed_stats.csv";
  const std::string manifest_path = out_dir + "/manifest.json";
  {
    std::ofstream out(table_path);
    eval::write_ablation_csv(result, out);
  }
  {
    std::ofstream out(stats_path);
    eval::write_seed_stats_csv(result, out);
  }
  json manifest = base_manifest("ablate", cfg);
  manifest["data"] = data_path;
  manifest["seeds"] = seeds;
  manifest["outputs"] = {table_path, stats_path};
  write_manifest(manifest, manifest_path);

  for (const eval::AblationRow& row : result.rows()) {
    std::cout << row.name << ": mean=" << row.mean << " (std " << row.std_over_seeds << ")\n";
  }
  std::cout << "wrote " << table_path << ", " << stats_path << ", " << manifest_path << "\n";
  return 0;
}

int cmd_region3(const std::string& config_path, const std::string& data_path,
                const std::string& out_dir, const std::string& seeds_csv, int jobs) {
  config::RunConfig cfg = config::load_config(config_path);
  const synth::SynthDataset ds = synth::load_dataset(data_path);
  const std::vector<std::uint64_t> seeds = parse_seed_list(seeds_csv);

  const eval::Region3Result result = eval::region3_experiment(ds, cfg.train_config(), seeds, jobs);

  fs::create_directories(out_dir);
  const std::string table_path = out_dir + "/region3.csv";
  const std::string manifest_path = out_dir + "/manifest.json";
  {
    std::ofstream out(table_path);
    eval::write_region3_csv(result, out);
  }
  json manifest = base_manifest("region3", cfg);
  manifest["data"] = data_path;
  manifest["seeds"] = seeds;
  manifest["outputs"] = {table_path};
  write_manifest(manifest, manifest_path);

  for (const eval::Region3Row& row : result.rows()) {
    std::cout << row.name << ": accuracy=" << row.accuracy << " recall(III)=" << row.recall_iii
              << " recall(IV)=" << row.recall_iv << "\n";
  }
  std::cout << "wrote " << table_path << ", " << manifest_path << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path, long seed_override, Scalar tol, Scalar step) {
  config::RunConfig cfg;
  if (!config_path.empty()) cfg = config::load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);

  // Micro instance: two training domains, batch of eight, sixteen feature
  // dims, every loss term at full weight, surrogate mask path.
  synth::RegionSpec spec;
  spec.k_i = spec.k_ii = spec.k_iii = spec.k_iv = 4;
  spec.noise_std = 0.3;
  const bool single = cfg.mode == "single-dg";
  const int n_domains = single ? 1 : 2;
  const synth::SynthDataset ds = synth::generate(spec, n_domains, 3, 24, cfg.seed);

  model::ModelConfig mc;
  mc.input_dim = ds.dim();
  mc.hidden_dim = cfg.hidden_dim;
  mc.hidden_layers = cfg.hidden_layers;
  mc.n_classes = ds.n_classes;
  mc.n_domains = ds.n_domains;
  mc.probe = cfg.probe;
  model::ModelParams params = model::init_model(mc, cfg.seed);

  RandomStream rng(mix64(cfg.seed + 17));
  const int batch = 8;
  Matrix x(batch, ds.dim());
  std::vector<int> y(batch), d(batch);
  for (int b = 0; b < batch; ++b) {
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(ds.size())));
    x.row(b) = ds.x.row(i);
    y[static_cast<std::size_t>(b)] = ds.labels[static_cast<std::size_t>(i)];
    d[static_cast<std::size_t>(b)] = ds.domains[static_cast<std::size_t>(i)];
  }
  const std::vector<std::size_t> shuffle = rng.permutation(batch);

  Tape tape;
  model::ModelGraph graph = model::register_params(tape, params);
  Var x_var = tape.constant(x);
  model::EncodeResult enc = model::encode(tape, graph, x_var, !cfg.probe, &rng);
  // Surrogate (soft) mask path: the recorded graph is smooth, so central
  // differences and the straight-through backward rule see the same function.
  model::DisentangleResult split =
      model::disentangle(tape, enc.z, graph.mask_logits, model::MaskKind::kSoft);

  losses::TotalLossInputs inputs;
  inputs.graph = &graph;
  inputs.encoded = enc;
  inputs.split = split;
  inputs.labels = &y;
  inputs.domains = &d;
  inputs.weights.alpha = cfg.alpha;
  inputs.weights.beta = cfg.beta;
  inputs.weights.gamma = cfg.gamma;
  inputs.weights.eps_ib = cfg.eps_ib;
  inputs.mode = single ? losses::TrainMode::kSingleDG : losses::TrainMode::kMultiDG;
  inputs.alpha_t = cfg.alpha;
  inputs.beta_t = cfg.beta;
  inputs.pair_shuffle = &shuffle;

  losses::TotalLoss loss = losses::total_loss(tape, inputs);
  const GradCheckReport report = check_gradient(tape, loss.node, graph.leaves, tol, step);
  std::cout << "gradcheck (" << report.coordinates_checked << " coordinates, tol " << tol
            << ", step " << step << "): " << report.summary() << "\n";
  return report.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale lab for masked feature disentanglement under domain shift"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, out_dir, ckpt_path;
  std::string mask_mode = "hard";
  std::string seeds_csv = "0,1,2,3,4";
  long seed_override = -1;
  int holdout = -1;
  int jobs = 1;
  double tol = 1e-4, fd_step = 1e-5;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic multi-domain dataset");
  gen->add_option("--config", config_path, "run configuration file")->required();
  gen->add_option("--out", out_path, "output dataset path")->required();
  gen->add_option("--seed", seed_override, "override the config seed");

  CLI::App* tr = app.add_subcommand("train", "train on a dataset (optionally leave one domain out)");
  tr->add_option("--config", config_path, "run configuration file")->required();
  tr->add_option("--data", data_path, "dataset path")->required();
  tr->add_option("--holdout-domain", holdout, "domain to hold out (default: none)");
  tr->add_option("--seed", seed_override, "override the config seed");
  tr->add_option("--out-dir", out_dir, "output directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  ev->add_option("--data", data_path, "dataset path")->required();
  ev->add_option("--holdout-domain", holdout, "evaluate on this held-out domain only");
  ev->add_option("--mask-mode", mask_mode, "hard|soft inference mask")
      ->check(CLI::IsMember({"hard", "soft"}));

  CLI::App* ab = app.add_subcommand("ablate", "loss-term ablation, leave-one-domain-out");
  ab->add_option("--config", config_path, "run configuration file")->required();
  ab->add_option("--data", data_path, "dataset path")->required();
  ab->add_option("--out-dir", out_dir, "output directory")->required();
  ab->add_option("--seeds", seeds_csv, "comma-separated seeds (default 0,1,2,3,4)");
  ab->add_option("--jobs", jobs, "parallel trainings");

  CLI::App* r3 = app.add_subcommand("region3", "compare the two purification directions");
  r3->add_option("--config", config_path, "run configuration file")->required();
  r3->add_option("--data", data_path, "dataset path")->required();
  r3->add_option("--out-dir", out_dir, "output directory")->required();
  r3->add_option("--seeds", seeds_csv, "comma-separated seeds (default 0,1,2,3,4)");
  r3->add_option("--jobs", jobs, "parallel trainings");

  CLI::App* gc = app.add_subcommand("gradcheck", "verify gradients of the full objective");
  gc->add_option("--config", config_path, "run configuration file (optional)");
  gc->add_option("--seed", seed_override, "seed for the micro instance");
  gc->add_option("--tol", tol, "max relative error");
  gc->add_option("--step", fd_step, "finite-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_path, seed_override);
    if (tr->parsed()) return cmd_train(config_path, data_path, holdout, seed_override, out_dir);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_path, holdout, mask_mode);
    if (ab->parsed()) return cmd_ablate(config_path, data_path, out_dir, seeds_csv, jobs);
    if (r3->parsed()) return cmd_region3(config_path, data_path, out_dir, seeds_csv, jobs);
    if (gc->parsed()) return cmd_gradcheck(config_path, seed_override, tol, fd_step);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const LookupError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
