// Command-line front end: gen-data, train, eval, bench-stc, grad-check, param-count.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "asap/config.hpp"
#include "asap/data.hpp"
#include "asap/errors.hpp"
#include "asap/pipeline.hpp"

namespace fs = std::filesystem;
using namespace asap;

namespace {

void write_file(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

int gen_data(const std::string& config_path, const std::string& out_dir) {
  const data::SceneConfig cfg = data::load_scene(config_path);
  if (!cfg.has_twin_pair()) {
    std::cerr << "warning: scene has no twin pair (same geometry, static vs moving)\n";
  }
  const auto seqs = data::generate_dataset(cfg);
  nlohmann::json meta;
  meta["scene"] = data::to_json(cfg);
  meta["config_hash"] = data::config_hash(cfg);
  data::save_dataset(seqs, out_dir, meta);
  std::printf("wrote %zu sequences x %zu frames x %zu points to %s\n", seqs.size(),
              cfg.num_frames, cfg.points_per_frame, out_dir.c_str());
  return 0;
}

int train_cmd(const pipeline::RunConfig& run) {
  const auto result = pipeline::train(run);
  std::printf("epoch,loss,val_miou\n");
  for (const auto& e : result.log) std::printf("%zu,%.6f,%.4f\n", e.epoch, e.loss, e.val_miou);
  std::printf("best epoch %zu, validation mIoU %.4f; checkpoint in %s\n", result.best_epoch,
              result.best_val_miou, run.out_dir.c_str());
  return 0;
}

int eval_cmd(const std::string& arch_path, const std::string& ckpt,
             const std::vector<std::string>& data_paths, const std::string& report_path,
             std::optional<std::size_t> T) {
  ArchConfig arch = load_arch(arch_path);
  if (T) arch = pipeline::with_sequence_length(arch, *T);
  const ad::ParamStore params = ad::ParamStore::load(ckpt);
  const auto seqs = pipeline::load_sequences(data_paths);
  const auto report = pipeline::evaluate(arch, params, seqs);
  std::cout << metrics::to_table(report);
  if (!report_path.empty()) write_file(report_path, metrics::to_csv(report));
  return 0;
}

int bench_cmd(const std::string& arch_path, const std::vector<std::string>& data_paths,
              std::optional<std::size_t> T) {
  ArchConfig arch = load_arch(arch_path);
  if (T) arch = pipeline::with_sequence_length(arch, *T);
  const auto report = pipeline::bench_stc(arch, pipeline::load_sequences(data_paths));
  std::cout << pipeline::to_csv(report);
  if (report.T > 1 && report.constant.fps_calls >= report.nearest.fps_calls) {
    std::cerr << "error: constant centers did not reduce sampling work\n";
    return 1;
  }
  return 0;
}

int grad_check_cmd(const std::string& arch_path, std::uint64_t seed) {
  const auto r = pipeline::grad_check(load_arch(arch_path), seed);
  std::printf("checked %zu of %zu parameters (%zu skipped at kinks)\n", r.checked, r.total_params,
              r.skipped_kinks);
  std::printf("max relative error %.3e at %s\n", r.max_rel_error, r.worst.c_str());
  std::printf("%s\n", r.passed ? "PASS" : "FAIL");
  return r.passed ? 0 : 1;
}

int param_count_cmd(const std::string& arch_path) {
  const ArchConfig arch = load_arch(arch_path);
  const std::size_t a = param_count(arch.asap), b = param_count(arch.backbone);
  std::printf("asap %zu\nbackbone %zu\ntotal %zu\n", a, b, a + b);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal point-cloud segmentation with attentive temporal embedding"};
  app.require_subcommand(1);

  std::string scene_path, out_dir;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", scene_path, "Scene JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();

  pipeline::RunConfig run;
  std::size_t T_value = 0;
  auto* tr = app.add_subcommand("train", "Train on a dataset");
  tr->add_option("--arch", run.arch_path, "Architecture JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", run.data_paths, "Dataset directories or sequence files")->required();
  tr->add_option("--epochs", run.epochs, "Epochs")->capture_default_str();
  tr->add_option("--lr", run.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--seed", run.seed, "Seed for initialization and shuffling")->capture_default_str();
  tr->add_option("--out", run.out_dir, "Output directory")->required();
  tr->add_option("--T", T_value, "Override the sequence length");
  tr->add_option("--eval-fraction", run.eval_fraction, "Held-out share of sequences")
      ->capture_default_str();
  tr->add_flag("-v,--verbose", run.verbose, "Log every epoch to stderr");

  std::string arch_path, ckpt, report_path;
  std::vector<std::string> data_paths;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--arch", arch_path, "Architecture JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_paths, "Dataset directories or sequence files")->required();
  ev->add_option("--report", report_path, "CSV report path");
  ev->add_option("--T", T_value, "Override the sequence length");

  auto* bench = app.add_subcommand("bench-stc", "Compare center-correlation strategies");
  bench->add_option("--arch", arch_path, "Architecture JSON")->required()->check(CLI::ExistingFile);
  bench->add_option("--data", data_paths, "Dataset directories or sequence files")->required();
  bench->add_option("--T", T_value, "Override the sequence length");

  std::uint64_t seed = 0;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient check");
  gc->add_option("--arch", arch_path, "Architecture JSON")->required()->check(CLI::ExistingFile);
  gc->add_option("--seed", seed, "Seed")->capture_default_str();

  auto* pc = app.add_subcommand("param-count", "Count trainable parameters");
  pc->add_option("--arch", arch_path, "Architecture JSON")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  const auto T = T_value > 0 ? std::optional<std::size_t>(T_value) : std::nullopt;
  try {
    if (*gen) return gen_data(scene_path, out_dir);
    if (*tr) {
      run.T = T;
      return train_cmd(run);
    }
    if (*ev) return eval_cmd(arch_path, ckpt, data_paths, report_path, T);
    if (*bench) return bench_cmd(arch_path, data_paths, T);
    if (*gc) return grad_check_cmd(arch_path, seed);
    if (*pc) return param_count_cmd(arch_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
