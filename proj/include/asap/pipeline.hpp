#pragma once

// Training, evaluation, STC benchmarking and gradient checking.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asap/backbone.hpp"
#include "asap/config.hpp"
#include "asap/data.hpp"
#include "asap/metrics.hpp"
#include "asap/nn.hpp"

namespace asap::pipeline {

using data::SequenceRecord;

struct RunConfig {
  std::string arch_path;
  std::vector<std::string> data_paths;  // dataset directories or single sequence files
  std::optional<std::size_t> T;         // overrides the architecture's T
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string out_dir;        // checkpoint.bin, metrics.csv, arch.json; nothing if empty
  double eval_fraction = 0.2;  // trailing share of sequences held out for validation
  bool verbose = false;
};

/// Loads every path (directory or file) in order.
std::vector<SequenceRecord> load_sequences(const std::vector<std::string>& paths);

struct Split {
  std::vector<SequenceRecord> train;
  std::vector<SequenceRecord> validation;
};

/// The last ceil(fraction * S) sequences validate; with a single sequence (or
/// fraction 0) the training set doubles as the validation set.
Split split_sequences(std::vector<SequenceRecord> seqs, double fraction);

/// Throws ConfigError on feature-width or class-count mismatches and on
/// sequences shorter than T.
void check_compatible(const ArchConfig& arch, const std::vector<SequenceRecord>& seqs,
                      bool need_labels);

/// `arch` with its sequence length replaced.
ArchConfig with_sequence_length(ArchConfig arch, std::size_t T);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean window loss
  double val_miou = 0.0;
};

struct TrainResult {
  ad::ParamStore best;  // parameters of the best validation epoch
  ad::ParamStore last;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_miou = 0.0;
};

/// Windows of length T with stride 1, shuffled per epoch; cross entropy on
/// every frame of a window, one Adam step per window. The learning rate
/// follows a per-epoch cosine decay from run.lr. With zero epochs the
/// initial parameters are returned.
TrainResult train(const ArchConfig& arch, const std::vector<SequenceRecord>& train_set,
                  const std::vector<SequenceRecord>& validation_set, const RunConfig& run);

/// Loads the architecture and data named by `run`, trains, and writes
/// checkpoint.bin, metrics.csv and arch.json into run.out_dir.
TrainResult train(const RunConfig& run);

/// Per-frame predictions. Windows have stride T (plus a final window ending at
/// the last frame); a frame covered twice takes the later window's output.
std::vector<std::vector<int>> predict_sequence(const ArchConfig& arch, const ad::ParamStore& params,
                                               const SequenceRecord& rec);

metrics::ConfusionMatrix confusion(const ArchConfig& arch, const ad::ParamStore& params,
                                   const std::vector<SequenceRecord>& seqs);

/// Throws std::invalid_argument on an empty evaluation set.
metrics::IouReport evaluate(const ArchConfig& arch, const ad::ParamStore& params,
                            const std::vector<SequenceRecord>& seqs);

struct StcBenchRow {
  std::string strategy;
  std::size_t windows = 0;
  std::size_t frames = 0;
  std::size_t fps_calls = 0;  // summed over levels
  double fps_calls_per_window = 0.0;
  double ms_per_frame = 0.0;  // center selection and correlation only
  double mean_occupancy = 0.0;  // neighbors per (center, radius), all levels
  double empty_fraction = 0.0;
};

struct StcBenchReport {
  std::size_t T = 0;
  StcBenchRow nearest;   // strategy (i)
  StcBenchRow constant;  // strategy (ii)
};

StcBenchReport bench_stc(const ArchConfig& arch, const std::vector<SequenceRecord>& seqs);
std::string to_csv(const StcBenchReport& report);

struct GradCheckOptions {
  std::size_t points = 64;
  std::size_t centers = 8;  // level 0; halved per further level
  std::size_t T = 3;
  std::size_t min_params = 200;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::size_t total_params = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  bool passed = false;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-6) between the analytic and the
/// central-difference derivative of the window loss on a random instance.
/// Coordinates whose +-step evaluations change a relu mask or max argmax are
/// skipped and replaced.
GradCheckReport grad_check(const ArchConfig& arch, std::uint64_t seed,
                           const GradCheckOptions& options = {});

inline constexpr double kGradCheckFloor = 1e-6;

}  // namespace asap::pipeline
