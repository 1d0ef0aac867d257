#include "asap/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>

#include "asap/errors.hpp"

namespace asap::pipeline {

namespace fs = std::filesystem;
using ad::Tensor;

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t N = logits.rows(), K = logits.cols();
  const auto v = logits.values();
  std::vector<int> out(N);
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (v[i * K + k] > v[i * K + best]) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::size_t sequence_length(const ArchConfig& arch) { return arch.asap.sequence_length; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

}  // namespace

std::vector<SequenceRecord> load_sequences(const std::vector<std::string>& paths) {
  std::vector<SequenceRecord> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      auto seqs = data::load_dataset(p);
      for (auto& s : seqs) out.push_back(std::move(s));
    } else {
      out.push_back(data::load_sequence(p));
    }
  }
  return out;
}

Split split_sequences(std::vector<SequenceRecord> seqs, double fraction) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw ConfigError("eval split fraction must lie in [0, 1)");
  }
  Split split;
  const std::size_t S = seqs.size();
  const auto held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(S)));
  if (S <= 1 || held == 0) {
    split.validation = seqs;
    split.train = std::move(seqs);
    return split;
  }
  for (std::size_t i = 0; i < S; ++i) {
    (i + held < S ? split.train : split.validation).push_back(std::move(seqs[i]));
  }
  return split;
}

void check_compatible(const ArchConfig& arch, const std::vector<SequenceRecord>& seqs,
                      bool need_labels) {
  const std::size_t T = sequence_length(arch);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& rec = seqs[s];
    const std::string where = "sequence " + std::to_string(s) + ": ";
    if (rec.feature_width != arch.backbone.input_features) {
      throw ConfigError(where + "feature width " + std::to_string(rec.feature_width) +
                        " but the architecture expects " +
                        std::to_string(arch.backbone.input_features));
    }
    if (rec.num_classes > arch.backbone.num_classes) {
      throw ConfigError(where + std::to_string(rec.num_classes) +
                        " classes but the architecture predicts " +
                        std::to_string(arch.backbone.num_classes));
    }
    if (rec.num_frames() < T) {
      throw ConfigError(where + std::to_string(rec.num_frames()) + " frames, shorter than T=" +
                        std::to_string(T));
    }
    for (const auto& f : rec.frames) {
      if (f.size() < arch.asap.levels.front().m) {
        throw ConfigError(where + "frame with " + std::to_string(f.size()) +
                          " points, fewer than m=" + std::to_string(arch.asap.levels.front().m));
      }
      if (need_labels && !f.has_labels()) throw ConfigError(where + "unlabeled frame");
    }
  }
}

ArchConfig with_sequence_length(ArchConfig arch, std::size_t T) {
  if (T == 0) throw ConfigError("sequence length T must be >= 1");
  arch.asap.sequence_length = T;
  return arch;
}

// ---- evaluation -------------------------------------------------------------

std::vector<std::vector<int>> predict_sequence(const ArchConfig& arch, const ad::ParamStore& params,
                                               const SequenceRecord& rec) {
  const std::size_t T = sequence_length(arch);
  const auto wins = data::windows(rec, T, T);
  const auto slots = data::last_window_slots(wins, rec.num_frames());
  std::vector<std::vector<int>> pred(rec.num_frames());
  for (std::size_t w = 0; w < wins.size(); ++w) {
    const auto out = backbone::network_forward(wins[w].frames, arch, params);
    for (std::size_t k = 0; k < out.logits.size(); ++k) {
      const std::size_t f = wins[w].start + k;
      if (slots[f].window == w) pred[f] = argmax_rows(out.logits[k]);
    }
  }
  return pred;
}

metrics::ConfusionMatrix confusion(const ArchConfig& arch, const ad::ParamStore& params,
                                   const std::vector<SequenceRecord>& seqs) {
  metrics::ConfusionMatrix cm(arch.backbone.num_classes);
  for (const auto& rec : seqs) {
    const auto pred = predict_sequence(arch, params, rec);
    for (std::size_t f = 0; f < rec.num_frames(); ++f) {
      if (!rec.frames[f].has_labels()) continue;
      cm.add_all(rec.frames[f].labels, pred[f]);
    }
  }
  return cm;
}

metrics::IouReport evaluate(const ArchConfig& arch, const ad::ParamStore& params,
                            const std::vector<SequenceRecord>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  check_compatible(arch, seqs, false);
  const auto cm = confusion(arch, params, seqs);
  if (cm.total() == 0) throw std::invalid_argument("evaluate: no labeled points to evaluate");
  return metrics::compute_iou(cm);
}

// ---- training ---------------------------------------------------------------

TrainResult train(const ArchConfig& arch, const std::vector<SequenceRecord>& train_set,
                  const std::vector<SequenceRecord>& validation_set, const RunConfig& run) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  check_compatible(arch, train_set, true);
  if (!validation_set.empty()) check_compatible(arch, validation_set, true);
  const std::size_t T = sequence_length(arch);

  TrainResult result;
  ad::ParamStore params = backbone::init_network_params(arch, run.seed);
  ad::Adam adam({.lr = run.lr});
  std::mt19937_64 shuffle_rng(run.seed ^ 0x5eedf00dULL);

  std::vector<data::Window> all;
  for (const auto& rec : train_set) {
    for (auto& w : data::windows(rec, T, 1)) all.push_back(std::move(w));
  }

  result.best = params;
  result.best_val_miou = -1.0;
  for (std::size_t epoch = 1; epoch <= run.epochs; ++epoch) {
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    // cosine decay, constant within an epoch
    adam.set_lr(run.lr * 0.5 *
                (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch - 1) /
                                static_cast<double>(run.epochs))));

    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const data::Window& w = all[idx];
      ad::Tape tape;
      ad::Tape::Scope scope(tape);
      const auto out = backbone::network_forward(w.frames, arch, params);
      std::optional<Tensor> loss;
      for (std::size_t k = 0; k < out.logits.size(); ++k) {
        Tensor ce = ad::cross_entropy(out.logits[k], w.frames[k]->labels);
        loss = loss ? ad::add(*loss, ce) : ce;
      }
      const Tensor mean = ad::scale(*loss, 1.0 / static_cast<double>(out.logits.size()));
      loss_sum += mean.item();
      ad::backward(mean, tape);
      adam.step(params);
      params.zero_grad();
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = all.empty() ? 0.0 : loss_sum / static_cast<double>(all.size());
    entry.val_miou = validation_set.empty() ? 0.0 : evaluate(arch, params, validation_set).miou;
    result.log.push_back(entry);
    if (entry.val_miou > result.best_val_miou) {
      result.best_val_miou = entry.val_miou;
      result.best_epoch = epoch;
      result.best = ad::ParamStore::deserialize(params.serialize());
    }
    if (run.verbose) {
      std::fprintf(stderr, "epoch %zu  loss %.6f  val mIoU %.4f\n", epoch, entry.loss,
                   entry.val_miou);
    }
  }
  if (result.best_val_miou < 0.0) result.best_val_miou = 0.0;
  result.last = std::move(params);
  return result;
}

TrainResult train(const RunConfig& run) {
  ArchConfig arch = load_arch(run.arch_path);
  if (run.T) arch = with_sequence_length(arch, *run.T);
  auto seqs = load_sequences(run.data_paths);
  if (seqs.empty()) throw std::invalid_argument("train: no sequences found");
  check_compatible(arch, seqs, true);
  Split split = split_sequences(std::move(seqs), run.eval_fraction);
  TrainResult result = train(arch, split.train, split.validation, run);

  if (!run.out_dir.empty()) {
    fs::create_directories(run.out_dir);
    const fs::path out(run.out_dir);
    result.best.save((out / "checkpoint.bin").string());
    std::string csv = "epoch,loss,val_miou\n";
    char line[96];
    for (const auto& e : result.log) {
      std::snprintf(line, sizeof(line), "%zu,%.9f,%.6f\n", e.epoch, e.loss, e.val_miou);
      csv += line;
    }
    write_text(out / "metrics.csv", csv);
    write_text(out / "arch.json", to_json(arch).dump(2) + "\n");
  }
  return result;
}

// ---- STC benchmark ----------------------------------------------------------

namespace {

std::vector<geometry::Vec3> fps_centers(std::span<const geometry::Vec3> pts, std::size_t m) {
  const auto idx = geometry::farthest_point_sample(pts, m, geometry::canonical_seed(pts));
  std::vector<geometry::Vec3> out;
  out.reserve(m);
  for (std::size_t i : idx) out.push_back(pts[i]);
  return out;
}

void bench_window(const ArchConfig& arch, const data::Window& w, StcStrategy strategy,
                  StcBenchRow& row, double& seconds, std::size_t& queries) {
  const std::size_t L = arch.asap.levels.size();
  std::vector<std::vector<geometry::Vec3>> centers(L);
  for (std::size_t t = 0; t < w.frames.size(); ++t) {
    const auto& coords = w.frames[t]->coords;
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::vector<geometry::Vec3>> level_points{coords};
    for (std::size_t l = 0; l < L; ++l) {
      if (strategy == StcStrategy::kNearestMatch || t == 0) {
        auto fresh = fps_centers(level_points[l], arch.asap.levels[l].m);
        ++row.fps_calls;
        if (t > 0) {
          const auto match = geometry::nearest_center_match(centers[l], fresh);
          (void)match;
        }
        centers[l] = std::move(fresh);
      }
      level_points.push_back(centers[l]);
    }
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    for (std::size_t l = 0; l < L; ++l) {
      const auto& level = arch.asap.levels[l];
      for (double r : level.radii) {
        const geometry::GridIndex grid(level_points[l], r);
        const auto nl =
            geometry::radius_neighbors_batch(grid, level_points[l], centers[l], r, level.k_cap);
        for (std::size_t q = 0; q < nl.num_queries(); ++q) {
          row.mean_occupancy += static_cast<double>(nl.count(q));
          row.empty_fraction += nl.count(q) == 0 ? 1.0 : 0.0;
          ++queries;
        }
      }
    }
    ++row.frames;
  }
  ++row.windows;
}

void finish_row(StcBenchRow& row, double seconds, std::size_t queries) {
  if (row.frames > 0) row.ms_per_frame = 1000.0 * seconds / static_cast<double>(row.frames);
  if (row.windows > 0) {
    row.fps_calls_per_window = static_cast<double>(row.fps_calls) / static_cast<double>(row.windows);
  }
  if (queries > 0) {
    row.mean_occupancy /= static_cast<double>(queries);
    row.empty_fraction /= static_cast<double>(queries);
  }
}

}  // namespace

StcBenchReport bench_stc(const ArchConfig& arch, const std::vector<SequenceRecord>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("bench_stc: no sequences");
  check_compatible(arch, seqs, false);
  StcBenchReport report;
  report.T = sequence_length(arch);
  report.nearest.strategy = "nearest";
  report.constant.strategy = "constant";
  double sec_i = 0.0, sec_ii = 0.0;
  std::size_t q_i = 0, q_ii = 0;
  for (const auto& rec : seqs) {
    for (const auto& w : data::windows(rec, report.T, report.T)) {
      bench_window(arch, w, StcStrategy::kNearestMatch, report.nearest, sec_i, q_i);
      bench_window(arch, w, StcStrategy::kConstantCenters, report.constant, sec_ii, q_ii);
    }
  }
  finish_row(report.nearest, sec_i, q_i);
  finish_row(report.constant, sec_ii, q_ii);
  return report;
}

std::string to_csv(const StcBenchReport& report) {
  std::string out =
      "strategy,T,windows,frames,fps_calls,fps_calls_per_window,ms_per_frame,mean_occupancy,"
      "empty_fraction\n";
  char line[256];
  for (const StcBenchRow* r : {&report.nearest, &report.constant}) {
    std::snprintf(line, sizeof(line), "%s,%zu,%zu,%zu,%zu,%.3f,%.4f,%.4f,%.4f\n",
                  r->strategy.c_str(), report.T, r->windows, r->frames, r->fps_calls,
                  r->fps_calls_per_window, r->ms_per_frame, r->mean_occupancy, r->empty_fraction);
    out += line;
  }
  return out;
}

// ---- gradient check ---------------------------------------------------------

namespace {

struct GradInstance {
  ArchConfig arch;
  std::vector<geometry::PointFrame> frames;
};

GradInstance make_instance(const ArchConfig& source, std::uint64_t seed,
                           const GradCheckOptions& opt) {
  GradInstance inst;
  inst.arch = with_sequence_length(source, opt.T);
  std::size_t m = opt.centers;
  for (auto& level : inst.arch.asap.levels) {
    level.m = std::max(m, inst.arch.asap.fp_k);
    m = std::max<std::size_t>(m / 2, 1);
  }
  inst.arch.asap.validate();

  const auto& radii = inst.arch.asap.levels.front().radii;
  const double side = 2.5 * *std::min_element(radii.begin(), radii.end());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(inst.arch.backbone.num_classes) - 1);
  const std::size_t C = inst.arch.backbone.input_features;
  for (std::size_t t = 0; t < opt.T; ++t) {
    geometry::PointFrame f;
    f.frame_index = t;
    f.feature_width = C;
    for (std::size_t i = 0; i < opt.points; ++i) {
      f.coords.push_back({u(rng) * side, u(rng) * side, u(rng) * side});
      for (std::size_t k = 0; k < C; ++k) f.features.push_back(u(rng));
      f.labels.push_back(label(rng));
    }
    inst.frames.push_back(std::move(f));
  }
  return inst;
}

struct LossEval {
  double value;
  std::uint64_t pattern;
};

LossEval window_loss(const GradInstance& inst, const ad::ParamStore& params, bool backprop) {
  ad::Tape tape;
  ad::Tape::Scope scope(tape);
  std::vector<const geometry::PointFrame*> window;
  for (const auto& f : inst.frames) window.push_back(&f);
  const auto out = backbone::network_forward(window, inst.arch, params);
  std::optional<Tensor> loss;
  for (std::size_t k = 0; k < out.logits.size(); ++k) {
    Tensor ce = ad::cross_entropy(out.logits[k], window[k]->labels);
    loss = loss ? ad::add(*loss, ce) : ce;
  }
  const Tensor mean = ad::scale(*loss, 1.0 / static_cast<double>(out.logits.size()));
  if (backprop) ad::backward(mean, tape);
  return {mean.item(), tape.pattern_signature()};
}

}  // namespace

GradCheckReport grad_check(const ArchConfig& arch, std::uint64_t seed,
                           const GradCheckOptions& options) {
  const GradInstance inst = make_instance(arch, seed, options);
  ad::ParamStore params = backbone::init_network_params(inst.arch, seed);
  const LossEval base = window_loss(inst, params, true);

  struct Coord {
    std::string name;
    std::size_t index;
  };
  std::vector<Coord> first, rest;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& [name, tensor] : params) {
    std::uniform_int_distribution<std::size_t> pick(0, tensor.numel() - 1);
    const std::size_t chosen = pick(rng);
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      (i == chosen ? first : rest).push_back({name, i});
    }
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  std::vector<Coord> order = first;  // every tensor is visited at least once
  order.insert(order.end(), rest.begin(), rest.end());

  GradCheckReport report;
  report.total_params = order.size();
  const double h = options.step;
  for (const Coord& c : order) {
    if (report.checked >= options.min_params) break;
    Tensor& p = params.get(c.name);
    const double analytic = p.grad()[c.index];
    const double saved = p.values()[c.index];
    p.mutable_values()[c.index] = saved + h;
    const LossEval plus = window_loss(inst, params, false);
    p.mutable_values()[c.index] = saved - h;
    const LossEval minus = window_loss(inst, params, false);
    p.mutable_values()[c.index] = saved;
    if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++report.checked;
    if (rel > report.max_rel_error || report.worst.empty()) {
      report.max_rel_error = std::max(rel, report.max_rel_error);
      report.worst = c.name + "[" + std::to_string(c.index) + "]";
    }
  }
  report.passed = report.checked > 0 &&
                  report.checked >= std::min(options.min_params,
                                             report.total_params - report.skipped_kinks) &&
                  report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace asap::pipeline
