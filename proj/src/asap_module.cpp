#include "asap/asap_module.hpp"

#include <stdexcept>

#include "asap/errors.hpp"

namespace asap::layers {

using ad::Tensor;

std::string level_prefix(std::size_t level) { return "asap.level" + std::to_string(level); }
std::string propagation_prefix(std::size_t level) { return "asap.fp" + std::to_string(level); }

Tensor lsa_forward(std::span<const Vec3> points, const Tensor& features,
                   std::span<const Vec3> centers, const LevelConfig& cfg,
                   const ad::ParamStore& params, const std::string& prefix, LsaStats* stats) {
  if (points.empty() || centers.empty()) throw std::invalid_argument("lsa_forward: empty input");
  if (features.rank() != 2 || features.rows() != points.size()) {
    throw ShapeError("lsa_forward: features " + ad::shape_str(features.shape()) + " for " +
                     std::to_string(points.size()) + " points");
  }
  if (features.cols() != cfg.input_width()) {
    throw ShapeError("lsa_forward: feature width " + std::to_string(features.cols()) +
                     " but eta expects " + std::to_string(cfg.input_width()) + " + 3");
  }
  const std::size_t m = centers.size();
  std::optional<Tensor> out;
  for (std::size_t s = 0; s < cfg.radii.size(); ++s) {
    const double r = cfg.radii[s];
    const geometry::GridIndex grid(points, r);
    const auto nl = geometry::radius_neighbors_batch(grid, points, centers, r, cfg.k_cap);
    if (stats) {
      stats->neighbors += nl.indices.size();
      for (std::size_t q = 0; q < m; ++q) stats->empty += nl.count(q) == 0 ? 1 : 0;
    }
    Tensor pooled;
    if (nl.indices.empty()) {
      pooled = Tensor::zeros({m, cfg.eta[s].output_width()});
    } else {
      std::vector<double> rel(nl.indices.size() * 3);
      for (std::size_t q = 0; q < m; ++q) {
        for (std::size_t k = nl.offsets[q]; k < nl.offsets[q + 1]; ++k) {
          const Vec3 d = points[nl.indices[k]] - centers[q];
          rel[3 * k + 0] = d.x;
          rel[3 * k + 1] = d.y;
          rel[3 * k + 2] = d.z;
        }
      }
      const Tensor grouped = ad::concat_last(ad::gather_rows(features, nl.indices),
                                             Tensor({nl.indices.size(), 3}, std::move(rel)));
      const Tensor per_neighbor =
          ad::mlp_forward(cfg.eta[s], params, prefix + ".eta" + std::to_string(s), grouped);
      pooled = ad::segment_max(per_neighbor, nl.offsets);
    }
    out = out ? ad::concat_last(*out, pooled) : pooled;
  }
  if (stats) stats->centers += m;
  return *out;
}

Tensor dte_forward(const Tensor& prev, const Tensor& cur, const ad::MlpSpec& zeta,
                   const ad::ParamStore& params, const std::string& prefix) {
  if (prev.shape() != cur.shape()) {
    throw ShapeError("dte_forward: " + ad::shape_str(prev.shape()) + " vs " +
                     ad::shape_str(cur.shape()));
  }
  return ad::mlp_forward(zeta, params, prefix + ".zeta", ad::concat_last(prev, cur));
}

AteOutput ate_forward(const Tensor& prev, const Tensor& cur, const ad::MlpSpec& gamma,
                      const ad::MlpSpec& zeta, const ad::ParamStore& params,
                      const std::string& prefix) {
  if (prev.shape() != cur.shape()) {
    throw ShapeError("ate_forward: " + ad::shape_str(prev.shape()) + " vs " +
                     ad::shape_str(cur.shape()));
  }
  if (gamma.output_width() != 2) throw ShapeError("ate_forward: gamma must output 2 logits");
  const Tensor logits = ad::mlp_forward(gamma, params, prefix + ".gamma", ad::concat_last(prev, cur));
  Tensor attention = ad::softmax_last(logits);
  // a1*prev + a2*cur written as cur + a1*(prev - cur) (a2 = 1 - a1), which is
  // exactly `cur` whenever prev == cur.
  const Tensor a1 = ad::slice_cols(attention, 0, 1);
  Tensor fused = ad::add(cur, ad::mul_col(ad::sub(prev, cur), a1));
  Tensor output = ad::mlp_forward(zeta, params, prefix + ".zeta", fused);
  return {std::move(output), std::move(fused), std::move(attention)};
}

namespace {

std::vector<Vec3> sample_centers(std::span<const Vec3> points, std::size_t m,
                                 std::optional<std::size_t> seed) {
  const std::size_t s = seed ? *seed : geometry::canonical_seed(points);
  const auto idx = geometry::farthest_point_sample(points, m, s);
  std::vector<Vec3> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(points[i]);
  return out;
}

std::vector<std::size_t> identity(std::size_t m) {
  std::vector<std::size_t> v(m);
  for (std::size_t i = 0; i < m; ++i) v[i] = i;
  return v;
}

}  // namespace

std::vector<Vec3> stc_constant_centers(std::span<const Vec3> first_frame, std::size_t m,
                                       std::optional<std::size_t> seed) {
  return sample_centers(first_frame, m, seed);
}

NearestMatchCenters stc_nearest_match(std::span<const std::vector<Vec3>> frames, std::size_t m,
                                      std::optional<std::size_t> seed) {
  if (frames.empty()) throw std::invalid_argument("stc_nearest_match: no frames");
  NearestMatchCenters out;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    out.centers.push_back(sample_centers(frames[t], m, seed));
    out.correlation.push_back(t == 0 ? identity(m)
                                     : geometry::nearest_center_match(out.centers[t - 1],
                                                                      out.centers[t]));
  }
  return out;
}

Tensor interpolate(std::span<const Vec3> center_coords, const Tensor& center_feats,
                   std::span<const Vec3> target_coords, std::size_t fp_k) {
  if (fp_k == 0 || fp_k > center_coords.size()) {
    throw std::invalid_argument("feature_propagation: fp_k=" + std::to_string(fp_k) +
                                " exceeds center count " + std::to_string(center_coords.size()));
  }
  if (center_feats.rows() != center_coords.size()) {
    throw ShapeError("feature_propagation: center features do not match center count");
  }
  std::vector<std::size_t> index(target_coords.size() * fp_k);
  std::vector<double> weight(target_coords.size() * fp_k);
  for (std::size_t i = 0; i < target_coords.size(); ++i) {
    const auto nn = geometry::knn(center_coords, target_coords[i], fp_k);
    double norm = 0.0;
    for (std::size_t k = 0; k < fp_k; ++k) {
      index[i * fp_k + k] = nn[k].index;
      weight[i * fp_k + k] = 1.0 / (nn[k].distance + kInterpolationEps);
      norm += weight[i * fp_k + k];
    }
    for (std::size_t k = 0; k < fp_k; ++k) weight[i * fp_k + k] /= norm;
  }
  return ad::weighted_gather(center_feats, index, weight, fp_k);
}

Tensor feature_propagation(std::span<const Vec3> center_coords, const Tensor& center_feats,
                           std::span<const Vec3> target_coords, const Tensor* skip,
                           std::size_t fp_k, const ad::MlpSpec& unit,
                           const ad::ParamStore& params, const std::string& prefix) {
  Tensor x = interpolate(center_coords, center_feats, target_coords, fp_k);
  if (skip != nullptr) {
    if (skip->rows() != target_coords.size()) {
      throw ShapeError("feature_propagation: skip features do not match target count");
    }
    x = ad::concat_last(x, *skip);
  }
  return ad::mlp_forward(unit, params, prefix, x);
}

SequenceOutput asap_sequence_forward(std::span<const FrameInput> frames, const AsapConfig& cfg,
                                     const ad::ParamStore& params) {
  if (frames.empty()) throw std::invalid_argument("asap_sequence_forward: empty sequence");
  const std::size_t L = cfg.levels.size();
  SequenceOutput out;
  std::vector<std::vector<Vec3>> centers(L);    // current (or constant) centers per level
  std::vector<std::optional<Tensor>> state(L);  // recurrent state per level

  for (std::size_t t = 0; t < frames.size(); ++t) {
    const FrameInput& frame = frames[t];
    if (frame.features.rows() != frame.coords.size()) {
      throw ShapeError("asap_sequence_forward: frame " + std::to_string(t) +
                       " features do not match its points");
    }
    std::vector<std::span<const Vec3>> in_coords{frame.coords};
    std::vector<Tensor> in_feats{frame.features};
    std::vector<LevelTrace> trace(L);

    for (std::size_t l = 0; l < L; ++l) {
      const LevelConfig& level = cfg.levels[l];
      LevelTrace& tr = trace[l];
      const bool resample = cfg.stc == StcStrategy::kNearestMatch || t == 0;
      if (resample) {
        std::vector<Vec3> fresh = sample_centers(in_coords[l], level.m, std::nullopt);
        ++out.fps_calls;
        tr.correlation = t == 0 ? identity(level.m)
                                : geometry::nearest_center_match(centers[l], fresh);
        centers[l] = std::move(fresh);
      } else {
        tr.correlation = identity(level.m);
      }
      tr.centers = centers[l];

      const std::string prefix = level_prefix(l);
      Tensor f = lsa_forward(in_coords[l], in_feats[l], centers[l], level, params, prefix, &tr.lsa);
      Tensor prev = f;
      if (t > 0 && level.te != TemporalEmbedding::kNone) {
        prev = cfg.stc == StcStrategy::kNearestMatch ? ad::gather_rows(*state[l], tr.correlation)
                                                     : *state[l];
      }
      Tensor h;
      switch (level.te) {
        case TemporalEmbedding::kNone:
          h = f;
          break;
        case TemporalEmbedding::kDirect:
          h = dte_forward(prev, f, level.zeta, params, prefix);
          state[l] = f;
          break;
        case TemporalEmbedding::kAttentive: {
          AteOutput ate = ate_forward(prev, f, level.gamma, level.zeta, params, prefix);
          h = ate.output;
          state[l] = ate.fused;
          tr.attention = ate.attention;
          break;
        }
      }
      in_coords.emplace_back(centers[l]);
      in_feats.push_back(h);
    }

    // Unwind: level l's output is lifted onto level l's input points, with
    // those inputs as skip features.
    Tensor up = in_feats[L];
    for (std::size_t l = L; l-- > 0;) {
      up = feature_propagation(trace[l].centers, up, in_coords[l], &in_feats[l], cfg.fp_k,
                               cfg.fp_units[l], params, propagation_prefix(l));
    }
    out.point_features.push_back(std::move(up));
    out.trace.push_back(std::move(trace));
  }
  return out;
}

void init_asap_params(ad::ParamStore& params, const AsapConfig& cfg, std::mt19937_64& rng) {
  for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
    const LevelConfig& level = cfg.levels[l];
    const std::string prefix = level_prefix(l);
    for (std::size_t s = 0; s < level.eta.size(); ++s) {
      ad::init_mlp(params, level.eta[s], prefix + ".eta" + std::to_string(s), rng);
    }
    if (level.te == TemporalEmbedding::kAttentive) ad::init_mlp(params, level.gamma, prefix + ".gamma", rng);
    if (level.te != TemporalEmbedding::kNone) ad::init_mlp(params, level.zeta, prefix + ".zeta", rng);
  }
  for (std::size_t l = 0; l < cfg.fp_units.size(); ++l) {
    ad::init_mlp(params, cfg.fp_units[l], propagation_prefix(l), rng);
  }
}

}  // namespace asap::layers
