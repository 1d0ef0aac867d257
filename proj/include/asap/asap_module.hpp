#pragma once

// Local structure aggregation, spatio-temporal center correlation, temporal
// embedding (direct / attentive), feature propagation and the recurrent
// multi-level sequence pass that ties them together.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asap/autodiff.hpp"
#include "asap/config.hpp"
#include "asap/geometry.hpp"
#include "asap/nn.hpp"

namespace asap::layers {

using geometry::Vec3;

struct CenterSet {
  std::vector<Vec3> coords;
  ad::Tensor features;  // m x C'
  std::size_t frame_index = 0;
  std::size_t level = 0;
};

struct LsaStats {
  std::size_t centers = 0;
  std::size_t neighbors = 0;  // summed over centers and scales
  std::size_t empty = 0;      // (center, scale) pairs with no neighbor
};

/// Per center: max over neighbors i within each radius of eta(f_i, x_i - c).
/// Multi-radius outputs are concatenated per center; an empty neighborhood
/// yields zeros for that scale. Parameters live under `<prefix>.eta<s>`.
ad::Tensor lsa_forward(std::span<const Vec3> points, const ad::Tensor& features,
                       std::span<const Vec3> centers, const LevelConfig& cfg,
                       const ad::ParamStore& params, const std::string& prefix,
                       LsaStats* stats = nullptr);

/// zeta(concat(prev, cur)); zeta under `<prefix>.zeta`.
ad::Tensor dte_forward(const ad::Tensor& prev, const ad::Tensor& cur, const ad::MlpSpec& zeta,
                       const ad::ParamStore& params, const std::string& prefix);

struct AteOutput {
  ad::Tensor output;     // zeta(fused)
  ad::Tensor fused;      // a1 * prev + a2 * cur
  ad::Tensor attention;  // m x 2, rows (a1, a2)
};

/// [a1, a2] = softmax(gamma(concat(prev, cur))); fused = a1 prev + a2 cur;
/// output = zeta(fused). gamma/zeta under `<prefix>.gamma` / `<prefix>.zeta`.
AteOutput ate_forward(const ad::Tensor& prev, const ad::Tensor& cur, const ad::MlpSpec& gamma,
                      const ad::MlpSpec& zeta, const ad::ParamStore& params,
                      const std::string& prefix);

/// Strategy (ii): FPS once on the first frame; the result is reused verbatim
/// for every frame. `seed` defaults to the canonical (order-independent) seed.
std::vector<Vec3> stc_constant_centers(std::span<const Vec3> first_frame, std::size_t m,
                                       std::optional<std::size_t> seed = std::nullopt);

struct NearestMatchCenters {
  std::vector<std::vector<Vec3>> centers;              // per frame
  std::vector<std::vector<std::size_t>> correlation;   // per frame; frame 0 is identity
};

/// Strategy (i): FPS on every frame, each current center paired with the
/// nearest center of the previous frame.
NearestMatchCenters stc_nearest_match(std::span<const std::vector<Vec3>> frames, std::size_t m,
                                      std::optional<std::size_t> seed = std::nullopt);

/// Inverse-distance interpolation from the fp_k nearest centers, concatenated
/// with `skip` (if given) and passed through the unit MLP under `prefix`.
ad::Tensor feature_propagation(std::span<const Vec3> center_coords, const ad::Tensor& center_feats,
                               std::span<const Vec3> target_coords, const ad::Tensor* skip,
                               std::size_t fp_k, const ad::MlpSpec& unit,
                               const ad::ParamStore& params, const std::string& prefix);

/// Only the interpolation step: out[i] = sum_k w_ik feat[k], w = 1/(d+eps) normalized.
ad::Tensor interpolate(std::span<const Vec3> center_coords, const ad::Tensor& center_feats,
                       std::span<const Vec3> target_coords, std::size_t fp_k);

inline constexpr double kInterpolationEps = 1e-8;

struct FrameInput {
  std::span<const Vec3> coords;
  ad::Tensor features;  // N x C (backbone features)
};

struct LevelTrace {
  std::vector<Vec3> centers;
  std::vector<std::size_t> correlation;  // previous-frame center for each center
  std::optional<ad::Tensor> attention;   // ATE only
  LsaStats lsa;
};

struct SequenceOutput {
  std::vector<ad::Tensor> point_features;    // per frame, N_t x Cfp
  std::vector<std::vector<LevelTrace>> trace;  // [frame][level]
  std::size_t fps_calls = 0;
};

/// Recurrent pass over a window of frames. Per frame and level: centers from
/// the STC strategy, LSA on the level's inputs, temporal embedding against the
/// level's recurrent state (self-paired on the first frame), then propagation
/// back down to the frame's points.
///
/// Recurrent state per level: the attention-fused feature for ATE, the LSA
/// feature for DTE. Identical frames therefore reach a fixed point at once.
SequenceOutput asap_sequence_forward(std::span<const FrameInput> frames, const AsapConfig& cfg,
                                     const ad::ParamStore& params);

/// Registers all eta/gamma/zeta/propagation parameters under "asap.".
void init_asap_params(ad::ParamStore& params, const AsapConfig& cfg, std::mt19937_64& rng);

std::string level_prefix(std::size_t level);
std::string propagation_prefix(std::size_t level);

}  // namespace asap::layers
