#pragma once

// Point-wise stand-in backbone and the end-to-end network built around it:
// backbone_pre -> ASAP (LSA + TE + propagation) -> backbone_head.

#include <cstdint>
#include <span>
#include <vector>

#include "asap/asap_module.hpp"
#include "asap/config.hpp"
#include "asap/geometry.hpp"

namespace asap::backbone {

using geometry::PointFrame;

/// MLP over concat(coords, input features), one row per point.
ad::Tensor backbone_pre(const PointFrame& frame, const BackboneConfig& cfg,
                        const ad::ParamStore& params);

/// Point-wise class logits.
ad::Tensor backbone_head(const ad::Tensor& per_point, const BackboneConfig& cfg,
                         const ad::ParamStore& params);

/// backbone_pre -> first-level LSA (no temporal embedding) -> propagation ->
/// head. Uses the same parameter names as the temporal network.
ad::Tensor single_frame_baseline_forward(const PointFrame& frame, const ArchConfig& arch,
                                         const ad::ParamStore& params);

void init_backbone_params(ad::ParamStore& params, const BackboneConfig& cfg, std::mt19937_64& rng);

/// Full parameter set (backbone + ASAP) from a seed.
ad::ParamStore init_network_params(const ArchConfig& arch, std::uint64_t seed);

struct WindowOutput {
  std::vector<ad::Tensor> logits;  // per frame, N_t x K
  layers::SequenceOutput sequence;
};

/// Runs the whole network on consecutive frames (one recurrent window).
WindowOutput network_forward(std::span<const PointFrame* const> window, const ArchConfig& arch,
                             const ad::ParamStore& params);

/// `arch` reduced to its first level without temporal embedding and T = 1.
ArchConfig single_frame_arch(const ArchConfig& arch);

}  // namespace asap::backbone
