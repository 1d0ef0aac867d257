#include "asap/backbone.hpp"

#include "asap/errors.hpp"

namespace asap::backbone {

using ad::Tensor;

namespace {

constexpr const char* kPrePrefix = "backbone.pre";
constexpr const char* kHeadPrefix = "backbone.head";

Tensor frame_input(const PointFrame& frame) {
  const std::size_t n = frame.size(), c = frame.feature_width;
  std::vector<double> x(n * (3 + c));
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &x[i * (3 + c)];
    row[0] = frame.coords[i].x;
    row[1] = frame.coords[i].y;
    row[2] = frame.coords[i].z;
    for (std::size_t k = 0; k < c; ++k) row[3 + k] = frame.features[i * c + k];
  }
  return Tensor({n, 3 + c}, std::move(x));
}

}  // namespace

Tensor backbone_pre(const PointFrame& frame, const BackboneConfig& cfg,
                    const ad::ParamStore& params) {
  if (frame.feature_width != cfg.input_features) {
    throw ShapeError("backbone_pre: frame has " + std::to_string(frame.feature_width) +
                     " features, backbone expects " + std::to_string(cfg.input_features));
  }
  if (frame.coords.empty()) throw std::invalid_argument("backbone_pre: empty frame");
  return ad::mlp_forward(cfg.pre, params, kPrePrefix, frame_input(frame));
}

Tensor backbone_head(const Tensor& per_point, const BackboneConfig& cfg,
                     const ad::ParamStore& params) {
  return ad::mlp_forward(cfg.head, params, kHeadPrefix, per_point);
}

Tensor single_frame_baseline_forward(const PointFrame& frame, const ArchConfig& arch,
                                     const ad::ParamStore& params) {
  const ArchConfig base = single_frame_arch(arch);
  const LevelConfig& level = base.asap.levels.front();
  const Tensor feats = backbone_pre(frame, base.backbone, params);
  const auto centers = layers::stc_constant_centers(frame.coords, level.m);
  const Tensor center_feats =
      layers::lsa_forward(frame.coords, feats, centers, level, params, layers::level_prefix(0));
  const Tensor up = layers::feature_propagation(centers, center_feats, frame.coords, &feats,
                                                base.asap.fp_k, base.asap.fp_units.front(),
                                                params, layers::propagation_prefix(0));
  return backbone_head(up, base.backbone, params);
}

void init_backbone_params(ad::ParamStore& params, const BackboneConfig& cfg, std::mt19937_64& rng) {
  ad::init_mlp(params, cfg.pre, kPrePrefix, rng);
  ad::init_mlp(params, cfg.head, kHeadPrefix, rng);
}

ad::ParamStore init_network_params(const ArchConfig& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ad::ParamStore params;
  init_backbone_params(params, arch.backbone, rng);
  layers::init_asap_params(params, arch.asap, rng);
  return params;
}

WindowOutput network_forward(std::span<const PointFrame* const> window, const ArchConfig& arch,
                             const ad::ParamStore& params) {
  if (window.empty()) throw std::invalid_argument("network_forward: empty window");
  std::vector<layers::FrameInput> inputs;
  inputs.reserve(window.size());
  for (const PointFrame* f : window) {
    inputs.push_back({f->coords, backbone_pre(*f, arch.backbone, params)});
  }
  WindowOutput out;
  out.sequence = layers::asap_sequence_forward(inputs, arch.asap, params);
  for (const Tensor& feats : out.sequence.point_features) {
    out.logits.push_back(backbone_head(feats, arch.backbone, params));
  }
  return out;
}

ArchConfig single_frame_arch(const ArchConfig& arch) {
  ArchConfig base = arch;
  base.asap.levels.resize(1);
  LevelConfig& level = base.asap.levels.front();
  level.te = TemporalEmbedding::kNone;
  level.zeta = {};
  level.gamma = {};
  base.asap.sequence_length = 1;
  resolve_propagation(base.asap);
  base.asap.validate();
  base.backbone.head.widths.front() = base.asap.output_width();
  base.backbone.validate();
  return base;
}

}  // namespace asap::backbone
