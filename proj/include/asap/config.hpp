#pragma once

// Architecture description shared by the backbone, the ASAP module and the CLI.
//
// JSON layout (all width lists omit the input width, which follows from the
// wiring):
//
//   {
//     "input_features": 1,            // per-point input feature width C
//     "num_classes": 4,
//     "backbone": {"pre_widths": [16, 16], "head_widths": [32, 4]},
//     "levels": [
//       {"m": 64, "radii": [1.5], "eta_widths": [[32, 32]], "te": "ate",
//        "zeta_widths": [32], "gamma_widths": [16, 2], "k_cap": 32}
//     ],
//     "stc": "constant",             // "constant" | "nearest"
//     "T": 3,
//     "fp_k": 3,
//     "fp_unit_widths": [32]
//   }

#include <string>
#include <vector>

#include "json.hpp"

#include "asap/nn.hpp"

namespace asap {

enum class TemporalEmbedding { kNone, kDirect, kAttentive };
enum class StcStrategy { kNearestMatch, kConstantCenters };

const char* to_string(TemporalEmbedding te);
const char* to_string(StcStrategy stc);

struct LevelConfig {
  std::size_t m = 0;
  std::vector<double> radii;
  std::vector<ad::MlpSpec> eta;  // one per radius
  TemporalEmbedding te = TemporalEmbedding::kAttentive;
  ad::MlpSpec zeta;   // unused for kNone
  ad::MlpSpec gamma;  // only for kAttentive
  std::size_t k_cap = 32;

  std::size_t input_width() const { return eta.front().input_width() - 3; }
  std::size_t lsa_output_width() const;
  std::size_t output_width() const;
  std::size_t param_count() const;
  void validate() const;
};

struct AsapConfig {
  std::vector<LevelConfig> levels;
  StcStrategy stc = StcStrategy::kConstantCenters;
  std::size_t sequence_length = 3;
  std::size_t fp_k = 3;
  std::vector<std::size_t> fp_unit_widths;  // hidden..., out
  // Resolved propagation units; fp_units[l] lifts level l's output onto its inputs.
  std::vector<ad::MlpSpec> fp_units;

  std::size_t input_width() const { return levels.front().input_width(); }
  std::size_t output_width() const { return fp_units.front().output_width(); }
  void validate() const;
};

struct BackboneConfig {
  std::size_t input_features = 0;
  std::size_t num_classes = 0;
  ad::MlpSpec pre;   // 3 + C -> Cmid, point-wise
  ad::MlpSpec head;  // Cfp -> K
  void validate() const;
};

struct ArchConfig {
  BackboneConfig backbone;
  AsapConfig asap;
};

/// Scalar count of all eta/gamma/zeta/propagation parameters.
std::size_t param_count(const AsapConfig& cfg);
std::size_t param_count(const BackboneConfig& cfg);

/// Builds a level from width lists that omit the input width.
LevelConfig make_level(std::size_t input_width, std::size_t m, std::vector<double> radii,
                       const std::vector<std::vector<std::size_t>>& eta_widths,
                       TemporalEmbedding te, const std::vector<std::size_t>& zeta_widths,
                       const std::vector<std::size_t>& gamma_widths, std::size_t k_cap = 32);

/// Resolves fp_units from fp_unit_widths and the level widths.
void resolve_propagation(AsapConfig& cfg);

ArchConfig parse_arch(const nlohmann::json& j);
ArchConfig load_arch(const std::string& path);
nlohmann::json to_json(const ArchConfig& arch);

}  // namespace asap
