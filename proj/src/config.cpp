#include "asap/config.hpp"

#include <fstream>
#include <sstream>

#include "asap/errors.hpp"

namespace asap {

using ad::Activation;
using ad::MlpSpec;
using nlohmann::json;

namespace {

MlpSpec make_spec(std::size_t in, const std::vector<std::size_t>& widths, Activation final_act) {
  MlpSpec spec;
  spec.widths.push_back(in);
  spec.widths.insert(spec.widths.end(), widths.begin(), widths.end());
  spec.final_activation = final_act;
  return spec;
}

std::vector<std::size_t> tail_widths(const MlpSpec& spec) {
  return {spec.widths.begin() + 1, spec.widths.end()};
}

TemporalEmbedding parse_te(const std::string& s) {
  if (s == "ate") return TemporalEmbedding::kAttentive;
  if (s == "dte") return TemporalEmbedding::kDirect;
  if (s == "none") return TemporalEmbedding::kNone;
  throw ConfigError("unknown temporal embedding '" + s + "' (expected ate|dte|none)");
}

StcStrategy parse_stc(const std::string& s) {
  if (s == "constant") return StcStrategy::kConstantCenters;
  if (s == "nearest") return StcStrategy::kNearestMatch;
  throw ConfigError("unknown STC strategy '" + s + "' (expected constant|nearest)");
}

template <typename T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

const char* to_string(TemporalEmbedding te) {
  switch (te) {
    case TemporalEmbedding::kNone: return "none";
    case TemporalEmbedding::kDirect: return "dte";
    case TemporalEmbedding::kAttentive: return "ate";
  }
  return "?";
}

const char* to_string(StcStrategy stc) {
  return stc == StcStrategy::kConstantCenters ? "constant" : "nearest";
}

std::size_t LevelConfig::lsa_output_width() const {
  std::size_t w = 0;
  for (const auto& e : eta) w += e.output_width();
  return w;
}

std::size_t LevelConfig::output_width() const {
  return te == TemporalEmbedding::kNone ? lsa_output_width() : zeta.output_width();
}

std::size_t LevelConfig::param_count() const {
  std::size_t n = 0;
  for (const auto& e : eta) n += e.param_count();
  if (te != TemporalEmbedding::kNone) n += zeta.param_count();
  if (te == TemporalEmbedding::kAttentive) n += gamma.param_count();
  return n;
}

void LevelConfig::validate() const {
  if (m == 0) throw ConfigError("level center count m must be >= 1");
  if (radii.empty()) throw ConfigError("level needs at least one radius");
  if (eta.size() != radii.size()) throw ConfigError("need one eta MLP per radius");
  if (k_cap == 0) throw ConfigError("k_cap must be >= 1");
  for (double r : radii) {
    if (!(r > 0.0)) throw ConfigError("radii must be positive");
  }
  for (const auto& e : eta) {
    e.validate();
    if (e.input_width() != eta.front().input_width()) {
      throw ConfigError("all eta MLPs of a level share the input width");
    }
  }
  const std::size_t c = lsa_output_width();
  switch (te) {
    case TemporalEmbedding::kNone: break;
    case TemporalEmbedding::kDirect:
      zeta.validate();
      if (zeta.input_width() != 2 * c) throw ConfigError("DTE zeta input width must be 2 x LSA width");
      break;
    case TemporalEmbedding::kAttentive:
      zeta.validate();
      gamma.validate();
      if (zeta.input_width() != c) throw ConfigError("ATE zeta input width must equal LSA width");
      if (gamma.input_width() != 2 * c) throw ConfigError("ATE gamma input width must be 2 x LSA width");
      if (gamma.output_width() != 2) throw ConfigError("ATE gamma must output exactly 2 logits");
      break;
  }
}

void AsapConfig::validate() const {
  if (levels.empty()) throw ConfigError("ASAP config needs at least one level");
  if (sequence_length == 0) throw ConfigError("sequence length T must be >= 1");
  if (fp_k == 0) throw ConfigError("fp_k must be >= 1");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    levels[l].validate();
    if (l > 0) {
      if (levels[l].m > levels[l - 1].m) {
        throw ConfigError("level " + std::to_string(l) + " has more centers than level " +
                          std::to_string(l - 1));
      }
      if (levels[l].input_width() != levels[l - 1].output_width()) {
        throw ConfigError("level " + std::to_string(l) + " input width does not match level " +
                          std::to_string(l - 1) + " output width");
      }
    }
    if (fp_k > levels[l].m) throw ConfigError("fp_k exceeds center count of level " + std::to_string(l));
  }
  if (fp_units.size() != levels.size()) throw ConfigError("propagation units not resolved");
  for (const auto& u : fp_units) u.validate();
}

void BackboneConfig::validate() const {
  pre.validate();
  head.validate();
  if (pre.input_width() != 3 + input_features) {
    throw ConfigError("backbone pre MLP input must be 3 + input_features");
  }
  if (head.output_width() != num_classes) {
    throw ConfigError("backbone head output width must equal num_classes");
  }
}

std::size_t param_count(const AsapConfig& cfg) {
  std::size_t n = 0;
  for (const auto& level : cfg.levels) n += level.param_count();
  for (const auto& u : cfg.fp_units) n += u.param_count();
  return n;
}

std::size_t param_count(const BackboneConfig& cfg) {
  return cfg.pre.param_count() + cfg.head.param_count();
}

LevelConfig make_level(std::size_t input_width, std::size_t m, std::vector<double> radii,
                       const std::vector<std::vector<std::size_t>>& eta_widths,
                       TemporalEmbedding te, const std::vector<std::size_t>& zeta_widths,
                       const std::vector<std::size_t>& gamma_widths, std::size_t k_cap) {
  LevelConfig level;
  level.m = m;
  level.radii = std::move(radii);
  level.k_cap = k_cap;
  level.te = te;
  for (const auto& w : eta_widths) level.eta.push_back(make_spec(input_width + 3, w, Activation::kRelu));
  if (level.eta.empty()) throw ConfigError("level needs eta widths");
  const std::size_t c = level.lsa_output_width();
  if (te == TemporalEmbedding::kDirect) {
    level.zeta = make_spec(2 * c, zeta_widths, Activation::kRelu);
  } else if (te == TemporalEmbedding::kAttentive) {
    level.zeta = make_spec(c, zeta_widths, Activation::kRelu);
    level.gamma = make_spec(2 * c, gamma_widths, Activation::kNone);
  }
  return level;
}

void resolve_propagation(AsapConfig& cfg) {
  if (cfg.fp_unit_widths.empty()) throw ConfigError("fp_unit_widths must not be empty");
  const std::size_t L = cfg.levels.size();
  cfg.fp_units.assign(L, {});
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t source =
        l + 1 == L ? cfg.levels[l].output_width() : cfg.fp_unit_widths.back();
    const std::size_t skip = cfg.levels[l].input_width();
    cfg.fp_units[l] = make_spec(source + skip, cfg.fp_unit_widths, Activation::kRelu);
  }
}

ArchConfig parse_arch(const json& j) {
  ArchConfig arch;
  auto& bb = arch.backbone;
  bb.input_features = required<std::size_t>(j, "input_features");
  bb.num_classes = required<std::size_t>(j, "num_classes");
  const json& jb = j.contains("backbone") ? j.at("backbone") : json::object();
  const auto pre_widths = required<std::vector<std::size_t>>(jb, "pre_widths");
  const auto head_widths = required<std::vector<std::size_t>>(jb, "head_widths");
  if (pre_widths.empty() || head_widths.empty()) throw ConfigError("backbone widths must not be empty");
  bb.pre = make_spec(3 + bb.input_features, pre_widths, Activation::kRelu);

  auto& as = arch.asap;
  if (!j.contains("levels") || !j.at("levels").is_array() || j.at("levels").empty()) {
    throw ConfigError("missing or empty 'levels'");
  }
  std::size_t width = bb.pre.output_width();
  for (const json& jl : j.at("levels")) {
    const auto te = parse_te(jl.value("te", std::string("ate")));
    auto eta_widths = required<std::vector<std::vector<std::size_t>>>(jl, "eta_widths");
    for (const auto& w : eta_widths) {
      if (w.empty()) throw ConfigError("eta widths must not be empty");
    }
    std::vector<std::size_t> zeta_widths, gamma_widths;
    if (te != TemporalEmbedding::kNone) {
      zeta_widths = required<std::vector<std::size_t>>(jl, "zeta_widths");
      if (zeta_widths.empty()) throw ConfigError("zeta widths must not be empty");
    }
    if (te == TemporalEmbedding::kAttentive) {
      gamma_widths = required<std::vector<std::size_t>>(jl, "gamma_widths");
      if (gamma_widths.empty()) throw ConfigError("gamma widths must not be empty");
    }
    LevelConfig level = make_level(width, required<std::size_t>(jl, "m"),
                                   required<std::vector<double>>(jl, "radii"), eta_widths, te,
                                   zeta_widths, gamma_widths, jl.value("k_cap", std::size_t{32}));
    width = level.output_width();
    as.levels.push_back(std::move(level));
  }
  as.stc = parse_stc(j.value("stc", std::string("constant")));
  as.sequence_length = j.value("T", std::size_t{3});
  as.fp_k = j.value("fp_k", std::size_t{3});
  as.fp_unit_widths = required<std::vector<std::size_t>>(j, "fp_unit_widths");
  resolve_propagation(as);
  as.validate();

  bb.head = make_spec(as.output_width(), head_widths, Activation::kNone);
  bb.validate();
  return arch;
}

ArchConfig load_arch(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open architecture config " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return parse_arch(j);
}

json to_json(const ArchConfig& arch) {
  json j;
  j["input_features"] = arch.backbone.input_features;
  j["num_classes"] = arch.backbone.num_classes;
  j["backbone"] = {{"pre_widths", tail_widths(arch.backbone.pre)},
                   {"head_widths", tail_widths(arch.backbone.head)}};
  json levels = json::array();
  for (const auto& level : arch.asap.levels) {
    json jl;
    jl["m"] = level.m;
    jl["radii"] = level.radii;
    json eta = json::array();
    for (const auto& e : level.eta) eta.push_back(tail_widths(e));
    jl["eta_widths"] = eta;
    jl["te"] = to_string(level.te);
    if (level.te != TemporalEmbedding::kNone) jl["zeta_widths"] = tail_widths(level.zeta);
    if (level.te == TemporalEmbedding::kAttentive) jl["gamma_widths"] = tail_widths(level.gamma);
    jl["k_cap"] = level.k_cap;
    levels.push_back(jl);
  }
  j["levels"] = levels;
  j["stc"] = to_string(arch.asap.stc);
  j["T"] = arch.asap.sequence_length;
  j["fp_k"] = arch.asap.fp_k;
  j["fp_unit_widths"] = arch.asap.fp_unit_widths;
  return j;
}

}  // namespace asap
