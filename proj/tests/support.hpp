#pragma once

// Brute-force reference implementations and finite-difference helpers shared
// by the unit tests and the acceptance suite. Everything here is written
// against plain vectors so it shares no code path with the library kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "asap/asap_module.hpp"
#include "asap/autodiff.hpp"
#include "asap/config.hpp"
#include "asap/geometry.hpp"
#include "asap/metrics.hpp"
#include "asap/nn.hpp"

namespace oracle {

using asap::geometry::Vec3;

inline double dist2(const Vec3& a, const Vec3& b) {
  return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z);
}

inline std::vector<Vec3> random_cloud(std::mt19937_64& rng, std::size_t n, double side) {
  std::uniform_real_distribution<double> u(0.0, side);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  return pts;
}

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Greedy FPS recomputing every candidate's distance to the whole chosen set.
inline std::vector<std::size_t> fps(const std::vector<Vec3>& pts, std::size_t m, std::size_t seed) {
  std::vector<std::size_t> chosen{seed};
  while (chosen.size() < m) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) d = std::min(d, dist2(pts[i], pts[c]));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

/// Linear scan, ascending index, truncated to k_cap.
inline std::vector<std::size_t> radius(const std::vector<Vec3>& pts, const Vec3& q, double r,
                                       std::size_t k_cap) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (dist2(pts[i], q) <= r * r) out.push_back(i);
  }
  if (out.size() > k_cap) out.resize(k_cap);
  return out;
}

/// Full sort of (distance, index).
inline std::vector<std::pair<std::size_t, double>> knn(const std::vector<Vec3>& pts, const Vec3& q,
                                                       std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < pts.size(); ++i) all.push_back({std::sqrt(dist2(pts[i], q)), i});
  std::sort(all.begin(), all.end());
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t j = 0; j < k; ++j) out.push_back({all[j].second, all[j].first});
  return out;
}

inline std::vector<std::size_t> match(const std::vector<Vec3>& prev, const std::vector<Vec3>& cur) {
  std::vector<std::size_t> out;
  for (const auto& c : cur) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < prev.size(); ++j) {
      if (dist2(prev[j], c) < dist2(prev[best], c)) best = j;
    }
    out.push_back(best);
  }
  return out;
}

/// MLP evaluated with scalar loops straight from the stored weights.
inline std::vector<double> mlp(const asap::ad::MlpSpec& spec, const asap::ad::ParamStore& params,
                               const std::string& prefix, std::vector<double> x) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto& w = params.get(prefix + ".layer" + std::to_string(l) + ".weight");
    const auto& b = params.get(prefix + ".layer" + std::to_string(l) + ".bias");
    const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b.values()[o];
      for (std::size_t i = 0; i < in; ++i) s += x[i] * w.values()[i * out + o];
      const bool last = l + 1 == spec.num_layers();
      const bool act = !last || spec.final_activation == asap::ad::Activation::kRelu;
      y[o] = act ? std::max(s, 0.0) : s;
    }
    x = std::move(y);
  }
  return x;
}

/// Per-center loop: neighbors by linear scan, eta per neighbor, running max.
inline std::vector<double> lsa(const std::vector<Vec3>& pts, const std::vector<double>& feats,
                               const std::vector<Vec3>& centers, const asap::LevelConfig& cfg,
                               const asap::ad::ParamStore& params, const std::string& prefix) {
  const std::size_t C = cfg.input_width();
  const std::size_t W = cfg.lsa_output_width();
  std::vector<double> out(centers.size() * W, 0.0);
  for (std::size_t j = 0; j < centers.size(); ++j) {
    std::size_t offset = 0;
    for (std::size_t s = 0; s < cfg.radii.size(); ++s) {
      const std::size_t ws = cfg.eta[s].output_width();
      const auto nb = radius(pts, centers[j], cfg.radii[s], cfg.k_cap);
      for (std::size_t n = 0; n < nb.size(); ++n) {
        std::vector<double> x(feats.begin() + nb[n] * C, feats.begin() + (nb[n] + 1) * C);
        const Vec3 d = pts[nb[n]] - centers[j];
        x.push_back(d.x);
        x.push_back(d.y);
        x.push_back(d.z);
        const auto y = mlp(cfg.eta[s], params, prefix + ".eta" + std::to_string(s), x);
        for (std::size_t c = 0; c < ws; ++c) {
          double& slot = out[j * W + offset + c];
          slot = n == 0 ? y[c] : std::max(slot, y[c]);
        }
      }
      offset += ws;
    }
  }
  return out;
}

/// Inverse-distance interpolation, skip concatenation and unit MLP per target.
inline std::vector<double> propagate(const std::vector<Vec3>& centers, const std::vector<double>& cf,
                                     std::size_t cw, const std::vector<Vec3>& targets,
                                     const std::vector<double>* skip, std::size_t sw,
                                     std::size_t k, const asap::ad::MlpSpec& unit,
                                     const asap::ad::ParamStore& params, const std::string& prefix) {
  std::vector<double> out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto nn = knn(centers, targets[i], k);
    double norm = 0.0;
    for (const auto& [idx, d] : nn) norm += 1.0 / (d + 1e-8);
    std::vector<double> x(cw, 0.0);
    for (const auto& [idx, d] : nn) {
      const double w = (1.0 / (d + 1e-8)) / norm;
      for (std::size_t c = 0; c < cw; ++c) x[c] += w * cf[idx * cw + c];
    }
    if (skip) x.insert(x.end(), skip->begin() + i * sw, skip->begin() + (i + 1) * sw);
    const auto y = mlp(unit, params, prefix, x);
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

struct Iou {
  std::vector<double> iou;
  double miou;
};

/// |P ∩ G| / |P ∪ G| per class from raw label arrays.
inline Iou iou(const std::vector<int>& truth, const std::vector<int>& pred, std::size_t K) {
  Iou r;
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool g = truth[i] == static_cast<int>(c), p = pred[i] == static_cast<int>(c);
      inter += g && p;
      uni += g || p;
    }
    r.iou.push_back(uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni));
  }
  r.miou = std::accumulate(r.iou.begin(), r.iou.end(), 0.0) / static_cast<double>(K);
  return r;
}

/// Central differences of f with respect to every entry of every input.
inline std::vector<std::vector<double>> numeric_grad(
    std::vector<asap::ad::Tensor>& inputs, const std::function<double()>& f, double h = 1e-5) {
  std::vector<std::vector<double>> g;
  for (auto& t : inputs) {
    std::vector<double> gi(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t.values()[i];
      t.mutable_values()[i] = saved + h;
      const double up = f();
      t.mutable_values()[i] = saved - h;
      const double down = f();
      t.mutable_values()[i] = saved;
      gi[i] = (up - down) / (2 * h);
    }
    g.push_back(std::move(gi));
  }
  return g;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
