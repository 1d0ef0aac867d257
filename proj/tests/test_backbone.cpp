#include "doctest.h"

#include <random>

#include "asap/backbone.hpp"
#include "asap/errors.hpp"
#include "support.hpp"

using namespace asap;
using namespace asap::backbone;
using ad::Tensor;

namespace {

PointFrame random_frame(std::mt19937_64& rng, std::size_t n, std::size_t c, double side = 3.0) {
  PointFrame f;
  f.coords = oracle::random_cloud(rng, n, side);
  f.features = oracle::random_values(rng, n * c, 0.0, 1.0);
  f.feature_width = c;
  return f;
}

std::vector<double> flat(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

ArchConfig small_arch(TemporalEmbedding te) {
  nlohmann::json j = {
      {"input_features", 1},
      {"num_classes", 3},
      {"backbone", {{"pre_widths", {6}}, {"head_widths", {7, 3}}}},
      {"levels",
       {{{"m", 10},
         {"radii", {1.2}},
         {"eta_widths", {{8, 5}}},
         {"te", te == TemporalEmbedding::kAttentive ? "ate" : "dte"},
         {"zeta_widths", {5}},
         {"gamma_widths", te == TemporalEmbedding::kAttentive ? nlohmann::json{2} : nlohmann::json::array()},
         {"k_cap", 1000}}}},
      {"stc", "constant"},
      {"T", 1},
      {"fp_k", 3},
      {"fp_unit_widths", {6}}};
  return parse_arch(j);
}

}  // namespace

TEST_CASE("backbone_pre") {
  std::mt19937_64 rng(1);
  BackboneConfig cfg;
  cfg.input_features = 2;
  cfg.num_classes = 2;
  cfg.pre = {{5, 5}, ad::Activation::kNone};
  cfg.head = {{5, 2}, ad::Activation::kNone};
  ad::ParamStore p;
  init_backbone_params(p, cfg, rng);
  auto w = p.get("backbone.pre.layer0.weight").mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < 5; ++i) w[i * 5 + i] = 1.0;

  PointFrame f = random_frame(rng, 20, 2);
  const Tensor out = backbone_pre(f, cfg, p);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(out.at(i, 0) == f.coords[i].x);
    CHECK(out.at(i, 1) == f.coords[i].y);
    CHECK(out.at(i, 2) == f.coords[i].z);
    CHECK(out.at(i, 3) == f.features[2 * i]);
    CHECK(out.at(i, 4) == f.features[2 * i + 1]);
  }

  // random weights vs per-point loop, and equivariance under a permutation
  cfg.pre = {{5, 9, 4}, ad::Activation::kRelu};
  cfg.head = {{4, 2}, ad::Activation::kNone};
  ad::ParamStore q;
  init_backbone_params(q, cfg, rng);
  const Tensor got = backbone_pre(f, cfg, q);
  for (std::size_t i = 0; i < 20; ++i) {
    std::vector<double> x{f.coords[i].x, f.coords[i].y, f.coords[i].z, f.features[2 * i],
                          f.features[2 * i + 1]};
    const auto y = oracle::mlp(cfg.pre, q, "backbone.pre", x);
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(got.at(i, c) - y[c]) <= 1e-12);
  }
  std::vector<std::size_t> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  PointFrame g;
  g.feature_width = 2;
  for (std::size_t i : perm) {
    g.coords.push_back(f.coords[i]);
    g.features.push_back(f.features[2 * i]);
    g.features.push_back(f.features[2 * i + 1]);
  }
  const Tensor permuted = backbone_pre(g, cfg, q);
  for (std::size_t k = 0; k < 20; ++k)
    for (std::size_t c = 0; c < 4; ++c) CHECK(permuted.at(k, c) == got.at(perm[k], c));

  f.feature_width = 1;
  f.features.resize(20);
  CHECK_THROWS_AS(backbone_pre(f, cfg, q), ShapeError);
}

TEST_CASE("backbone_head") {
  std::mt19937_64 rng(2);
  BackboneConfig cfg;
  cfg.input_features = 1;
  cfg.num_classes = 3;
  cfg.pre = {{4, 6}, ad::Activation::kRelu};
  cfg.head = {{6, 3}, ad::Activation::kNone};
  ad::ParamStore p;
  init_backbone_params(p, cfg, rng);
  auto w = p.get("backbone.head.layer0.weight").mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
  auto b = p.get("backbone.head.layer0.bias").mutable_values();
  b[0] = 0.5;
  b[1] = -1.0;
  b[2] = 2.0;
  const Tensor x = Tensor::matrix(7, 6, oracle::random_values(rng, 42));
  const Tensor logits = backbone_head(x, cfg, p);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(logits.at(i, 0) == 0.5);
    CHECK(logits.at(i, 1) == -1.0);
    CHECK(logits.at(i, 2) == 2.0);
  }

  // single class: every point predicts class 0
  cfg.num_classes = 1;
  cfg.head = {{6, 1}, ad::Activation::kNone};
  ad::ParamStore q;
  init_backbone_params(q, cfg, rng);
  CHECK(backbone_head(x, cfg, q).cols() == 1);

  CHECK_THROWS_AS(backbone_head(Tensor::matrix(2, 5, std::vector<double>(10, 1.0)), cfg, q), ShapeError);
}

TEST_CASE("backbone_head gradient") {
  std::mt19937_64 rng(3);
  BackboneConfig cfg;
  cfg.input_features = 1;
  cfg.num_classes = 3;
  cfg.pre = {{4, 6}, ad::Activation::kRelu};
  cfg.head = {{6, 5, 3}, ad::Activation::kNone};
  ad::ParamStore p;
  init_backbone_params(p, cfg, rng);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& [name, t] : p)
    for (double& v : t.mutable_values()) v = u(rng);
  const Tensor x = Tensor::matrix(9, 6, oracle::random_values(rng, 54));
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 2, 1, 0};

  std::vector<Tensor> leaves;
  for (const auto& name : {"backbone.head.layer0.weight", "backbone.head.layer0.bias",
                           "backbone.head.layer1.weight", "backbone.head.layer1.bias"})
    leaves.push_back(p.get(name));
  auto loss = [&] { return ad::cross_entropy(backbone_head(x, cfg, p), labels).item(); };

  ad::Tape tape;
  {
    ad::Tape::Scope scope(tape);
    const Tensor l = ad::cross_entropy(backbone_head(x, cfg, p), labels);
    ad::backward(l, tape);
  }
  const auto numeric = oracle::numeric_grad(leaves, loss);
  for (std::size_t k = 0; k < leaves.size(); ++k)
    CHECK(oracle::max_abs_diff(leaves[k].grad(), numeric[k]) < 1e-5);
}

TEST_CASE("single-frame baseline matches the temporal network with identity zeta at T=1") {
  std::mt19937_64 rng(4);
  for (auto te : {TemporalEmbedding::kAttentive, TemporalEmbedding::kDirect}) {
    const ArchConfig arch = small_arch(te);
    ad::ParamStore p = init_network_params(arch, 11);
    const std::size_t W = arch.asap.levels[0].lsa_output_width();
    auto w = p.get("asap.level0.zeta.layer0.weight").mutable_values();
    std::fill(w.begin(), w.end(), 0.0);
    // ATE: zeta(f) = f. DTE: zeta([f, f]) = f via [I | 0].
    for (std::size_t i = 0; i < W; ++i) w[i * W + i] = 1.0;
    for (int trial = 0; trial < 3; ++trial) {
      const PointFrame f = random_frame(rng, 80, 1);
      const PointFrame* window[] = {&f};
      const auto full = network_forward(window, arch, p);
      const Tensor base = single_frame_baseline_forward(f, arch, p);
      CHECK(flat(full.logits[0]) == flat(base));
    }
  }
}

TEST_CASE("baseline: equivariance and determinism") {
  std::mt19937_64 rng(5);
  const ArchConfig arch = small_arch(TemporalEmbedding::kAttentive);
  const ad::ParamStore p = init_network_params(arch, 3);
  const ad::ParamStore p2 = init_network_params(arch, 3);
  CHECK(p.serialize() == p2.serialize());
  const PointFrame f = random_frame(rng, 90, 1);
  const Tensor a = single_frame_baseline_forward(f, arch, p);
  CHECK(flat(a) == flat(single_frame_baseline_forward(f, arch, p2)));

  std::vector<std::size_t> perm(90);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  PointFrame g;
  g.feature_width = 1;
  for (std::size_t i : perm) {
    g.coords.push_back(f.coords[i]);
    g.features.push_back(f.features[i]);
  }
  const Tensor b = single_frame_baseline_forward(g, arch, p);
  bool same = true;
  for (std::size_t k = 0; k < 90; ++k)
    for (std::size_t c = 0; c < 3; ++c) same = same && b.at(k, c) == a.at(perm[k], c);
  CHECK(same);

  const ArchConfig base = single_frame_arch(arch);
  CHECK(base.asap.levels.size() == 1);
  CHECK(base.asap.levels[0].te == TemporalEmbedding::kNone);
  CHECK(base.asap.sequence_length == 1);
}

TEST_CASE("network forward over a window") {
  std::mt19937_64 rng(6);
  ArchConfig arch = small_arch(TemporalEmbedding::kAttentive);
  const ad::ParamStore p = init_network_params(arch, 5);
  std::vector<PointFrame> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(random_frame(rng, 40 + t, 1));
  std::vector<const PointFrame*> window;
  for (const auto& f : frames) window.push_back(&f);
  const auto out = network_forward(window, arch, p);
  REQUIRE(out.logits.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(out.logits[t].rows() == frames[t].size());
    CHECK(out.logits[t].cols() == 3);
  }
  CHECK_THROWS_AS(network_forward(std::span<const PointFrame* const>{}, arch, p),
                  std::invalid_argument);
}
