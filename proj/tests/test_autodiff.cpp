#include "doctest.h"

#include <cmath>
#include <random>

#include "asap/autodiff.hpp"
#include "asap/errors.hpp"
#include "asap/nn.hpp"
#include "support.hpp"

using namespace asap;
using namespace asap::ad;

namespace {

// Runs f under a fresh tape, backpropagates and returns the input gradients.
std::vector<std::vector<double>> analytic_grad(std::vector<Tensor>& inputs,
                                               const std::function<Tensor()>& f) {
  for (auto& t : inputs) t.zero_grad();
  Tape tape;
  Tape::Scope scope(tape);
  backward(f(), tape);
  std::vector<std::vector<double>> g;
  for (auto& t : inputs) g.push_back(t.grad());
  return g;
}

double value_of(const std::function<Tensor()>& f) { return f().item(); }

void check_grad(std::vector<Tensor>& inputs, const std::function<Tensor()>& f, double tol) {
  const auto a = analytic_grad(inputs, f);
  const auto n = oracle::numeric_grad(inputs, [&] { return value_of(f); });
  for (std::size_t k = 0; k < inputs.size(); ++k) CHECK(oracle::max_abs_diff(a[k], n[k]) < tol);
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool rg = true) {
  return Tensor(shape, oracle::random_values(rng, shape_numel(shape)), rg);
}

}  // namespace

TEST_CASE("tensor construction validates shape and values") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}, {}), ShapeError);
  const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6);
  CHECK_FALSE(t.node_id().has_value());
}

TEST_CASE("matmul") {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor p = matmul(a, eye);
  CHECK(std::vector<double>(p.values().begin(), p.values().end()) == std::vector<double>{1, 2, 3, 4});
  CHECK(matmul(Tensor::matrix(1, 2, {1, 1}), Tensor::matrix(2, 1, {2, 3})).item() == 5);
  CHECK_THROWS_AS(matmul(a, Tensor::matrix(3, 1, {1, 2, 3})), ShapeError);

  std::mt19937_64 rng(1);
  std::vector<Tensor> in{random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})};
  const Tensor w = random_tensor(rng, {3, 2}, false);
  check_grad(in, [&] { return sum(mul(matmul(in[0], in[1]), w)); }, 1e-6);
}

TEST_CASE("relu") {
  const Tensor r = relu(Tensor({3}, {-1, 0, 2}));
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) == std::vector<double>{0, 0, 2});

  Tensor x({2}, {-1, 2}, true);
  std::vector<Tensor> in{x};
  const auto g = analytic_grad(in, [&] { return sum(relu(in[0])); });
  CHECK(g[0] == std::vector<double>{0, 1});

  Tensor z({1}, {0.0}, true);
  std::vector<Tensor> zin{z};
  CHECK(analytic_grad(zin, [&] { return sum(relu(zin[0])); })[0] == std::vector<double>{0});

  std::mt19937_64 rng(2);
  auto v = oracle::random_values(rng, 10);
  for (auto& e : v) {
    if (std::abs(e) < 1e-4) e = 0.5;
  }
  std::vector<Tensor> rin{Tensor({10}, v, true)};
  const Tensor w = random_tensor(rng, {10}, false);
  check_grad(rin, [&] { return sum(mul(relu(rin[0]), w)); }, 1e-6);
}

TEST_CASE("concat_last") {
  const Tensor c = concat_last(Tensor({2}, {1, 2}), Tensor({1}, {3}));
  CHECK(std::vector<double>(c.values().begin(), c.values().end()) == std::vector<double>{1, 2, 3});
  const Tensor m = concat_last(Tensor::zeros({2, 2}), Tensor::zeros({2, 1}));
  CHECK(m.shape() == Shape{2, 3});
  CHECK_THROWS_AS(concat_last(Tensor::zeros({2, 2}), Tensor::zeros({3, 1})), ShapeError);

  std::vector<Tensor> in{Tensor::zeros({2, 2}, true), Tensor::zeros({2, 1}, true)};
  const auto g = analytic_grad(in, [&] { return sum(concat_last(in[0], in[1])); });
  CHECK(g[0] == std::vector<double>(4, 1.0));
  CHECK(g[1] == std::vector<double>(2, 1.0));
}

TEST_CASE("max_reduce_rows") {
  const Tensor m = max_reduce_rows(Tensor::matrix(2, 2, {1, 5, 3, 2}));
  CHECK(m.shape() == Shape{2});
  CHECK(m[0] == 3);
  CHECK(m[1] == 5);

  std::vector<Tensor> tie{Tensor::matrix(2, 2, {2, 2, 2, 2}, true)};
  const auto g = analytic_grad(tie, [&] { return sum(max_reduce_rows(tie[0])); });
  CHECK(g[0] == std::vector<double>{1, 1, 0, 0});

  CHECK_THROWS_AS(max_reduce_rows(Tensor::zeros({0, 3})), EmptyReductionError);
  CHECK_THROWS_AS(max_reduce_rows(Tensor::zeros({4})), ShapeError);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(rng, {6, 4}, false);
    const Tensor r = max_reduce_rows(x);
    for (std::size_t c = 0; c < 4; ++c) {
      double best = x.at(0, c);
      for (std::size_t row = 1; row < 6; ++row) best = std::max(best, x.at(row, c));
      CHECK(r[c] == best);
    }
  }

  // column sums of the input gradient equal the upstream gradient
  std::vector<Tensor> in{random_tensor(rng, {5, 3})};
  const Tensor up = random_tensor(rng, {3}, false);
  const auto gi = analytic_grad(in, [&] { return sum(mul(max_reduce_rows(in[0]), up)); });
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 5; ++r) s += gi[0][r * 3 + c];
    CHECK(s == doctest::Approx(up[c]).epsilon(1e-15));
  }
}

TEST_CASE("segment_max yields zeros for empty segments") {
  const Tensor x = Tensor::matrix(3, 2, {1, 4, 3, 2, 5, 0});
  const std::vector<std::size_t> offsets{0, 2, 2, 3};
  const Tensor r = segment_max(x, offsets);
  CHECK(r.shape() == Shape{3, 2});
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) ==
        std::vector<double>{3, 4, 0, 0, 5, 0});
  CHECK_THROWS_AS(segment_max(x, std::vector<std::size_t>{0, 2}), ShapeError);
}

TEST_CASE("softmax_last") {
  const Tensor s = softmax_last(Tensor({2}, {0, 0}));
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);
  const Tensor big = softmax_last(Tensor({2}, {1000, 1000}));
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);
  CHECK_THROWS_AS(softmax_last(Tensor({2}, {0, std::nan("")})), NumericError);
  CHECK_THROWS_AS(softmax_last(Tensor({2}, {0, INFINITY})), NumericError);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x(Shape{3, 7}, oracle::random_values(rng, 21, -1000, 1000));
    const Tensor p = softmax_last(x);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(p.at(r, c) >= 0.0);  // may underflow to 0 for logits 2000 apart
        CHECK(p.at(r, c) <= 1.0);
        total += p.at(r, c);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }

  std::vector<Tensor> in{random_tensor(rng, {5})};
  const Tensor w = random_tensor(rng, {5}, false);
  check_grad(in, [&] { return sum(mul(softmax_last(in[0]), w)); }, 1e-6);
}

TEST_CASE("mlp_forward") {
  ParamStore params;
  params.add("id.layer0.weight", Tensor::matrix(2, 2, {1, 0, 0, 1}));
  params.add("id.layer0.bias", Tensor::zeros({2}));
  const MlpSpec id{{2, 2}, Activation::kNone};
  const Tensor y = mlp_forward(id, params, "id", Tensor::matrix(1, 2, {3, 4}));
  CHECK(y.at(0, 0) == 3);
  CHECK(y.at(0, 1) == 4);

  params.add("s.layer0.weight", Tensor::matrix(1, 1, {2}));
  params.add("s.layer0.bias", Tensor({1}, {1}));
  CHECK(mlp_forward({{1, 1}}, params, "s", Tensor::matrix(1, 1, {3})).item() == 7);

  CHECK_THROWS_AS(mlp_forward(id, params, "missing", Tensor::matrix(1, 2, {3, 4})),
                  std::out_of_range);
  CHECK_THROWS_AS(mlp_forward(id, params, "id", Tensor::matrix(1, 3, {3, 4, 5})), ShapeError);
  CHECK_THROWS_AS(MlpSpec{{3}}.validate(), ConfigError);
  CHECK_THROWS_AS(MlpSpec({{3, 0}}).validate(), ConfigError);

  std::mt19937_64 rng(5);
  ParamStore p2;
  const MlpSpec deep{{4, 6, 5, 3}, Activation::kNone};
  init_mlp(p2, deep, "m", rng);
  const Tensor x = random_tensor(rng, {7, 4}, false);
  const Tensor w = random_tensor(rng, {7, 3}, false);
  std::vector<Tensor> in;
  for (auto& [name, t] : p2) {
    // nonzero biases keep pre-activations off the relu kink
    const auto v = oracle::random_values(rng, t.numel());
    std::copy(v.begin(), v.end(), t.mutable_values().begin());
    in.push_back(t);
  }
  check_grad(in, [&] { return sum(mul(mlp_forward(deep, p2, "m", x), w)); }, 1e-5);
}

TEST_CASE("cross_entropy") {
  const std::vector<int> zero{0};
  CHECK(cross_entropy(Tensor::matrix(1, 2, {0, 0}), zero).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(Tensor::matrix(1, 2, {100, 0}), zero).item() < 1e-40);
  const std::vector<int> bad{2};
  CHECK_THROWS_AS(cross_entropy(Tensor::matrix(1, 2, {0, 0}), bad), std::out_of_range);
  const std::vector<int> ignored{-1, -1};
  CHECK(cross_entropy(Tensor::matrix(2, 2, {1, 2, 3, 4}), ignored, -1).item() == 0.0);

  std::mt19937_64 rng(6);
  const Tensor logits = random_tensor(rng, {4, 3}, false);
  const std::vector<int> labels{2, 0, 1, 2};
  double expect = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(logits.at(i, k));
    expect += -std::log(std::exp(logits.at(i, labels[i])) / z);
  }
  CHECK(std::abs(cross_entropy(logits, labels).item() - expect / 4) <= 1e-10);

  std::vector<Tensor> in{random_tensor(rng, {4, 3})};
  check_grad(in, [&] { return cross_entropy(in[0], labels); }, 1e-6);
}

TEST_CASE("backward") {
  std::vector<Tensor> in{Tensor::zeros({2, 3}, true)};
  CHECK(analytic_grad(in, [&] { return sum(in[0]); })[0] == std::vector<double>(6, 1.0));

  std::vector<Tensor> sq{Tensor::scalar(3.0, true)};
  CHECK(analytic_grad(sq, [&] { return mul(sq[0], sq[0]); })[0] == std::vector<double>{6.0});

  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor x({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0), tape), ShapeError);
    // accumulation across calls without reset
    const Tensor loss = sum(scale(x, 3.0));
    backward(loss, tape);
    backward(loss, tape);
    CHECK(x.grad() == std::vector<double>{6.0, 6.0});
  }
  Tape other;
  Tensor foreign;
  {
    Tape::Scope scope(other);
    foreign = scale(Tensor::scalar(1.0, true), 2.0);
  }
  CHECK_THROWS_AS(backward(foreign, tape), std::invalid_argument);
}

TEST_CASE("no recording without an active tape or trainable inputs") {
  Tape tape;
  Tape::Scope scope(tape);
  const Tensor c = add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}));
  CHECK(tape.size() == 0);
  CHECK_FALSE(c.node_id().has_value());
  const Tensor x({2}, {1, 2}, true);
  const Tensor y = add(x, c);
  CHECK(tape.size() == 1);
  CHECK(y.node_id().has_value());
}

TEST_CASE("tape replay is deterministic") {
  std::mt19937_64 rng(7);
  ParamStore params;
  const MlpSpec spec{{3, 8, 2}, Activation::kNone};
  init_mlp(params, spec, "m", rng);
  const Tensor x = random_tensor(rng, {10, 3}, false);
  const std::vector<int> labels{0, 1, 1, 0, 1, 0, 0, 1, 1, 0};
  auto run = [&] {
    params.zero_grad();
    Tape tape;
    Tape::Scope scope(tape);
    backward(cross_entropy(mlp_forward(spec, params, "m", x), labels), tape);
    std::vector<double> all;
    for (const auto& [n, t] : params) {
      const auto g = t.grad();
      all.insert(all.end(), g.begin(), g.end());
    }
    return all;
  };
  CHECK(run() == run());
}

TEST_CASE("gather, weighted_gather, mul_col, slice_cols gradients") {
  std::mt19937_64 rng(8);
  std::vector<Tensor> in{random_tensor(rng, {4, 3}), random_tensor(rng, {4, 1})};
  const std::vector<std::size_t> idx{3, 0, 0, 2, 1};
  const std::vector<std::size_t> widx{0, 1, 2, 3, 3, 1};
  const std::vector<double> w{0.2, 0.8, 0.5, 0.5, 0.9, 0.1};
  const Tensor up = random_tensor(rng, {5, 3}, false);
  check_grad(in, [&] {
    const Tensor a = mul(gather_rows(mul_col(in[0], in[1]), idx), up);
    const Tensor b = weighted_gather(slice_cols(in[0], 1, 3), widx, w, 2);
    return add(sum(a), sum(mul(b, b)));
  }, 1e-6);
  const Tensor g = gather_rows(Tensor::matrix(2, 1, {5, 7}), std::vector<std::size_t>{1, 1, 0});
  CHECK(std::vector<double>(g.values().begin(), g.values().end()) == std::vector<double>{7, 7, 5});
  CHECK_THROWS(gather_rows(Tensor::matrix(2, 1, {5, 7}), std::vector<std::size_t>{2}));
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore p;
    p.add("w", Tensor({2}, {1.5, -2.0}));
    Tape tape;
    {
      Tape::Scope scope(tape);
      backward(sum(scale(p.get("w"), 0.0)), tape);
    }
    Adam adam;
    adam.step(p);
    CHECK(p.get("w")[0] == 1.5);
    CHECK(p.get("w")[1] == -2.0);
  }
  SUBCASE("first step moves by lr") {
    ParamStore p;
    p.add("w", Tensor::scalar(0.0));
    {
      Tape tape;
      Tape::Scope scope(tape);
      backward(p.get("w"), tape);  // d/dw w = 1
    }
    Adam adam({.lr = 0.1});
    adam.step(p);
    CHECK(p.get("w").item() == doctest::Approx(-0.1).epsilon(1e-6));
  }
  SUBCASE("converges on a convex scalar problem") {
    ParamStore p;
    p.add("w", Tensor::scalar(0.0));
    Adam adam({.lr = 0.1});
    for (int i = 0; i < 100; ++i) {
      p.zero_grad();
      Tape tape;
      Tape::Scope scope(tape);
      const Tensor d = sub(p.get("w"), Tensor::scalar(3.0));
      backward(mul(d, d), tape);
      adam.step(p);
    }
    CHECK(std::abs(p.get("w").item() - 3.0) < 0.1);
  }
  SUBCASE("missing gradient is an error") {
    ParamStore p;
    p.add("w", Tensor::scalar(0.0));
    Adam adam;
    CHECK_THROWS_AS(adam.step(p), std::logic_error);
  }
}

TEST_CASE("param store serialization") {
  std::mt19937_64 rng(9);
  ParamStore p;
  init_mlp(p, {{3, 4, 2}, Activation::kRelu}, "a.b", rng);
  const std::string bytes = p.serialize();
  CHECK(bytes.rfind("ASAPCKPT1", 0) == 0);
  const ParamStore q = ParamStore::deserialize(bytes);
  CHECK(q.serialize() == bytes);
  for (const auto& [name, t] : p) {
    CHECK(q.get(name).shape() == t.shape());
    CHECK(std::equal(t.values().begin(), t.values().end(), q.get(name).values().begin()));
    CHECK(q.get(name).requires_grad());
  }
  CHECK_THROWS_AS(ParamStore::deserialize(bytes.substr(0, bytes.size() - 3)), ParseError);
  CHECK_THROWS_AS(ParamStore::deserialize("NOTACKPT"), ParseError);
  CHECK_THROWS_AS(p.add("a.b.layer0.bias", Tensor::zeros({4})), std::invalid_argument);
  CHECK(p.scalar_count() == 3 * 4 + 4 + 4 * 2 + 2);
  CHECK(MlpSpec{{3, 4, 2}}.param_count() == p.scalar_count());
}

TEST_CASE("glorot initialization bounds and zero biases") {
  std::mt19937_64 rng(10);
  ParamStore p;
  init_mlp(p, {{10, 30}}, "m", rng);
  const double bound = std::sqrt(6.0 / 40.0);
  for (double v : p.get("m.layer0.weight").values()) CHECK(std::abs(v) <= bound);
  for (double v : p.get("m.layer0.bias").values()) CHECK(v == 0.0);
}
