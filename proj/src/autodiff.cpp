#include "asap/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "asap/errors.hpp"

namespace asap::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffU;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using DataPtr = std::shared_ptr<TensorData>;

std::vector<double>& grad_of(TensorData& d) {
  if (d.grad.empty()) d.grad.assign(d.value.size(), 0.0);
  return d.grad;
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Registers `out` as the output of a node when gradients are needed.
void attach(Tensor& out, std::string_view kind, std::initializer_list<const Tensor*> inputs,
            std::function<void()> backward_fn, std::uint64_t pattern = 0) {
  Tape* tape = Tape::active();
  Tape::Node node;
  node.kind = kind;
  for (const Tensor* t : inputs) node.inputs.push_back(t->data());
  node.output = out.data();
  node.backward = std::move(backward_fn);
  node.pattern = pattern;
  out.data()->requires_grad = true;
  out.data()->node_id = static_cast<std::int64_t>(tape->record(std::move(node)));
}

Shape leading(const Shape& s) {
  if (s.empty()) return {};
  return Shape(s.begin(), s.end() - 1);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor() : data_(std::make_shared<TensorData>()) {
  data_->value.assign(1, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<TensorData>()) {
  // Leading axes may be empty (e.g. zero rows); the column axis may not.
  if (!shape.empty() && shape.back() == 0) {
    throw ShapeError("tensor column dimension must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  data_->shape = std::move(shape);
  data_->value = std::move(values);
  data_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({}, {v}, requires_grad); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

std::size_t Tensor::cols() const { return rank() == 0 ? 1 : data_->shape.back(); }
std::size_t Tensor::rows() const { return numel() / cols(); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return data_->value[0];
}

std::optional<std::size_t> Tensor::node_id() const {
  if (data_->node_id < 0) return std::nullopt;
  return static_cast<std::size_t>(data_->node_id);
}

std::vector<double> Tensor::grad() const {
  if (data_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return data_->grad;
}

// ---- Tape ---------------------------------------------------------------

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

std::size_t Tape::record(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

std::uint64_t Tape::pattern_signature() const {
  std::uint64_t h = kFnvOffset;
  for (const Node& n : nodes_) h = fnv_mix(h, n.pattern);
  return h;
}

void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  const auto id = loss.node_id();
  if (!id && loss.requires_grad()) {  // the loss is itself a leaf
    grad_of(*loss.data())[0] += 1.0;
    return;
  }
  if (!id || *id >= tape.nodes_.size() || tape.nodes_[*id].output != loss.data()) {
    throw std::invalid_argument("backward: loss was not recorded on this tape");
  }
  for (auto& n : tape.nodes_) n.output->grad.clear();
  grad_of(*loss.data())[0] = 1.0;
  for (std::size_t i = *id + 1; i-- > 0;) {
    auto& n = tape.nodes_[i];
    if (n.output->grad.empty()) continue;  // not on a path to the loss
    n.backward();
  }
}

// ---- operators ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t R = a.shape()[0], K = a.shape()[1], C = b.shape()[1];
  std::vector<double> out(R * C, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t r = 0; r < R; ++r) {
    double* orow = &out[r * C];
    for (std::size_t k = 0; k < K; ++k) {
      const double s = av[r * K + k];
      const double* brow = &bv[k * C];
      for (std::size_t c = 0; c < C; ++c) orow[c] += s * brow[c];
    }
  }
  Tensor result({R, C}, std::move(out));
  if (any_requires_grad({&a, &b})) {
    TensorData* ad = a.data().get();
    TensorData* bd = b.data().get();
    TensorData* od = result.data().get();
    attach(result, "matmul", {&a, &b}, [=] {
      const auto& g = od->grad;
      if (ad->requires_grad) {
        auto& ga = grad_of(*ad);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t k = 0; k < K; ++k) {
            double s = 0.0;
            for (std::size_t c = 0; c < C; ++c) s += g[r * C + c] * bd->value[k * C + c];
            ga[r * K + k] += s;
          }
      }
      if (bd->requires_grad) {
        auto& gb = grad_of(*bd);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t k = 0; k < K; ++k) {
            const double s = ad->value[r * K + k];
            for (std::size_t c = 0; c < C; ++c) gb[k * C + c] += s * g[r * C + c];
          }
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.cols() != weight.shape()[0] || bias.numel() != weight.shape()[1]) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + ", weight " +
                     shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::size_t R = x.rows(), K = weight.shape()[0], C = weight.shape()[1];
  std::vector<double> out(R * C);
  const auto xv = x.values();
  const auto wv = weight.values();
  const auto bv = bias.values();
  for (std::size_t r = 0; r < R; ++r) {
    double* orow = &out[r * C];
    std::copy(bv.begin(), bv.end(), orow);
    for (std::size_t k = 0; k < K; ++k) {
      const double s = xv[r * K + k];
      if (s == 0.0) continue;
      const double* wrow = &wv[k * C];
      for (std::size_t c = 0; c < C; ++c) orow[c] += s * wrow[c];
    }
  }
  Shape shape = leading(x.shape());
  shape.push_back(C);
  Tensor result(std::move(shape), std::move(out));
  if (any_requires_grad({&x, &weight, &bias})) {
    TensorData* xd = x.data().get();
    TensorData* wd = weight.data().get();
    TensorData* bd = bias.data().get();
    TensorData* od = result.data().get();
    attach(result, "linear", {&x, &weight, &bias}, [=] {
      const auto& g = od->grad;
      if (xd->requires_grad) {
        // gx[r, :] += sum_c g[r, c] * w[:, c], via the transposed weight so the
        // inner loop is a contiguous axpy
        std::vector<double> wt(C * K);
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t c = 0; c < C; ++c) wt[c * K + k] = wd->value[k * C + c];
        auto& gx = grad_of(*xd);
        for (std::size_t r = 0; r < R; ++r) {
          const double* grow = &g[r * C];
          double* gxrow = &gx[r * K];
          for (std::size_t c = 0; c < C; ++c) {
            const double s = grow[c];
            if (s == 0.0) continue;
            const double* wtrow = &wt[c * K];
            for (std::size_t k = 0; k < K; ++k) gxrow[k] += s * wtrow[k];
          }
        }
      }
      if (wd->requires_grad) {
        auto& gw = grad_of(*wd);
        for (std::size_t r = 0; r < R; ++r) {
          const double* grow = &g[r * C];
          for (std::size_t k = 0; k < K; ++k) {
            const double s = xd->value[r * K + k];
            if (s == 0.0) continue;
            double* gwrow = &gw[k * C];
            for (std::size_t c = 0; c < C; ++c) gwrow[c] += s * grow[c];
          }
        }
      }
      if (bd->requires_grad) {
        auto& gb = grad_of(*bd);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
      }
    });
  }
  return result;
}

namespace {

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, std::string_view kind, Fwd fwd,
                          GradA grad_a, GradB grad_b) {
  require_same_shape(a, b, kind.data());
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a[i], b[i]);
  Tensor result(a.shape(), std::move(out));
  if (any_requires_grad({&a, &b})) {
    TensorData* ad = a.data().get();
    TensorData* bd = b.data().get();
    TensorData* od = result.data().get();
    attach(result, kind, {&a, &b}, [=] {
      const auto& g = od->grad;
      if (ad->requires_grad) {
        auto& ga = grad_of(*ad);
        for (std::size_t i = 0; i < n; ++i) ga[i] += grad_a(g[i], ad->value[i], bd->value[i]);
      }
      if (bd->requires_grad) {
        auto& gb = grad_of(*bd);
        for (std::size_t i = 0; i < n; ++i) gb[i] += grad_b(g[i], ad->value[i], bd->value[i]);
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  Tensor result(x.shape(), std::move(out));
  if (any_requires_grad({&x})) {
    TensorData* xd = x.data().get();
    TensorData* od = result.data().get();
    attach(result, "scale", {&x}, [=] {
      auto& gx = grad_of(*xd);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * od->grad[i];
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor result = Tensor::scalar(s);
  if (any_requires_grad({&x})) {
    TensorData* xd = x.data().get();
    TensorData* od = result.data().get();
    attach(result, "sum", {&x}, [=] {
      auto& gx = grad_of(*xd);
      const double g = od->grad[0];
      for (double& v : gx) v += g;
    });
  }
  return result;
}

Tensor relu(const Tensor& x) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Tensor result(x.shape(), std::move(out));
  if (any_requires_grad({&x})) {
    TensorData* xd = x.data().get();
    TensorData* od = result.data().get();
    std::uint64_t pattern = kFnvOffset, word = 0;
    for (std::size_t i = 0; i < n; ++i) {
      word |= static_cast<std::uint64_t>(xv[i] > 0.0) << (i & 63);
      if ((i & 63) == 63 || i + 1 == n) {
        pattern = mix64(pattern ^ word);
        word = 0;
      }
    }
    attach(
        result, "relu", {&x},
        [=] {
          auto& gx = grad_of(*xd);
          for (std::size_t i = 0; i < n; ++i) {
            if (xd->value[i] > 0.0) gx[i] += od->grad[i];
          }
        },
        pattern);
  }
  return result;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || b.rank() == 0 || leading(a.shape()) != leading(b.shape())) {
    throw ShapeError("concat_last: leading shapes differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t R = a.rows(), C1 = a.cols(), C2 = b.cols(), C = C1 + C2;
  std::vector<double> out(R * C);
  for (std::size_t r = 0; r < R; ++r) {
    std::copy_n(&a.values()[r * C1], C1, &out[r * C]);
    std::copy_n(&b.values()[r * C2], C2, &out[r * C + C1]);
  }
  Shape shape = leading(a.shape());
  shape.push_back(C);
  Tensor result(std::move(shape), std::move(out));
  if (any_requires_grad({&a, &b})) {
    TensorData* ad = a.data().get();
    TensorData* bd = b.data().get();
    TensorData* od = result.data().get();
    attach(result, "concat_last", {&a, &b}, [=] {
      const auto& g = od->grad;
      if (ad->requires_grad) {
        auto& ga = grad_of(*ad);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < C1; ++c) ga[r * C1 + c] += g[r * C + c];
      }
      if (bd->requires_grad) {
        auto& gb = grad_of(*bd);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < C2; ++c) gb[r * C2 + c] += g[r * C + C1 + c];
      }
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t C = x.cols();
  if (begin >= end || end > C) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside " + shape_str(x.shape()));
  }
  const std::size_t R = x.rows(), W = end - begin;
  std::vector<double> out(R * W);
  for (std::size_t r = 0; r < R; ++r) std::copy_n(&x.values()[r * C + begin], W, &out[r * W]);
  Shape shape = leading(x.shape());
  shape.push_back(W);
  Tensor result(std::move(shape), std::move(out));
  if (any_requires_grad({&x})) {
    TensorData* xd = x.data().get();
    TensorData* od = result.data().get();
    attach(result, "slice_cols", {&x}, [=] {
      auto& gx = grad_of(*xd);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < W; ++c) gx[r * C + begin + c] += od->grad[r * W + c];
    });
  }
  return result;
}

namespace {

// Shared kernel for max_reduce_rows and segment_max. `argmax` receives the
// winning row per (segment, column), or SIZE_MAX for an empty segment.
std::vector<double> segmented_column_max(const Tensor& x, std::span<const std::size_t> offsets,
                                         std::vector<std::size_t>& argmax) {
  const std::size_t C = x.cols();
  const std::size_t S = offsets.size() - 1;
  std::vector<double> out(S * C, 0.0);
  argmax.assign(S * C, std::numeric_limits<std::size_t>::max());
  const auto xv = x.values();
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t lo = offsets[s], hi = offsets[s + 1];
    if (lo == hi) continue;
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = lo;
      double best_v = xv[lo * C + c];
      for (std::size_t r = lo + 1; r < hi; ++r) {
        if (xv[r * C + c] > best_v) {
          best_v = xv[r * C + c];
          best = r;
        }
      }
      out[s * C + c] = best_v;
      argmax[s * C + c] = best;
    }
  }
  return out;
}

Tensor segmented_max_op(const Tensor& x, std::span<const std::size_t> offsets, Shape out_shape,
                        std::string_view kind) {
  const std::size_t C = x.cols();
  std::vector<std::size_t> argmax;
  std::vector<double> out = segmented_column_max(x, offsets, argmax);
  Tensor result(std::move(out_shape), std::move(out));
  if (any_requires_grad({&x})) {
    TensorData* xd = x.data().get();
    TensorData* od = result.data().get();
    std::uint64_t pattern = kFnvOffset;
    for (std::size_t v : argmax) pattern = mix64(pattern ^ v);
    attach(
        result, kind, {&x},
        [=, argmax = std::move(argmax)] {
          auto& gx = grad_of(*xd);
          for (std::size_t i = 0; i < argmax.size(); ++i) {
            if (argmax[i] == std::numeric_limits<std::size_t>::max()) continue;
            gx[argmax[i] * C + i % C] += od->grad[i];
          }
        },
        pattern);
  }
  return result;
}

}  // namespace

Tensor max_reduce_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("max_reduce_rows expects a matrix, got " + shape_str(x.shape()));
  if (x.rows() == 0) throw EmptyReductionError("max_reduce_rows over zero rows");
  const std::size_t offsets[2] = {0, x.rows()};
  return segmented_max_op(x, offsets, {x.cols()}, "max_reduce_rows");
}

Tensor segment_max(const Tensor& x, std::span<const std::size_t> offsets) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.rows() ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw ShapeError("segment_max: offsets do not partition the " + std::to_string(x.rows()) +
                     " rows of " + shape_str(x.shape()));
  }
  return segmented_max_op(x, offsets, {offsets.size() - 1, x.cols()}, "segment_max");
}

Tensor softmax_last(const Tensor& x) {
  const std::size_t R = x.rows(), D = x.cols();
  const auto xv = x.values();
  std::vector<double> out(R * D);
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = &xv[r * D];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < D; ++d) {
      if (!std::isfinite(row[d])) throw NumericError("softmax_last: non-finite input");
      mx = std::max(mx, row[d]);
    }
    double z = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      out[r * D + d] = std::exp(row[d] - mx);
      z += out[r * D + d];
    }
    for (std::size_t d = 0; d < D; ++d) out[r * D + d] /= z;
  }
  Tensor result(x.shape(), std::move(out));
  if (any_requires_grad({&x})) {
    TensorData* xd = x.data().get();
    TensorData* od = result.data().get();
    attach(result, "softmax_last", {&x}, [=] {
      auto& gx = grad_of(*xd);
      const auto& y = od->value;
      const auto& g = od->grad;
      for (std::size_t r = 0; r < R; ++r) {
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += g[r * D + d] * y[r * D + d];
        for (std::size_t d = 0; d < D; ++d) gx[r * D + d] += y[r * D + d] * (g[r * D + d] - dot);
      }
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  const std::size_t R = x.rows(), C = x.cols(), n = index.size();
  if (n == 0) throw ShapeError("gather_rows: empty index");
  std::vector<double> out(n * C);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] >= R) {
      throw ShapeError("gather_rows: row " + std::to_string(index[i]) + " out of range for " +
                       shape_str(x.shape()));
    }
    std::copy_n(&x.values()[index[i] * C], C, &out[i * C]);
  }
  Tensor result({n, C}, std::move(out));
  if (any_requires_grad({&x})) {
    TensorData* xd = x.data().get();
    TensorData* od = result.data().get();
    std::vector<std::size_t> idx(index.begin(), index.end());
    attach(result, "gather_rows", {&x}, [=, idx = std::move(idx)] {
      auto& gx = grad_of(*xd);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < C; ++c) gx[idx[i] * C + c] += od->grad[i * C + c];
    });
  }
  return result;
}

Tensor weighted_gather(const Tensor& x, std::span<const std::size_t> index,
                       std::span<const double> weights, std::size_t k) {
  const std::size_t R = x.rows(), C = x.cols();
  if (k == 0 || index.empty() || index.size() % k != 0 || weights.size() != index.size()) {
    throw ShapeError("weighted_gather: index/weight sizes inconsistent with k=" +
                     std::to_string(k));
  }
  const std::size_t n = index.size() / k;
  std::vector<double> out(n * C, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = index[i * k + j];
      if (src >= R) throw ShapeError("weighted_gather: row index out of range");
      const double w = weights[i * k + j];
      for (std::size_t c = 0; c < C; ++c) out[i * C + c] += w * x.values()[src * C + c];
    }
  }
  Tensor result({n, C}, std::move(out));
  if (any_requires_grad({&x})) {
    TensorData* xd = x.data().get();
    TensorData* od = result.data().get();
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<double> w(weights.begin(), weights.end());
    attach(result, "weighted_gather", {&x}, [=, idx = std::move(idx), w = std::move(w)] {
      auto& gx = grad_of(*xd);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t src = idx[i * k + j];
          const double wij = w[i * k + j];
          for (std::size_t c = 0; c < C; ++c) gx[src * C + c] += wij * od->grad[i * C + c];
        }
    });
  }
  return result;
}

Tensor mul_col(const Tensor& x, const Tensor& s) {
  const std::size_t R = x.rows(), C = x.cols();
  if (s.numel() != R || s.cols() != 1) {
    throw ShapeError("mul_col: scale " + shape_str(s.shape()) + " does not match rows of " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(R * C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = x.values()[r * C + c] * s[r];
  Tensor result(x.shape(), std::move(out));
  if (any_requires_grad({&x, &s})) {
    TensorData* xd = x.data().get();
    TensorData* sd = s.data().get();
    TensorData* od = result.data().get();
    attach(result, "mul_col", {&x, &s}, [=] {
      const auto& g = od->grad;
      if (xd->requires_grad) {
        auto& gx = grad_of(*xd);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += g[r * C + c] * sd->value[r];
      }
      if (sd->requires_grad) {
        auto& gs = grad_of(*sd);
        for (std::size_t r = 0; r < R; ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c) acc += g[r * C + c] * xd->value[r * C + c];
          gs[r] += acc;
        }
      }
    });
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels,
                     std::optional<int> ignore_index) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t N = logits.rows(), K = logits.cols();
  const auto lv = logits.values();
  // softmax probabilities are kept for the backward pass
  std::vector<double> prob(N * K, 0.0);
  std::vector<char> used(N, 0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const int y = labels[i];
    if (ignore_index && y == *ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0," +
                              std::to_string(K) + ")");
    }
    const double* row = &lv[i * K];
    const double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t k = 0; k < K; ++k) prob[i * K + k] = std::exp(row[k] - log_z);
    total += log_z - row[y];
    used[i] = 1;
    ++count;
  }
  const double loss = count == 0 ? 0.0 : total / static_cast<double>(count);
  Tensor result = Tensor::scalar(loss);
  if (count > 0 && any_requires_grad({&logits})) {
    TensorData* ld = logits.data().get();
    TensorData* od = result.data().get();
    std::vector<int> y(labels.begin(), labels.end());
    attach(result, "cross_entropy", {&logits},
           [=, prob = std::move(prob), used = std::move(used), y = std::move(y)] {
             auto& gl = grad_of(*ld);
             const double g = od->grad[0] / static_cast<double>(count);
             for (std::size_t i = 0; i < N; ++i) {
               if (!used[i]) continue;
               for (std::size_t k = 0; k < K; ++k) gl[i * K + k] += g * prob[i * K + k];
               gl[i * K + y[i]] -= g;
             }
           });
  }
  return result;
}

}  // namespace asap::ad
