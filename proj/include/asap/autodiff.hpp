#pragma once

// Minimal reverse-mode differentiation over dense float64 tensors.
//
// Tensors are shared handles. An op records itself on the active Tape (see
// Tape::Scope) when at least one of its inputs requires a gradient; otherwise
// it is evaluated eagerly as a constant. `backward` replays the tape in
// reverse recording order, which is a valid topological order by
// construction.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace asap::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily; empty means "no gradient yet"
  bool requires_grad = false;
  std::int64_t node_id = -1;  // producing node on the tape, -1 for leaves/constants
};

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t numel() const { return data_->value.size(); }
  // 2-D view: last axis is the column axis, everything before it is rows.
  std::size_t cols() const;
  std::size_t rows() const;

  std::span<const double> values() const { return data_->value; }
  std::span<double> mutable_values() { return data_->value; }
  double operator[](std::size_t i) const { return data_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return data_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return data_->requires_grad; }
  std::optional<std::size_t> node_id() const;
  bool has_grad() const { return !data_->grad.empty(); }
  // Gradient view; zeros of the right shape if nothing has been accumulated.
  std::vector<double> grad() const;
  void zero_grad() { data_->grad.clear(); }

  const std::shared_ptr<TensorData>& data() const { return data_; }
  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  std::shared_ptr<TensorData> data_;
};

class Tape {
 public:
  struct Node {
    std::string_view kind;
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> output;
    std::function<void()> backward;
    // Hash of the piecewise-linear branch taken (relu masks, argmax rows).
    std::uint64_t pattern = 0;
  };

  /// Makes a tape the recording target for the current thread while alive.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  void clear() { nodes_.clear(); }

  /// Combined branch signature of every recorded relu/max. Two forward passes
  /// with the same signature took the same linear piece of the network.
  std::uint64_t pattern_signature() const;

  std::size_t record(Node node);

 private:
  friend void backward(const Tensor& loss, Tape& tape);
  std::vector<Node> nodes_;
};

/// Populates gradients of every requires_grad leaf reachable from `loss`.
/// Leaf gradients accumulate across calls; intermediate gradients are reset.
void backward(const Tensor& loss, Tape& tape);

// ---- operators -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[R×in] · w[in×out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// Column-wise max over rows; ties go to the lowest row.
Tensor max_reduce_rows(const Tensor& x);
/// Column-wise max over consecutive row segments [offsets[s], offsets[s+1]).
/// An empty segment yields a zero row.
Tensor segment_max(const Tensor& x, std::span<const std::size_t> offsets);
Tensor softmax_last(const Tensor& x);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
/// out[i] = sum_j weights[i*k + j] * x[index[i*k + j]]  (weights are constants)
Tensor weighted_gather(const Tensor& x, std::span<const std::size_t> index,
                       std::span<const double> weights, std::size_t k);
/// x[R×C] with each row multiplied by s[R×1].
Tensor mul_col(const Tensor& x, const Tensor& s);
/// Mean negative log-likelihood over labels != ignore_index. Zero if none remain.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels,
                     std::optional<int> ignore_index = std::nullopt);

}  // namespace asap::ad
