#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "asap/autodiff.hpp"

namespace asap::ad {

enum class Activation { kNone, kRelu };

/// Shape of a multi-layer perceptron: widths = {in, hidden..., out}.
/// Hidden layers are always followed by ReLU; the last layer by `final_activation`.
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation final_activation = Activation::kNone;

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t num_layers() const { return widths.size() - 1; }
  std::size_t param_count() const;
  void validate() const;
};

/// Named trainable tensors, ordered by name.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  /// Binary checkpoint: "ASAPCKPT1", then per parameter (name order):
  /// u32 name length, name bytes, u32 rank, u32 dims..., f64 values (all little-endian).
  std::string serialize() const;
  static ParamStore deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

  /// Copies values from `other` for every matching name; shapes must agree.
  void assign_values(const ParamStore& other);

 private:
  std::map<std::string, Tensor> params_;
};

/// Glorot-uniform weights, zero biases. Names are `<prefix>.layer<i>.weight|bias`.
void init_mlp(ParamStore& params, const MlpSpec& spec, const std::string& prefix,
              std::mt19937_64& rng);

Tensor mlp_forward(const MlpSpec& spec, const ParamStore& params, const std::string& prefix,
                   const Tensor& x);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// Applies one bias-corrected update to every parameter. Throws if a
  /// parameter has no gradient slot at all (backward never reached it).
  void step(ParamStore& params);
  std::int64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamOptions options_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace asap::ad
