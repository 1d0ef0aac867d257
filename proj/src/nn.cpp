#include "asap/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "asap/errors.hpp"

namespace asap::ad {

namespace {

constexpr char kCheckpointMagic[] = "ASAPCKPT1";
constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > bytes_.size()) throw ParseError(std::string("truncated ") + what, pos_);
    char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) throw ParseError(std::string("truncated ") + what, pos_);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string layer_name(const std::string& prefix, std::size_t layer, const char* part) {
  return prefix + ".layer" + std::to_string(layer) + "." + part;
}

}  // namespace

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += widths[i] * widths[i + 1] + widths[i + 1];
  return n;
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ConfigError("MLP needs an input width and at least one layer");
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("MLP widths must be >= 1");
  }
}

// ---- ParamStore -----------------------------------------------------------

void ParamStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.data()->requires_grad = true;
  params_.emplace(name, std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("missing parameter: " + name);
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("missing parameter: " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::string ParamStore::serialize() const {
  std::string out(kCheckpointMagic, kMagicLen);
  for (const auto& [name, t] : params_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) put_le<double>(out, v);
  }
  return out;
}

ParamStore ParamStore::deserialize(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_bytes(std::min(kMagicLen, bytes.size()), "magic") !=
      std::string(kCheckpointMagic, kMagicLen)) {
    throw ParseError("not an ASAP checkpoint (bad magic)", 0);
  }
  ParamStore store;
  while (!in.done()) {
    const std::size_t entry_start = in.pos();
    const auto name_len = in.get<std::uint32_t>("name length");
    std::string name = in.get_bytes(name_len, "parameter name");
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank > 8) throw ParseError("implausible rank " + std::to_string(rank), entry_start);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(in.get<std::uint32_t>("dimension"));
    const std::size_t n = shape_numel(shape);
    if (n * sizeof(double) > bytes.size()) {
      throw ParseError("parameter " + name + " larger than file", in.pos());
    }
    std::vector<double> values(n);
    for (auto& v : values) v = in.get<double>("parameter values");
    try {
      store.add(name, Tensor(std::move(shape), std::move(values), true));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), entry_start);
    }
  }
  return store;
}

void ParamStore::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string bytes = serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

void ParamStore::assign_values(const ParamStore& other) {
  for (auto& [name, t] : params_) {
    const Tensor& src = other.get(name);
    if (src.shape() != t.shape()) {
      throw ShapeError("parameter " + name + " has shape " + shape_str(src.shape()) +
                       ", expected " + shape_str(t.shape()));
    }
    std::copy(src.values().begin(), src.values().end(), t.mutable_values().begin());
  }
}

// ---- MLP ------------------------------------------------------------------

void init_mlp(ParamStore& params, const MlpSpec& spec, const std::string& prefix,
              std::mt19937_64& rng) {
  spec.validate();
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.widths[l], fan_out = spec.widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = dist(rng);
    params.add(layer_name(prefix, l, "weight"), Tensor({fan_in, fan_out}, std::move(w), true));
    params.add(layer_name(prefix, l, "bias"), Tensor::zeros({fan_out}, true));
  }
}

Tensor mlp_forward(const MlpSpec& spec, const ParamStore& params, const std::string& prefix,
                   const Tensor& x) {
  spec.validate();
  if (x.cols() != spec.input_width()) {
    throw ShapeError(prefix + ": input width " + std::to_string(x.cols()) + " but MLP expects " +
                     std::to_string(spec.input_width()));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const Tensor& w = params.get(layer_name(prefix, l, "weight"));
    const Tensor& b = params.get(layer_name(prefix, l, "bias"));
    if (w.shape() != Shape{spec.widths[l], spec.widths[l + 1]}) {
      throw ShapeError(layer_name(prefix, l, "weight") + " has shape " + shape_str(w.shape()));
    }
    h = linear(h, w, b);
    const bool last = l + 1 == spec.num_layers();
    if (!last || spec.final_activation == Activation::kRelu) h = relu(h);
  }
  return h;
}

// ---- Adam -----------------------------------------------------------------

void Adam::step(ParamStore& params) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw std::logic_error("adam: parameter " + name + " has no gradient");
  }
  ++step_;
  const auto& o = options_;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
  for (auto& [name, t] : params) {
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(t.numel(), 0.0);
      st.v.assign(t.numel(), 0.0);
    }
    const auto& g = t.data()->grad;
    auto w = t.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = o.beta1 * st.m[i] + (1.0 - o.beta1) * g[i];
      st.v[i] = o.beta2 * st.v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double m_hat = st.m[i] / c1;
      const double v_hat = st.v[i] / c2;
      w[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

}  // namespace asap::ad
