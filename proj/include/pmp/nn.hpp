#pragma once

#include "pmp/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace pmp {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  std::size_t count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }
};

// Named tensors with a mutation stamp. Activation tapes remember the stamp of
// the store they were recorded against so backward passes can detect when the
// parameters changed underneath them.
class ParamStore {
 public:
  ParamStore() : id_(next_id()) {}
  ParamStore(const ParamStore& o) : tensors_(o.tensors_), id_(next_id()) {}
  ParamStore& operator=(const ParamStore& o) {
    if (this != &o) {
      tensors_ = o.tensors_;
      id_ = next_id();
      version_ = 0;
    }
    return *this;
  }
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  void add(const std::string& name, std::vector<int> shape, std::vector<double> values) {
    if (tensors_.count(name)) throw ArgumentError("duplicate tensor name '" + name + "'");
    Tensor t{std::move(shape), std::move(values)};
    if (t.values.size() != t.count())
      throw ShapeError("tensor '" + name + "': " + std::to_string(t.values.size()) + " values for shape of " +
                       std::to_string(t.count()));
    tensors_.emplace(name, std::move(t));
    ++version_;
  }
  void add_zeros(const std::string& name, std::vector<int> shape) {
    Tensor t{shape, {}};
    add(name, std::move(shape), std::vector<double>(t.count(), 0.0));
  }

  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ArgumentError("no tensor named '" + name + "'");
    return it->second;
  }
  // Mutable access marks the store as modified.
  Tensor& mutable_at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ArgumentError("no tensor named '" + name + "'");
    ++version_;
    return it->second;
  }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::map<std::string, Tensor>& mutable_tensors() {
    ++version_;
    return tensors_;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : tensors_) out.push_back(k);
    return out;
  }
  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : tensors_) n += v.values.size();
    return n;
  }

  Eigen::Map<const RowMat> matrix(const std::string& name) const {
    const auto& t = at(name);
    if (t.shape.size() != 2) throw ShapeError("tensor '" + name + "' is not a matrix");
    return {t.values.data(), t.shape[0], t.shape[1]};
  }
  Eigen::Map<const Vec> vector(const std::string& name) const {
    const auto& t = at(name);
    return {t.values.data(), static_cast<Eigen::Index>(t.values.size())};
  }

  ParamStore zeros_like() const {
    ParamStore z;
    for (const auto& [k, v] : tensors_) z.add_zeros(k, v.shape);
    return z;
  }
  bool same_layout(const ParamStore& o) const {
    if (tensors_.size() != o.tensors_.size()) return false;
    for (const auto& [k, v] : tensors_) {
      auto it = o.tensors_.find(k);
      if (it == o.tensors_.end() || it->second.shape != v.shape) return false;
    }
    return true;
  }

  // Copies every tensor of `other` in under `prefix`.
  void merge(const std::string& prefix, const ParamStore& other) {
    for (const auto& [k, v] : other.tensors_) add(prefix + k, v.shape, v.values);
  }
  // Tensors whose names start with `prefix`, with the prefix stripped.
  ParamStore extract(const std::string& prefix) const {
    ParamStore out;
    for (const auto& [k, v] : tensors_)
      if (k.rfind(prefix, 0) == 0) out.add(k.substr(prefix.size()), v.shape, v.values);
    return out;
  }

  std::uint64_t id() const { return id_; }
  std::uint64_t version() const { return version_; }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  std::map<std::string, Tensor> tensors_;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

inline double squared_norm(const ParamStore& p) {
  double s = 0.0;
  for (const auto& [k, t] : p.tensors())
    for (double v : t.values) s += v * v;
  return s;
}

inline void scale_in_place(ParamStore& p, double factor) {
  for (auto& [k, t] : p.mutable_tensors())
    for (double& v : t.values) v *= factor;
}

// a += b, element-wise over matching layouts.
inline void accumulate(ParamStore& a, const ParamStore& b) {
  if (!a.same_layout(b)) throw ShapeError("accumulate: parameter layouts differ");
  for (auto& [k, t] : a.mutable_tensors()) {
    const auto& src = b.at(k).values;
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] += src[i];
  }
}

enum class Activation { tanh, elu, linear };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::elu: return "elu";
    case Activation::linear: return "linear";
  }
  return "?";
}
inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "elu") return Activation::elu;
  if (s == "linear") return Activation::linear;
  throw ArgumentError("unknown activation '" + s + "'");
}

struct MLPConfig {
  int in_dim = 1;
  int out_dim = 1;
  std::vector<int> hidden{256, 256};
  Activation activation = Activation::tanh;

  int layers() const { return static_cast<int>(hidden.size()) + 1; }
  int width(int i) const {  // input width of layer i; width(layers()) is the output width
    if (i == 0) return in_dim;
    if (i == layers()) return out_dim;
    return hidden[static_cast<std::size_t>(i) - 1];
  }
  void validate() const {
    if (in_dim < 1 || out_dim < 1) throw ArgumentError("MLP dims must be positive");
    for (int h : hidden)
      if (h < 1) throw ArgumentError("MLP hidden widths must be positive");
  }
};

struct Mlp {
  MLPConfig config;
  ParamStore params;
};

inline std::string weight_name(int layer) { return "l" + std::to_string(layer) + ".weight"; }
inline std::string bias_name(int layer) { return "l" + std::to_string(layer) + ".bias"; }

// Weights ~ N(0, 1/fan_in) from a seeded Mersenne twister, biases zero.
inline Mlp mlp_init(const MLPConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Mlp net{config, {}};
  for (int l = 0; l < config.layers(); ++l) {
    const int in = config.width(l), out = config.width(l + 1);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    std::vector<double> w(static_cast<std::size_t>(in) * out);
    for (double& v : w) v = dist(rng);
    net.params.add(weight_name(l), {in, out}, std::move(w));
    net.params.add_zeros(bias_name(l), {out});
  }
  return net;
}

namespace detail {

inline void activate(Activation a, Mat& x) {
  switch (a) {
    case Activation::tanh: x = x.array().tanh().matrix(); break;
    case Activation::elu: x = x.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); }); break;
    case Activation::linear: break;
  }
}

// d activation / d pre, expressed through the pre-activation and its output.
inline Mat activation_grad(Activation a, const Mat& pre, const Mat& post) {
  switch (a) {
    case Activation::tanh: return (1.0 - post.array().square()).matrix();
    case Activation::elu: return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); });
    case Activation::linear: return Mat::Ones(pre.rows(), pre.cols());
  }
  return {};
}

}  // namespace detail

// Activation record of one batched forward pass.
struct Tape {
  std::vector<Mat> inputs;  // input to each layer (batch x width)
  std::vector<Mat> pre;     // pre-activation of each hidden layer
  std::uint64_t store_id = 0;
  std::uint64_t store_version = 0;
};

struct ForwardResult {
  Mat y;  // batch x out_dim
  Tape tape;
};

// Batched forward pass; each row of x is one sample.
inline ForwardResult mlp_forward(const Mlp& net, const Mat& x) {
  const auto& cfg = net.config;
  require_shape(x.cols() == cfg.in_dim, "mlp_forward: input width " + std::to_string(x.cols()) +
                                            " != in_dim " + std::to_string(cfg.in_dim));
  ForwardResult r;
  r.tape.store_id = net.params.id();
  r.tape.store_version = net.params.version();
  Mat a = x;
  for (int l = 0; l < cfg.layers(); ++l) {
    r.tape.inputs.push_back(a);
    Mat z = a * net.params.matrix(weight_name(l));
    z.rowwise() += net.params.vector(bias_name(l)).transpose();
    if (l + 1 < cfg.layers()) {
      r.tape.pre.push_back(z);
      detail::activate(cfg.activation, z);
    }
    a = std::move(z);
  }
  r.y = std::move(a);
  return r;
}

inline Vec mlp_apply(const Mlp& net, const Vec& x) {
  require_shape(x.size() == net.config.in_dim, "mlp_apply: input length " + std::to_string(x.size()) +
                                                   " != in_dim " + std::to_string(net.config.in_dim));
  return mlp_forward(net, x.transpose()).y.row(0).transpose();
}

struct BackwardResult {
  ParamStore grads;
  Mat dx;  // gradient with respect to the input batch
};

// Reverse-mode gradients of sum(y .* dy) with respect to every parameter and the input.
inline BackwardResult mlp_backward(const Mlp& net, const Tape& tape, const Mat& dy) {
  const auto& cfg = net.config;
  if (tape.store_id != net.params.id() || tape.store_version != net.params.version())
    throw ContractError("mlp_backward: tape was recorded against different or since-modified parameters");
  if (static_cast<int>(tape.inputs.size()) != cfg.layers()) throw ContractError("mlp_backward: tape/config mismatch");
  const Eigen::Index batch = tape.inputs.front().rows();
  require_shape(dy.rows() == batch && dy.cols() == cfg.out_dim, "mlp_backward: dy shape mismatch");

  BackwardResult r;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> layer_grads(static_cast<std::size_t>(cfg.layers()));
  Mat delta = dy;
  for (int l = cfg.layers() - 1; l >= 0; --l) {
    if (l + 1 < cfg.layers()) {
      const Mat& pre = tape.pre[static_cast<std::size_t>(l)];
      const Mat& post = tape.inputs[static_cast<std::size_t>(l) + 1];
      delta = delta.cwiseProduct(detail::activation_grad(cfg.activation, pre, post));
    }
    const Mat& in = tape.inputs[static_cast<std::size_t>(l)];
    RowMat dw = in.transpose() * delta;
    Vec db = delta.colwise().sum().transpose();
    layer_grads[static_cast<std::size_t>(l)] = {std::vector<double>(dw.data(), dw.data() + dw.size()),
                                                std::vector<double>(db.data(), db.data() + db.size())};
    delta = delta * net.params.matrix(weight_name(l)).transpose();
  }
  for (int l = 0; l < cfg.layers(); ++l) {
    auto& [w, b] = layer_grads[static_cast<std::size_t>(l)];
    r.grads.add(weight_name(l), {cfg.width(l), cfg.width(l + 1)}, std::move(w));
    r.grads.add(bias_name(l), {cfg.width(l + 1)}, std::move(b));
  }
  r.dx = std::move(delta);
  return r;
}

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::int64_t step = 0;
  AdamConfig config;
  ParamStore m;
  ParamStore v;
};

inline OptimizerState make_optimizer(const ParamStore& params, AdamConfig config = {}) {
  return {0, config, params.zeros_like(), params.zeros_like()};
}

// Adaptive-moment update with bias correction.
inline void optimizer_step(ParamStore& params, const ParamStore& grads, OptimizerState& st) {
  if (!params.same_layout(grads) || !params.same_layout(st.m))
    throw ShapeError("optimizer_step: parameter/gradient/state layouts differ");
  ++st.step;
  const auto& c = st.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  auto& m = st.m.mutable_tensors();
  auto& v = st.v.mutable_tensors();
  for (auto& [name, t] : params.mutable_tensors()) {
    const auto& g = grads.at(name).values;
    auto& mt = m.at(name).values;
    auto& vt = v.at(name).values;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      mt[i] = c.beta1 * mt[i] + (1.0 - c.beta1) * g[i];
      vt[i] = c.beta2 * vt[i] + (1.0 - c.beta2) * g[i] * g[i];
      t.values[i] -= c.lr * (mt[i] / bc1) / (std::sqrt(vt[i] / bc2) + c.eps);
    }
  }
}

// Worst element-wise relative error between an analytic gradient and central
// differences of f. The denominator is floored at `abs_floor` so entries where
// both gradients vanish do not divide by zero.
inline double finite_diff_check(const std::function<double(const ParamStore&)>& f, const ParamStore& params,
                                const ParamStore& analytic, double h, double abs_floor = 1e-7) {
  if (!params.same_layout(analytic)) throw ShapeError("finite_diff_check: gradient layout differs");
  ParamStore probe = params;
  double worst = 0.0;
  for (const auto& name : params.names()) {
    const std::size_t n = params.at(name).values.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double orig = params.at(name).values[i];
      probe.mutable_at(name).values[i] = orig + h;
      const double fp = f(probe);
      probe.mutable_at(name).values[i] = orig - h;
      const double fm = f(probe);
      probe.mutable_at(name).values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.at(name).values[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// z = mu + exp(log_sigma) * noise.
inline Vec gaussian_reparam_sample(const Vec& mu, const Vec& log_sigma, const Vec& noise) {
  require_shape(mu.size() == log_sigma.size() && mu.size() == noise.size(),
                "gaussian_reparam_sample: length mismatch");
  return mu + (log_sigma.array().exp() * noise.array()).matrix();
}

}  // namespace pmp
