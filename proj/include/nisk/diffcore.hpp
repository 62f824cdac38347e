#pragma once

// Feed-forward networks with hand-written derivative passes:
//   * forward / reverse (VJP) for parameter and input gradients,
//   * forward tangent (JVP) and its reverse for input-divergence terms.
// Batches are stored column-wise: a D x B matrix holds B samples.

#include "nisk/core.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace nisk {

struct Activation {
  enum class Kind : std::uint32_t { LeakyRelu = 0, Gelu = 1, Tanh = 2 };

  Kind kind = Kind::Gelu;
  double slope = 0.0;  // only meaningful for LeakyRelu

  static Activation leaky_relu(double slope = 0.2) { return {Kind::LeakyRelu, slope}; }
  static Activation gelu() { return {Kind::Gelu, 0.0}; }
  static Activation tanh() { return {Kind::Tanh, 0.0}; }

  // Everywhere-differentiable activations are required wherever second
  // derivatives of the network are taken.
  bool smooth() const { return kind != Kind::LeakyRelu; }

  std::string name() const {
    switch (kind) {
      case Kind::LeakyRelu: return "leaky_relu";
      case Kind::Gelu: return "gelu";
      case Kind::Tanh: return "tanh";
    }
    return "?";
  }

  double value(double x) const {
    switch (kind) {
      case Kind::LeakyRelu: return x < 0.0 ? slope * x : x;
      case Kind::Gelu: return x * normal_cdf(x);
      case Kind::Tanh: return std::tanh(x);
    }
    return x;
  }

  double derivative(double x) const {
    switch (kind) {
      case Kind::LeakyRelu: return x < 0.0 ? slope : 1.0;
      case Kind::Gelu: return normal_cdf(x) + x * normal_pdf(x);
      case Kind::Tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      }
    }
    return 1.0;
  }

  double second_derivative(double x) const {
    switch (kind) {
      case Kind::LeakyRelu: return 0.0;
      case Kind::Gelu: return normal_pdf(x) * (2.0 - x * x);
      case Kind::Tanh: {
        const double t = std::tanh(x);
        return -2.0 * t * (1.0 - t * t);
      }
    }
    return 0.0;
  }

  // value, first and second derivative sharing the transcendental calls
  void eval_all(double x, double& v, double& d1, double& d2) const {
    switch (kind) {
      case Kind::LeakyRelu:
        v = x < 0.0 ? slope * x : x;
        d1 = x < 0.0 ? slope : 1.0;
        d2 = 0.0;
        return;
      case Kind::Gelu: {
        const double cdf = normal_cdf(x);
        const double pdf = normal_pdf(x);
        v = x * cdf;
        d1 = cdf + x * pdf;
        d2 = pdf * (2.0 - x * x);
        return;
      }
      case Kind::Tanh: {
        const double t = std::tanh(x);
        v = t;
        d1 = 1.0 - t * t;
        d2 = -2.0 * t * d1;
        return;
      }
    }
  }

  bool operator==(const Activation&) const = default;

 private:
  static double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
  static double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  }
};

// Fully connected network; `activation` on hidden layers, identity on the output.
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<int> layer_dims, Activation activation)
      : dims_(std::move(layer_dims)), activation_(activation) {
    require(dims_.size() >= 2, "Mlp needs at least input and output dims");
    for (int d : dims_) require(d > 0, "Mlp layer dims must be positive");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      weights_.push_back(Matrix::Zero(dims_[l + 1], dims_[l]));
      biases_.push_back(Vector::Zero(dims_[l + 1]));
    }
  }

  // Glorot-uniform weights, zero biases.
  static Mlp glorot(std::vector<int> layer_dims, Activation activation, std::uint64_t seed) {
    Mlp net(std::move(layer_dims), activation);
    Rng rng(seed, 0x6E6574);
    for (auto& w : net.weights_) {
      const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-limit, limit);
    }
    return net;
  }

  const std::vector<int>& layer_dims() const { return dims_; }
  const Activation& activation() const { return activation_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t num_layers() const { return weights_.size(); }

  Matrix& weight(std::size_t l) { return weights_.at(l); }
  const Matrix& weight(std::size_t l) const { return weights_.at(l); }
  Vector& bias(std::size_t l) { return biases_.at(l); }
  const Vector& bias(std::size_t l) const { return biases_.at(l); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
      n += static_cast<std::size_t>(dims_[l + 1]) * dims_[l] + dims_[l + 1];
    return n;
  }

  // Layout per layer: W row-major, then b.
  Vector params() const {
    Vector out(static_cast<Eigen::Index>(param_count()));
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      const Matrix& w = weights_[l];
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) out(k++) = w(i, j);
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) out(k++) = biases_[l](i);
    }
    return out;
  }

  void set_params(const Vector& p) {
    require_shape(p.size() == static_cast<Eigen::Index>(param_count()),
                  "parameter vector length does not match network");
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Matrix& w = weights_[l];
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = p(k++);
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) biases_[l](i) = p(k++);
    }
  }

  bool operator==(const Mlp&) const = default;

  Matrix activate(const Matrix& z) const {
    return z.unaryExpr([this](double v) { return activation_.value(v); });
  }
  Matrix activate_d1(const Matrix& z) const {
    return z.unaryExpr([this](double v) { return activation_.derivative(v); });
  }
  Matrix activate_d2(const Matrix& z) const {
    return z.unaryExpr([this](double v) { return activation_.second_derivative(v); });
  }

 private:
  std::vector<int> dims_;
  Activation activation_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

// Flattens per-layer gradients into the Mlp::params() layout.
inline ParamGrad flatten_grads(const Mlp& net, const std::vector<Matrix>& gw,
                               const std::vector<Vector>& gb) {
  ParamGrad out(static_cast<Eigen::Index>(net.param_count()));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < gw.size(); ++l) {
    for (Eigen::Index i = 0; i < gw[l].rows(); ++i)
      for (Eigen::Index j = 0; j < gw[l].cols(); ++j) out(k++) = gw[l](i, j);
    for (Eigen::Index i = 0; i < gb[l].size(); ++i) out(k++) = gb[l](i);
  }
  return out;
}

struct ForwardTape {
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l
  std::vector<Matrix> pre;     // pre-activations of layer l
  std::vector<Matrix> d1, d2;  // activation derivatives at pre (hidden layers), when recorded
  Matrix output;
};

// with_derivs also records act'(pre) and act''(pre) for reuse by reverse passes.
inline ForwardTape forward_tape(const Mlp& net, const Matrix& x, bool with_derivs = false) {
  require_shape(x.rows() == net.input_dim(), "input-shape error: expected " +
                                                 std::to_string(net.input_dim()) + " rows, got " +
                                                 std::to_string(x.rows()));
  ForwardTape tape;
  Matrix a = x;
  const std::size_t last = net.num_layers() - 1;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Matrix z = net.weight(l) * a;
    z.colwise() += net.bias(l);
    tape.inputs.push_back(std::move(a));
    if (l == last) {
      a = z;
    } else if (with_derivs) {
      a.resize(z.rows(), z.cols());
      Matrix g1(z.rows(), z.cols()), g2(z.rows(), z.cols());
      const Activation& act = net.activation();
      for (Eigen::Index k = 0; k < z.size(); ++k) act.eval_all(z(k), a(k), g1(k), g2(k));
      tape.d1.push_back(std::move(g1));
      tape.d2.push_back(std::move(g2));
    } else {
      a = net.activate(z);
    }
    tape.pre.push_back(std::move(z));
  }
  tape.output = std::move(a);
  return tape;
}

inline Matrix mlp_forward(const Mlp& net, const Matrix& x) { return forward_tape(net, x).output; }

inline Vector mlp_forward(const Mlp& net, const Vector& x) {
  require(x.allFinite(), "mlp_forward: non-finite input");
  return forward_tape(net, Matrix(x)).output.col(0);
}

struct VjpResult {
  ParamGrad params;  // summed over batch columns; empty when not requested
  Matrix inputs;     // per-sample input cotangents
};

// Reverse pass of a recorded forward: cotangent U (d_out x B).
inline VjpResult vjp(const Mlp& net, const ForwardTape& tape, const Matrix& cotangent,
                     bool want_params = true) {
  require_shape(cotangent.rows() == net.output_dim() && cotangent.cols() == tape.output.cols(),
                "cotangent shape does not match network output");
  const std::size_t n_layers = net.num_layers();
  std::vector<Matrix> gw(want_params ? n_layers : 0);
  std::vector<Vector> gb(want_params ? n_layers : 0);
  Matrix g = cotangent;
  for (std::size_t k = n_layers; k-- > 0;) {
    if (k != n_layers - 1)
      g = tape.d1.empty() ? g.cwiseProduct(net.activate_d1(tape.pre[k])) : g.cwiseProduct(tape.d1[k]);
    if (want_params) {
      gw[k] = g * tape.inputs[k].transpose();
      gb[k] = g.rowwise().sum();
    }
    g = net.weight(k).transpose() * g;
  }
  VjpResult out;
  if (want_params) out.params = flatten_grads(net, gw, gb);
  out.inputs = std::move(g);
  return out;
}

inline VjpResult vjp(const Mlp& net, const Matrix& x, const Matrix& cotangent,
                     bool want_params = true) {
  return vjp(net, forward_tape(net, x), cotangent, want_params);
}

// u^T (d net(x) / d params) for a single input.
inline ParamGrad vjp_params(const Mlp& net, const Vector& x, const Vector& cotangent) {
  require_shape(cotangent.size() == net.output_dim(), "cotangent length must equal d_out");
  return vjp(net, Matrix(x), Matrix(cotangent)).params;
}

// Rows are per-output input gradients.
inline Matrix jacobian_input(const Mlp& net, const Vector& x) {
  require(x.allFinite(), "jacobian_input: non-finite input");
  const ForwardTape tape = forward_tape(net, Matrix(x), true);
  Matrix jac(net.output_dim(), net.input_dim());
  for (int i = 0; i < net.output_dim(); ++i) {
    Matrix e = Matrix::Zero(net.output_dim(), 1);
    e(i, 0) = 1.0;
    jac.row(i) = vjp(net, tape, e, false).inputs.col(0).transpose();
  }
  return jac;
}

// Per-sample Jacobians for a batch, computed with one reverse pass per output.
inline std::vector<Matrix> jacobian_input_batch(const Mlp& net, const ForwardTape& tape) {
  const Eigen::Index batch = tape.output.cols();
  std::vector<Matrix> jacs(static_cast<std::size_t>(batch),
                           Matrix(net.output_dim(), net.input_dim()));
  for (int i = 0; i < net.output_dim(); ++i) {
    Matrix e = Matrix::Zero(net.output_dim(), batch);
    e.row(i).setOnes();
    const Matrix rows = vjp(net, tape, e, false).inputs;
    for (Eigen::Index b = 0; b < batch; ++b) jacs[static_cast<std::size_t>(b)].row(i) = rows.col(b).transpose();
  }
  return jacs;
}

inline std::vector<Matrix> jacobian_input_batch(const Mlp& net, const Matrix& x) {
  return jacobian_input_batch(net, forward_tape(net, x, true));
}

// Forward pass carrying a tangent (directional derivative) alongside the value.
// The primal tape can be shared between several directions at the same inputs.
struct TangentTape {
  std::shared_ptr<const ForwardTape> primal;
  std::vector<Matrix> input_tangents, pre_tangents;
  Matrix output, output_tangent;
};

inline std::shared_ptr<const ForwardTape> primal_tape(const Mlp& net, const Matrix& x) {
  return std::make_shared<const ForwardTape>(forward_tape(net, x, true));
}

inline TangentTape forward_tangent(const Mlp& net, std::shared_ptr<const ForwardTape> primal,
                                   const Matrix& direction) {
  const Matrix& x = primal->inputs.front();
  require_shape(direction.rows() == x.rows() && direction.cols() == x.cols(),
                "tangent direction must match input shape");
  require(primal->d1.size() + 1 == net.num_layers(), "primal tape lacks activation derivatives");
  TangentTape tape;
  Matrix da = direction;
  const std::size_t last = net.num_layers() - 1;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Matrix dz = net.weight(l) * da;
    tape.input_tangents.push_back(std::move(da));
    da = l == last ? dz : Matrix(primal->d1[l].cwiseProduct(dz));
    tape.pre_tangents.push_back(std::move(dz));
  }
  tape.output = primal->output;
  tape.output_tangent = std::move(da);
  tape.primal = std::move(primal);
  return tape;
}

inline TangentTape forward_tangent(const Mlp& net, const Matrix& x, const Matrix& direction) {
  require_shape(x.rows() == net.input_dim(), "input-shape error in forward_tangent");
  return forward_tangent(net, primal_tape(net, x), direction);
}

struct TangentVjp {
  ParamGrad params;  // summed over batch; empty when not requested
  Matrix inputs;     // cotangent wrt x
  Matrix directions; // cotangent wrt the tangent direction
};

// Reverse pass through forward_tangent: cotangents on the value and the tangent.
inline TangentVjp vjp_tangent(const Mlp& net, const TangentTape& tape, const Matrix& value_cot,
                              const Matrix& tangent_cot, bool want_params = true) {
  require_shape(value_cot.rows() == net.output_dim() && value_cot.cols() == tape.output.cols(),
                "value cotangent shape mismatch");
  require_shape(tangent_cot.rows() == net.output_dim() && tangent_cot.cols() == tape.output.cols(),
                "tangent cotangent shape mismatch");
  const std::size_t n_layers = net.num_layers();
  std::vector<Matrix> gw(want_params ? n_layers : 0);
  std::vector<Vector> gb(want_params ? n_layers : 0);
  Matrix g = value_cot;
  Matrix gd = tangent_cot;
  const ForwardTape& p = *tape.primal;
  for (std::size_t k = n_layers; k-- > 0;) {
    if (k != n_layers - 1) {
      const Matrix& d1 = p.d1[k];
      g = g.cwiseProduct(d1) + gd.cwiseProduct(p.d2[k]).cwiseProduct(tape.pre_tangents[k]);
      gd = gd.cwiseProduct(d1);
    }
    if (want_params) {
      gw[k] = g * p.inputs[k].transpose() + gd * tape.input_tangents[k].transpose();
      gb[k] = g.rowwise().sum();
    }
    g = net.weight(k).transpose() * g;
    gd = net.weight(k).transpose() * gd;
  }
  TangentVjp out;
  if (want_params) out.params = flatten_grads(net, gw, gb);
  out.inputs = std::move(g);
  out.directions = std::move(gd);
  return out;
}

struct DivergenceMode {
  enum class Kind { Exact, Hutchinson };
  Kind kind = Kind::Exact;
  int n_probes = 1;
  std::uint64_t seed = 0;

  static DivergenceMode exact() { return {}; }
  static DivergenceMode hutchinson(int n_probes, std::uint64_t seed) {
    return {Kind::Hutchinson, n_probes, seed};
  }
};

// trace(d net / d x); Hutchinson uses Rademacher probes v with v^T J v.
inline double divergence_input(const Mlp& net, const Vector& x,
                               const DivergenceMode& mode = DivergenceMode::exact()) {
  require_shape(net.input_dim() == net.output_dim(), "divergence needs a square network");
  require(x.allFinite(), "divergence_input: non-finite input");
  if (mode.kind == DivergenceMode::Kind::Exact) return jacobian_input(net, x).trace();
  require(mode.n_probes >= 1, "Hutchinson divergence needs n_probes >= 1");
  Rng rng(mode.seed, 0x687574);
  const Matrix probes = rng.rademacher_matrix(x.size(), mode.n_probes);
  const Matrix xs = x.replicate(1, mode.n_probes);
  const TangentTape tape = forward_tangent(net, xs, probes);
  return probes.cwiseProduct(tape.output_tangent).sum() / mode.n_probes;
}

// Worst mixed relative error |a - n| / max(1, |a|, |n|) between analytic and
// central-difference gradients of the readout r(x) = sum_i out_i(x).
inline double finite_diff_gradcheck(const Mlp& net, const Vector& x, double step) {
  require(step > 0.0 && step <= 1e-2, "gradcheck step must lie in (0, 1e-2]");
  const auto readout = [](const Mlp& n, const Vector& in) { return mlp_forward(n, in).sum(); };
  const auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
  };
  const Vector ones = Vector::Ones(net.output_dim());
  const VjpResult analytic = vjp(net, Matrix(x), Matrix(ones));

  double worst = 0.0;
  Mlp probe = net;
  Vector p = net.params();
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double keep = p(k);
    p(k) = keep + step;
    probe.set_params(p);
    const double up = readout(probe, x);
    p(k) = keep - step;
    probe.set_params(p);
    const double down = readout(probe, x);
    p(k) = keep;
    worst = std::max(worst, rel(analytic.params(k), (up - down) / (2.0 * step)));
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += step;
    xm(i) -= step;
    const double numeric = (readout(net, xp) - readout(net, xm)) / (2.0 * step);
    worst = std::max(worst, rel(analytic.inputs(i, 0), numeric));
  }
  return worst;
}

}  // namespace nisk
