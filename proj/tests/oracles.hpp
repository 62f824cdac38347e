#pragma once

// Test-side oracles: central differences and small numeric helpers, written
// independently of the library's derivative code.

#include "nisk/diffcore.hpp"

#include <cmath>
#include <functional>

namespace oracle {

using nisk::Matrix;
using nisk::Vector;

inline Vector central_grad(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline Matrix central_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h) {
  const Eigen::Index m = f(x).size();
  Matrix j(m, x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    j.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

// max |a - b| / max(1, |a|, |b|)
inline double rel_err(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double d = std::abs(a(i, j) - b(i, j));
      worst = std::max(worst, d / std::max({1.0, std::abs(a(i, j)), std::abs(b(i, j))}));
    }
  return worst;
}

// Scalar function of the parameter vector of `net`.
inline Vector param_grad(const nisk::Mlp& net, const std::function<double(const nisk::Mlp&)>& f, double h) {
  nisk::Mlp probe = net;
  const Vector p0 = net.params();
  return central_grad(
      [&](const Vector& p) {
        probe.set_params(p);
        return f(probe);
      },
      p0, h);
}

// Straight-line forward pass with explicit loops.
inline double act(const nisk::Activation& a, double v) {
  switch (a.kind) {
    case nisk::Activation::Kind::Tanh: return std::tanh(v);
    case nisk::Activation::Kind::Gelu: return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    case nisk::Activation::Kind::LeakyRelu: return v < 0 ? a.slope * v : v;
  }
  return v;
}

inline Vector loop_forward(const nisk::Mlp& net, const Vector& x) {
  std::vector<double> a(x.data(), x.data() + x.size());
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const Matrix& w = net.weight(l);
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double acc = net.bias(l)(i);
      for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(i, j) * a[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(i)] = l + 1 == net.num_layers() ? acc : act(net.activation(), acc);
    }
    a = z;
  }
  return Eigen::Map<Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
}

inline nisk::Mlp random_net(std::vector<int> dims, nisk::Activation act, std::uint64_t seed, double bias_scale = 0.3) {
  nisk::Mlp net = nisk::Mlp::glorot(std::move(dims), act, seed);
  nisk::Rng rng(seed, 99);
  for (std::size_t l = 0; l < net.num_layers(); ++l)
    for (Eigen::Index i = 0; i < net.bias(l).size(); ++i) net.bias(l)(i) = bias_scale * rng.normal();
  return net;
}

}  // namespace oracle
