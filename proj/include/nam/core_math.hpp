#ifndef NAM_CORE_MATH_HPP
#define NAM_CORE_MATH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "nam/errors.hpp"

namespace nam {

using Vec = std::vector<double>;
using Mask = std::vector<bool>;

// Dense row-major matrix. A vector is a Mat with cols == 1.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  std::size_t size() const { return a.size(); }
};

// A learnable tensor with a same-shape gradient accumulator.
struct ParamTensor {
  Mat value;
  Mat grad;

  ParamTensor() = default;
  ParamTensor(std::size_t r, std::size_t c) : value(r, c), grad(r, c) {}

  void zero_grad() { std::fill(grad.a.begin(), grad.a.end(), 0.0); }
};

struct AdamState {
  Mat m, v;
  long step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(std::size_t r, std::size_t c, double lr_ = 1e-3)
      : m(r, c), v(r, c), lr(lr_) {}
};

// Standard Adam update with bias correction. Leaves param.grad untouched;
// the caller zeroes gradients at minibatch boundaries.
inline void adam_step(ParamTensor& param, AdamState& state) {
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < param.value.size(); ++k) {
    const double g = param.grad.a[k];
    state.m.a[k] = state.beta1 * state.m.a[k] + (1.0 - state.beta1) * g;
    state.v.a[k] = state.beta2 * state.v.a[k] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m.a[k] / bc1;
    const double v_hat = state.v.a[k] / bc2;
    param.value.a[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

inline Vec linear_forward(const Mat& W, const Vec& b, const Vec& x) {
  if (W.cols != x.size() || W.rows != b.size())
    throw ShapeError("linear_forward: W is " + std::to_string(W.rows) + "x" +
                     std::to_string(W.cols) + ", x has " +
                     std::to_string(x.size()) + ", b has " +
                     std::to_string(b.size()));
  Vec out(W.rows, 0.0);
  for (std::size_t r = 0; r < W.rows; ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < W.cols; ++c) acc += W(r, c) * x[c];
    out[r] = acc;
  }
  return out;
}

// dW = upstream ⊗ x, db = upstream, dx = Wᵀ·upstream. Accumulates into
// dW/db, returns dx.
inline Vec linear_backward(const Mat& W, const Vec& x, const Vec& upstream,
                           Mat& dW, Vec& db) {
  if (W.cols != x.size() || W.rows != upstream.size() ||
      dW.rows != W.rows || dW.cols != W.cols || db.size() != W.rows)
    throw ShapeError("linear_backward: inconsistent shapes");
  Vec dx(W.cols, 0.0);
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double u = upstream[r];
    db[r] += u;
    for (std::size_t c = 0; c < W.cols; ++c) {
      dW(r, c) += u * x[c];
      dx[c] += W(r, c) * u;
    }
  }
  return dx;
}

inline Vec relu_forward(const Vec& x) {
  Vec out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] > 0.0 ? x[k] : 0.0;
  return out;
}

// Subgradient 0 at x == 0.
inline Vec relu_backward(const Vec& x, const Vec& upstream) {
  Vec out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k)
    out[k] = x[k] > 0.0 ? upstream[k] : 0.0;
  return out;
}

constexpr double kNormEps = 1e-12;

inline double dot(const Vec& u, const Vec& v) {
  double acc = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) acc += u[k] * v[k];
  return acc;
}

inline double norm(const Vec& u) { return std::sqrt(dot(u, u)); }

inline double cosine_forward(const Vec& u, const Vec& v) {
  if (u.size() != v.size())
    throw ShapeError("cosine_forward: length mismatch " +
                     std::to_string(u.size()) + " vs " +
                     std::to_string(v.size()));
  const double nu = std::max(norm(u), kNormEps);
  const double nv = std::max(norm(v), kNormEps);
  return dot(u, v) / (nu * nv);
}

// Accumulates du, dv. The ε-guard on each norm keeps gradients finite for
// (near-)zero vectors.
inline void cosine_backward(const Vec& u, const Vec& v, double upstream,
                            Vec& du, Vec& dv) {
  const double nu = std::max(norm(u), kNormEps);
  const double nv = std::max(norm(v), kNormEps);
  const double uv = dot(u, v);
  const double inv = 1.0 / (nu * nv);
  for (std::size_t k = 0; k < u.size(); ++k) {
    du[k] += upstream * (v[k] * inv - uv * u[k] / (nu * nu * nu * nv));
    dv[k] += upstream * (u[k] * inv - uv * v[k] / (nu * nv * nv * nv));
  }
}

// Softmax over unmasked entries only; masked entries are exactly 0.
// Max-subtraction is computed over the unmasked support.
inline Vec masked_softmax(const Vec& logits, const Mask& mask) {
  if (logits.size() != mask.size())
    throw ShapeError("masked_softmax: logits/mask length mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (mask[k]) mx = std::max(mx, logits[k]);
  if (!std::isfinite(mx))
    throw NoActiveViewError("masked_softmax: all entries masked");
  Vec out(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (mask[k]) {
      out[k] = std::exp(logits[k] - mx);
      z += out[k];
    }
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (mask[k]) out[k] /= z;
  return out;
}

inline double logsumexp(const Vec& values) {
  if (values.empty()) throw DomainError("logsumexp: empty input");
  const double mx = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

// Finite-difference gradient checker: compares an analytic gradient against
// central differences of f at `point`.
struct GradCheckReport {
  std::vector<double> rel_err;
  double max_rel_err = 0.0;
  std::vector<std::size_t> failed;

  bool ok() const { return failed.empty(); }
};

inline GradCheckReport grad_check(const std::function<double(const Vec&)>& f,
                                  const Vec& point, const Vec& analytic,
                                  double h, double tol) {
  if (h <= 0.0) throw DomainError("grad_check: h must be positive");
  GradCheckReport report;
  report.rel_err.resize(point.size());
  Vec p = point;
  for (std::size_t k = 0; k < point.size(); ++k) {
    p[k] = point[k] + h;
    const double fp = f(p);
    p[k] = point[k] - h;
    const double fm = f(p);
    p[k] = point[k];
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({1.0, std::fabs(numeric), std::fabs(analytic[k])});
    const double err = std::fabs(numeric - analytic[k]) / denom;
    report.rel_err[k] = err;
    report.max_rel_err = std::max(report.max_rel_err, err);
    if (err > tol) report.failed.push_back(k);
  }
  return report;
}

}  // namespace nam

#endif  // NAM_CORE_MATH_HPP
