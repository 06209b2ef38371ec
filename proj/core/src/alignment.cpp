#include "irbridge/alignment.hpp"

#include <algorithm>
#include <cmath>

#include "irbridge/error.hpp"

namespace irbridge {
namespace {

template <typename T>
void check_batches(const Matrix<T>& s, const Matrix<T>& v) {
  if (s.rows() == 0 || v.rows() == 0) throw Error(ErrorCode::kEmptyBatch, "MMD needs both batches non-empty");
  if (s.cols() != v.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature dims " + std::to_string(s.cols()) + " vs " + std::to_string(v.cols()));
  }
}

// Fixed-order scalar loops so that k(x, y) is bit-identical to k(y, x) and
// independent of where a row sits in its batch.
template <typename T>
T dot(const T* x, const T* y, Eigen::Index d) {
  T acc = 0;
  for (Eigen::Index k = 0; k < d; ++k) acc += x[k] * y[k];
  return acc;
}

template <typename T>
std::vector<T> squared_norms(const Matrix<T>& a) {
  std::vector<T> out(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) out[static_cast<std::size_t>(i)] = dot(a.row(i).data(), a.row(i).data(), a.cols());
  return out;
}

// Sum of the Gram entries in ascending order: exact under row permutation
// and under swapping the two batches.
template <typename T>
T canonical_sum(const Matrix<T>& k) {
  std::vector<T> vals(k.data(), k.data() + k.size());
  std::sort(vals.begin(), vals.end());
  T acc = 0;
  for (T x : vals) acc += x;
  return acc;
}

// Row a: sum over rows y of other of d k(x_a, y) / d x_a, given the RBF
// factors e(a, j) = exp(-gamma |x_a - y_j|^2).
template <typename T>
Matrix<T> kernel_grad_rows(const Matrix<T>& x, const Matrix<T>& other, const Matrix<T>& rbf,
                           const KernelConfig& c) {
  const T alpha = static_cast<T>(c.alpha);
  const T coef = static_cast<T>(-2.0 * c.gamma * (1.0 - c.alpha));
  Matrix<T> out(x.rows(), x.cols());
  const Eigen::Matrix<T, 1, Eigen::Dynamic> other_sum = other.colwise().sum();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> rbf_sum = rbf.rowwise().sum();
  const Matrix<T> weighted = rbf * other;
  for (Eigen::Index a = 0; a < x.rows(); ++a) {
    out.row(a) = alpha * other_sum + coef * (rbf_sum(a) * x.row(a) - weighted.row(a));
  }
  return out;
}

template <typename T>
Matrix<T> rbf_factors(const Matrix<T>& a, const Matrix<T>& b, const KernelConfig& c) {
  const auto na = squared_norms(a);
  const auto nb = squared_norms(b);
  Matrix<T> out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      T dist = na[static_cast<std::size_t>(i)] + nb[static_cast<std::size_t>(j)] -
               T(2) * dot(a.row(i).data(), b.row(j).data(), a.cols());
      out(i, j) = std::exp(static_cast<T>(-c.gamma) * std::max(dist, T(0)));
    }
  }
  return out;
}

}  // namespace

void KernelConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw Error(ErrorCode::kInvalidArgument, "gamma must be positive");
}

template <typename T>
T composite_kernel(std::span<const T> x, std::span<const T> y, const KernelConfig& c) {
  if (x.size() != y.size()) throw Error(ErrorCode::kDimensionMismatch, "kernel arguments differ in length");
  T ip = 0;
  T dist = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    ip += x[k] * y[k];
    dist += (x[k] - y[k]) * (x[k] - y[k]);
  }
  return static_cast<T>(c.alpha) * ip +
         static_cast<T>(1.0 - c.alpha) * std::exp(static_cast<T>(-c.gamma) * dist);
}

template <typename T>
Matrix<T> composite_gram(const Matrix<T>& a, const Matrix<T>& b, const KernelConfig& c) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::kDimensionMismatch, "gram operands differ in width");
  const T alpha = static_cast<T>(c.alpha);
  const T beta = static_cast<T>(1.0 - c.alpha);
  Matrix<T> k = rbf_factors(a, b, c);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      k(i, j) = alpha * dot(a.row(i).data(), b.row(j).data(), a.cols()) + beta * k(i, j);
    }
  }
  return k;
}

template <typename T>
T mmd_loss(const FeatureBatch<T>& s, const FeatureBatch<T>& v, const KernelConfig& c) {
  check_batches(s, v);
  c.validate();
  const T ns = static_cast<T>(s.rows());
  const T nv = static_cast<T>(v.rows());
  const T ss = canonical_sum(composite_gram(s, s, c)) / (ns * ns);
  const T vv = canonical_sum(composite_gram(v, v, c)) / (nv * nv);
  const T sv = canonical_sum(composite_gram(s, v, c)) / (ns * nv);
  return (ss + vv) - T(2) * sv;
}

template <typename T>
MmdGradient<T> mmd_loss_with_grad(const FeatureBatch<T>& s, const FeatureBatch<T>& v,
                                  const KernelConfig& c) {
  MmdGradient<T> out;
  out.value = mmd_loss(s, v, c);
  const T ns = static_cast<T>(s.rows());
  const T nv = static_cast<T>(v.rows());
  const Matrix<T> e_ss = rbf_factors(s, s, c);
  const Matrix<T> e_vv = rbf_factors(v, v, c);
  const Matrix<T> e_sv = rbf_factors(s, v, c);
  const Matrix<T> e_vs = e_sv.transpose();
  out.d_s = (T(2) / (ns * ns)) * kernel_grad_rows(s, s, e_ss, c) -
            (T(2) / (ns * nv)) * kernel_grad_rows(s, v, e_sv, c);
  out.d_v = (T(2) / (nv * nv)) * kernel_grad_rows(v, v, e_vv, c) -
            (T(2) / (ns * nv)) * kernel_grad_rows(v, s, e_vs, c);
  return out;
}

template <typename T>
ad::Var mmd_loss(ad::Tape<T>& tape, ad::Var s, ad::Var v, const KernelConfig& c) {
  auto g = mmd_loss_with_grad<T>(tape.value(s), tape.value(v), c);
  Matrix<T> value(1, 1);
  value(0, 0) = g.value;
  return tape.custom(std::move(value), {s, v},
                     [d_s = std::move(g.d_s), d_v = std::move(g.d_v)](
                         const Matrix<T>& out_grad, std::vector<Matrix<T>>& in) {
                       const T w = out_grad(0, 0);
                       if (in[0].size() != 0) in[0] += w * d_s;
                       if (in[1].size() != 0) in[1] += w * d_v;
                     });
}

double mmd_oracle(const std::vector<std::vector<double>>& s,
                  const std::vector<std::vector<double>>& v, const KernelConfig& c) {
  if (s.empty() || v.empty()) throw Error(ErrorCode::kEmptyBatch, "MMD needs both batches non-empty");
  c.validate();
  const std::size_t d = s.front().size();
  for (const auto* batch : {&s, &v}) {
    for (const auto& row : *batch) {
      if (row.size() != d) throw Error(ErrorCode::kDimensionMismatch, "ragged feature rows");
    }
  }
  auto k = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double ip = 0.0;
    double dist = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      ip += x[t] * y[t];
      dist += (x[t] - y[t]) * (x[t] - y[t]);
    }
    return c.alpha * ip + (1.0 - c.alpha) * std::exp(-c.gamma * dist);
  };
  double ss = 0.0;
  for (const auto& a : s) for (const auto& b : s) ss += k(a, b);
  double vv = 0.0;
  for (const auto& a : v) for (const auto& b : v) vv += k(a, b);
  double sv = 0.0;
  for (const auto& a : s) for (const auto& b : v) sv += k(a, b);
  const double ns = static_cast<double>(s.size());
  const double nv = static_cast<double>(v.size());
  return ss / (ns * ns) + vv / (nv * nv) - 2.0 * sv / (ns * nv);
}

#define IRBRIDGE_INSTANTIATE(T)                                                                \
  template T composite_kernel<T>(std::span<const T>, std::span<const T>, const KernelConfig&); \
  template Matrix<T> composite_gram<T>(const Matrix<T>&, const Matrix<T>&, const KernelConfig&); \
  template T mmd_loss<T>(const FeatureBatch<T>&, const FeatureBatch<T>&, const KernelConfig&); \
  template MmdGradient<T> mmd_loss_with_grad<T>(const FeatureBatch<T>&, const FeatureBatch<T>&, \
                                                const KernelConfig&);                          \
  template ad::Var mmd_loss<T>(ad::Tape<T>&, ad::Var, ad::Var, const KernelConfig&);

IRBRIDGE_INSTANTIATE(float)
IRBRIDGE_INSTANTIATE(double)

#undef IRBRIDGE_INSTANTIATE

}  // namespace irbridge
