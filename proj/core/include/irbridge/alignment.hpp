#pragma once

// Composite linear + RBF kernel and the biased (V-statistic) MMD between two
// feature batches, with a closed-form gradient and a scalar reference
// implementation used by the tests.

#include <span>
#include <vector>

#include "irbridge/autodiff.hpp"

namespace irbridge {

struct KernelConfig {
  double alpha = 0.8;
  double gamma = 0.005;

  // Throws kInvalidArgument unless 0 <= alpha <= 1 and gamma > 0.
  void validate() const;
};

// Rows are samples.
template <typename T>
using FeatureBatch = Matrix<T>;

template <typename T>
T composite_kernel(std::span<const T> x, std::span<const T> y, const KernelConfig& c);

// K(i, j) = k(a_i, b_j).
template <typename T>
Matrix<T> composite_gram(const Matrix<T>& a, const Matrix<T>& b, const KernelConfig& c);

template <typename T>
T mmd_loss(const FeatureBatch<T>& s, const FeatureBatch<T>& v, const KernelConfig& c);

template <typename T>
struct MmdGradient {
  T value = 0;
  Matrix<T> d_s;  // d loss / d s, same shape as s
  Matrix<T> d_v;
};

template <typename T>
MmdGradient<T> mmd_loss_with_grad(const FeatureBatch<T>& s, const FeatureBatch<T>& v,
                                  const KernelConfig& c);

// Tape node for mmd_loss over two row-stacked feature batches.
template <typename T>
ad::Var mmd_loss(ad::Tape<T>& tape, ad::Var s, ad::Var v, const KernelConfig& c);

// Plain nested loops in double precision; rows are samples.
double mmd_oracle(const std::vector<std::vector<double>>& s,
                  const std::vector<std::vector<double>>& v, const KernelConfig& c);

}  // namespace irbridge
