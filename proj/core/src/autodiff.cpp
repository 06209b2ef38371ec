#include "irbridge/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "irbridge/error.hpp"

namespace irbridge::ad {
namespace {

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
  }
}

}  // namespace

template <typename T>
typename Tape<T>::Mat& Tape<T>::grad_ref(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    const Mat& v = n.ext ? *n.ext : n.value;
    n.grad = Mat::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

template <typename T>
Var Tape<T>::push(Mat value, std::initializer_list<Var> inputs,
                  std::function<void(Tape&)> backward) {
  bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](Var v) { return needs(v.id); });
  return push(std::move(value), needs_grad, std::move(backward));
}

template <typename T>
Var Tape<T>::push(Mat value, bool needs_grad, std::function<void(Tape&)> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::constant(Mat value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
Var Tape<T>::constant_ref(const Mat& value) {
  Node n;
  n.ext = &value;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::parameter(const Mat& value, Mat* grad_sink) {
  Node n;
  n.ext = &value;
  n.sink = grad_sink;
  n.needs_grad = grad_sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const typename Tape<T>::Mat& Tape<T>::value(Var v) const {
  return val(v.id);
}

template <typename T>
const typename Tape<T>::Mat& Tape<T>::grad(Var v) const {
  return nodes_[static_cast<std::size_t>(v.id)].grad;
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  if (val(a.id).cols() != val(b.id).rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "matmul inner dimensions");
  }
  const int out = static_cast<int>(nodes_.size());
  Mat v = val(a.id) * val(b.id);
  return push(std::move(v), {a, b}, [=](Tape& t) {
    const Mat& g = t.out_grad(out);
    if (t.needs(a.id)) t.grad_ref(a.id).noalias() += g * t.val(b.id).transpose();
    if (t.needs(b.id)) t.grad_ref(b.id).noalias() += t.val(a.id).transpose() * g;
  });
}

template <typename T>
Var Tape<T>::matmul_nt(Var a, Var b) {
  if (val(a.id).cols() != val(b.id).cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "matmul_nt inner dimensions");
  }
  const int out = static_cast<int>(nodes_.size());
  Mat v = val(a.id) * val(b.id).transpose();
  return push(std::move(v), {a, b}, [=](Tape& t) {
    const Mat& g = t.out_grad(out);
    if (t.needs(a.id)) t.grad_ref(a.id).noalias() += g * t.val(b.id);
    if (t.needs(b.id)) t.grad_ref(b.id).noalias() += g.transpose() * t.val(a.id);
  });
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "add");
  const int out = static_cast<int>(nodes_.size());
  Mat v = val(a.id) + val(b.id);
  return push(std::move(v), {a, b}, [=](Tape& t) {
    const Mat& g = t.out_grad(out);
    if (t.needs(a.id)) t.grad_ref(a.id) += g;
    if (t.needs(b.id)) t.grad_ref(b.id) += g;
  });
}

template <typename T>
Var Tape<T>::sub(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "sub");
  const int out = static_cast<int>(nodes_.size());
  Mat v = val(a.id) - val(b.id);
  return push(std::move(v), {a, b}, [=](Tape& t) {
    const Mat& g = t.out_grad(out);
    if (t.needs(a.id)) t.grad_ref(a.id) += g;
    if (t.needs(b.id)) t.grad_ref(b.id) -= g;
  });
}

template <typename T>
Var Tape<T>::add_row(Var a, Var row) {
  const Mat& r = val(row.id);
  if (r.rows() != 1 || r.cols() != val(a.id).cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "add_row expects a 1 x cols row");
  }
  const int out = static_cast<int>(nodes_.size());
  Mat v = val(a.id).rowwise() + r.row(0);
  return push(std::move(v), {a, row}, [=](Tape& t) {
    const Mat& g = t.out_grad(out);
    if (t.needs(a.id)) t.grad_ref(a.id) += g;
    if (t.needs(row.id)) t.grad_ref(row.id) += g.colwise().sum();
  });
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "mul");
  const int out = static_cast<int>(nodes_.size());
  Mat v = val(a.id).cwiseProduct(val(b.id));
  return push(std::move(v), {a, b}, [=](Tape& t) {
    const Mat& g = t.out_grad(out);
    if (t.needs(a.id)) t.grad_ref(a.id) += g.cwiseProduct(t.val(b.id));
    if (t.needs(b.id)) t.grad_ref(b.id) += g.cwiseProduct(t.val(a.id));
  });
}

template <typename T>
Var Tape<T>::scale(Var a, T s) {
  const int out = static_cast<int>(nodes_.size());
  Mat v = val(a.id) * s;
  return push(std::move(v), {a}, [=](Tape& t) {
    t.grad_ref(a.id) += t.out_grad(out) * s;
  });
}

template <typename T>
Var Tape<T>::relu(Var a) {
  const int out = static_cast<int>(nodes_.size());
  Mat v = val(a.id).cwiseMax(T(0));
  return push(std::move(v), {a}, [=](Tape& t) {
    const Mat& x = t.val(a.id);
    t.grad_ref(a.id) += (x.array() > T(0)).select(t.out_grad(out), T(0));
  });
}

template <typename T>
Var Tape<T>::leaky_relu(Var a, T slope) {
  const int out = static_cast<int>(nodes_.size());
  const Mat& x = val(a.id);
  Mat v = (x.array() > T(0)).select(x, x * slope);
  return push(std::move(v), {a}, [=](Tape& t) {
    const Mat& xx = t.val(a.id);
    const Mat& g = t.out_grad(out);
    t.grad_ref(a.id) += (xx.array() > T(0)).select(g, g * slope);
  });
}

template <typename T>
Var Tape<T>::elu(Var a) {
  const int out = static_cast<int>(nodes_.size());
  const Mat& x = val(a.id);
  Mat v = (x.array() > T(0)).select(x, (x.array().exp() - T(1)).matrix());
  return push(std::move(v), {a}, [=](Tape& t) {
    const Mat& xx = t.val(a.id);
    const Mat& g = t.out_grad(out);
    Mat d = (xx.array() > T(0)).select(Mat::Ones(xx.rows(), xx.cols()),
                                       xx.array().exp().matrix());
    t.grad_ref(a.id) += g.cwiseProduct(d);
  });
}

template <typename T>
Var Tape<T>::softmax_rows(Var a, const std::vector<bool>* key_mask) {
  const Mat& x = val(a.id);
  if (key_mask && static_cast<Eigen::Index>(key_mask->size()) != x.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "softmax mask length");
  }
  Mat v = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!key_mask || (*key_mask)[static_cast<std::size_t>(c)]) mx = std::max(mx, x(r, c));
    }
    if (!std::isfinite(mx)) continue;
    T total = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!key_mask || (*key_mask)[static_cast<std::size_t>(c)]) {
        v(r, c) = std::exp(x(r, c) - mx);
        total += v(r, c);
      }
    }
    v.row(r) /= total;
  }
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), {a}, [=](Tape& t) {
    const Mat& y = t.val(out);
    const Mat& g = t.out_grad(out);
    Mat gy = g.cwiseProduct(y);
    Eigen::Matrix<T, Eigen::Dynamic, 1> dot = gy.rowwise().sum();
    t.grad_ref(a.id) += gy - (y.array().colwise() * dot.array()).matrix();
  });
}

template <typename T>
Var Tape<T>::layer_norm_rows(Var x, Var gain, Var bias, T eps) {
  const Mat& in = val(x.id);
  const Mat& gm = val(gain.id);
  const Mat& bm = val(bias.id);
  if (gm.rows() != 1 || bm.rows() != 1 || gm.cols() != in.cols() || bm.cols() != in.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "layer_norm gain/bias width");
  }
  const Eigen::Index n = in.cols();
  Mat xhat(in.rows(), n);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    T mean = in.row(r).mean();
    T var = (in.row(r).array() - mean).square().mean();
    inv_std(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mean) * inv_std(r);
  }
  Mat v = (xhat.array().rowwise() * gm.row(0).array()).rowwise() + bm.row(0).array();
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), {x, gain, bias},
              [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t) {
                const Mat& g = t.out_grad(out);
                if (t.needs(gain.id)) t.grad_ref(gain.id) += g.cwiseProduct(xhat).colwise().sum();
                if (t.needs(bias.id)) t.grad_ref(bias.id) += g.colwise().sum();
                if (t.needs(x.id)) {
                  const Mat& gmm = t.val(gain.id);
                  Mat dxhat = g.array().rowwise() * gmm.row(0).array();
                  Mat& gx = t.grad_ref(x.id);
                  const T nn = static_cast<T>(n);
                  for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                    T s1 = dxhat.row(r).sum();
                    T s2 = dxhat.row(r).dot(xhat.row(r));
                    gx.row(r) += (inv_std(r) / nn) *
                                 (nn * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2)
                                     .matrix();
                  }
                }
              });
}

template <typename T>
Var Tape<T>::mean_rows(Var a) {
  const Mat& x = val(a.id);
  if (x.rows() == 0) throw Error(ErrorCode::kDimensionMismatch, "mean of zero rows");
  const int out = static_cast<int>(nodes_.size());
  Mat v = x.colwise().mean();
  const T inv = T(1) / static_cast<T>(x.rows());
  return push(std::move(v), {a}, [=](Tape& t) {
    t.grad_ref(a.id).rowwise() += t.out_grad(out).row(0) * inv;
  });
}

template <typename T>
Var Tape<T>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::kDimensionMismatch, "concat of nothing");
  const Eigen::Index rows = val(parts[0].id).rows();
  Eigen::Index cols = 0;
  bool needs_grad = false;
  for (Var p : parts) {
    if (val(p.id).rows() != rows) throw Error(ErrorCode::kDimensionMismatch, "concat_cols rows");
    cols += val(p.id).cols();
    needs_grad = needs_grad || needs(p.id);
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleCols(at, val(p.id).cols()) = val(p.id);
    at += val(p.id).cols();
  }
  const int out = static_cast<int>(nodes_.size());
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(std::move(v), needs_grad, [=](Tape& t) {
    const Mat& g = t.out_grad(out);
    Eigen::Index off = 0;
    for (Var p : ps) {
      const Eigen::Index c = t.val(p.id).cols();
      if (t.needs(p.id)) t.grad_ref(p.id) += g.middleCols(off, c);
      off += c;
    }
  });
}

template <typename T>
Var Tape<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::kDimensionMismatch, "concat of nothing");
  const Eigen::Index cols = val(parts[0].id).cols();
  Eigen::Index rows = 0;
  bool needs_grad = false;
  for (Var p : parts) {
    if (val(p.id).cols() != cols) throw Error(ErrorCode::kDimensionMismatch, "concat_rows cols");
    rows += val(p.id).rows();
    needs_grad = needs_grad || needs(p.id);
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleRows(at, val(p.id).rows()) = val(p.id);
    at += val(p.id).rows();
  }
  const int out = static_cast<int>(nodes_.size());
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(std::move(v), needs_grad, [=](Tape& t) {
    const Mat& g = t.out_grad(out);
    Eigen::Index off = 0;
    for (Var p : ps) {
      const Eigen::Index r = t.val(p.id).rows();
      if (t.needs(p.id)) t.grad_ref(p.id) += g.middleRows(off, r);
      off += r;
    }
  });
}

template <typename T>
Var Tape<T>::slice_cols(Var a, int start, int count) {
  const Mat& x = val(a.id);
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "slice_cols out of range");
  }
  const int out = static_cast<int>(nodes_.size());
  Mat v = x.middleCols(start, count);
  return push(std::move(v), {a}, [=](Tape& t) {
    t.grad_ref(a.id).middleCols(start, count) += t.out_grad(out);
  });
}

template <typename T>
Var Tape<T>::slice_rows(Var a, int start, int count) {
  const Mat& x = val(a.id);
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "slice_rows out of range");
  }
  const int out = static_cast<int>(nodes_.size());
  Mat v = x.middleRows(start, count);
  return push(std::move(v), {a}, [=](Tape& t) {
    t.grad_ref(a.id).middleRows(start, count) += t.out_grad(out);
  });
}

template <typename T>
Var Tape<T>::gather_rows(Var table, std::vector<int> rows) {
  const Mat& x = val(table.id);
  Mat v(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= x.rows()) {
      throw Error(ErrorCode::kIdOutOfRange, "gather row " + std::to_string(rows[k]));
    }
    v.row(static_cast<Eigen::Index>(k)) = x.row(rows[k]);
  }
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), {table}, [=, rows = std::move(rows)](Tape& t) {
    const Mat& g = t.out_grad(out);
    Mat& gt = t.grad_ref(table.id);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      gt.row(rows[k]) += g.row(static_cast<Eigen::Index>(k));
    }
  });
}

template <typename T>
Var Tape<T>::scatter_add_rows(Var src, std::vector<int> rows, int out_rows) {
  const Mat& x = val(src.id);
  if (static_cast<Eigen::Index>(rows.size()) != x.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "scatter index count");
  }
  Mat v = Mat::Zero(out_rows, x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= out_rows) {
      throw Error(ErrorCode::kIdOutOfRange, "scatter row " + std::to_string(rows[k]));
    }
    v.row(rows[k]) += x.row(static_cast<Eigen::Index>(k));
  }
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), {src}, [=, rows = std::move(rows)](Tape& t) {
    const Mat& g = t.out_grad(out);
    Mat& gs = t.grad_ref(src.id);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      gs.row(static_cast<Eigen::Index>(k)) += g.row(rows[k]);
    }
  });
}

template <typename T>
Var Tape<T>::segment_softmax(Var logits, std::vector<int> segment, int segments) {
  const Mat& x = val(logits.id);
  if (x.cols() != 1 || static_cast<Eigen::Index>(segment.size()) != x.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "segment_softmax expects E x 1 logits");
  }
  std::vector<T> mx(static_cast<std::size_t>(segments), -std::numeric_limits<T>::infinity());
  for (std::size_t e = 0; e < segment.size(); ++e) {
    auto s = static_cast<std::size_t>(segment[e]);
    mx[s] = std::max(mx[s], x(static_cast<Eigen::Index>(e), 0));
  }
  Mat v(x.rows(), 1);
  std::vector<T> total(static_cast<std::size_t>(segments), T(0));
  for (std::size_t e = 0; e < segment.size(); ++e) {
    auto s = static_cast<std::size_t>(segment[e]);
    v(static_cast<Eigen::Index>(e), 0) = std::exp(x(static_cast<Eigen::Index>(e), 0) - mx[s]);
    total[s] += v(static_cast<Eigen::Index>(e), 0);
  }
  for (std::size_t e = 0; e < segment.size(); ++e) {
    v(static_cast<Eigen::Index>(e), 0) /= total[static_cast<std::size_t>(segment[e])];
  }
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), {logits}, [=, segment = std::move(segment)](Tape& t) {
    const Mat& y = t.val(out);
    const Mat& g = t.out_grad(out);
    std::vector<T> dot(static_cast<std::size_t>(segments), T(0));
    for (std::size_t e = 0; e < segment.size(); ++e) {
      const auto i = static_cast<Eigen::Index>(e);
      dot[static_cast<std::size_t>(segment[e])] += y(i, 0) * g(i, 0);
    }
    Mat& gl = t.grad_ref(logits.id);
    for (std::size_t e = 0; e < segment.size(); ++e) {
      const auto i = static_cast<Eigen::Index>(e);
      gl(i, 0) += y(i, 0) * (g(i, 0) - dot[static_cast<std::size_t>(segment[e])]);
    }
  });
}

template <typename T>
Var Tape<T>::mul_rows_by_col(Var x, Var w) {
  const Mat& xm = val(x.id);
  const Mat& wm = val(w.id);
  if (wm.cols() != 1 || wm.rows() != xm.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "mul_rows_by_col");
  }
  const int out = static_cast<int>(nodes_.size());
  Mat v = xm.array().colwise() * wm.col(0).array();
  return push(std::move(v), {x, w}, [=](Tape& t) {
    const Mat& g = t.out_grad(out);
    if (t.needs(x.id)) t.grad_ref(x.id) += (g.array().colwise() * t.val(w.id).col(0).array()).matrix();
    if (t.needs(w.id)) t.grad_ref(w.id) += g.cwiseProduct(t.val(x.id)).rowwise().sum();
  });
}

template <typename T>
Var Tape<T>::sum(Var a) {
  const int out = static_cast<int>(nodes_.size());
  Mat v(1, 1);
  v(0, 0) = val(a.id).sum();
  return push(std::move(v), {a}, [=](Tape& t) {
    t.grad_ref(a.id).array() += t.out_grad(out)(0, 0);
  });
}

template <typename T>
Var Tape<T>::bce_with_logits(Var logits, std::vector<T> targets) {
  const Mat& x = val(logits.id);
  if (x.cols() != 1 || static_cast<Eigen::Index>(targets.size()) != x.rows() || x.rows() == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "bce_with_logits expects n x 1 logits");
  }
  T total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T z = x(i, 0);
    total += std::max(z, T(0)) - z * targets[static_cast<std::size_t>(i)] +
             std::log1p(std::exp(-std::abs(z)));
  }
  Mat v(1, 1);
  v(0, 0) = total / static_cast<T>(x.rows());
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), {logits}, [=, targets = std::move(targets)](Tape& t) {
    const Mat& xx = t.val(logits.id);
    const T g = t.out_grad(out)(0, 0) / static_cast<T>(xx.rows());
    Mat& gl = t.grad_ref(logits.id);
    for (Eigen::Index i = 0; i < xx.rows(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-xx(i, 0)));
      gl(i, 0) += g * (s - targets[static_cast<std::size_t>(i)]);
    }
  });
}

template <typename T>
Var Tape<T>::custom(Mat value, std::vector<Var> inputs, CustomBackward backward) {
  bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](Var v) { return needs(v.id); });
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(value), needs_grad,
              [=, inputs = std::move(inputs), backward = std::move(backward)](Tape& t) {
                std::vector<Mat> grads(inputs.size());
                for (std::size_t k = 0; k < inputs.size(); ++k) {
                  if (t.needs(inputs[k].id)) {
                    const Mat& x = t.val(inputs[k].id);
                    grads[k] = Mat::Zero(x.rows(), x.cols());
                  }
                }
                backward(t.out_grad(out), grads);
                for (std::size_t k = 0; k < inputs.size(); ++k) {
                  if (t.needs(inputs[k].id)) t.grad_ref(inputs[k].id) += grads[k];
                }
              });
}

template <typename T>
void Tape<T>::backward(Var loss) {
  const Mat& l = val(loss.id);
  if (l.rows() != 1 || l.cols() != 1) {
    throw Error(ErrorCode::kDimensionMismatch, "backward expects a scalar loss");
  }
  if (!needs(loss.id)) return;
  grad_ref(loss.id)(0, 0) += T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this);
  }
  for (auto& n : nodes_) {
    if (n.sink && n.grad.size() != 0) *n.sink += n.grad;
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace irbridge::ad
