#pragma once

// Reverse-mode differentiation over dense row-major matrices. A Tape records
// every operation of one forward pass; backward() walks it in reverse and
// accumulates gradients into the sinks bound to parameter leaves.

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace irbridge {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace ad {

struct Var {
  int id = -1;
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;
  // Receives the gradient of the op output and one pre-sized zero matrix per
  // input (empty for inputs that do not need a gradient).
  using CustomBackward = std::function<void(const Mat& out_grad, std::vector<Mat>& in_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  // The referenced matrix must outlive the tape.
  Var constant_ref(const Mat& value);
  // Leaf whose gradient is added into *grad_sink by backward(). A null sink
  // makes the leaf behave as a constant.
  Var parameter(const Mat& value, Mat* grad_sink);

  const Mat& value(Var v) const;
  // Empty when no gradient reached the node.
  const Mat& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_row(Var a, Var row);  // row (1 x c) broadcast over a's rows
  Var mul(Var a, Var b);        // elementwise
  Var scale(Var a, T s);
  Var relu(Var a);
  Var leaky_relu(Var a, T slope);
  Var elu(Var a);
  // Row-wise softmax. key_mask[j] == false removes column j from every row.
  Var softmax_rows(Var a, const std::vector<bool>* key_mask = nullptr);
  Var layer_norm_rows(Var x, Var gain, Var bias, T eps);
  Var mean_rows(Var a);  // 1 x c
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var slice_cols(Var a, int start, int count);
  Var slice_rows(Var a, int start, int count);
  Var gather_rows(Var table, std::vector<int> rows);
  Var scatter_add_rows(Var src, std::vector<int> rows, int out_rows);
  // logits is E x 1; entries sharing a segment id are normalized together.
  Var segment_softmax(Var logits, std::vector<int> segment, int segments);
  Var mul_rows_by_col(Var x, Var w);  // x (E x c) times w (E x 1), row-wise
  Var sum(Var a);                     // 1 x 1
  // Mean binary cross-entropy of sigmoid(logits) (n x 1) against targets.
  Var bce_with_logits(Var logits, std::vector<T> targets);
  Var custom(Mat value, std::vector<Var> inputs, CustomBackward backward);

  // loss must be 1 x 1.
  void backward(Var loss);

 private:
  struct Node {
    Mat value;
    const Mat* ext = nullptr;
    Mat grad;
    Mat* sink = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&)> backward;
  };

  const Mat& val(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ext ? *n.ext : n.value;
  }
  bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  Mat& grad_ref(int id);
  Var push(Mat value, std::initializer_list<Var> inputs, std::function<void(Tape&)> backward);
  Var push(Mat value, bool needs_grad, std::function<void(Tape&)> backward);
  const Mat& out_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  std::vector<Node> nodes_;
  Mat empty_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ad
}  // namespace irbridge
