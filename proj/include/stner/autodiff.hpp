#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stner::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// A named trainable tensor with its gradient buffer.
struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;

  Tensor() = default;
  Tensor(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  bool all_finite() const { return value.allFinite(); }
};

struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices. Values are computed eagerly; when
// recording, each op also stores a closure that pushes its output gradient to
// its inputs. backward() adds the resulting gradients into the grad buffers of
// every Tensor bound with parameter().
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(256); }

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix value);
  Var scalar_constant(double value);
  // Leaf that reads the tensor in place and routes its gradient back to it.
  Var parameter(Tensor& tensor);
  // Constant leaf that reads `value` in place (no copy, no gradient).
  Var reference(const Matrix& value);

  const Matrix& value(Var v) const;
  double scalar(Var v) const { return value(v)(0, 0); }

  void backward(Var output, double seed = 1.0);

  // Linear algebra.
  Var matmul(Var a, Var b);       // a * b
  Var matmul_tn(Var a, Var b);    // a^T * b
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);          // elementwise
  Var scale(Var a, double factor);
  Var add_column(Var m, Var column);  // broadcast a column over every column of m
  Var concat_rows(std::span<const Var> parts);
  Var hstack(std::span<const Var> columns);
  Var mean_columns(Var m);
  Var sum(std::span<const Var> scalars);
  Var dot(Var a, Var b);

  // Elementwise nonlinearities.
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var log_sigmoid(Var a);

  // Vector ops on columns.
  Var softmax(Var v);
  Var log_softmax(Var v);
  Var pick(Var v, Eigen::Index index);
  // -log softmax(logits)[target]
  Var nll(Var logits, Eigen::Index target);
  // Mean over columns of -log softmax(logits[:, j])[targets[j]].
  Var cross_entropy_columns(Var logits, std::span<const int> targets);

  // Embedding row `index` of a (rows x dim) matrix as a dim x 1 column.
  Var lookup(Var table, Eigen::Index index);
  // Window features: column j stacks rows ids[j - w] ... ids[j + w], using
  // `pad` outside the sentence.
  Var window_lookup(Var table, std::span<const int> ids, int half_width, int pad);

  // Forward: one-hot of the argmax. Backward: identity (straight-through).
  Var straight_through_one_hot(Var soft);

  // Gated recurrent unit, gate order (update, reset, candidate):
  //   [a_z; a_r; a_n] = w x + b,  [u_z; u_r; u_n] = u h
  //   z = sigma(a_z + u_z), r = sigma(a_r + u_r), n = tanh(a_n + r * u_n)
  //   h' = (1 - z) * n + z * h
  Var gru(Var x, Var h, Var w, Var u, Var b);

 private:
  using Backward = std::function<void(Tape&, std::int32_t)>;

  struct Node {
    Matrix value;
    Matrix grad;
    Matrix aux;
    const Matrix* ref = nullptr;  // parameter leaves read their tensor in place
    Tensor* param = nullptr;
    Backward back;
    bool needs_grad = false;
  };

  Var push(Matrix value, bool needs_grad, Backward back);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  template <typename Expr>
  void accumulate(Var v, const Expr& g);
  const Matrix& grad_of(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace stner::ad
