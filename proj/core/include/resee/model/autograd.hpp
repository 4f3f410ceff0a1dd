#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "resee/model/matrix.hpp"

namespace resee::model {

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode automatic differentiation over matrices. Nodes are recorded
/// in evaluation order, so reverse order is a valid topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf referencing external storage; gradients are added into `grad_sink`
  /// by backward() when the sink is non-null.
  Var parameter(const Matrix& value, Matrix* grad_sink);
  Var constant(Matrix value);

  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_bt(Var a, Var b);
  Var add(Var a, Var b);
  /// Adds a 1 x cols row to every row of `a`.
  Var add_row(Var a, Var row);
  Var scale(Var a, double s);
  /// tanh-approximated GELU.
  Var gelu(Var a);
  /// Row-wise layer normalization with 1 x cols gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  /// Row-wise softmax over entries with allowed[i * cols + j] != 0.
  /// Disallowed entries are exactly zero.
  Var masked_softmax(Var scores, std::span<const char> allowed);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var concat_cols(std::span<const Var> parts);
  /// Row i of the result is table[ids[i]], or zeros when ids[i] < 0.
  Var gather_rows(Var table, std::span<const int> ids);
  /// Places src row k at result row rows[k]; other rows are zero.
  Var place_rows(Var src, std::span<const std::size_t> rows, std::size_t total_rows);
  Var select_rows(Var a, std::span<const std::size_t> rows);
  /// 1 x 1 sum over rows of -log softmax(logits[i])[targets[i]].
  Var nll_sum(Var logits, std::span<const int> targets);

  /// Seeds d(out)/d(out) = 1 (out must be 1 x 1) and propagates.
  void backward(Var out);

  const Matrix& value(Var v) const { return value_of(nodes_[v.id_]); }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix grad;
    Matrix* sink = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, std::size_t self)> back;
  };

  static const Matrix& value_of(const Node& n) { return n.ext ? *n.ext : n.own; }
  Var push(Matrix value, std::initializer_list<Var> inputs, std::function<void(Tape&, std::size_t)> back);
  Matrix& grad(std::size_t id);
  const Matrix& val(std::size_t id) const { return value_of(nodes_[id]); }
  bool needs(std::size_t id) const { return nodes_[id].needs_grad; }

  std::vector<Node> nodes_;
};

}  // namespace resee::model
