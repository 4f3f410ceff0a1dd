#include "resee/model/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "resee/error.hpp"

namespace resee::model {
namespace {

constexpr std::string_view kModule = "model_core";

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(std::string(kModule), what);
}

// c += a * b
void gemm_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  const auto n = a.rows, k = a.cols, m = b.cols;
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c.data.data() + i * m;
    const double* arow = a.data.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a * b^T
void gemm_bt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  const auto n = a.rows, k = a.cols, m = b.rows;
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b.data.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c.data[i * m + j] += s;
    }
  }
}

// c += a^T * b
void gemm_at_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  const auto n = a.rows, k = a.cols, m = b.cols;
  for (std::size_t r = 0; r < n; ++r) {
    const double* arow = a.data.data() + r * k;
    const double* brow = b.data.data() + r * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c.data.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, std::function<void(Tape&, std::size_t)> back) {
  Node n;
  n.own = std::move(value);
  for (auto v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id_].needs_grad;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.data.empty()) {
    const auto& v = value_of(n);
    n.grad = Matrix(v.rows, v.cols);
  }
  return n.grad;
}

Var Tape::parameter(const Matrix& value, Matrix* grad_sink) {
  Node n;
  n.ext = &value;
  n.sink = grad_sink;
  n.needs_grad = grad_sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::matmul(Var a, Var b) {
  const auto& A = val(a.id_);
  const auto& B = val(b.id_);
  require(A.cols == B.rows, "matmul: inner dimensions differ");
  Matrix C(A.rows, B.cols);
  gemm_acc(A, B, C);
  return push(std::move(C), {a, b}, [ia = a.id_, ib = b.id_](Tape& t, std::size_t self) {
    const auto& G = t.nodes_[self].grad;
    if (t.needs(ia)) gemm_bt_acc(G, t.val(ib), t.grad(ia));
    if (t.needs(ib)) gemm_at_acc(t.val(ia), G, t.grad(ib));
  });
}

Var Tape::matmul_bt(Var a, Var b) {
  const auto& A = val(a.id_);
  const auto& B = val(b.id_);
  require(A.cols == B.cols, "matmul_bt: inner dimensions differ");
  Matrix C(A.rows, B.rows);
  gemm_bt_acc(A, B, C);
  return push(std::move(C), {a, b}, [ia = a.id_, ib = b.id_](Tape& t, std::size_t self) {
    const auto& G = t.nodes_[self].grad;
    if (t.needs(ia)) gemm_acc(G, t.val(ib), t.grad(ia));
    if (t.needs(ib)) gemm_at_acc(G, t.val(ia), t.grad(ib));
  });
}

Var Tape::add(Var a, Var b) {
  const auto& A = val(a.id_);
  const auto& B = val(b.id_);
  require(A.rows == B.rows && A.cols == B.cols, "add: shapes differ");
  Matrix C = A;
  for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
  return push(std::move(C), {a, b}, [ia = a.id_, ib = b.id_](Tape& t, std::size_t self) {
    const auto& G = t.nodes_[self].grad;
    for (auto id : {ia, ib}) {
      if (!t.needs(id)) continue;
      auto& g = t.grad(id);
      for (std::size_t i = 0; i < G.data.size(); ++i) g.data[i] += G.data[i];
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  const auto& A = val(a.id_);
  const auto& R = val(row.id_);
  require(R.rows == 1 && R.cols == A.cols, "add_row: bias shape mismatch");
  Matrix C = A;
  for (std::size_t i = 0; i < C.rows; ++i) {
    for (std::size_t j = 0; j < C.cols; ++j) C(i, j) += R.data[j];
  }
  return push(std::move(C), {a, row}, [ia = a.id_, ir = row.id_](Tape& t, std::size_t self) {
    const auto& G = t.nodes_[self].grad;
    if (t.needs(ia)) {
      auto& g = t.grad(ia);
      for (std::size_t i = 0; i < G.data.size(); ++i) g.data[i] += G.data[i];
    }
    if (t.needs(ir)) {
      auto& g = t.grad(ir);
      for (std::size_t i = 0; i < G.rows; ++i) {
        for (std::size_t j = 0; j < G.cols; ++j) g.data[j] += G(i, j);
      }
    }
  });
}

Var Tape::scale(Var a, double s) {
  Matrix C = val(a.id_);
  for (auto& x : C.data) x *= s;
  return push(std::move(C), {a}, [ia = a.id_, s](Tape& t, std::size_t self) {
    const auto& G = t.nodes_[self].grad;
    auto& g = t.grad(ia);
    for (std::size_t i = 0; i < G.data.size(); ++i) g.data[i] += s * G.data[i];
  });
}

Var Tape::gelu(Var a) {
  const auto& A = val(a.id_);
  Matrix C(A.rows, A.cols);
  for (std::size_t i = 0; i < A.data.size(); ++i) {
    const double x = A.data[i];
    C.data[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  }
  return push(std::move(C), {a}, [ia = a.id_](Tape& t, std::size_t self) {
    const auto& G = t.nodes_[self].grad;
    const auto& X = t.val(ia);
    auto& g = t.grad(ia);
    for (std::size_t i = 0; i < G.data.size(); ++i) {
      const double x = X.data[i];
      const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      g.data[i] += G.data[i] * d;
    }
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const auto& X = val(x.id_);
  const auto& Gn = val(gain.id_);
  const auto& Bs = val(bias.id_);
  require(Gn.rows == 1 && Gn.cols == X.cols && Bs.rows == 1 && Bs.cols == X.cols, "layer_norm: parameter shape");
  const auto n = X.cols;
  Matrix xhat(X.rows, n);
  std::vector<double> inv_sigma(X.rows);
  Matrix Y(X.rows, n);
  for (std::size_t r = 0; r < X.rows; ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += X(r, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (X(r, j) - mean) * (X(r, j) - mean);
    var /= static_cast<double>(n);
    inv_sigma[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(r, j) = (X(r, j) - mean) * inv_sigma[r];
      Y(r, j) = Gn.data[j] * xhat(r, j) + Bs.data[j];
    }
  }
  return push(std::move(Y), {x, gain, bias},
              [ix = x.id_, ig = gain.id_, ib = bias.id_, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](
                  Tape& t, std::size_t self) {
                const auto& G = t.nodes_[self].grad;
                const auto& Gn = t.val(ig);
                const auto n = G.cols;
                if (t.needs(ig) || t.needs(ib)) {
                  for (std::size_t r = 0; r < G.rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) {
                      if (t.needs(ig)) t.grad(ig).data[j] += G(r, j) * xhat(r, j);
                      if (t.needs(ib)) t.grad(ib).data[j] += G(r, j);
                    }
                  }
                }
                if (!t.needs(ix)) return;
                auto& gx = t.grad(ix);
                std::vector<double> dxhat(n);
                for (std::size_t r = 0; r < G.rows; ++r) {
                  double mean_d = 0.0;
                  double mean_dx = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    dxhat[j] = G(r, j) * Gn.data[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xhat(r, j);
                  }
                  mean_d /= static_cast<double>(n);
                  mean_dx /= static_cast<double>(n);
                  for (std::size_t j = 0; j < n; ++j) {
                    gx(r, j) += inv_sigma[r] * (dxhat[j] - mean_d - xhat(r, j) * mean_dx);
                  }
                }
              });
}

Var Tape::masked_softmax(Var scores, std::span<const char> allowed) {
  const auto& S = val(scores.id_);
  require(allowed.size() == S.data.size(), "masked_softmax: mask size");
  Matrix P(S.rows, S.cols);
  for (std::size_t r = 0; r < S.rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < S.cols; ++j) {
      if (allowed[r * S.cols + j]) mx = std::max(mx, S(r, j));
    }
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < S.cols; ++j) {
      if (!allowed[r * S.cols + j]) continue;
      P(r, j) = std::exp(S(r, j) - mx);
      z += P(r, j);
    }
    for (std::size_t j = 0; j < S.cols; ++j) P(r, j) /= z;
  }
  return push(std::move(P), {scores}, [is = scores.id_](Tape& t, std::size_t self) {
    const auto& G = t.nodes_[self].grad;
    const auto& P = t.val(self);
    auto& g = t.grad(is);
    for (std::size_t r = 0; r < G.rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < G.cols; ++j) dot += G(r, j) * P(r, j);
      for (std::size_t j = 0; j < G.cols; ++j) g(r, j) += P(r, j) * (G(r, j) - dot);
    }
  });
}

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const auto& A = val(a.id_);
  require(begin <= end && end <= A.cols, "slice_cols: range");
  Matrix C(A.rows, end - begin);
  for (std::size_t r = 0; r < A.rows; ++r) {
    std::copy(A.data.begin() + static_cast<std::ptrdiff_t>(r * A.cols + begin),
              A.data.begin() + static_cast<std::ptrdiff_t>(r * A.cols + end),
              C.data.begin() + static_cast<std::ptrdiff_t>(r * C.cols));
  }
  return push(std::move(C), {a}, [ia = a.id_, begin](Tape& t, std::size_t self) {
    const auto& G = t.nodes_[self].grad;
    auto& g = t.grad(ia);
    for (std::size_t r = 0; r < G.rows; ++r) {
      for (std::size_t j = 0; j < G.cols; ++j) g(r, begin + j) += G(r, j);
    }
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto rows = val(parts[0].id_).rows;
  std::size_t cols = 0;
  for (auto p : parts) {
    require(val(p.id_).rows == rows, "concat_cols: row counts differ");
    cols += val(p.id_).cols;
  }
  Matrix C(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  bool any = false;
  for (auto p : parts) {
    const auto& P = val(p.id_);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < P.cols; ++j) C(r, off + j) = P(r, j);
    }
    off += P.cols;
    ids.push_back(p.id_);
    any = any || needs(p.id_);
  }
  Node n;
  n.own = std::move(C);
  n.needs_grad = any;
  if (any) {
    n.back = [ids = std::move(ids)](Tape& t, std::size_t self) {
      const auto& G = t.nodes_[self].grad;
      std::size_t off = 0;
      for (auto id : ids) {
        const auto w = t.val(id).cols;
        if (t.needs(id)) {
          auto& g = t.grad(id);
          for (std::size_t r = 0; r < G.rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) g(r, j) += G(r, off + j);
          }
        }
        off += w;
      }
    };
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::gather_rows(Var table, std::span<const int> ids) {
  const auto& T = val(table.id_);
  Matrix C(ids.size(), T.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0) continue;
    require(static_cast<std::size_t>(ids[i]) < T.rows, "gather_rows: id out of range");
    std::copy_n(T.data.begin() + static_cast<std::ptrdiff_t>(ids[i] * T.cols), T.cols,
                C.data.begin() + static_cast<std::ptrdiff_t>(i * T.cols));
  }
  return push(std::move(C), {table},
              [it = table.id_, ids = std::vector<int>(ids.begin(), ids.end())](Tape& t, std::size_t self) {
                const auto& G = t.nodes_[self].grad;
                auto& g = t.grad(it);
                for (std::size_t i = 0; i < ids.size(); ++i) {
                  if (ids[i] < 0) continue;
                  for (std::size_t j = 0; j < G.cols; ++j) g(static_cast<std::size_t>(ids[i]), j) += G(i, j);
                }
              });
}

Var Tape::place_rows(Var src, std::span<const std::size_t> rows, std::size_t total_rows) {
  const auto& S = val(src.id_);
  require(rows.size() == S.rows, "place_rows: row count");
  Matrix C(total_rows, S.cols);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(rows[k] < total_rows, "place_rows: target out of range");
    std::copy_n(S.data.begin() + static_cast<std::ptrdiff_t>(k * S.cols), S.cols,
                C.data.begin() + static_cast<std::ptrdiff_t>(rows[k] * S.cols));
  }
  return push(std::move(C), {src},
              [is = src.id_, rows = std::vector<std::size_t>(rows.begin(), rows.end())](Tape& t, std::size_t self) {
                const auto& G = t.nodes_[self].grad;
                auto& g = t.grad(is);
                for (std::size_t k = 0; k < rows.size(); ++k) {
                  for (std::size_t j = 0; j < G.cols; ++j) g(k, j) += G(rows[k], j);
                }
              });
}

Var Tape::select_rows(Var a, std::span<const std::size_t> rows) {
  const auto& A = val(a.id_);
  Matrix C(rows.size(), A.cols);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(rows[k] < A.rows, "select_rows: row out of range");
    std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(rows[k] * A.cols), A.cols,
                C.data.begin() + static_cast<std::ptrdiff_t>(k * A.cols));
  }
  return push(std::move(C), {a},
              [ia = a.id_, rows = std::vector<std::size_t>(rows.begin(), rows.end())](Tape& t, std::size_t self) {
                const auto& G = t.nodes_[self].grad;
                auto& g = t.grad(ia);
                for (std::size_t k = 0; k < rows.size(); ++k) {
                  for (std::size_t j = 0; j < G.cols; ++j) g(rows[k], j) += G(k, j);
                }
              });
}

Var Tape::nll_sum(Var logits, std::span<const int> targets) {
  const auto& L = val(logits.id_);
  require(targets.size() == L.rows, "nll_sum: one target per row required");
  Matrix probs(L.rows, L.cols);
  double total = 0.0;
  for (std::size_t r = 0; r < L.rows; ++r) {
    require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < L.cols, "nll_sum: target out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < L.cols; ++j) mx = std::max(mx, L(r, j));
    double z = 0.0;
    for (std::size_t j = 0; j < L.cols; ++j) {
      probs(r, j) = std::exp(L(r, j) - mx);
      z += probs(r, j);
    }
    for (std::size_t j = 0; j < L.cols; ++j) probs(r, j) /= z;
    total += -(L(r, static_cast<std::size_t>(targets[r])) - mx - std::log(z));
  }
  Matrix out(1, 1, total);
  return push(std::move(out), {logits},
              [il = logits.id_, probs = std::move(probs), targets = std::vector<int>(targets.begin(), targets.end())](
                  Tape& t, std::size_t self) {
                const double g0 = t.nodes_[self].grad.data[0];
                auto& g = t.grad(il);
                for (std::size_t r = 0; r < probs.rows; ++r) {
                  for (std::size_t j = 0; j < probs.cols; ++j) {
                    const double onehot = static_cast<int>(j) == targets[r] ? 1.0 : 0.0;
                    g(r, j) += g0 * (probs(r, j) - onehot);
                  }
                }
              });
}

void Tape::backward(Var out) {
  require(val(out.id_).rows == 1 && val(out.id_).cols == 1, "backward: output must be scalar");
  if (!nodes_[out.id_].needs_grad) return;
  grad(out.id_).data[0] = 1.0;
  for (std::size_t i = out.id_ + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.needs_grad || n.grad.data.empty()) continue;
    if (n.back) n.back(*this, i);
    if (n.sink) {
      auto& s = *n.sink;
      if (s.data.empty()) s = Matrix(n.grad.rows, n.grad.cols);
      for (std::size_t k = 0; k < s.data.size(); ++k) s.data[k] += n.grad.data[k];
    }
  }
}

}  // namespace resee::model
