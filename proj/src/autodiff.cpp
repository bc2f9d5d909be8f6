#include "stner/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace stner::ad {

namespace {

Matrix softmax_col(const Matrix& v) {
  const double m = v.maxCoeff();
  Matrix e = (v.array() - m).exp().matrix();
  return e / e.sum();
}

double stable_log_sigmoid(double x) {
  // log sigma(x) = -log(1 + exp(-x))
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::push(Matrix value, bool needs_grad, Backward back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename Expr>
void Tape::accumulate(Var v, const Expr& g) {
  Node& n = node(v);
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::scalar_constant(double value) { return push(Matrix::Constant(1, 1, value), false, nullptr); }

Var Tape::parameter(Tensor& tensor) {
  Node n;
  n.ref = &tensor.value;
  n.param = &tensor;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::reference(const Matrix& value) {
  Node n;
  n.ref = &value;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  return n.ref ? *n.ref : n.value;
}

void Tape::backward(Var output, double seed) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  Node& out = node(output);
  if (!out.needs_grad) return;
  if (value(output).size() != 1) throw std::logic_error("backward requires a scalar output");
  out.grad = Matrix::Constant(1, 1, seed);
  for (std::int32_t id = output.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;
    if (n.back) n.back(*this, id);
  }
  for (auto& n : nodes_) {
    if (n.param && n.grad.size() != 0) n.param->grad += n.grad;
    n.grad.resize(0, 0);
  }
}

// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  Matrix out = value(a) * value(b);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    if (t.needs(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var Tape::matmul_tn(Var a, Var b) {
  Matrix out = value(a).transpose() * value(b);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    if (t.needs(a)) t.accumulate(a, t.value(b) * g.transpose());
    if (t.needs(b)) t.accumulate(b, t.value(a) * g);
  });
}

Var Tape::add(Var a, Var b) {
  Matrix out = value(a) + value(b);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::sub(Var a, Var b) {
  Matrix out = value(a) - value(b);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  Matrix out = value(a).cwiseProduct(value(b));
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    if (t.needs(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var Tape::scale(Var a, double factor) {
  Matrix out = value(a) * factor;
  return push(std::move(out), needs(a), [a, factor](Tape& t, std::int32_t self) {
    t.accumulate(a, t.grad_of(self) * factor);
  });
}

Var Tape::add_column(Var m, Var column) {
  Matrix out = value(m).colwise() + Vector(value(column).col(0));
  return push(std::move(out), needs(m) || needs(column), [m, column](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    t.accumulate(m, g);
    if (t.needs(column)) t.accumulate(column, g.rowwise().sum());
  });
}

Var Tape::concat_rows(std::span<const Var> parts) {
  Eigen::Index rows = 0;
  const Eigen::Index cols = value(parts[0]).cols();
  bool any = false;
  for (Var p : parts) {
    rows += value(p).rows();
    any |= needs(p);
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, value(p).rows()) = value(p);
    r += value(p).rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return push(std::move(out), any, [ins](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    Eigen::Index r = 0;
    for (Var p : ins) {
      const Eigen::Index n = t.value(p).rows();
      if (t.needs(p)) t.accumulate(p, g.middleRows(r, n));
      r += n;
    }
  });
}

Var Tape::hstack(std::span<const Var> columns) {
  const Eigen::Index rows = value(columns[0]).rows();
  Matrix out(rows, static_cast<Eigen::Index>(columns.size()));
  bool any = false;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = value(columns[j]).col(0);
    any |= needs(columns[j]);
  }
  std::vector<Var> ins(columns.begin(), columns.end());
  return push(std::move(out), any, [ins](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    for (std::size_t j = 0; j < ins.size(); ++j)
      if (t.needs(ins[j])) t.accumulate(ins[j], g.col(static_cast<Eigen::Index>(j)));
  });
}

Var Tape::mean_columns(Var m) {
  const Eigen::Index n = value(m).cols();
  Matrix out = value(m).rowwise().mean();
  return push(std::move(out), needs(m), [m, n](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    Matrix spread = g.col(0).replicate(1, n) / static_cast<double>(n);
    t.accumulate(m, spread);
  });
}

Var Tape::sum(std::span<const Var> scalars) {
  double total = 0.0;
  bool any = false;
  for (Var s : scalars) {
    total += scalar(s);
    any |= needs(s);
  }
  std::vector<Var> ins(scalars.begin(), scalars.end());
  return push(Matrix::Constant(1, 1, total), any, [ins](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    for (Var s : ins) t.accumulate(s, g);
  });
}

Var Tape::dot(Var a, Var b) {
  const double d = value(a).cwiseProduct(value(b)).sum();
  return push(Matrix::Constant(1, 1, d), needs(a) || needs(b), [a, b](Tape& t, std::int32_t self) {
    const double g = t.grad_of(self)(0, 0);
    if (t.needs(a)) t.accumulate(a, t.value(b) * g);
    if (t.needs(b)) t.accumulate(b, t.value(a) * g);
  });
}

Var Tape::sigmoid(Var a) {
  Matrix out = value(a).unaryExpr([](double x) { return stable_sigmoid(x); });
  return push(std::move(out), needs(a), [a](Tape& t, std::int32_t self) {
    const Matrix& y = t.value(Var{self});
    t.accumulate(a, t.grad_of(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var Tape::tanh(Var a) {
  Matrix out = value(a).array().tanh().matrix();
  return push(std::move(out), needs(a), [a](Tape& t, std::int32_t self) {
    const Matrix& y = t.value(Var{self});
    t.accumulate(a, t.grad_of(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var Tape::log_sigmoid(Var a) {
  Matrix out = value(a).unaryExpr([](double x) { return stable_log_sigmoid(x); });
  return push(std::move(out), needs(a), [a](Tape& t, std::int32_t self) {
    // d/dx log sigma(x) = sigma(-x)
    Matrix d = t.value(a).unaryExpr([](double x) { return stable_sigmoid(-x); });
    t.accumulate(a, t.grad_of(self).cwiseProduct(d));
  });
}

Var Tape::softmax(Var v) {
  Matrix out = softmax_col(value(v));
  return push(std::move(out), needs(v), [v](Tape& t, std::int32_t self) {
    const Matrix& s = t.value(Var{self});
    const Matrix& g = t.grad_of(self);
    const double inner = s.cwiseProduct(g).sum();
    t.accumulate(v, s.cwiseProduct((g.array() - inner).matrix()));
  });
}

Var Tape::log_softmax(Var v) {
  const Matrix& x = value(v);
  const double m = x.maxCoeff();
  const double lse = m + std::log((x.array() - m).exp().sum());
  Matrix out = (x.array() - lse).matrix();
  return push(std::move(out), needs(v), [v](Tape& t, std::int32_t self) {
    const Matrix& g = t.grad_of(self);
    Matrix s = t.value(Var{self}).array().exp().matrix();
    t.accumulate(v, g - s * g.sum());
  });
}

Var Tape::pick(Var v, Eigen::Index index) {
  const double x = value(v)(index, 0);
  return push(Matrix::Constant(1, 1, x), needs(v), [v, index](Tape& t, std::int32_t self) {
    Matrix g = Matrix::Zero(t.value(v).rows(), 1);
    g(index, 0) = t.grad_of(self)(0, 0);
    t.accumulate(v, g);
  });
}

Var Tape::nll(Var logits, Eigen::Index target) {
  const Matrix& x = value(logits);
  const double m = x.maxCoeff();
  const double lse = m + std::log((x.array() - m).exp().sum());
  const double loss = lse - x(target, 0);
  return push(Matrix::Constant(1, 1, loss), needs(logits), [logits, target](Tape& t, std::int32_t self) {
    Matrix p = softmax_col(t.value(logits));
    p(target, 0) -= 1.0;
    t.accumulate(logits, p * t.grad_of(self)(0, 0));
  });
}

Var Tape::cross_entropy_columns(Var logits, std::span<const int> targets) {
  const Matrix& x = value(logits);
  const Eigen::Index n = x.cols();
  if (static_cast<std::size_t>(n) != targets.size())
    throw std::invalid_argument("cross_entropy_columns: target count mismatch");
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double m = x.col(j).maxCoeff();
    const double lse = m + std::log((x.col(j).array() - m).exp().sum());
    total += lse - x(targets[static_cast<std::size_t>(j)], j);
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return push(Matrix::Constant(1, 1, total / static_cast<double>(n)), needs(logits),
              [logits, tg](Tape& t, std::int32_t self) {
                const Matrix& x = t.value(logits);
                const double g = t.grad_of(self)(0, 0) / static_cast<double>(x.cols());
                Matrix d(x.rows(), x.cols());
                for (Eigen::Index j = 0; j < x.cols(); ++j) {
                  d.col(j) = softmax_col(x.col(j));
                  d(tg[static_cast<std::size_t>(j)], j) -= 1.0;
                }
                t.accumulate(logits, d * g);
              });
}

Var Tape::lookup(Var table, Eigen::Index index) {
  Matrix out = value(table).row(index).transpose();
  return push(std::move(out), needs(table), [table, index](Tape& t, std::int32_t self) {
    Node& n = t.node(table);
    if (n.grad.size() == 0) n.grad = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
    n.grad.row(index) += t.grad_of(self).col(0).transpose();
  });
}

Var Tape::window_lookup(Var table, std::span<const int> ids, int half_width, int pad) {
  const Matrix& e = value(table);
  const Eigen::Index dim = e.cols();
  const int n = static_cast<int>(ids.size());
  const int width = 2 * half_width + 1;
  std::vector<int> source(static_cast<std::size_t>(width * n));
  for (int j = 0; j < n; ++j)
    for (int k = -half_width; k <= half_width; ++k) {
      const int pos = j + k;
      source[static_cast<std::size_t>(j * width + k + half_width)] =
          (pos < 0 || pos >= n) ? pad : ids[static_cast<std::size_t>(pos)];
    }
  Matrix out(dim * width, n);
  for (int j = 0; j < n; ++j)
    for (int w = 0; w < width; ++w)
      out.block(w * dim, j, dim, 1) = e.row(source[static_cast<std::size_t>(j * width + w)]).transpose();
  return push(std::move(out), needs(table), [table, source, width, n](Tape& t, std::int32_t self) {
    Node& node = t.node(table);
    const Matrix& e = t.value(table);
    if (node.grad.size() == 0) node.grad = Matrix::Zero(e.rows(), e.cols());
    const Matrix& g = t.grad_of(self);
    const Eigen::Index dim = e.cols();
    for (int j = 0; j < n; ++j)
      for (int w = 0; w < width; ++w)
        node.grad.row(source[static_cast<std::size_t>(j * width + w)]) +=
            g.block(w * dim, j, dim, 1).transpose();
  });
}

Var Tape::straight_through_one_hot(Var soft) {
  const Matrix& s = value(soft);
  Eigen::Index best = 0;
  s.col(0).maxCoeff(&best);
  Matrix out = Matrix::Zero(s.rows(), 1);
  out(best, 0) = 1.0;
  return push(std::move(out), needs(soft), [soft](Tape& t, std::int32_t self) {
    t.accumulate(soft, t.grad_of(self));
  });
}

Var Tape::gru(Var x, Var h, Var w, Var u, Var b) {
  const Matrix& hv = value(h);
  const Eigen::Index d = hv.rows();
  Matrix a = value(w) * value(x) + value(b);
  Matrix hu = value(u) * hv;
  Matrix z = (a.topRows(d) + hu.topRows(d)).unaryExpr([](double v) { return stable_sigmoid(v); });
  Matrix r = (a.middleRows(d, d) + hu.middleRows(d, d)).unaryExpr([](double v) { return stable_sigmoid(v); });
  Matrix n = (a.bottomRows(d) + r.cwiseProduct(hu.bottomRows(d))).array().tanh().matrix();
  Matrix out = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(hv);
  const bool any = needs(x) || needs(h) || needs(w) || needs(u) || needs(b);
  Var result = push(std::move(out), any, [x, h, w, u, b, d](Tape& t, std::int32_t self) {
    const Matrix& aux = t.nodes_[static_cast<std::size_t>(self)].aux;
    const Matrix z = aux.col(0);
    const Matrix r = aux.col(1);
    const Matrix n = aux.col(2);
    const Matrix hun = aux.col(3);
    const Matrix& g = t.grad_of(self);
    const Matrix& hv = t.value(h);
    Matrix dn = g.cwiseProduct((1.0 - z.array()).matrix());
    Matrix dz = g.cwiseProduct(hv - n);
    Matrix dpre_n = dn.cwiseProduct((1.0 - n.array().square()).matrix());
    Matrix dr = dpre_n.cwiseProduct(hun);
    Matrix da(3 * d, 1);
    da.topRows(d) = dz.cwiseProduct(z.cwiseProduct((1.0 - z.array()).matrix()));
    da.middleRows(d, d) = dr.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));
    da.bottomRows(d) = dpre_n;
    Matrix dhu = da;
    dhu.bottomRows(d) = dpre_n.cwiseProduct(r);
    if (t.needs(w)) t.accumulate(w, da * t.value(x).transpose());
    if (t.needs(b)) t.accumulate(b, da);
    if (t.needs(x)) t.accumulate(x, t.value(w).transpose() * da);
    if (t.needs(u)) t.accumulate(u, dhu * hv.transpose());
    if (t.needs(h)) t.accumulate(h, g.cwiseProduct(z) + t.value(u).transpose() * dhu);
  });
  if (nodes_.back().needs_grad) {
    Matrix aux(d, 4);
    aux.col(0) = z;
    aux.col(1) = r;
    aux.col(2) = n;
    aux.col(3) = hu.bottomRows(d);
    nodes_.back().aux = std::move(aux);
  }
  return result;
}

}  // namespace stner::ad
