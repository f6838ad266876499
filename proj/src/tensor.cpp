#include "deepseq/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dseq::nn::inline DSEQ_PRECISION_NS {
namespace {

void check_finite(const Matrix& m, const char* op) {
  for (Real x : m.data) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

std::string shape(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

using Backward = std::function<void(Node&)>;

Var make(Matrix value, std::vector<NodePtr> parents, Backward bw, const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Var::from_node(std::move(n));
}

// C (m x n) += A (m x k) * B (k x n)
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t m = a.rows, k = a.cols, n = b.cols;
  for (std::size_t i = 0; i < m; ++i) {
    Real* ci = c.data.data() + i * n;
    const Real* ai = a.data.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real s = ai[p];
      if (s == 0) continue;
      const Real* bp = b.data.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
}

// dA (m x k) += dC (m x n) * B^T, B is k x n
void gemm_nt(const Matrix& dc, const Matrix& b, Matrix& da) {
  const std::size_t m = dc.rows, n = dc.cols, k = b.rows;
  for (std::size_t i = 0; i < m; ++i) {
    const Real* g = dc.data.data() + i * n;
    Real* out = da.data.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real* bp = b.data.data() + p * n;
      Real acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += g[j] * bp[j];
      out[p] += acc;
    }
  }
}

// dB (k x n) += A^T * dC, A is m x k
void gemm_tn(const Matrix& a, const Matrix& dc, Matrix& db) {
  const std::size_t m = a.rows, k = a.cols, n = dc.cols;
  for (std::size_t i = 0; i < m; ++i) {
    const Real* ai = a.data.data() + i * k;
    const Real* g = dc.data.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real s = ai[p];
      if (s == 0) continue;
      Real* out = db.data.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += s * g[j];
    }
  }
}

template <typename F>
Var unary(const Var& a, const char* op, F forward_and_deriv) {
  const Matrix& x = a.value();
  Matrix y(x.rows, x.cols), dydx(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) forward_and_deriv(x.data[i], y.data[i], dydx.data[i]);
  auto pa = a.node();
  return make(std::move(y), {pa},
              [pa, d = std::move(dydx)](Node& self) {
                if (!pa->requires_grad) return;
                Matrix& g = pa->grad_buffer();
                for (std::size_t i = 0; i < d.size(); ++i) g.data[i] += self.grad.data[i] * d.data[i];
              },
              op);
}

Real stable_sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

}  // namespace

Matrix Matrix::from(std::size_t r, std::size_t c, std::vector<Real> values) {
  if (values.size() != r * c) throw ShapeError("Matrix::from: value count does not match shape");
  Matrix m;
  m.rows = r;
  m.cols = c;
  m.data = std::move(values);
  return m;
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Real Var::item() const {
  if (value().size() != 1) throw ShapeError("item: not a 1x1 value");
  return value().data[0];
}

void Var::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.data.begin(), node_->grad.data.end(), Real(0));
}

Node::~Node() {
  // Backward closures hold parent pointers too, so drop them together with
  // `parents`; a node is dismantled here only when this is its last owner.
  std::vector<NodePtr> pending = std::move(parents);
  backward = nullptr;
  while (!pending.empty()) {
    NodePtr n = std::move(pending.back());
    pending.pop_back();
    if (n.use_count() == 1) {
      for (auto& p : n->parents) pending.push_back(std::move(p));
      n->parents.clear();
      n->backward = nullptr;
    }
  }
}

void backward(const Var& root) {
  if (root.value().size() != 1) throw ShapeError("backward: root must be 1x1");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_map<Node*, bool> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited[root.node().get()] = true;
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited[p]) {
        visited[p] = true;
        stack.push_back({p, 0});
      }
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }
  root.node()->grad_buffer().data[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul", shape(a.value()) + " * " + shape(b.value()));
  Matrix c(a.rows(), b.cols());
  gemm_nn(a.value(), b.value(), c);
  auto pa = a.node(), pb = b.node();
  return make(std::move(c), {pa, pb},
              [pa, pb](Node& self) {
                if (pa->requires_grad) gemm_nt(self.grad, pb->value, pa->grad_buffer());
                if (pb->requires_grad) gemm_tn(pa->value, self.grad, pb->grad_buffer());
              },
              "matmul");
}

namespace {
template <typename F, typename GA, typename GB>
Var binary(const Var& a, const Var& b, const char* op, F f, GA da, GB db) {
  require(a.value().same_shape(b.value()), op, shape(a.value()) + " vs " + shape(b.value()));
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < c.size(); ++i) c.data[i] = f(a.value().data[i], b.value().data[i]);
  auto pa = a.node(), pb = b.node();
  return make(std::move(c), {pa, pb},
              [pa, pb, da, db](Node& self) {
                const auto& g = self.grad.data;
                if (pa->requires_grad) {
                  auto& ga = pa->grad_buffer().data;
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += da(g[i], pa->value.data[i], pb->value.data[i]);
                }
                if (pb->requires_grad) {
                  auto& gb = pb->grad_buffer().data;
                  for (std::size_t i = 0; i < g.size(); ++i)
                    gb[i] += db(g[i], pa->value.data[i], pb->value.data[i]);
                }
              },
              op);
}
}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](Real x, Real y) { return x + y; }, [](Real g, Real, Real) { return g; },
      [](Real g, Real, Real) { return g; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](Real x, Real y) { return x - y; }, [](Real g, Real, Real) { return g; },
      [](Real g, Real, Real) { return -g; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](Real x, Real y) { return x * y; }, [](Real g, Real, Real y) { return g * y; },
      [](Real g, Real x, Real) { return g * x; });
}

Var add_row(const Var& a, const Var& bias) {
  require(bias.rows() == 1 && bias.cols() == a.cols(), "add_row",
          shape(a.value()) + " + " + shape(bias.value()));
  Matrix c = a.value();
  for (std::size_t r = 0; r < c.rows; ++r) {
    for (std::size_t j = 0; j < c.cols; ++j) c(r, j) += bias.value().data[j];
  }
  auto pa = a.node(), pb = bias.node();
  return make(std::move(c), {pa, pb},
              [pa, pb](Node& self) {
                if (pa->requires_grad) {
                  auto& ga = pa->grad_buffer().data;
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad.data[i];
                }
                if (pb->requires_grad) {
                  auto& gb = pb->grad_buffer().data;
                  const std::size_t cols = gb.size();
                  for (std::size_t r = 0; r < self.grad.rows; ++r) {
                    for (std::size_t j = 0; j < cols; ++j) gb[j] += self.grad.data[r * cols + j];
                  }
                }
              },
              "add_row");
}

Var scale(const Var& a, Real s) {
  Matrix c = a.value();
  for (Real& x : c.data) x *= s;
  auto pa = a.node();
  return make(std::move(c), {pa},
              [pa, s](Node& self) {
                auto& ga = pa->grad_buffer().data;
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad.data[i];
              },
              "scale");
}

Var sigmoid(const Var& a) {
  return unary(a, "sigmoid", [](Real x, Real& y, Real& d) {
    y = stable_sigmoid(x);
    d = y * (Real(1) - y);
  });
}

Var tanh(const Var& a) {
  return unary(a, "tanh", [](Real x, Real& y, Real& d) {
    y = std::tanh(x);
    d = Real(1) - y * y;
  });
}

Var relu(const Var& a) {
  return unary(a, "relu", [](Real x, Real& y, Real& d) {
    y = x > 0 ? x : Real(0);
    d = x > 0 ? Real(1) : Real(0);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols", "row counts differ");
    cols += p.cols();
  }
  Matrix c(rows, cols);
  std::vector<NodePtr> parents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(p.value().row(r).begin(), p.value().row(r).end(), c.row(r).begin() + offset);
    }
    offset += p.cols();
    parents.push_back(p.node());
  }
  return make(std::move(c), parents,
              [parents](Node& self) {
                std::size_t offset = 0;
                for (const auto& p : parents) {
                  const std::size_t w = p->value.cols;
                  if (p->requires_grad) {
                    Matrix& g = p->grad_buffer();
                    for (std::size_t r = 0; r < g.rows; ++r) {
                      const Real* src = self.grad.data.data() + r * self.grad.cols + offset;
                      Real* dst = g.data.data() + r * w;
                      for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                    }
                  }
                  offset += w;
                }
              },
              "concat_cols");
}

Var stack_rows(const std::vector<Var>& rows) {
  require(!rows.empty(), "stack_rows", "no inputs");
  const std::size_t cols = rows[0].cols();
  std::size_t total = 0;
  for (const auto& r : rows) {
    require(r.cols() == cols, "stack_rows", "column counts differ");
    total += r.rows();
  }
  Matrix c(total, cols);
  std::vector<NodePtr> parents;
  std::size_t at = 0;
  for (const auto& r : rows) {
    std::copy(r.value().data.begin(), r.value().data.end(), c.data.begin() + static_cast<std::ptrdiff_t>(at * cols));
    at += r.rows();
    parents.push_back(r.node());
  }
  return make(std::move(c), parents,
              [parents](Node& self) {
                std::size_t at = 0;
                const std::size_t cols = self.grad.cols;
                for (const auto& p : parents) {
                  const std::size_t n = p->value.size();
                  if (p->requires_grad) {
                    auto& g = p->grad_buffer().data;
                    const Real* src = self.grad.data.data() + at * cols;
                    for (std::size_t i = 0; i < n; ++i) g[i] += src[i];
                  }
                  at += p->value.rows;
                }
              },
              "stack_rows");
}

Var row(const Var& a, std::size_t r) {
  require(r < a.rows(), "row", "index out of range");
  Matrix c(1, a.cols());
  std::copy(a.value().row(r).begin(), a.value().row(r).end(), c.data.begin());
  auto pa = a.node();
  return make(std::move(c), {pa},
              [pa, r](Node& self) {
                auto dst = pa->grad_buffer().row(r);
                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += self.grad.data[j];
              },
              "row");
}

Var gather_rows(const Var& a, std::span<const std::uint32_t> index) {
  Matrix c(index.size(), a.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    require(index[k] < a.rows(), "gather_rows", "index out of range");
    std::copy(a.value().row(index[k]).begin(), a.value().row(index[k]).end(), c.row(k).begin());
  }
  auto pa = a.node();
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return make(std::move(c), {pa},
              [pa, idx = std::move(idx)](Node& self) {
                Matrix& g = pa->grad_buffer();
                for (std::size_t k = 0; k < idx.size(); ++k) {
                  auto dst = g.row(idx[k]);
                  auto src = self.grad.row(k);
                  for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                }
              },
              "gather_rows");
}

Var segment_softmax(const Var& scores, std::span<const std::uint32_t> seg, std::size_t n_segments) {
  require(scores.cols() == 1 && scores.rows() == seg.size(), "segment_softmax",
          "scores must be a column with one entry per segment id");
  const auto& s = scores.value().data;
  std::vector<Real> top(n_segments, -std::numeric_limits<Real>::infinity());
  for (std::size_t k = 0; k < seg.size(); ++k) {
    require(seg[k] < n_segments, "segment_softmax", "segment id out of range");
    top[seg[k]] = std::max(top[seg[k]], s[k]);
  }
  Matrix y(seg.size(), 1);
  std::vector<Real> z(n_segments, 0);
  for (std::size_t k = 0; k < seg.size(); ++k) {
    y.data[k] = std::exp(s[k] - top[seg[k]]);
    z[seg[k]] += y.data[k];
  }
  for (std::size_t k = 0; k < seg.size(); ++k) y.data[k] /= z[seg[k]];
  auto pa = scores.node();
  std::vector<std::uint32_t> sg(seg.begin(), seg.end());
  return make(std::move(y), {pa},
              [pa, sg = std::move(sg), n_segments](Node& self) {
                std::vector<Real> dot(n_segments, 0);
                const auto& yv = self.value.data;
                const auto& gy = self.grad.data;
                for (std::size_t k = 0; k < sg.size(); ++k) dot[sg[k]] += yv[k] * gy[k];
                auto& ga = pa->grad_buffer().data;
                for (std::size_t k = 0; k < sg.size(); ++k) ga[k] += yv[k] * (gy[k] - dot[sg[k]]);
              },
              "segment_softmax");
}

Var scale_rows(const Var& a, const Var& weights) {
  require(weights.cols() == 1 && weights.rows() == a.rows(), "scale_rows",
          "weights must be a column matching the rows");
  Matrix c = a.value();
  for (std::size_t r = 0; r < c.rows; ++r) {
    const Real w = weights.value().data[r];
    for (Real& x : c.row(r)) x *= w;
  }
  auto pa = a.node(), pw = weights.node();
  return make(std::move(c), {pa, pw},
              [pa, pw](Node& self) {
                const std::size_t rows = self.grad.rows;
                if (pa->requires_grad) {
                  Matrix& g = pa->grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r) {
                    const Real w = pw->value.data[r];
                    auto dst = g.row(r);
                    auto src = self.grad.row(r);
                    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
                  }
                }
                if (pw->requires_grad) {
                  auto& gw = pw->grad_buffer().data;
                  for (std::size_t r = 0; r < rows; ++r) {
                    auto x = pa->value.row(r);
                    auto src = self.grad.row(r);
                    Real acc = 0;
                    for (std::size_t j = 0; j < x.size(); ++j) acc += x[j] * src[j];
                    gw[r] += acc;
                  }
                }
              },
              "scale_rows");
}

Var segment_sum(const Var& a, std::span<const std::uint32_t> seg, std::size_t n_segments) {
  require(seg.size() == a.rows(), "segment_sum", "one segment id per row required");
  Matrix c(n_segments, a.cols());
  for (std::size_t k = 0; k < seg.size(); ++k) {
    require(seg[k] < n_segments, "segment_sum", "segment id out of range");
    auto dst = c.row(seg[k]);
    auto src = a.value().row(k);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  auto pa = a.node();
  std::vector<std::uint32_t> sg(seg.begin(), seg.end());
  return make(std::move(c), {pa},
              [pa, sg = std::move(sg)](Node& self) {
                Matrix& g = pa->grad_buffer();
                for (std::size_t k = 0; k < sg.size(); ++k) {
                  auto dst = g.row(k);
                  auto src = self.grad.row(sg[k]);
                  for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                }
              },
              "segment_sum");
}

Var row_cosine(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "row_cosine", shape(a.value()) + " vs " + shape(b.value()));
  // Norms are sqrt(|x|^2 + eps) so the result stays smooth at zero.
  constexpr Real kEps = Real(1e-12);
  const std::size_t rows = a.rows();
  Matrix c(rows, 1);
  std::vector<Real> na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto x = a.value().row(r), y = b.value().row(r);
    Real dot = 0, xx = 0, yy = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      dot += x[j] * y[j];
      xx += x[j] * x[j];
      yy += y[j] * y[j];
    }
    na[r] = std::sqrt(xx + kEps);
    nb[r] = std::sqrt(yy + kEps);
    c.data[r] = dot / (na[r] * nb[r]);
  }
  auto pa = a.node(), pb = b.node();
  return make(std::move(c), {pa, pb},
              [pa, pb, na = std::move(na), nb = std::move(nb)](Node& self) {
                for (std::size_t r = 0; r < na.size(); ++r) {
                  const Real g = self.grad.data[r];
                  const Real cos = self.value.data[r];
                  auto x = pa->value.row(r), y = pb->value.row(r);
                  if (pa->requires_grad) {
                    auto dx = pa->grad_buffer().row(r);
                    for (std::size_t j = 0; j < x.size(); ++j)
                      dx[j] += g * (y[j] / (na[r] * nb[r]) - cos * x[j] / (na[r] * na[r]));
                  }
                  if (pb->requires_grad) {
                    auto dy = pb->grad_buffer().row(r);
                    for (std::size_t j = 0; j < y.size(); ++j)
                      dy[j] += g * (x[j] / (na[r] * nb[r]) - cos * y[j] / (nb[r] * nb[r]));
                  }
                }
              },
              "row_cosine");
}

Var sum(const Var& a) {
  Real acc = 0;
  for (Real x : a.value().data) acc += x;
  auto pa = a.node();
  return make(Matrix::from(1, 1, {acc}), {pa},
              [pa](Node& self) {
                const Real g = self.grad.data[0];
                for (Real& x : pa->grad_buffer().data) x += g;
              },
              "sum");
}

Var mean(const Var& a) {
  require(a.value().size() > 0, "mean", "empty input");
  return scale(sum(a), Real(1) / static_cast<Real>(a.value().size()));
}

Var mean_abs_diff(const Var& a, const Matrix& target) {
  require(a.value().same_shape(target), "mean_abs_diff", shape(a.value()) + " vs " + shape(target));
  require(a.value().size() > 0, "mean_abs_diff", "empty input");
  const Real inv = Real(1) / static_cast<Real>(target.size());
  Real acc = 0;
  for (std::size_t i = 0; i < target.size(); ++i) acc += std::abs(a.value().data[i] - target.data[i]);
  auto pa = a.node();
  return make(Matrix::from(1, 1, {acc * inv}), {pa},
              [pa, target, inv](Node& self) {
                const Real g = self.grad.data[0] * inv;
                auto& ga = pa->grad_buffer().data;
                for (std::size_t i = 0; i < ga.size(); ++i) {
                  const Real d = pa->value.data[i] - target.data[i];
                  ga[i] += d > 0 ? g : (d < 0 ? -g : Real(0));
                }
              },
              "mean_abs_diff");
}

Var bce_with_logits(const Var& logits, const Matrix& targets) {
  require(logits.value().same_shape(targets), "bce_with_logits",
          shape(logits.value()) + " vs " + shape(targets));
  require(targets.size() > 0, "bce_with_logits", "empty input");
  const Real inv = Real(1) / static_cast<Real>(targets.size());
  Real acc = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Real z = logits.value().data[i], y = targets.data[i];
    acc += std::max(z, Real(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  auto pa = logits.node();
  return make(Matrix::from(1, 1, {acc * inv}), {pa},
              [pa, targets, inv](Node& self) {
                const Real g = self.grad.data[0] * inv;
                auto& ga = pa->grad_buffer().data;
                for (std::size_t i = 0; i < ga.size(); ++i) {
                  ga[i] += g * (stable_sigmoid(pa->value.data[i]) - targets.data[i]);
                }
              },
              "bce_with_logits");
}

// ---------------------------------------------------------------------------
// ParamStore and Adam
// ---------------------------------------------------------------------------

Var& ParamStore::add(const std::string& name, Matrix init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  names_.push_back(name);
  const std::size_t r = init.rows, c = init.cols;
  params_.push_back(Var::parameter(std::move(init)));
  moments_.push_back({Matrix(r, c), Matrix(r, c)});
  return params_.back();
}

Var& ParamStore::add_weight(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Real& x : m.data) x = static_cast<Real>((2.0 * rng.uniform() - 1.0) * limit);
  return add(name, std::move(m));
}

Var& ParamStore::add_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
  return add(name, Matrix(rows, cols));
}

Var& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return params_[it->second];
}

const Var& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return params_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void ParamStore::scale_grad(Real s) {
  for (auto& p : params_) {
    if (p.grad().empty()) continue;
    for (Real& x : p.grad_buffer().data) x *= s;
  }
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i].value();
    const auto& b = other.params_[i].value();
    if (!a.same_shape(b)) return false;
    if (std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(Real)) != 0) return false;
  }
  return true;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
  const std::uint64_t t = ++store.step();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Var& p = store.at(store.names()[i]);
    auto& mom = store.moments()[i];
    Matrix& value = p.mutable_value();
    const Matrix& grad = p.grad();
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad.data[k]);
      const double m = cfg.beta1 * mom.m.data[k] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * mom.v.data[k] + (1.0 - cfg.beta2) * g * g;
      mom.m.data[k] = static_cast<Real>(m);
      mom.v.data[k] = static_cast<Real>(v);
      const double update = cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
      value.data[k] = static_cast<Real>(value.data[k] - update);
    }
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'D', 'S', 'Q', 'C', 'K', 'P', 'T', '\n'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

nlohmann::json read_header(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not a checkpoint file");
  const std::uint64_t len = get_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint header truncated");
  auto header = nlohmann::json::parse(text);
  if (header.at("version").get<std::uint32_t>() != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  return header;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const nlohmann::json& metadata) {
  nlohmann::ordered_json header;
  header["format"] = "dseq-checkpoint";
  header["version"] = kCheckpointVersion;
  header["metadata"] = metadata;
  auto index = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& name : store.names()) {
    const auto& v = store.at(name).value();
    index.push_back({{"name", name}, {"shape", {v.rows, v.cols}}, {"offset", offset}});
    offset += v.size() * 4;
  }
  header["params"] = std::move(index);
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, 8);
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& name : store.names()) {
    for (Real x : store.at(name).value().data) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
      unsigned char b[4];
      for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
      os.write(reinterpret_cast<const char*>(b), 4);
    }
  }
}

nlohmann::json read_checkpoint_metadata(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_header(is).at("metadata");
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const auto header = read_header(is);
  const auto blob_start = is.tellg();
  for (const auto& e : header.at("params")) {
    const auto name = e.at("name").get<std::string>();
    Var& p = store.at(name);
    const auto rows = e.at("shape")[0].get<std::size_t>(), cols = e.at("shape")[1].get<std::size_t>();
    if (p.rows() != rows || p.cols() != cols) {
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
    }
    is.seekg(blob_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    for (Real& x : p.mutable_value().data) {
      unsigned char b[4];
      is.read(reinterpret_cast<char*>(b), 4);
      if (!is) throw std::runtime_error("checkpoint blob truncated");
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
      x = static_cast<Real>(std::bit_cast<float>(bits));
    }
  }
  return header.at("metadata");
}

}  // namespace dseq::nn::inline DSEQ_PRECISION_NS
