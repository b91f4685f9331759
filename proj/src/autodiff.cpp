#include "takand/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace takand::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: ") + what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op + " (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

// Gradient slot of parent i if it participates in the backward pass.
double* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

template <typename F, typename D>
Var unary(const Var& a, F f, D df) {
  std::vector<double> out(a.size());
  const auto in = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_op(a.rows(), a.cols(), std::move(out), {a}, [df](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      g[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

thread_local bool g_grad_enabled = true;

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

void Node::mark_row(std::size_t r) {
  if (!track_rows) return;
  if (row_mark.size() != rows) row_mark.assign(rows, 0);
  if (!row_mark[r]) {
    row_mark[r] = 1;
    touched_rows.push_back(r);
  }
}

double Var::item() const {
  require(size() == 1, "item() on non-scalar");
  return node_->value[0];
}

Var constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  require(values.size() == rows * cols, "constant: size does not match shape");
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  return Var(std::move(n));
}

Var column(std::vector<double> values) {
  const auto n = values.size();
  return constant(n, 1, std::move(values));
}

Var zeros(std::size_t rows, std::size_t cols) {
  return constant(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Var parameter(std::size_t rows, std::size_t cols, std::vector<double> values,
              bool track_rows) {
  Var v = constant(rows, cols, std::move(values));
  v.node()->requires_grad = true;
  v.node()->track_rows = track_rows;
  return v;
}

Var make_op(std::size_t rows, std::size_t cols, std::vector<double> value,
            std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (g_grad_enabled && p.requires_grad()) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.shared());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  require(root.size() == 1, "backward() requires a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediate gradients start from zero on every sweep.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  }
  root.node()->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  // Release intermediate buffers.
  for (Node* n : order) {
    if (n->backward_fn) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

void zero_grad(Var& leaf) {
  Node* n = leaf.node();
  if (n->grad.empty()) return;
  if (n->track_rows) {
    for (std::size_t r : n->touched_rows) {
      std::fill_n(n->grad.begin() + static_cast<std::ptrdiff_t>(r * n->cols), n->cols, 0.0);
      n->row_mark[r] = 0;
    }
    n->touched_rows.clear();
  } else {
    std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
}

Var detach(const Var& v) { return constant(v.rows(), v.cols(), v.to_vector()); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = grad_of(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var add_col(const Var& a, const Var& v) {
  require(v.rows() == a.rows() && v.cols() == 1, "add_col: expected rows x 1 vector");
  const std::size_t R = a.rows(), C = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = a.value()[r * C + c] + v.value()[r];
  return make_op(R, C, std::move(out), {a, v}, [R, C](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) g[r] += self.grad[r * C + c];
  });
}

Var mul_col(const Var& a, const Var& v) {
  require(v.rows() == a.rows() && v.cols() == 1, "mul_col: expected rows x 1 vector");
  const std::size_t R = a.rows(), C = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = a.value()[r * C + c] * v.value()[r];
  return make_op(R, C, std::move(out), {a, v}, [R, C](Node& self) {
    const auto& x = self.parents[0]->value;
    const auto& s = self.parents[1]->value;
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) g[r * C + c] += self.grad[r * C + c] * s[r];
    if (double* g = grad_of(self, 1))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) g[r] += self.grad[r * C + c] * x[r * C + c];
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("autodiff: matmul inner dimension mismatch (" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                ")");
  }
  const std::size_t M = a.rows(), K = a.cols(), N = b.cols();
  std::vector<double> out(M * N, 0.0);
  const double* A = a.value().data();
  const double* B = b.value().data();
  for (std::size_t i = 0; i < M; ++i) {
    double* o = out.data() + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = A[i * K + k];
      if (aik == 0.0) continue;
      const double* brow = B + k * N;
      for (std::size_t j = 0; j < N; ++j) o[j] += aik * brow[j];
    }
  }
  return make_op(M, N, std::move(out), {a, b}, [M, K, N](Node& self) {
    const double* A = self.parents[0]->value.data();
    const double* B = self.parents[1]->value.data();
    const double* G = self.grad.data();
    if (double* ga = grad_of(self, 0)) {
      // dA = G * B^T
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          double acc = 0.0;
          const double* brow = B + k * N;
          const double* grow = G + i * N;
          for (std::size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
          ga[i * K + k] += acc;
        }
    }
    if (double* gb = grad_of(self, 1)) {
      // dB = A^T * G
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          const double aik = A[i * K + k];
          if (aik == 0.0) continue;
          const double* grow = G + i * N;
          double* gbrow = gb + k * N;
          for (std::size_t j = 0; j < N; ++j) gbrow[j] += aik * grow[j];
        }
    }
  });
}

Var transpose(const Var& a) {
  const std::size_t R = a.rows(), C = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = a.value()[r * C + c];
  return make_op(C, R, std::move(out), {a}, [R, C](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) g[r * C + c] += self.grad[c * R + r];
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  require(rows * cols == a.size(), "reshape: element count mismatch");
  return make_op(rows, cols, a.to_vector(), {a}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Var vcat(std::span<const Var> parts) {
  require(!parts.empty(), "vcat: no inputs");
  const std::size_t C = parts.front().cols();
  std::size_t R = 0;
  for (const auto& p : parts) {
    require(p.cols() == C, "vcat: column count mismatch");
    R += p.rows();
  }
  std::vector<double> out;
  out.reserve(R * C);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make_op(R, C, std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                 [](Node& self) {
                   std::size_t offset = 0;
                   for (std::size_t k = 0; k < self.parents.size(); ++k) {
                     const std::size_t n = self.parents[k]->value.size();
                     if (double* g = grad_of(self, k))
                       for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
                     offset += n;
                   }
                 });
}

Var vcat(std::initializer_list<Var> parts) {
  return vcat(std::span<const Var>(parts.begin(), parts.size()));
}

Var hcat(std::span<const Var> parts) {
  require(!parts.empty(), "hcat: no inputs");
  const std::size_t R = parts.front().rows();
  std::size_t C = 0;
  for (const auto& p : parts) {
    require(p.rows() == R, "hcat: row count mismatch");
    C += p.cols();
  }
  std::vector<double> out(R * C);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out[r * C + c0 + c] = p.at(r, c);
    c0 += p.cols();
  }
  return make_op(R, C, std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                 [R, C](Node& self) {
                   std::size_t c0 = 0;
                   for (std::size_t k = 0; k < self.parents.size(); ++k) {
                     const std::size_t pc = self.parents[k]->cols;
                     if (double* g = grad_of(self, k))
                       for (std::size_t r = 0; r < R; ++r)
                         for (std::size_t c = 0; c < pc; ++c)
                           g[r * pc + c] += self.grad[r * C + c0 + c];
                     c0 += pc;
                   }
                 });
}

Var slice_rows(const Var& a, std::size_t start, std::size_t count) {
  require(start + count <= a.rows(), "slice_rows: out of range");
  const std::size_t C = a.cols();
  std::vector<double> out(a.value().begin() + static_cast<std::ptrdiff_t>(start * C),
                          a.value().begin() + static_cast<std::ptrdiff_t>((start + count) * C));
  return make_op(count, C, std::move(out), {a}, [start, C](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * C + i] += self.grad[i];
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  require(start + count <= a.cols(), "slice_cols: out of range");
  const std::size_t R = a.rows(), C = a.cols();
  std::vector<double> out(R * count);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = a.at(r, start + c);
  return make_op(R, count, std::move(out), {a}, [R, C, start, count](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < count; ++c) g[r * C + start + c] += self.grad[r * count + c];
  });
}

Var gather_row(const Var& table, std::size_t row) {
  require(row < table.rows(), "gather_row: row out of range");
  const std::size_t C = table.cols();
  std::vector<double> out(table.value().begin() + static_cast<std::ptrdiff_t>(row * C),
                          table.value().begin() + static_cast<std::ptrdiff_t>((row + 1) * C));
  return make_op(C, 1, std::move(out), {table}, [row, C](Node& self) {
    if (double* g = grad_of(self, 0)) {
      self.parents[0]->mark_row(row);
      for (std::size_t i = 0; i < C; ++i) g[row * C + i] += self.grad[i];
    }
  });
}

Var gather_cols(const Var& a, std::span<const std::size_t> index) {
  const std::size_t R = a.rows(), C = a.cols(), N = index.size();
  for (std::size_t j : index) require(j < C, "gather_cols: index out of range");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(R * N);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < N; ++c) out[r * N + c] = a.at(r, idx[c]);
  return make_op(R, N, std::move(out), {a}, [R, C, N, idx](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < N; ++c) g[r * C + idx[c]] += self.grad[r * N + c];
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value()) s += x;
  return make_op(1, 1, {s}, {a}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& a) {
  require(a.size() > 0, "mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var row_sum(const Var& a) {
  const std::size_t R = a.rows(), C = a.cols();
  std::vector<double> out(R, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r] += a.at(r, c);
  return make_op(R, 1, std::move(out), {a}, [R, C](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) g[r * C + c] += self.grad[r];
  });
}

Var row_mean(const Var& a) {
  require(a.cols() > 0, "row_mean of zero columns");
  return scale(row_sum(a), 1.0 / static_cast<double>(a.cols()));
}

Var l2norm(const Var& a) {
  double s = 0.0;
  for (double x : a.value()) s += x * x;
  const double n = std::sqrt(s);
  return make_op(1, 1, {n}, {a}, [](Node& self) {
    double* g = grad_of(self, 0);
    const double n = self.value[0];
    if (!g || n == 0.0) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[0] * x[i] / n;
  });
}

Var softmax(const Var& a) {
  require(a.size() > 0, "softmax of empty input");
  const auto in = a.value();
  const double mx = *std::max_element(in.begin(), in.end());
  std::vector<double> out(in.size());
  double z = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) z += (out[i] = std::exp(in[i] - mx));
  for (double& v : out) v /= z;
  return make_op(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < self.value.size(); ++i) dot += self.grad[i] * self.value[i];
    for (std::size_t i = 0; i < self.value.size(); ++i)
      g[i] += self.value[i] * (self.grad[i] - dot);
  });
}

namespace {

// Shared standardization kernel over disjoint index blocks.
Var standardize_blocks(const Var& x, std::vector<std::vector<std::size_t>> blocks, double eps) {
  std::vector<double> out(x.size());
  std::vector<double> inv_std(blocks.size());
  const auto in = x.value();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& idx = blocks[b];
    const double n = static_cast<double>(idx.size());
    double mu = 0.0;
    for (auto i : idx) mu += in[i];
    mu /= n;
    double var = 0.0;
    for (auto i : idx) var += (in[i] - mu) * (in[i] - mu);
    var /= n;
    inv_std[b] = 1.0 / std::sqrt(var + eps);
    for (auto i : idx) out[i] = (in[i] - mu) * inv_std[b];
  }
  return make_op(x.rows(), x.cols(), std::move(out), {x},
                 [blocks = std::move(blocks), inv_std](Node& self) {
                   double* g = grad_of(self, 0);
                   if (!g) return;
                   for (std::size_t b = 0; b < blocks.size(); ++b) {
                     const auto& idx = blocks[b];
                     const double n = static_cast<double>(idx.size());
                     double mg = 0.0, mgy = 0.0;
                     for (auto i : idx) {
                       mg += self.grad[i];
                       mgy += self.grad[i] * self.value[i];
                     }
                     mg /= n;
                     mgy /= n;
                     for (auto i : idx)
                       g[i] += inv_std[b] * (self.grad[i] - mg - self.value[i] * mgy);
                   }
                 });
}

}  // namespace

Var group_standardize(const Var& x, std::size_t groups, double eps) {
  require(groups > 0 && x.rows() % groups == 0, "group_standardize: channels not divisible");
  const std::size_t per = x.rows() / groups, L = x.cols();
  std::vector<std::vector<std::size_t>> blocks(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    blocks[g].reserve(per * L);
    for (std::size_t i = g * per * L; i < (g + 1) * per * L; ++i) blocks[g].push_back(i);
  }
  return standardize_blocks(x, std::move(blocks), eps);
}

Var column_standardize(const Var& x, double eps) {
  const std::size_t R = x.rows(), C = x.cols();
  std::vector<std::vector<std::size_t>> blocks(C);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t r = 0; r < R; ++r) blocks[c].push_back(r * C + c);
  return standardize_blocks(x, std::move(blocks), eps);
}

Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t kernel, std::size_t stride,
           std::size_t pad) {
  const std::size_t cin = x.rows(), L = x.cols(), cout = w.rows();
  require(w.cols() == cin * kernel, "conv1d: weight shape does not match input channels");
  require(b.rows() == cout && b.cols() == 1, "conv1d: bias shape");
  require(stride >= 1 && L + 2 * pad >= kernel, "conv1d: invalid geometry");
  const std::size_t lout = (L + 2 * pad - kernel) / stride + 1;
  std::vector<double> out(cout * lout);
  const auto X = x.value(), W = w.value(), B = b.value();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t p = 0; p < lout; ++p) {
      double acc = B[o];
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t k = 0; k < kernel; ++k) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(p * stride + k) -
                                     static_cast<std::ptrdiff_t>(pad);
          if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(L)) continue;
          acc += W[o * cin * kernel + c * kernel + k] * X[c * L + static_cast<std::size_t>(pos)];
        }
      out[o * lout + p] = acc;
    }
  return make_op(cout, lout, std::move(out), {x, w, b},
                 [cin, L, cout, lout, kernel, stride, pad](Node& self) {
                   const auto& X = self.parents[0]->value;
                   const auto& W = self.parents[1]->value;
                   double* gx = grad_of(self, 0);
                   double* gw = grad_of(self, 1);
                   double* gb = grad_of(self, 2);
                   for (std::size_t o = 0; o < cout; ++o)
                     for (std::size_t p = 0; p < lout; ++p) {
                       const double go = self.grad[o * lout + p];
                       if (gb) gb[o] += go;
                       for (std::size_t c = 0; c < cin; ++c)
                         for (std::size_t k = 0; k < kernel; ++k) {
                           const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(p * stride + k) -
                                                      static_cast<std::ptrdiff_t>(pad);
                           if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(L)) continue;
                           const std::size_t xi = c * L + static_cast<std::size_t>(pos);
                           const std::size_t wi = o * cin * kernel + c * kernel + k;
                           if (gw) gw[wi] += go * X[xi];
                           if (gx) gx[xi] += go * W[wi];
                         }
                     }
                 });
}

}  // namespace takand::ad
