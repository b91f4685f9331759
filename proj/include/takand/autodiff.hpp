#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Vectors are n x 1 matrices. Graphs are built eagerly by
// the op functions below and released when the last Var referencing them
// goes out of scope.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace takand::ad {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  // Row-sparse gradient bookkeeping for large embedding tables: when set,
  // only rows recorded in touched_rows carry non-zero gradient.
  bool track_rows = false;
  std::vector<std::size_t> touched_rows;
  std::vector<char> row_mark;

  std::size_t size() const { return value.size(); }
  void ensure_grad();
  void mark_row(std::size_t r);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::vector<double> to_vector() const { return node_->value; }

  double item() const;
  double at(std::size_t r, std::size_t c = 0) const {
    return node_->value[r * node_->cols + c];
  }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaves.
Var constant(std::size_t rows, std::size_t cols, std::vector<double> values);
Var column(std::vector<double> values);
Var zeros(std::size_t rows, std::size_t cols);
Var parameter(std::size_t rows, std::size_t cols, std::vector<double> values,
              bool track_rows = false);

// Builds an op node. The backward closure receives the result node and must
// accumulate into parents that require grad.
Var make_op(std::size_t rows, std::size_t cols, std::vector<double> value,
            std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// While alive on a thread, ops built on that thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Reverse sweep from a 1x1 root; leaves accumulate into their grad.
void backward(const Var& root);
void zero_grad(Var& leaf);
Var detach(const Var& v);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var silu(const Var& a);
Var relu(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var square(const Var& a);

// Broadcast a column vector (rows x 1) across the columns of a.
Var add_col(const Var& a, const Var& v);
Var mul_col(const Var& a, const Var& v);

// Linear algebra and layout.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);
Var vcat(std::span<const Var> parts);
Var vcat(std::initializer_list<Var> parts);
Var hcat(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t start, std::size_t count);
Var slice_cols(const Var& a, std::size_t start, std::size_t count);
Var gather_row(const Var& table, std::size_t row);  // row as a column vector
Var gather_cols(const Var& a, std::span<const std::size_t> index);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);
Var row_mean(const Var& a);
Var l2norm(const Var& a);
Var softmax(const Var& a);  // over all elements

// Standardize each block of elements to zero mean / unit variance.
// group_standardize: x is C x L, channels split into `groups` equal blocks.
// column_standardize: each column is its own block (token layer norm).
Var group_standardize(const Var& x, std::size_t groups, double eps = 1e-5);
Var column_standardize(const Var& x, double eps = 1e-5);

// 1-D convolution. x: Cin x L, w: Cout x (Cin * kernel), b: Cout x 1.
Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t kernel,
           std::size_t stride, std::size_t pad);

}  // namespace takand::ad
