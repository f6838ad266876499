#pragma once

// Minimal eager reverse-mode differentiation over dense row-major matrices.
// Build with DSEQ_DOUBLE defined for 64-bit arithmetic (gradient checks).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepseq/rng.hpp"

// The learning code is compiled once per precision. The inline namespace
// keeps the two builds distinct so both may be linked into one binary.
#ifdef DSEQ_DOUBLE
#define DSEQ_PRECISION_NS f64
#else
#define DSEQ_PRECISION_NS f32
#endif

namespace dseq::nn::inline DSEQ_PRECISION_NS {

#ifdef DSEQ_DOUBLE
using Real = double;
#else
using Real = float;
#endif

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<Real> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, Real fill = 0) : rows(r), cols(c), data(r * c, fill) {}
  static Matrix from(std::size_t r, std::size_t c, std::vector<Real> values);

  Real& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::span<Real> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const Real> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Matrix&) const = default;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;  // allocated on first accumulation
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  /// Releases long parent chains iteratively.
  ~Node();

  Matrix& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Matrix(value.rows, value.cols);
    return grad;
  }
};

/// Handle to a value on the tape. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  static Var constant(Matrix value) { return Var(std::move(value), false); }
  static Var parameter(Matrix value) { return Var(std::move(value), true); }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& grad_buffer() { return node_->grad_buffer(); }
  std::size_t rows() const { return node_->value.rows; }
  std::size_t cols() const { return node_->value.cols; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  Real item() const;
  void zero_grad();

  const NodePtr& node() const { return node_; }
  static Var from_node(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  NodePtr node_;
};

/// Reverse pass from a 1x1 result; adds d(root)/d(leaf) into leaf grads.
void backward(const Var& root);

// Core differentiable ops.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& bias);  // bias is 1 x cols, added to every row
Var scale(const Var& a, Real s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
Var stack_rows(const std::vector<Var>& rows);
Var row(const Var& a, std::size_t r);
Var gather_rows(const Var& a, std::span<const std::uint32_t> index);
/// Softmax of a column of scores within each segment; seg[k] < n_segments.
Var segment_softmax(const Var& scores, std::span<const std::uint32_t> seg, std::size_t n_segments);
/// Multiplies row k of `a` by weights(k, 0).
Var scale_rows(const Var& a, const Var& weights);
/// out.row(s) = sum of a.row(k) over k with seg[k] == s.
Var segment_sum(const Var& a, std::span<const std::uint32_t> seg, std::size_t n_segments);
/// Per-row cosine similarity of two equally shaped matrices (rows x 1).
Var row_cosine(const Var& a, const Var& b);
Var sum(const Var& a);
Var mean(const Var& a);
/// mean |a - target| over all entries; target is a constant.
Var mean_abs_diff(const Var& a, const Matrix& target);
/// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
Var bce_with_logits(const Var& logits, const Matrix& targets);

/// Named parameters with gradient buffers and Adam moments.
class ParamStore {
 public:
  Var& add(const std::string& name, Matrix init);
  /// Glorot-uniform weight.
  Var& add_weight(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);
  Var& add_zeros(const std::string& name, std::size_t rows, std::size_t cols);

  Var& at(const std::string& name);
  const Var& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Multiplies every gradient by s (batch averaging).
  void scale_grad(Real s);

  struct Moments {
    Matrix m, v;
  };
  std::vector<Moments>& moments() { return moments_; }
  std::uint64_t& step() { return step_; }

  /// Bitwise equality of names, shapes and values.
  bool same_values(const ParamStore& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Var> params_;
  std::vector<Moments> moments_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update; zeroes gradients afterwards.
void adam_step(ParamStore& store, const AdamConfig& cfg);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint file: "DSQCKPT\n", u64 header length, JSON header (version,
/// metadata, [name, shape, offset]), then little-endian float32 values.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const nlohmann::json& metadata);
/// Loads values into an existing store with matching names and shapes and
/// returns the metadata.
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore& store);
nlohmann::json read_checkpoint_metadata(const std::filesystem::path& path);

}  // namespace dseq::nn::inline DSEQ_PRECISION_NS
