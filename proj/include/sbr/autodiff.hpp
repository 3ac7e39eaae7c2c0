#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "sbr/tensor.hpp"

namespace sbr::ad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  size_t rows() const { return value().rows(); }
  size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records operations in creation order; Backward walks them in reverse, so
// every node is visited once and fan-out gradients add up.
//
// A tape is single-threaded. Parameters are borrowed by reference and their
// gradients land in caller-owned sinks, so several tapes may read the same
// parameters concurrently as long as each has its own sinks.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Tensor value);
  Var Leaf(Tensor value);
  // `value` must outlive the tape. Gradients are added into `grad_sink`
  // (same shape as `value`) during Backward; nullptr makes it a constant.
  Var Param(const Tensor& value, Tensor* grad_sink);

  // Adds a node computed from `inputs`. `backward` is only invoked when the
  // node requires a gradient and one reached it. Throws NumericError when
  // finite checks are on and `value` has NaN/Inf.
  Var Record(Tensor value, std::span<const Var> inputs, BackwardFn backward, const char* op);

  const Tensor& Value(Var v) const;
  bool RequiresGrad(Var v) const { return nodes_[Check(v)].requires_grad; }
  // Zero-shaped tensor when no gradient reached the node.
  const Tensor& Grad(Var v) const;
  // Accumulation target for backward rules. Allocates zeros lazily.
  Tensor& GradBuffer(Var v);

  // Seeds d(scalar)/d(scalar) = 1 and propagates to every leaf.
  void Backward(Var scalar);

  size_t size() const { return nodes_.size(); }
  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    Tensor value;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    Tensor* grad_sink = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  size_t Check(Var v) const;
  const Tensor& NodeValue(const Node& n) const { return n.borrowed ? *n.borrowed : n.value; }

  std::deque<Node> nodes_;  // stable references across Record()
  bool check_finite_;
};

// --- core ops -------------------------------------------------------------
// All binary ops require both operands on the same tape.

// Elementwise sum. `b` may also be a 1 x cols row broadcast over a's rows.
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Scale(Var a, double s);
Var MatMul(Var a, Var b);
Var ConcatCols(std::span<const Var> parts);
Var ConcatRows(std::span<const Var> parts);
Var Slice(Var a, size_t row0, size_t rows, size_t col0, size_t cols);
// out.row(r) = a.row(index[r]); repeated indices accumulate in backward.
Var GatherRows(Var a, std::span<const size_t> index);
// Multiplies row r by mask[r] (constant).
Var ScaleRows(Var a, std::span<const double> mask);
Var Relu(Var a);
Var SoftmaxRows(Var a);
// Row-wise normalization with per-column gain and bias (both 1 x cols).
Var LayerNorm(Var x, Var gain, Var bias, double eps = 1e-5);
Var Huber(Var a, double delta);
// Scalar (1 x 1) mean of all elements.
Var Mean(Var a);
// Each row holds interleaved (x, y) pairs; row r is rotated by angles[r].
Var RotatePoints(Var a, std::span<const double> angles);

// Ragged multi-head scaled dot-product attention. Query row r attends over
// key/value rows [offsets[r], offsets[r + 1]). Rows with an empty range get
// zeros. `offsets` has q.rows() + 1 entries.
Var SegmentAttention(Var q, Var k, Var v, std::span<const size_t> offsets, size_t heads);

// Attention weights used by SegmentAttention: entry [p * heads + h] is the
// weight of key p for head h of its owning query.
std::vector<double> SegmentAttentionWeights(const Tensor& q, const Tensor& k,
                                            std::span<const size_t> offsets, size_t heads);

}  // namespace sbr::ad
