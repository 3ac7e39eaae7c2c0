#include "sbr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sbr/errors.hpp"

namespace sbr {

Tensor::Tensor(size_t rows, size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

bool Tensor::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace ad {

namespace {

std::string ShapeStr(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

Tape& SameTape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ShapeError(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape();
}

}  // namespace

const Tensor& Var::value() const { return tape_->Value(*this); }

size_t Tape::Check(Var v) const {
  if (v.tape_ != this || v.id_ < 0 || static_cast<size_t>(v.id_) >= nodes_.size()) {
    throw ShapeError("variable does not belong to this tape");
  }
  return static_cast<size_t>(v.id_);
}

Var Tape::Constant(Tensor value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::Leaf(Tensor value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = true;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::Param(const Tensor& value, Tensor* grad_sink) {
  if (grad_sink != nullptr && !grad_sink->SameShape(value)) {
    throw ShapeError("parameter gradient sink has shape " + ShapeStr(*grad_sink) +
                     ", expected " + ShapeStr(value));
  }
  Node& n = nodes_.emplace_back();
  n.borrowed = &value;
  n.grad_sink = grad_sink;
  n.requires_grad = grad_sink != nullptr;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::Record(Tensor value, std::span<const Var> inputs, BackwardFn backward, const char* op) {
  if (check_finite_ && !value.AllFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  bool needs_grad = false;
  for (const Var& in : inputs) needs_grad = needs_grad || nodes_[Check(in)].requires_grad;
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::Value(Var v) const { return NodeValue(nodes_[Check(v)]); }

const Tensor& Tape::Grad(Var v) const {
  static const Tensor kEmpty;
  const Node& n = nodes_[Check(v)];
  if (n.grad_sink != nullptr) return *n.grad_sink;
  return n.has_grad ? n.grad : kEmpty;
}

Tensor& Tape::GradBuffer(Var v) {
  Node& n = nodes_[Check(v)];
  if (n.grad_sink != nullptr) return *n.grad_sink;
  if (!n.has_grad) {
    const Tensor& value = NodeValue(n);
    n.grad = Tensor(value.rows(), value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::Backward(Var scalar) {
  const size_t root = Check(scalar);
  if (Value(scalar).size() != 1) {
    throw ShapeError("backward needs a scalar, got " + ShapeStr(Value(scalar)));
  }
  if (!nodes_[root].requires_grad) return;
  GradBuffer(scalar).data()[0] += 1.0;
  for (size_t id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

// --- ops ----------------------------------------------------------------

Var Add(Var a, Var b) {
  Tape& tape = SameTape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = bv.rows() == 1 && av.rows() != 1 && bv.cols() == av.cols();
  if (!av.SameShape(bv) && !broadcast) {
    throw ShapeError("add: " + ShapeStr(av) + " vs " + ShapeStr(bv));
  }
  Tensor out = av;
  if (broadcast) {
    out.mat().rowwise() += bv.mat().row(0);
  } else {
    out.mat() += bv.mat();
  }
  const Var inputs[] = {a, b};
  return tape.Record(
      std::move(out), inputs,
      [a, b, broadcast](Tape& t, const Tensor& g) {
        if (t.RequiresGrad(a)) t.GradBuffer(a).mat() += g.mat();
        if (t.RequiresGrad(b)) {
          if (broadcast) {
            t.GradBuffer(b).mat() += g.mat().colwise().sum();
          } else {
            t.GradBuffer(b).mat() += g.mat();
          }
        }
      },
      "add");
}

Var Sub(Var a, Var b) {
  Tape& tape = SameTape(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.SameShape(bv)) throw ShapeError("sub: " + ShapeStr(av) + " vs " + ShapeStr(bv));
  Tensor out = av;
  out.mat() -= bv.mat();
  const Var inputs[] = {a, b};
  return tape.Record(
      std::move(out), inputs,
      [a, b](Tape& t, const Tensor& g) {
        if (t.RequiresGrad(a)) t.GradBuffer(a).mat() += g.mat();
        if (t.RequiresGrad(b)) t.GradBuffer(b).mat() -= g.mat();
      },
      "sub");
}

Var Scale(Var a, double s) {
  Tensor out = a.value();
  out.mat() *= s;
  const Var inputs[] = {a};
  return a.tape()->Record(
      std::move(out), inputs,
      [a, s](Tape& t, const Tensor& g) { t.GradBuffer(a).mat() += s * g.mat(); }, "scale");
}

Var MatMul(Var a, Var b) {
  Tape& tape = SameTape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + ShapeStr(av) + " * " + ShapeStr(bv));
  }
  Tensor out(av.rows(), bv.cols());
  if (!out.empty() && av.cols() > 0) out.mat().noalias() = av.mat() * bv.mat();
  const Var inputs[] = {a, b};
  return tape.Record(
      std::move(out), inputs,
      [a, b](Tape& t, const Tensor& g) {
        if (g.empty()) return;
        if (t.RequiresGrad(a)) t.GradBuffer(a).mat().noalias() += g.mat() * t.Value(b).mat().transpose();
        if (t.RequiresGrad(b)) t.GradBuffer(b).mat().noalias() += t.Value(a).mat().transpose() * g.mat();
      },
      "matmul");
}

Var ConcatCols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& tape = *parts[0].tape();
  const size_t rows = parts[0].rows();
  size_t cols = 0;
  for (const Var& p : parts) {
    SameTape(parts[0], p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  size_t c0 = 0;
  for (const Var& p : parts) {
    out.mat().middleCols(c0, p.cols()) = p.value().mat();
    c0 += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return tape.Record(
      std::move(out), parts,
      [saved](Tape& t, const Tensor& g) {
        size_t c = 0;
        for (const Var& p : saved) {
          const size_t w = t.Value(p).cols();
          if (t.RequiresGrad(p)) t.GradBuffer(p).mat() += g.mat().middleCols(c, w);
          c += w;
        }
      },
      "concat_cols");
}

Var ConcatRows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& tape = *parts[0].tape();
  const size_t cols = parts[0].cols();
  size_t rows = 0;
  for (const Var& p : parts) {
    SameTape(parts[0], p, "concat_rows");
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return tape.Record(
      std::move(out), parts,
      [saved](Tape& t, const Tensor& g) {
        size_t r = 0;
        for (const Var& p : saved) {
          const size_t h = t.Value(p).rows();
          if (t.RequiresGrad(p)) t.GradBuffer(p).mat() += g.mat().middleRows(r, h);
          r += h;
        }
      },
      "concat_rows");
}

Var Slice(Var a, size_t row0, size_t rows, size_t col0, size_t cols) {
  const Tensor& av = a.value();
  if (row0 + rows > av.rows() || col0 + cols > av.cols()) {
    throw ShapeError("slice out of range for " + ShapeStr(av));
  }
  Tensor out(rows, cols);
  out.mat() = av.mat().block(row0, col0, rows, cols);
  const Var inputs[] = {a};
  return a.tape()->Record(
      std::move(out), inputs,
      [a, row0, rows, col0, cols](Tape& t, const Tensor& g) {
        t.GradBuffer(a).mat().block(row0, col0, rows, cols) += g.mat();
      },
      "slice");
}

Var GatherRows(Var a, std::span<const size_t> index) {
  const Tensor& av = a.value();
  Tensor out(index.size(), av.cols());
  for (size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= av.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(av.data() + index[r] * av.cols(), av.cols(), out.data() + r * av.cols());
  }
  std::vector<size_t> idx(index.begin(), index.end());
  const Var inputs[] = {a};
  return a.tape()->Record(
      std::move(out), inputs,
      [a, idx = std::move(idx)](Tape& t, const Tensor& g) {
        Tensor& ga = t.GradBuffer(a);
        const size_t c = ga.cols();
        for (size_t r = 0; r < idx.size(); ++r) {
          const double* src = g.data() + r * c;
          double* dst = ga.data() + idx[r] * c;
          for (size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
      },
      "gather_rows");
}

Var ScaleRows(Var a, std::span<const double> mask) {
  const Tensor& av = a.value();
  if (mask.size() != av.rows()) throw ShapeError("scale_rows: mask length mismatch");
  Tensor out = av;
  for (size_t r = 0; r < av.rows(); ++r) out.mat().row(r) *= mask[r];
  std::vector<double> m(mask.begin(), mask.end());
  const Var inputs[] = {a};
  return a.tape()->Record(
      std::move(out), inputs,
      [a, m = std::move(m)](Tape& t, const Tensor& g) {
        Tensor& ga = t.GradBuffer(a);
        for (size_t r = 0; r < m.size(); ++r) ga.mat().row(r) += m[r] * g.mat().row(r);
      },
      "scale_rows");
}

Var Relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  const Var inputs[] = {a};
  return a.tape()->Record(
      std::move(out), inputs,
      [a](Tape& t, const Tensor& g) {
        const Tensor& x = t.Value(a);
        Tensor& ga = t.GradBuffer(a);
        for (size_t i = 0; i < x.size(); ++i) {
          if (x.data()[i] > 0.0) ga.data()[i] += g.data()[i];
        }
      },
      "relu");
}

Var SoftmaxRows(Var a) {
  Tensor out = a.value();
  for (size_t r = 0; r < out.rows(); ++r) {
    auto row = out.mat().row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  Tensor y = out;
  const Var inputs[] = {a};
  return a.tape()->Record(
      std::move(out), inputs,
      [a, y = std::move(y)](Tape& t, const Tensor& g) {
        Tensor& ga = t.GradBuffer(a);
        for (size_t r = 0; r < y.rows(); ++r) {
          const double dot = y.mat().row(r).dot(g.mat().row(r));
          ga.mat().row(r).array() += y.mat().row(r).array() * (g.mat().row(r).array() - dot);
        }
      },
      "softmax");
}

Var LayerNorm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = SameTape(x, gain, "layer_norm");
  SameTape(x, bias, "layer_norm");
  const Tensor& xv = x.value();
  const size_t n = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != n || !bias.value().SameShape(gain.value())) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  Tensor normalized(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  for (size_t r = 0; r < xv.rows(); ++r) {
    const auto row = xv.mat().row(r);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    normalized.mat().row(r) = (row.array() - mean) * inv_std[r];
  }
  Tensor out = normalized;
  for (size_t r = 0; r < out.rows(); ++r) {
    out.mat().row(r).array() =
        out.mat().row(r).array() * gain.value().mat().row(0).array() + bias.value().mat().row(0).array();
  }
  const Var inputs[] = {x, gain, bias};
  return tape.Record(
      std::move(out), inputs,
      [x, gain, bias, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          Tape& t, const Tensor& g) {
        const auto gamma = t.Value(gain).mat().row(0).array();
        if (t.RequiresGrad(gain)) {
          t.GradBuffer(gain).mat().row(0) +=
              (g.mat().array() * normalized.mat().array()).matrix().colwise().sum();
        }
        if (t.RequiresGrad(bias)) t.GradBuffer(bias).mat().row(0) += g.mat().colwise().sum();
        if (!t.RequiresGrad(x)) return;
        Tensor& gx = t.GradBuffer(x);
        for (size_t r = 0; r < g.rows(); ++r) {
          const Eigen::ArrayXd dxhat = (g.mat().row(r).array() * gamma).transpose();
          const Eigen::ArrayXd xhat = normalized.mat().row(r).array().transpose();
          const double mean_d = dxhat.mean();
          const double mean_dx = (dxhat * xhat).mean();
          gx.mat().row(r).array() += ((dxhat - mean_d - xhat * mean_dx) * inv_std[r]).transpose();
        }
      },
      "layer_norm");
}

Var Huber(Var a, double delta) {
  if (!(delta > 0.0)) throw InvalidInputError("huber delta must be positive");
  Tensor out = a.value();
  for (double& v : out.values()) {
    const double m = std::abs(v);
    v = m <= delta ? 0.5 * v * v : delta * (m - 0.5 * delta);
  }
  const Var inputs[] = {a};
  return a.tape()->Record(
      std::move(out), inputs,
      [a, delta](Tape& t, const Tensor& g) {
        const Tensor& x = t.Value(a);
        Tensor& ga = t.GradBuffer(a);
        for (size_t i = 0; i < x.size(); ++i) {
          const double v = x.data()[i];
          const double d = std::abs(v) <= delta ? v : (v > 0.0 ? delta : -delta);
          ga.data()[i] += d * g.data()[i];
        }
      },
      "huber");
}

Var Mean(Var a) {
  const Tensor& av = a.value();
  if (av.empty()) throw ShapeError("mean of an empty tensor");
  Tensor out(1, 1, av.mat().sum() / static_cast<double>(av.size()));
  const Var inputs[] = {a};
  return a.tape()->Record(
      std::move(out), inputs,
      [a](Tape& t, const Tensor& g) {
        Tensor& ga = t.GradBuffer(a);
        ga.mat().array() += g.data()[0] / static_cast<double>(ga.size());
      },
      "mean");
}

Var RotatePoints(Var a, std::span<const double> angles) {
  const Tensor& av = a.value();
  if (angles.size() != av.rows() || av.cols() % 2 != 0) {
    throw ShapeError("rotate_points: need one angle per row and an even column count");
  }
  std::vector<double> cs(av.rows()), sn(av.rows());
  for (size_t r = 0; r < av.rows(); ++r) {
    cs[r] = std::cos(angles[r]);
    sn[r] = std::sin(angles[r]);
  }
  Tensor out(av.rows(), av.cols());
  for (size_t r = 0; r < av.rows(); ++r) {
    for (size_t c = 0; c < av.cols(); c += 2) {
      const double x = av(r, c), y = av(r, c + 1);
      out(r, c) = cs[r] * x - sn[r] * y;
      out(r, c + 1) = sn[r] * x + cs[r] * y;
    }
  }
  const Var inputs[] = {a};
  return a.tape()->Record(
      std::move(out), inputs,
      [a, cs = std::move(cs), sn = std::move(sn)](Tape& t, const Tensor& g) {
        Tensor& ga = t.GradBuffer(a);
        for (size_t r = 0; r < g.rows(); ++r) {
          for (size_t c = 0; c < g.cols(); c += 2) {
            const double gx = g(r, c), gy = g(r, c + 1);
            ga(r, c) += cs[r] * gx + sn[r] * gy;
            ga(r, c + 1) += -sn[r] * gx + cs[r] * gy;
          }
        }
      },
      "rotate_points");
}

std::vector<double> SegmentAttentionWeights(const Tensor& q, const Tensor& k,
                                            std::span<const size_t> offsets, size_t heads) {
  const size_t d = q.cols();
  const size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> w(k.rows() * heads, 0.0);
  std::vector<double> scores;
  for (size_t r = 0; r < q.rows(); ++r) {
    const size_t begin = offsets[r], end = offsets[r + 1];
    if (begin == end) continue;
    for (size_t h = 0; h < heads; ++h) {
      scores.assign(end - begin, 0.0);
      double max_score = -std::numeric_limits<double>::infinity();
      for (size_t p = begin; p < end; ++p) {
        double s = 0.0;
        for (size_t c = h * dh; c < (h + 1) * dh; ++c) s += q(r, c) * k(p, c);
        scores[p - begin] = s * scale;
        max_score = std::max(max_score, scores[p - begin]);
      }
      double total = 0.0;
      for (double& s : scores) {
        s = std::exp(s - max_score);
        total += s;
      }
      for (size_t p = begin; p < end; ++p) w[p * heads + h] = scores[p - begin] / total;
    }
  }
  return w;
}

Var SegmentAttention(Var q, Var k, Var v, std::span<const size_t> offsets, size_t heads) {
  Tape& tape = SameTape(q, k, "segment_attention");
  SameTape(q, v, "segment_attention");
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows()) {
    throw ShapeError("segment_attention: q " + ShapeStr(qv) + ", k " + ShapeStr(kv) + ", v " +
                     ShapeStr(vv));
  }
  if (offsets.size() != qv.rows() + 1 || offsets.back() != kv.rows()) {
    throw ShapeError("segment_attention: offsets do not cover the key rows");
  }
  for (size_t r = 0; r < qv.rows(); ++r) {
    if (offsets[r] > offsets[r + 1]) throw ShapeError("segment_attention: offsets decrease");
  }
  const size_t dh = d / heads;
  std::vector<double> w = SegmentAttentionWeights(qv, kv, offsets, heads);
  Tensor out(qv.rows(), d);
  for (size_t r = 0; r < qv.rows(); ++r) {
    for (size_t p = offsets[r]; p < offsets[r + 1]; ++p) {
      for (size_t h = 0; h < heads; ++h) {
        const double wp = w[p * heads + h];
        for (size_t c = h * dh; c < (h + 1) * dh; ++c) out(r, c) += wp * vv(p, c);
      }
    }
  }
  std::vector<size_t> off(offsets.begin(), offsets.end());
  const Var inputs[] = {q, k, v};
  return tape.Record(
      std::move(out), inputs,
      [q, k, v, heads, dh, w = std::move(w), off = std::move(off)](Tape& t, const Tensor& g) {
        const Tensor& qv = t.Value(q);
        const Tensor& kv = t.Value(k);
        const Tensor& vv = t.Value(v);
        const bool need_q = t.RequiresGrad(q), need_k = t.RequiresGrad(k),
                   need_v = t.RequiresGrad(v);
        Tensor* gq = need_q ? &t.GradBuffer(q) : nullptr;
        Tensor* gk = need_k ? &t.GradBuffer(k) : nullptr;
        Tensor* gv = need_v ? &t.GradBuffer(v) : nullptr;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> dw;
        for (size_t r = 0; r + 1 < off.size(); ++r) {
          const size_t begin = off[r], end = off[r + 1];
          if (begin == end) continue;
          for (size_t h = 0; h < heads; ++h) {
            const size_t c0 = h * dh, c1 = (h + 1) * dh;
            dw.assign(end - begin, 0.0);
            double weighted = 0.0;
            for (size_t p = begin; p < end; ++p) {
              const double wp = w[p * heads + h];
              double s = 0.0;
              for (size_t c = c0; c < c1; ++c) {
                s += g(r, c) * vv(p, c);
                if (gv) (*gv)(p, c) += wp * g(r, c);
              }
              dw[p - begin] = s;
              weighted += wp * s;
            }
            for (size_t p = begin; p < end; ++p) {
              const double ds = w[p * heads + h] * (dw[p - begin] - weighted) * scale;
              if (ds == 0.0) continue;
              for (size_t c = c0; c < c1; ++c) {
                if (gq) (*gq)(r, c) += ds * kv(p, c);
                if (gk) (*gk)(p, c) += ds * qv(r, c);
              }
            }
          }
        }
      },
      "segment_attention");
}

}  // namespace ad
}  // namespace sbr
