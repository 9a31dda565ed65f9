#pragma once
// Dense row-major tensors of 64-bit floats with tape-based reverse-mode
// automatic differentiation. A Tape owns every node created by the primitive
// ops below; Tensor is a cheap handle (tape pointer + node index). Slices and
// gathers copy, there are no strided views, so aliasing never arises.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "percdf/ledger.hpp"

namespace percdf {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool defined() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

  const Shape& shape() const;
  std::int64_t numel() const;
  int rows() const;  // 2-D helpers; scalars and vectors report one row
  int cols() const;
  std::span<const double> values() const;
  std::span<const double> grad() const;
  bool requires_grad() const;
  double item() const;
  double at(std::int64_t i) const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // backward(tape, out_id): scatter d(loss)/d(out) into the input nodes.
  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized like data iff requires_grad
    bool requires_grad = false;
    BackwardFn backward;  // empty for leaves
  };

  explicit Tape(MemoryLedger* ledger = nullptr) : ledger_(ledger) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int size() const { return static_cast<int>(nodes_.size()); }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  void clear() { nodes_.clear(); }

  MemoryLedger* ledger() const { return ledger_; }
  void set_ledger(MemoryLedger* l) { ledger_ = l; }

  Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("leaf: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    }
    return push(std::move(shape), std::move(data), requires_grad, {});
  }

  Tensor constant(Shape shape, std::vector<double> data) {
    return leaf(std::move(shape), std::move(data), false);
  }

  Tensor scalar(double v, bool requires_grad = false) { return leaf({}, {v}, requires_grad); }

  Tensor record(Shape shape, std::vector<double> data, bool requires_grad, BackwardFn backward) {
    return push(std::move(shape), std::move(data), requires_grad, std::move(backward));
  }

  // Frees a node's forward buffer while keeping shape metadata. Only legal in
  // forward-only passes once every consumer has been evaluated.
  void release_data(int id) {
    Node& n = node(id);
    n.data.clear();
    n.data.shrink_to_fit();
  }

  // Reverse sweep. Tape order is topological by construction (an op's inputs
  // always precede it), so one linear pass suffices. Gradients accumulate
  // additively across fan-out.
  void backward_from(const Tensor& loss) {
    if (loss.tape() != this) throw std::runtime_error("backward: tensor from another tape");
    Node& top = node(loss.id());
    if (shape_numel(top.shape) != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + shape_str(top.shape));
    }
    if (!top.requires_grad) return;
    top.grad.assign(1, 1.0);
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = node(i);
      if (n.requires_grad && n.backward) n.backward(*this, i);
    }
  }

 private:
  Tensor push(Shape shape, std::vector<double> data, bool requires_grad, BackwardFn backward) {
    Node n;
    n.shape = std::move(shape);
    n.data = std::move(data);
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad.assign(n.data.size(), 0.0);
    n.backward = std::move(backward);
    if (ledger_) ledger_->activation_scalars += static_cast<std::int64_t>(n.data.size());
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  MemoryLedger* ledger_ = nullptr;
};

inline const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
inline std::int64_t Tensor::numel() const { return shape_numel(shape()); }
inline int Tensor::rows() const {
  const Shape& s = shape();
  return s.size() >= 2 ? s[0] : 1;
}
inline int Tensor::cols() const {
  const Shape& s = shape();
  if (s.empty()) return 1;
  return s.back();
}
inline std::span<const double> Tensor::values() const {
  const auto& d = tape_->node(id_).data;
  return {d.data(), d.size()};
}
inline std::span<const double> Tensor::grad() const {
  const auto& g = tape_->node(id_).grad;
  return {g.data(), g.size()};
}
inline bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }
inline double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return tape_->node(id_).data[0];
}
inline double Tensor::at(std::int64_t i) const {
  return tape_->node(id_).data[static_cast<std::size_t>(i)];
}

namespace detail {

inline void check_same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.tape() != b.tape()) {
    throw std::runtime_error(std::string(op) + ": tensors from different tapes");
  }
}

// C += op(A) * op(B) on row-major buffers. a is (m x k) and b is (k x n)
// after applying the transpose flags.
inline void mm_accumulate(const double* a, const double* b, double* c, int m, int k, int n,
                          bool ta, bool tb) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ta ? a[static_cast<std::size_t>(p) * m + i]
                           : a[static_cast<std::size_t>(i) * k + p];
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = b + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::size_t>(j) * k + p];
      }
    }
  }
}

inline void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each op validates shapes, computes forward values eagerly and
// records a backward rule on the tape of its inputs.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  detail::check_same_tape(a, b, "matmul");
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2) {
    throw ShapeError("matmul: expects 2-D operands, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const int m = trans_a ? sa[1] : sa[0];
  const int k = trans_a ? sa[0] : sa[1];
  const int kb = trans_b ? sb[1] : sb[0];
  const int n = trans_b ? sb[0] : sb[1];
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(sa) + (trans_a ? "^T" : "") +
                     " vs " + shape_str(sb) + (trans_b ? "^T" : ""));
  }
  Tape& t = *a.tape();
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  detail::mm_accumulate(a.values().data(), b.values().data(), out.data(), m, k, n, trans_a, trans_b);
  const bool rg = a.requires_grad() || b.requires_grad();
  const int ia = a.id(), ib = b.id();
  return t.record({m, n}, std::move(out), rg,
                  [ia, ib, m, k, n, trans_a, trans_b](Tape& tp, int self) {
                    const std::vector<double>& g = tp.node(self).grad;
                    Tape::Node& na = tp.node(ia);
                    Tape::Node& nb = tp.node(ib);
                    // dA' = G * B'^T, dB' = A'^T * G, then undo the flags.
                    if (na.requires_grad) {
                      if (!trans_a) {
                        // dA (m x k) = G (m x n) * B'^T; B' = op(B)
                        detail::mm_accumulate(g.data(), nb.data.data(), na.grad.data(), m, n, k,
                                              false, !trans_b);
                      } else {
                        // A stored (k x m): dA = B' * G^T  => (k x m)
                        detail::mm_accumulate(nb.data.data(), g.data(), na.grad.data(), k, n, m,
                                              trans_b, true);
                      }
                    }
                    if (nb.requires_grad) {
                      if (!trans_b) {
                        // dB (k x n) = A'^T * G
                        detail::mm_accumulate(na.data.data(), g.data(), nb.grad.data(), k, m, n,
                                              !trans_a, false);
                      } else {
                        // B stored (n x k): dB = G^T * A'
                        detail::mm_accumulate(g.data(), na.data.data(), nb.grad.data(), n, m, k,
                                              true, trans_a);
                      }
                    }
                  });
}

// add supports equal shapes, a row vector ([d] or [1 x d]) broadcast over the
// rows of a 2-D left operand, and a scalar broadcast over anything.
inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_tape(a, b, "add");
  Tape& t = *a.tape();
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const bool rg = a.requires_grad() || b.requires_grad();
  const int ia = a.id(), ib = b.id();
  if (sa == sb) {
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return t.record(sa, std::move(out), rg, [ia, ib](Tape& tp, int self) {
      const auto& g = tp.node(self).grad;
      if (tp.node(ia).requires_grad) detail::accumulate(tp.node(ia).grad, g);
      if (tp.node(ib).requires_grad) detail::accumulate(tp.node(ib).grad, g);
    });
  }
  if (b.numel() == 1) {
    const double bv = b.values()[0];
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v += bv;
    return t.record(sa, std::move(out), rg, [ia, ib](Tape& tp, int self) {
      const auto& g = tp.node(self).grad;
      if (tp.node(ia).requires_grad) detail::accumulate(tp.node(ia).grad, g);
      if (tp.node(ib).requires_grad) {
        double s = 0.0;
        for (double v : g) s += v;
        tp.node(ib).grad[0] += s;
      }
    });
  }
  if (sa.size() == 2 && static_cast<std::int64_t>(sa[1]) == b.numel() &&
      (sb.size() == 1 || (sb.size() == 2 && sb[0] == 1))) {
    const int rows = sa[0], cols = sa[1];
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] += bv[c];
    }
    return t.record(sa, std::move(out), rg, [ia, ib, rows, cols](Tape& tp, int self) {
      const auto& g = tp.node(self).grad;
      if (tp.node(ia).requires_grad) detail::accumulate(tp.node(ia).grad, g);
      if (tp.node(ib).requires_grad) {
        auto& gb = tp.node(ib).grad;
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < cols; ++c) gb[c] += g[static_cast<std::size_t>(r) * cols + c];
        }
      }
    });
  }
  throw ShapeError("add: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
}

// Elementwise product; also accepts a scalar on either side.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_tape(a, b, "mul");
  Tape& t = *a.tape();
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const bool rg = a.requires_grad() || b.requires_grad();
  const int ia = a.id(), ib = b.id();
  if (sa == sb) {
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return t.record(sa, std::move(out), rg, [ia, ib](Tape& tp, int self) {
      const auto& g = tp.node(self).grad;
      Tape::Node& na = tp.node(ia);
      Tape::Node& nb = tp.node(ib);
      if (na.requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * nb.data[i];
      }
      if (nb.requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) nb.grad[i] += g[i] * na.data[i];
      }
    });
  }
  if (b.numel() == 1 || a.numel() == 1) {
    const Tensor& big = (b.numel() == 1) ? a : b;
    const Tensor& sc = (b.numel() == 1) ? b : a;
    const double s = sc.values()[0];
    const auto bigv = big.values();
    std::vector<double> out(bigv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = bigv[i] * s;
    const int ibig = big.id(), isc = sc.id();
    return t.record(big.shape(), std::move(out), rg, [ibig, isc](Tape& tp, int self) {
      const auto& g = tp.node(self).grad;
      Tape::Node& nbig = tp.node(ibig);
      Tape::Node& nsc = tp.node(isc);
      if (nbig.requires_grad) {
        const double s2 = nsc.data[0];
        for (std::size_t i = 0; i < g.size(); ++i) nbig.grad[i] += g[i] * s2;
      }
      if (nsc.requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * nbig.data[i];
        nsc.grad[0] += acc;
      }
    });
  }
  throw ShapeError("mul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
}

// Constant-coefficient forms of mul/add (no extra leaf materialized).
inline Tensor scale(const Tensor& a, double c) {
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  const int ia = a.id();
  return t.record(a.shape(), std::move(out), a.requires_grad(), [ia, c](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    Tape::Node& na = tp.node(ia);
    if (na.requires_grad) {
      for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * c;
    }
  });
}

inline Tensor add_const(const Tensor& a, double c) {
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  const int ia = a.id();
  return t.record(a.shape(), std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    Tape::Node& na = tp.node(ia);
    if (na.requires_grad) detail::accumulate(na.grad, g);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

// Concatenation along axis 0 (rows / elements) or axis 1 (columns of 2-D).
// Scalars concatenated along axis 0 form a vector.
inline Tensor concat(const std::vector<Tensor>& parts, int axis = 0) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = *parts[0].tape();
  bool rg = false;
  for (const Tensor& p : parts) {
    detail::check_same_tape(parts[0], p, "concat");
    rg = rg || p.requires_grad();
  }
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Tensor& p : parts) ids.push_back(p.id());

  if (axis == 0) {
    // Treat every part as a block of rows; scalars and vectors are single rows
    // unless they are 1-D vectors being chained into a longer vector.
    const bool vector_mode = parts[0].shape().size() <= 1;
    if (vector_mode) {
      std::vector<double> out;
      std::vector<std::int64_t> offsets;
      for (const Tensor& p : parts) {
        if (p.shape().size() > 1) throw ShapeError("concat: mixing ranks along axis 0");
        offsets.push_back(static_cast<std::int64_t>(out.size()));
        out.insert(out.end(), p.values().begin(), p.values().end());
      }
      const int total = static_cast<int>(out.size());
      return t.record({total}, std::move(out), rg, [ids, offsets](Tape& tp, int self) {
        const auto& g = tp.node(self).grad;
        for (std::size_t pi = 0; pi < ids.size(); ++pi) {
          Tape::Node& n = tp.node(ids[pi]);
          if (!n.requires_grad) continue;
          for (std::size_t j = 0; j < n.grad.size(); ++j) {
            n.grad[j] += g[static_cast<std::size_t>(offsets[pi]) + j];
          }
        }
      });
    }
    const int cols = parts[0].shape()[1];
    int rows = 0;
    std::vector<double> out;
    std::vector<std::int64_t> offsets;
    for (const Tensor& p : parts) {
      if (p.shape().size() != 2 || p.shape()[1] != cols) {
        throw ShapeError("concat: row blocks need matching columns, got " + shape_str(p.shape()));
      }
      offsets.push_back(static_cast<std::int64_t>(out.size()));
      out.insert(out.end(), p.values().begin(), p.values().end());
      rows += p.shape()[0];
    }
    return t.record({rows, cols}, std::move(out), rg, [ids, offsets](Tape& tp, int self) {
      const auto& g = tp.node(self).grad;
      for (std::size_t pi = 0; pi < ids.size(); ++pi) {
        Tape::Node& n = tp.node(ids[pi]);
        if (!n.requires_grad) continue;
        for (std::size_t j = 0; j < n.grad.size(); ++j) {
          n.grad[j] += g[static_cast<std::size_t>(offsets[pi]) + j];
        }
      }
    });
  }

  if (axis == 1) {
    const int rows = parts[0].rows();
    int cols = 0;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
      if (p.shape().size() != 2 || p.shape()[0] != rows) {
        throw ShapeError("concat: column blocks need matching rows, got " + shape_str(p.shape()));
      }
      widths.push_back(p.shape()[1]);
      cols += p.shape()[1];
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * cols);
    int col0 = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const auto pv = parts[pi].values();
      const int w = widths[pi];
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < w; ++c) {
          out[static_cast<std::size_t>(r) * cols + col0 + c] = pv[static_cast<std::size_t>(r) * w + c];
        }
      }
      col0 += w;
    }
    return t.record({rows, cols}, std::move(out), rg, [ids, widths, rows, cols](Tape& tp, int self) {
      const auto& g = tp.node(self).grad;
      int c0 = 0;
      for (std::size_t pi = 0; pi < ids.size(); ++pi) {
        Tape::Node& n = tp.node(ids[pi]);
        const int w = widths[pi];
        if (n.requires_grad) {
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < w; ++c) {
              n.grad[static_cast<std::size_t>(r) * w + c] +=
                  g[static_cast<std::size_t>(r) * cols + c0 + c];
            }
          }
        }
        c0 += w;
      }
    });
  }
  throw ShapeError("concat: axis must be 0 or 1");
}

// Row range [lo, hi) of a 2-D tensor (or element range of a vector). Copies.
inline Tensor slice_rows(const Tensor& a, int lo, int hi) {
  const Shape sa = a.shape();
  const int rows = sa.empty() ? 1 : sa[0];
  if (lo < 0 || hi > rows || lo >= hi) {
    throw ShapeError("slice: rows [" + std::to_string(lo) + "," + std::to_string(hi) +
                     ") out of range for " + shape_str(sa));
  }
  const int width = sa.size() == 2 ? sa[1] : 1;
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(lo) * width,
                          av.begin() + static_cast<std::ptrdiff_t>(hi) * width);
  Shape shape = sa.size() == 2 ? Shape{hi - lo, width} : Shape{hi - lo};
  const int ia = a.id();
  return t.record(std::move(shape), std::move(out), a.requires_grad(),
                  [ia, lo, width](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    Tape::Node& na = tp.node(ia);
                    if (!na.requires_grad) return;
                    for (std::size_t j = 0; j < g.size(); ++j) {
                      na.grad[static_cast<std::size_t>(lo) * width + j] += g[j];
                    }
                  });
}

// Column range [lo, hi) of a 2-D tensor. Copies.
inline Tensor slice_cols(const Tensor& a, int lo, int hi) {
  const Shape sa = a.shape();
  if (sa.size() != 2) throw ShapeError("slice: column slice needs a 2-D tensor, got " + shape_str(sa));
  if (lo < 0 || hi > sa[1] || lo >= hi) {
    throw ShapeError("slice: cols [" + std::to_string(lo) + "," + std::to_string(hi) +
                     ") out of range for " + shape_str(sa));
  }
  const int rows = sa[0], cols = sa[1], w = hi - lo;
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(static_cast<std::size_t>(rows) * w);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < w; ++c) {
      out[static_cast<std::size_t>(r) * w + c] = av[static_cast<std::size_t>(r) * cols + lo + c];
    }
  }
  const int ia = a.id();
  return t.record({rows, w}, std::move(out), a.requires_grad(),
                  [ia, lo, rows, cols, w](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    Tape::Node& na = tp.node(ia);
                    if (!na.requires_grad) return;
                    for (int r = 0; r < rows; ++r) {
                      for (int c = 0; c < w; ++c) {
                        na.grad[static_cast<std::size_t>(r) * cols + lo + c] +=
                            g[static_cast<std::size_t>(r) * w + c];
                      }
                    }
                  });
}

// Row gather: out[i] = a[ids[i]]. Backward scatter-adds.
inline Tensor take_rows(const Tensor& a, std::vector<int> ids) {
  const Shape sa = a.shape();
  if (sa.size() != 2) throw ShapeError("slice: row gather needs a 2-D tensor, got " + shape_str(sa));
  const int cols = sa[1];
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(ids.size() * static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int r = ids[i];
    if (r < 0 || r >= sa[0]) throw ShapeError("slice: row id out of range for " + shape_str(sa));
    for (int c = 0; c < cols; ++c) {
      out[i * cols + c] = av[static_cast<std::size_t>(r) * cols + c];
    }
  }
  const int ia = a.id();
  const int nrows = static_cast<int>(ids.size());
  return t.record({nrows, cols}, std::move(out), a.requires_grad(),
                  [ia, ids = std::move(ids), cols](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    Tape::Node& na = tp.node(ia);
                    if (!na.requires_grad) return;
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      for (int c = 0; c < cols; ++c) {
                        na.grad[static_cast<std::size_t>(ids[i]) * cols + c] += g[i * cols + c];
                      }
                    }
                  });
}

// Shape change with identical flat contents.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  }
  Tape& t = *a.tape();
  std::vector<double> out(a.values().begin(), a.values().end());
  const int ia = a.id();
  return t.record(std::move(shape), std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    Tape::Node& na = tp.node(ia);
    if (na.requires_grad) detail::accumulate(na.grad, g);
  });
}

inline Tensor sum(const Tensor& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.values()) s += v;
  const int ia = a.id();
  return t.record({}, {s}, a.requires_grad(), [ia](Tape& tp, int self) {
    const double g = tp.node(self).grad[0];
    Tape::Node& na = tp.node(ia);
    if (!na.requires_grad) return;
    for (double& v : na.grad) v += g;
  });
}

inline Tensor mean(const Tensor& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  const int ia = a.id();
  return t.record({}, {s * inv}, a.requires_grad(), [ia, inv](Tape& tp, int self) {
    const double g = tp.node(self).grad[0] * inv;
    Tape::Node& na = tp.node(ia);
    if (!na.requires_grad) return;
    for (double& v : na.grad) v += g;
  });
}

namespace detail {

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Softmax of a small buffer with max subtraction.
inline void softmax_inplace(const double* logits, int n, double* out) {
  double mx = logits[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, logits[j]);
  double denom = 0.0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(logits[j] - mx);
    denom += out[j];
  }
  for (int j = 0; j < n; ++j) out[j] /= denom;
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& a) {
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(av[i]);
  const int ia = a.id();
  return t.record(a.shape(), std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& y = tp.node(self).data;
    Tape::Node& na = tp.node(ia);
    if (!na.requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Tensor exp(const Tensor& a) {
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  const int ia = a.id();
  return t.record(a.shape(), std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& y = tp.node(self).data;
    Tape::Node& na = tp.node(ia);
    if (!na.requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * y[i];
  });
}

inline Tensor log(const Tensor& a) {
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(av[i] > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(av[i]));
    }
    out[i] = std::log(av[i]);
  }
  const int ia = a.id();
  return t.record(a.shape(), std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    Tape::Node& na = tp.node(ia);
    if (!na.requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] / na.data[i];
  });
}

inline Tensor relu(const Tensor& a) {
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  const int ia = a.id();
  return t.record(a.shape(), std::move(out), a.requires_grad(), [ia](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    Tape::Node& na = tp.node(ia);
    if (!na.requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (na.data[i] > 0.0) na.grad[i] += g[i];
    }
  });
}

// Softmax over the last axis. Rows are shifted by their max before
// exponentiation; the shift is exact for both value and gradient.
inline Tensor softmax_lastdim(const Tensor& a) {
  const Shape sa = a.shape();
  if (sa.empty()) throw ShapeError("softmax: scalar input");
  const int cols = sa.back();
  const int rows = static_cast<int>(a.numel() / cols);
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (int r = 0; r < rows; ++r) {
    const double* in = av.data() + static_cast<std::size_t>(r) * cols;
    double* o = out.data() + static_cast<std::size_t>(r) * cols;
    double mx = in[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double denom = 0.0;
    for (int c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      denom += o[c];
    }
    for (int c = 0; c < cols; ++c) o[c] /= denom;
  }
  const int ia = a.id();
  return t.record(sa, std::move(out), a.requires_grad(), [ia, rows, cols](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& y = tp.node(self).data;
    Tape::Node& na = tp.node(ia);
    if (!na.requires_grad) return;
    for (int r = 0; r < rows; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * cols;
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += g[off + c] * y[off + c];
      for (int c = 0; c < cols; ++c) {
        na.grad[off + c] += y[off + c] * (g[off + c] - dot);
      }
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise normalization over the last axis: (x - mean) / sqrt(var + eps).
inline Tensor layernorm(const Tensor& a, double eps = kLayerNormEps) {
  const Shape sa = a.shape();
  if (sa.empty()) throw ShapeError("layernorm: scalar input");
  const int cols = sa.back();
  const int rows = static_cast<int>(a.numel() / cols);
  Tape& t = *a.tape();
  const auto av = a.values();
  std::vector<double> out(av.size());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const double* in = av.data() + static_cast<std::size_t>(r) * cols;
    double* o = out.data() + static_cast<std::size_t>(r) * cols;
    double mu = 0.0;
    for (int c = 0; c < cols; ++c) mu += in[c];
    mu /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (int c = 0; c < cols; ++c) o[c] = (in[c] - mu) * is;
  }
  const int ia = a.id();
  return t.record(sa, std::move(out), a.requires_grad(),
                  [ia, rows, cols, inv_std = std::move(inv_std)](Tape& tp, int self) {
                    const auto& g = tp.node(self).grad;
                    const auto& y = tp.node(self).data;
                    Tape::Node& na = tp.node(ia);
                    if (!na.requires_grad) return;
                    for (int r = 0; r < rows; ++r) {
                      const std::size_t off = static_cast<std::size_t>(r) * cols;
                      double gmean = 0.0, gymean = 0.0;
                      for (int c = 0; c < cols; ++c) {
                        gmean += g[off + c];
                        gymean += g[off + c] * y[off + c];
                      }
                      gmean /= cols;
                      gymean /= cols;
                      const double is = inv_std[static_cast<std::size_t>(r)];
                      for (int c = 0; c < cols; ++c) {
                        na.grad[off + c] += is * (g[off + c] - gmean - y[off + c] * gymean);
                      }
                    }
                  });
}

inline void backward(const Tensor& loss) { loss.tape()->backward_from(loss); }

// ---------------------------------------------------------------------------
// Generic dispatch over the primitive set, used by property tests that build
// random graphs.
// ---------------------------------------------------------------------------

enum class PrimitiveOp {
  Matmul,
  Add,
  Mul,
  Concat,
  Slice,
  Sum,
  Mean,
  Sigmoid,
  Exp,
  Log,
  SoftmaxLastDim,
  Relu,
  LayerNorm,
};

inline const char* primitive_name(PrimitiveOp op) {
  switch (op) {
    case PrimitiveOp::Matmul: return "matmul";
    case PrimitiveOp::Add: return "add";
    case PrimitiveOp::Mul: return "mul";
    case PrimitiveOp::Concat: return "concat";
    case PrimitiveOp::Slice: return "slice";
    case PrimitiveOp::Sum: return "sum";
    case PrimitiveOp::Mean: return "mean";
    case PrimitiveOp::Sigmoid: return "sigmoid";
    case PrimitiveOp::Exp: return "exp";
    case PrimitiveOp::Log: return "log";
    case PrimitiveOp::SoftmaxLastDim: return "softmax_lastdim";
    case PrimitiveOp::Relu: return "relu";
    case PrimitiveOp::LayerNorm: return "layernorm";
  }
  return "?";
}

inline Tensor forward_primitive(PrimitiveOp op, const std::vector<Tensor>& inputs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(primitive_name(op)) + ": expects " + std::to_string(n) +
                       " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (op) {
    case PrimitiveOp::Matmul: need(2); return matmul(inputs[0], inputs[1]);
    case PrimitiveOp::Add: need(2); return add(inputs[0], inputs[1]);
    case PrimitiveOp::Mul: need(2); return mul(inputs[0], inputs[1]);
    case PrimitiveOp::Concat: return concat(inputs, 0);
    case PrimitiveOp::Slice: need(1); return slice_rows(inputs[0], 0, std::max(1, inputs[0].rows() / 2));
    case PrimitiveOp::Sum: need(1); return sum(inputs[0]);
    case PrimitiveOp::Mean: need(1); return mean(inputs[0]);
    case PrimitiveOp::Sigmoid: need(1); return sigmoid(inputs[0]);
    case PrimitiveOp::Exp: need(1); return exp(inputs[0]);
    case PrimitiveOp::Log: need(1); return log(inputs[0]);
    case PrimitiveOp::SoftmaxLastDim: need(1); return softmax_lastdim(inputs[0]);
    case PrimitiveOp::Relu: need(1); return relu(inputs[0]);
    case PrimitiveOp::LayerNorm: need(1); return layernorm(inputs[0]);
  }
  throw ShapeError("unknown primitive");
}

}  // namespace percdf
