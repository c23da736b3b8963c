#pragma once

// Reverse-mode differentiation over the tensor kernels. Every op records a
// node; the reverse sweep emits its vector-Jacobian products *as taped ops*,
// so gradients of expressions that already contain gradients are available
// (needed because the shooting right-hand side embeds dH/dq).
//
// A tape is confined to one logical thread. Independent tapes may run
// concurrently; there is no global state.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "shooting/tensor.hpp"

namespace shooting {

class Tape;

class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  Tape* tape() const { return tape_; }
  std::uint32_t index() const { return idx_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::uint32_t i) : tape_(t), idx_(i) {}
  Tape* tape_ = nullptr;
  std::uint32_t idx_ = 0;
};

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  neg,
  mul,
  scale,
  scale_by,
  matmul,
  transpose,
  relu,
  tanh_fn,
  sigmoid_fn,
  relu_mask_mul,
  sum_all,
  bcast,
  add_rowvec,
  colsum,
  rowbcast,
  reshape,
  slice_cols,
  pad_cols,
  concat_cols,
  bce_logits_sum,
};

class Tape {
  static constexpr std::uint32_t kNone = 0xffffffffu;

  struct Node {
    Op op;
    bool needs_grad;
    std::uint32_t a = kNone, b = kNone;
    double c = 0.0;               // scale factor
    std::array<std::uint32_t, 2> iaux{0, 0};  // slice/pad bounds, bcast dims
    std::uint8_t aux_rank = 0;    // bcast/reshape target rank
    Tensor value;
  };

 public:
  Var leaf(Tensor v) { return push(Op::leaf, std::move(v), true); }
  Var constant(Tensor v) { return push(Op::leaf, std::move(v), false); }
  Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value_of(std::uint32_t i) const { return nodes_[i].value; }
  bool is_leaf(const Var& v) const { return nodes_[v.idx_].op == Op::leaf; }
  bool requires_grad(const Var& v) const { return nodes_[v.idx_].needs_grad; }

  // --- recorded ops (each calls the matching tensor.hpp kernel) ---

  Var add(Var a, Var b) { return push2(Op::add, a, b, shooting::add(val(a), val(b))); }
  Var sub(Var a, Var b) { return push2(Op::sub, a, b, shooting::sub(val(a), val(b))); }
  Var neg(Var a) { return push1(Op::neg, a, shooting::neg(val(a))); }
  Var mul(Var a, Var b) { return push2(Op::mul, a, b, shooting::mul(val(a), val(b))); }
  Var scale(Var a, double c) {
    Var r = push1(Op::scale, a, shooting::scale(val(a), c));
    nodes_[r.idx_].c = c;
    return r;
  }
  Var scale_by(Var t, Var s) { return push2(Op::scale_by, t, s, shooting::scale_by(val(t), val(s))); }
  Var matmul(Var a, Var b) { return push2(Op::matmul, a, b, shooting::matmul(val(a), val(b))); }
  Var transpose(Var a) { return push1(Op::transpose, a, shooting::transpose(val(a))); }
  Var relu(Var a) { return push1(Op::relu, a, shooting::relu(val(a))); }
  Var tanh(Var a) { return push1(Op::tanh_fn, a, shooting::tanh(val(a))); }
  Var sigmoid(Var a) { return push1(Op::sigmoid_fn, a, shooting::sigmoid(val(a))); }
  Var relu_mask_mul(Var g, Var x) {
    return push2(Op::relu_mask_mul, g, x, shooting::relu_mask_mul(val(g), val(x)));
  }
  Var sum_all(Var a) { return push1(Op::sum_all, a, shooting::sum_all(val(a))); }
  Var bcast(Var s, std::vector<std::size_t> shape) {
    // by-value shape: the caller's argument may alias node storage that a
    // push can reallocate
    Var r = push1(Op::bcast, s, shooting::bcast(val(s), shape));
    store_shape_aux(r, shape);
    return r;
  }
  Var add_rowvec(Var m, Var v) {
    return push2(Op::add_rowvec, m, v, shooting::add_rowvec(val(m), val(v)));
  }
  Var colsum(Var m) { return push1(Op::colsum, m, shooting::colsum(val(m))); }
  Var rowbcast(Var v, std::size_t nrows) {
    Var r = push1(Op::rowbcast, v, shooting::rowbcast(val(v), nrows));
    nodes_[r.idx_].iaux[0] = static_cast<std::uint32_t>(nrows);
    return r;
  }
  Var reshape(Var a, const std::vector<std::size_t>& shape) {
    Var r = push1(Op::reshape, a, shooting::reshape(val(a), shape));
    return r;
  }
  Var slice_cols(Var m, std::size_t c0, std::size_t c1) {
    Var r = push1(Op::slice_cols, m, shooting::slice_cols(val(m), c0, c1));
    nodes_[r.idx_].iaux = {static_cast<std::uint32_t>(c0), static_cast<std::uint32_t>(c1)};
    return r;
  }
  Var pad_cols(Var m, std::size_t c0, std::size_t total) {
    Var r = push1(Op::pad_cols, m, shooting::pad_cols(val(m), c0, total));
    nodes_[r.idx_].iaux = {static_cast<std::uint32_t>(c0), static_cast<std::uint32_t>(total)};
    return r;
  }
  Var concat_cols(Var a, Var b) {
    return push2(Op::concat_cols, a, b, shooting::concat_cols(val(a), val(b)));
  }
  Var bce_logits_sum(Var z, Var y) {
    return push2(Op::bce_logits_sum, z, y, shooting::bce_logits_sum(val(z), val(y)));
  }

  Var activation(Var a, Act kind) { return kind == Act::relu ? relu(a) : tanh(a); }
  Var dot(Var a, Var b) { return sum_all(mul(a, b)); }

  // d(scalar)/d(each input), as taped Vars. Inputs may be leaves or interior
  // nodes of this tape (interior nodes receive the total adjoint accumulated
  // from every path); unreachable inputs get zero gradients.
  std::vector<Var> gradients(Var scalar, std::span<const Var> inputs) {
    if (scalar.tape_ != this) throw ProvenanceError("gradients: output not on this tape");
    if (val(scalar).rank() != 0) throw ShapeError("gradients: output must be a scalar");
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw ProvenanceError("gradients: input not on this tape");
      if (!nodes_[in.idx_].needs_grad)
        throw ProvenanceError("gradients: input is not differentiable (constant)");
    }

    // Parent indices strictly decrease along edges, so no path from the
    // output to an input ever visits a node below the lowest input; the
    // sweep window can stop there.
    const std::uint32_t top = scalar.idx_;
    std::uint32_t lo = top;
    for (const Var& in : inputs) lo = std::min(lo, in.idx_);

    std::vector<std::optional<Var>> adj(static_cast<std::size_t>(top - lo) + 1);
    adj[top - lo] = constant_scalar(1.0);

    for (std::uint32_t i = top + 1; i-- > lo;) {
      if (!adj[i - lo] || !nodes_[i].needs_grad) continue;
      backprop_node(i, *adj[i - lo], adj, lo);
    }

    std::vector<Var> out;
    out.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (in.idx_ <= top && adj[in.idx_ - lo])
        out.push_back(*adj[in.idx_ - lo]);
      else
        out.push_back(constant(Tensor::zeros(val(in).shape)));
    }
    return out;
  }

  std::vector<Var> gradients(Var scalar, std::initializer_list<Var> inputs) {
    return gradients(scalar, std::span<const Var>(inputs.begin(), inputs.size()));
  }

 private:
  friend class Var;
  std::vector<Node> nodes_;

  const Tensor& val(const Var& v) const { return nodes_[v.idx_].value; }

  Var push(Op op, Tensor v, bool needs) {
    Node n;
    n.op = op;
    n.needs_grad = needs;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }
  Var push1(Op op, Var a, Tensor v) {
    check_tape(a);
    Var r = push(op, std::move(v), nodes_[a.idx_].needs_grad);
    nodes_[r.idx_].a = a.idx_;
    return r;
  }
  Var push2(Op op, Var a, Var b, Tensor v) {
    check_tape(a);
    check_tape(b);
    Var r = push(op, std::move(v), nodes_[a.idx_].needs_grad || nodes_[b.idx_].needs_grad);
    nodes_[r.idx_].a = a.idx_;
    nodes_[r.idx_].b = b.idx_;
    return r;
  }
  void check_tape(const Var& v) const {
    if (v.tape_ != this) throw ProvenanceError("operand belongs to a different tape");
  }
  void store_shape_aux(Var r, const std::vector<std::size_t>& shape) {
    Node& n = nodes_[r.idx_];
    n.aux_rank = static_cast<std::uint8_t>(shape.size());
    for (std::size_t k = 0; k < shape.size() && k < 2; ++k)
      n.iaux[k] = static_cast<std::uint32_t>(shape[k]);
  }

  void accumulate(std::vector<std::optional<Var>>& adj, std::uint32_t lo, std::uint32_t parent,
                  Var contrib) {
    auto& slot = adj[parent - lo];
    if (slot)
      slot = add(*slot, contrib);
    else
      slot = contrib;
  }

  void backprop_node(std::uint32_t i, Var g, std::vector<std::optional<Var>>& adj,
                     std::uint32_t lo) {
    // copy node metadata: pushing vjp ops below may reallocate nodes_
    const Op op = nodes_[i].op;
    const std::uint32_t ia = nodes_[i].a, ib = nodes_[i].b;
    const double c = nodes_[i].c;
    const std::array<std::uint32_t, 2> iaux = nodes_[i].iaux;
    const std::vector<std::size_t> out_shape = nodes_[i].value.shape;
    auto want = [&](std::uint32_t p) { return p != kNone && p >= lo && nodes_[p].needs_grad; };
    const bool wa = want(ia), wb = want(ib);
    if (!wa && !wb) return;
    const Var va = ia == kNone ? Var() : Var(this, ia);
    const Var vb = ib == kNone ? Var() : Var(this, ib);
    const Var self(this, i);
    switch (op) {
      case Op::leaf:
        return;
      case Op::add:
        if (wa) accumulate(adj, lo, ia, g);
        if (wb) accumulate(adj, lo, ib, g);
        return;
      case Op::sub:
        if (wa) accumulate(adj, lo, ia, g);
        if (wb) accumulate(adj, lo, ib, neg(g));
        return;
      case Op::neg:
        if (wa) accumulate(adj, lo, ia, neg(g));
        return;
      case Op::mul:
        if (wa) accumulate(adj, lo, ia, mul(g, vb));
        if (wb) accumulate(adj, lo, ib, mul(g, va));
        return;
      case Op::scale:
        if (wa) accumulate(adj, lo, ia, scale(g, c));
        return;
      case Op::scale_by:
        if (wa) accumulate(adj, lo, ia, scale_by(g, vb));
        if (wb) accumulate(adj, lo, ib, sum_all(mul(g, va)));
        return;
      case Op::matmul: {
        if (val(vb).rank() == 2) {
          if (wa) accumulate(adj, lo, ia, matmul(g, transpose(vb)));
          if (wb) accumulate(adj, lo, ib, matmul(transpose(va), g));
        } else {
          // (m,k) x (k,) -> (m,): dA_ij = g_i b_j, db = A^T g
          const std::size_t m = val(va).shape[0], k = val(va).shape[1];
          if (wa) accumulate(adj, lo, ia, matmul(reshape(g, {m, 1}), reshape(vb, {1, k})));
          if (wb) accumulate(adj, lo, ib, matmul(transpose(va), g));
        }
        return;
      }
      case Op::transpose:
        if (wa) accumulate(adj, lo, ia, transpose(g));
        return;
      case Op::relu:
        if (wa) accumulate(adj, lo, ia, relu_mask_mul(g, va));
        return;
      case Op::tanh_fn:
        if (wa) {
          Var ones = constant(Tensor::full(out_shape, 1.0));
          accumulate(adj, lo, ia, mul(g, sub(ones, mul(self, self))));
        }
        return;
      case Op::sigmoid_fn:
        if (wa) {
          Var ones = constant(Tensor::full(out_shape, 1.0));
          accumulate(adj, lo, ia, mul(g, mul(self, sub(ones, self))));
        }
        return;
      case Op::relu_mask_mul:
        // the mask is piecewise constant in x: no contribution to ib
        if (wa) accumulate(adj, lo, ia, relu_mask_mul(g, vb));
        return;
      case Op::sum_all:
        if (wa) accumulate(adj, lo, ia, bcast(g, val(va).shape));
        return;
      case Op::bcast:
        if (wa) accumulate(adj, lo, ia, sum_all(g));
        return;
      case Op::add_rowvec:
        if (wa) accumulate(adj, lo, ia, g);
        if (wb) accumulate(adj, lo, ib, colsum(g));
        return;
      case Op::colsum:
        if (wa) accumulate(adj, lo, ia, rowbcast(g, val(va).shape[0]));
        return;
      case Op::rowbcast:
        if (wa) accumulate(adj, lo, ia, colsum(g));
        return;
      case Op::reshape:
        if (wa) accumulate(adj, lo, ia, reshape(g, val(va).shape));
        return;
      case Op::slice_cols:
        if (wa) accumulate(adj, lo, ia, pad_cols(g, iaux[0], val(va).shape[1]));
        return;
      case Op::pad_cols:
        if (wa) accumulate(adj, lo, ia, slice_cols(g, iaux[0], iaux[0] + val(va).shape[1]));
        return;
      case Op::concat_cols: {
        const std::size_t ca = val(va).shape[1];
        if (wa) accumulate(adj, lo, ia, slice_cols(g, 0, ca));
        if (wb) accumulate(adj, lo, ib, slice_cols(g, ca, ca + val(vb).shape[1]));
        return;
      }
      case Op::bce_logits_sum:
        if (wa) accumulate(adj, lo, ia, scale_by(sub(sigmoid(va), vb), g));
        if (wb) accumulate(adj, lo, ib, scale_by(neg(va), g));
        return;
    }
  }
};

inline const Tensor& Var::value() const { return tape_->value_of(idx_); }

// Free-function mirrors of the tensor kernels so algorithms can be written
// once, generic over Tensor (plain) and Var (taped).

inline Var add(Var a, Var b) { return a.tape()->add(a, b); }
inline Var sub(Var a, Var b) { return a.tape()->sub(a, b); }
inline Var neg(Var a) { return a.tape()->neg(a); }
inline Var mul(Var a, Var b) { return a.tape()->mul(a, b); }
inline Var scale(Var a, double c) { return a.tape()->scale(a, c); }
inline Var scale_by(Var t, Var s) { return t.tape()->scale_by(t, s); }
inline Var matmul(Var a, Var b) { return a.tape()->matmul(a, b); }
inline Var transpose(Var a) { return a.tape()->transpose(a); }
inline Var relu(Var a) { return a.tape()->relu(a); }
inline Var tanh(Var a) { return a.tape()->tanh(a); }
inline Var sigmoid(Var a) { return a.tape()->sigmoid(a); }
inline Var relu_mask_mul(Var g, Var x) { return g.tape()->relu_mask_mul(g, x); }
inline Var sum_all(Var a) { return a.tape()->sum_all(a); }
inline Var bcast(Var s, const std::vector<std::size_t>& shape) { return s.tape()->bcast(s, shape); }
inline Var add_rowvec(Var m, Var v) { return m.tape()->add_rowvec(m, v); }
inline Var colsum(Var m) { return m.tape()->colsum(m); }
inline Var rowbcast(Var v, std::size_t nrows) { return v.tape()->rowbcast(v, nrows); }
inline Var reshape(Var a, const std::vector<std::size_t>& shape) { return a.tape()->reshape(a, shape); }
inline Var slice_cols(Var m, std::size_t c0, std::size_t c1) { return m.tape()->slice_cols(m, c0, c1); }
inline Var pad_cols(Var m, std::size_t c0, std::size_t total) { return m.tape()->pad_cols(m, c0, total); }
inline Var concat_cols(Var a, Var b) { return a.tape()->concat_cols(a, b); }
inline Var bce_logits_sum(Var z, Var y) { return z.tape()->bce_logits_sum(z, y); }
inline Var activation(Var a, Act kind) { return a.tape()->activation(a, kind); }
inline Var dot(Var a, Var b) { return a.tape()->dot(a, b); }

// Carrier access helpers for generic code.
inline const Tensor& value_of(const Tensor& t) { return t; }
inline const Tensor& value_of(const Var& v) { return v.value(); }

}  // namespace shooting
