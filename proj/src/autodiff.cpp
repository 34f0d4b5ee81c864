#include "fode/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fode::ad {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

NodeId Tape::push(Op op, std::size_t len) {
  require(len >= 1, "tape node must hold at least one value");
  Node n;
  n.op = op;
  n.voff = vals_.size();
  n.len = len;
  nodes_.push_back(n);
  vals_.resize(vals_.size() + len, 0.0);
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(std::span<const double> v) {
  NodeId id = push(Op::Leaf, v.size());
  std::copy(v.begin(), v.end(), val_ptr(id));
  return id;
}

NodeId Tape::axpy(NodeId a, NodeId b, double ca, double cb) {
  require(nodes_[a].len == nodes_[b].len, "axpy: length mismatch");
  std::size_t n = nodes_[a].len;
  NodeId id = push(Op::Axpy, n);
  nodes_[id].in0 = a;
  nodes_[id].in1 = b;
  nodes_[id].c0 = ca;
  nodes_[id].c1 = cb;
  const double* pa = val_ptr(a);
  const double* pb = val_ptr(b);
  double* out = val_ptr(id);
  for (std::size_t i = 0; i < n; ++i) out[i] = ca * pa[i] + cb * pb[i];
  return id;
}

NodeId Tape::scale(NodeId a, double c) {
  std::size_t n = nodes_[a].len;
  NodeId id = push(Op::Scale, n);
  nodes_[id].in0 = a;
  nodes_[id].c0 = c;
  const double* pa = val_ptr(a);
  double* out = val_ptr(id);
  for (std::size_t i = 0; i < n; ++i) out[i] = c * pa[i];
  return id;
}

NodeId Tape::relu(NodeId a) {
  std::size_t n = nodes_[a].len;
  NodeId id = push(Op::Relu, n);
  nodes_[id].in0 = a;
  const double* pa = val_ptr(a);
  double* out = val_ptr(id);
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  return id;
}

NodeId Tape::hadamard(NodeId a, NodeId b) {
  require(nodes_[a].len == nodes_[b].len, "hadamard: length mismatch");
  std::size_t n = nodes_[a].len;
  NodeId id = push(Op::Hadamard, n);
  nodes_[id].in0 = a;
  nodes_[id].in1 = b;
  const double* pa = val_ptr(a);
  const double* pb = val_ptr(b);
  double* out = val_ptr(id);
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
  return id;
}

NodeId Tape::matvec(NodeId w, std::size_t rows, std::size_t cols, NodeId x) {
  require(nodes_[w].len == rows * cols, "matvec: matrix node length mismatch");
  require(nodes_[x].len == cols, "matvec: vector length mismatch");
  NodeId id = push(Op::MatVec, rows);
  nodes_[id].in0 = w;
  nodes_[id].in1 = x;
  nodes_[id].rows = rows;
  nodes_[id].cols = cols;
  const double* pw = val_ptr(w);
  const double* px = val_ptr(x);
  double* out = val_ptr(id);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* wr = pw + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * px[c];
    out[r] = acc;
  }
  return id;
}

NodeId Tape::fixed_matvec(const Mat& m, NodeId x) {
  require(nodes_[x].len == m.cols, "fixed_matvec: vector length mismatch");
  NodeId id = push(Op::FixedMatVec, m.rows);
  nodes_[id].in0 = x;
  nodes_[id].rows = m.rows;
  nodes_[id].cols = m.cols;
  nodes_[id].aux = fixed_.size();
  fixed_.push_back(&m);
  const double* px = val_ptr(x);
  double* out = val_ptr(id);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const double* mr = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) acc += mr[c] * px[c];
    out[r] = acc;
  }
  return id;
}

NodeId Tape::slice(NodeId a, std::size_t off, std::size_t n) {
  require(off + n <= nodes_[a].len, "slice: out of range");
  NodeId id = push(Op::Slice, n);
  nodes_[id].in0 = a;
  nodes_[id].aux = off;
  const double* pa = val_ptr(a) + off;
  std::copy(pa, pa + n, val_ptr(id));
  return id;
}

NodeId Tape::concat(std::span<const NodeId> parts) {
  require(!parts.empty(), "concat: no inputs");
  std::size_t total = 0;
  for (NodeId p : parts) total += nodes_[p].len;
  NodeId id = push(Op::Concat, total);
  nodes_[id].xoff = args_.size();
  nodes_[id].xlen = parts.size();
  args_.insert(args_.end(), parts.begin(), parts.end());
  double* out = val_ptr(id);
  for (NodeId p : parts) {
    const double* pp = val_ptr(p);
    out = std::copy(pp, pp + nodes_[p].len, out);
  }
  return id;
}

NodeId Tape::weighted_sum(std::span<const NodeId> parts, std::span<const double> coeffs) {
  require(!parts.empty() && parts.size() == coeffs.size(), "weighted_sum: bad arguments");
  std::size_t n = nodes_[parts[0]].len;
  for (NodeId p : parts) require(nodes_[p].len == n, "weighted_sum: length mismatch");
  NodeId id = push(Op::WeightedSum, n);
  nodes_[id].xoff = args_.size();
  nodes_[id].xlen = parts.size();
  nodes_[id].aux = consts_.size();
  args_.insert(args_.end(), parts.begin(), parts.end());
  consts_.insert(consts_.end(), coeffs.begin(), coeffs.end());
  double* out = val_ptr(id);
  std::fill(out, out + n, 0.0);
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const double* pp = val_ptr(parts[j]);
    double c = coeffs[j];
    for (std::size_t i = 0; i < n; ++i) out[i] += c * pp[i];
  }
  return id;
}

NodeId Tape::mse(NodeId pred, std::span<const double> target) {
  require(nodes_[pred].len == target.size(), "mse: shape mismatch");
  std::size_t n = target.size();
  NodeId id = push(Op::Mse, 1);
  nodes_[id].in0 = pred;
  nodes_[id].aux = consts_.size();
  consts_.insert(consts_.end(), target.begin(), target.end());
  const double* pp = val_ptr(pred);
  const double* pt = consts_.data() + nodes_[id].aux;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = pp[i] - pt[i];
    acc += d * d;
  }
  *val_ptr(id) = acc / static_cast<double>(n);
  return id;
}

NodeId Tape::cross_entropy(NodeId logits, std::size_t class_index) {
  std::size_t k = nodes_[logits].len;
  require(class_index < k, "cross_entropy: class index out of range");
  NodeId id = push(Op::CrossEntropy, 1);
  nodes_[id].in0 = logits;
  nodes_[id].aux = class_index;
  const double* pl = val_ptr(logits);
  double mx = pl[0];
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, pl[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += std::exp(pl[i] - mx);
  *val_ptr(id) = std::log(z) - (pl[class_index] - mx);
  return id;
}

std::span<const double> Tape::value(NodeId id) const {
  return {val_ptr(id), nodes_[id].len};
}

std::span<const double> Tape::grad(NodeId id) const {
  return {grads_.data() + nodes_[id].voff, nodes_[id].len};
}

void Tape::backward_scalar(NodeId out) {
  double one = 1.0;
  backward(out, {&one, 1});
}

void Tape::backward(NodeId out, std::span<const double> seed) {
  require(seed.size() == nodes_[out].len, "backward: seed shape mismatch");
  grads_.assign(vals_.size(), 0.0);
  std::copy(seed.begin(), seed.end(), grads_.data() + nodes_[out].voff);

  for (std::size_t idx = nodes_.size(); idx-- > 0;) {
    const Node& n = nodes_[idx];
    const double* g = grads_.data() + n.voff;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Axpy: {
        double* ga = grads_.data() + nodes_[n.in0].voff;
        double* gb = grads_.data() + nodes_[n.in1].voff;
        for (std::size_t i = 0; i < n.len; ++i) {
          ga[i] += n.c0 * g[i];
          gb[i] += n.c1 * g[i];
        }
        break;
      }
      case Op::Scale: {
        double* ga = grads_.data() + nodes_[n.in0].voff;
        for (std::size_t i = 0; i < n.len; ++i) ga[i] += n.c0 * g[i];
        break;
      }
      case Op::Relu: {
        double* ga = grads_.data() + nodes_[n.in0].voff;
        const double* va = vals_.data() + nodes_[n.in0].voff;
        for (std::size_t i = 0; i < n.len; ++i)
          if (va[i] > 0.0) ga[i] += g[i];
        break;
      }
      case Op::Hadamard: {
        double* ga = grads_.data() + nodes_[n.in0].voff;
        double* gb = grads_.data() + nodes_[n.in1].voff;
        const double* va = vals_.data() + nodes_[n.in0].voff;
        const double* vb = vals_.data() + nodes_[n.in1].voff;
        for (std::size_t i = 0; i < n.len; ++i) {
          ga[i] += vb[i] * g[i];
          gb[i] += va[i] * g[i];
        }
        break;
      }
      case Op::MatVec: {
        double* gw = grads_.data() + nodes_[n.in0].voff;
        double* gx = grads_.data() + nodes_[n.in1].voff;
        const double* vw = vals_.data() + nodes_[n.in0].voff;
        const double* vx = vals_.data() + nodes_[n.in1].voff;
        for (std::size_t r = 0; r < n.rows; ++r) {
          double gr = g[r];
          if (gr == 0.0) continue;
          double* gwr = gw + r * n.cols;
          const double* vwr = vw + r * n.cols;
          for (std::size_t c = 0; c < n.cols; ++c) {
            gwr[c] += gr * vx[c];
            gx[c] += vwr[c] * gr;
          }
        }
        break;
      }
      case Op::FixedMatVec: {
        double* gx = grads_.data() + nodes_[n.in0].voff;
        const Mat& m = *fixed_[n.aux];
        for (std::size_t r = 0; r < n.rows; ++r) {
          double gr = g[r];
          if (gr == 0.0) continue;
          const double* mr = m.data.data() + r * n.cols;
          for (std::size_t c = 0; c < n.cols; ++c) gx[c] += mr[c] * gr;
        }
        break;
      }
      case Op::Slice: {
        double* ga = grads_.data() + nodes_[n.in0].voff + n.aux;
        for (std::size_t i = 0; i < n.len; ++i) ga[i] += g[i];
        break;
      }
      case Op::Concat: {
        std::size_t pos = 0;
        for (std::size_t j = 0; j < n.xlen; ++j) {
          NodeId p = args_[n.xoff + j];
          double* gp = grads_.data() + nodes_[p].voff;
          std::size_t plen = nodes_[p].len;
          for (std::size_t i = 0; i < plen; ++i) gp[i] += g[pos + i];
          pos += plen;
        }
        break;
      }
      case Op::WeightedSum: {
        for (std::size_t j = 0; j < n.xlen; ++j) {
          NodeId p = args_[n.xoff + j];
          double* gp = grads_.data() + nodes_[p].voff;
          double c = consts_[n.aux + j];
          for (std::size_t i = 0; i < n.len; ++i) gp[i] += c * g[i];
        }
        break;
      }
      case Op::Mse: {
        double* gp = grads_.data() + nodes_[n.in0].voff;
        const double* vp = vals_.data() + nodes_[n.in0].voff;
        const double* vt = consts_.data() + n.aux;
        std::size_t m = nodes_[n.in0].len;
        double s = 2.0 * g[0] / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) gp[i] += s * (vp[i] - vt[i]);
        break;
      }
      case Op::CrossEntropy: {
        double* gl = grads_.data() + nodes_[n.in0].voff;
        const double* vl = vals_.data() + nodes_[n.in0].voff;
        std::size_t k = nodes_[n.in0].len;
        double mx = vl[0];
        for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, vl[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < k; ++i) z += std::exp(vl[i] - mx);
        for (std::size_t i = 0; i < k; ++i) {
          double p = std::exp(vl[i] - mx) / z;
          gl[i] += g[0] * (p - (i == n.aux ? 1.0 : 0.0));
        }
        break;
      }
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  vals_.clear();
  grads_.clear();
  args_.clear();
  consts_.clear();
  fixed_.clear();
}

}  // namespace fode::ad
