#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fode/mat.hpp"

namespace fode::ad {

using NodeId = std::uint32_t;
inline constexpr NodeId kNone = 0xffffffffu;

enum class Op : std::uint8_t {
  Leaf,
  Axpy,      // c0*in0 + c1*in1, elementwise
  Scale,     // c0*in0
  Relu,
  Hadamard,  // in0 ⊙ in1
  MatVec,    // in0 = row-major (rows×cols) matrix node, in1 = vector node
  FixedMatVec,  // constant matrix (not differentiated) times vector node
  Slice,        // contiguous sub-range of in0
  Concat,       // argument list in args
  WeightedSum,  // Σ coeff_i · arg_i over equal-length nodes
  Mse,          // mean squared error against a constant target, scalar output
  CrossEntropy,  // −log softmax(in0)[class], scalar output
};

struct Node {
  Op op;
  NodeId in0 = kNone;
  NodeId in1 = kNone;
  std::size_t voff = 0;  // offset into the value/grad arena
  std::size_t len = 0;
  double c0 = 0.0;
  double c1 = 0.0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t aux = 0;   // Slice: source offset; FixedMatVec: matrix index;
                         // WeightedSum/Mse: offset into consts; CrossEntropy: class
  std::size_t xoff = 0;  // Concat/WeightedSum: argument list offset
  std::size_t xlen = 0;
};

// Append-only reverse-mode tape. Values are computed eagerly on record; a
// backward pass walks the nodes in strict reverse order, so gradients are
// bit-identical across repeated passes. reset() keeps allocated capacity so a
// tape can be reused batch after batch without churn.
class Tape {
 public:
  NodeId leaf(std::span<const double> v);
  NodeId axpy(NodeId a, NodeId b, double ca, double cb);
  NodeId add(NodeId a, NodeId b) { return axpy(a, b, 1.0, 1.0); }
  NodeId sub(NodeId a, NodeId b) { return axpy(a, b, 1.0, -1.0); }
  NodeId scale(NodeId a, double c);
  NodeId relu(NodeId a);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId matvec(NodeId w, std::size_t rows, std::size_t cols, NodeId x);
  // m is borrowed; it must outlive every use of this tape.
  NodeId fixed_matvec(const Mat& m, NodeId x);
  NodeId slice(NodeId a, std::size_t off, std::size_t n);
  NodeId concat(std::span<const NodeId> parts);
  NodeId weighted_sum(std::span<const NodeId> parts, std::span<const double> coeffs);
  NodeId mse(NodeId pred, std::span<const double> target);
  NodeId cross_entropy(NodeId logits, std::size_t class_index);

  std::span<const double> value(NodeId id) const;
  std::span<const double> grad(NodeId id) const;

  void backward(NodeId out, std::span<const double> seed);
  void backward_scalar(NodeId out);

  void reset();
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  NodeId push(Op op, std::size_t len);
  double* val_ptr(NodeId id) { return vals_.data() + nodes_[id].voff; }
  const double* val_ptr(NodeId id) const { return vals_.data() + nodes_[id].voff; }

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> grads_;
  std::vector<NodeId> args_;
  std::vector<double> consts_;
  std::vector<const Mat*> fixed_;
};

}  // namespace fode::ad
