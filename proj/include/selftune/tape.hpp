#ifndef SELFTUNE_TAPE_HPP
#define SELFTUNE_TAPE_HPP

#include <functional>
#include <vector>

#include "selftune/tensor.hpp"

namespace selftune {

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode computation record whose every stored value is a DualTensor:
// running the same program with tangent-carrying leaves yields, alongside
// each gradient, its directional derivative with respect to the single
// scalar meta-parameter (forward-over-reverse).
//
// Lifecycle: build the graph through the op methods, then call gradient()
// exactly once.  A second differentiation of the same record raises
// StateError; so does differentiating a non-recording tape.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  // Leaves.  `constant` values never receive adjoints; `param` leaves are
  // differentiation targets.
  Var constant(DualTensor v);
  Var param(DualTensor v);

  // Primitives.  All validate shapes (ShapeError) and reject non-finite
  // outputs (NumericalError).
  Var matmul(Var a, Var b);
  Var conv2d(Var x, Var w);               // NCHW, odd kernel, 'same', stride 1
  Var bias_add(Var x, Var b);             // rows [m,n] + [n]
  Var bias_add_channels(Var x, Var b);    // [N,C,H,W] + [C]
  Var relu(Var x);
  Var sigmoid(Var x);
  Var square(Var x);
  Var exp(Var x);
  Var softmax(Var x);                     // rows of a [m,n] matrix
  Var log_softmax(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, DualScalar s);         // scalar may carry a tangent
  Var sum(Var x);                         // -> [1]
  Var mean(Var x);                        // -> [1]
  Var flatten2d(Var x);                   // [N,C,H,W] -> [N, C*H*W]
  Var gather(Var x, const std::vector<int>& index);  // out[i] = x[i, index[i]]

  // Identity in the forward pass; blocks all reverse-mode flow, so nothing
  // upstream of it receives gradient.  The forward tangent channel passes
  // through unchanged: the stop is a gradient barrier, not a value freeze,
  // and finite differences through the value program still see this path.
  Var stop_gradient(Var x);

  // Accessors.
  const DualTensor& dual(Var v) const { return node(v).out; }
  const Tensor& value(Var v) const { return node(v).out.value; }
  double scalar_value(Var v) const;
  // Forward-mode directional derivative of a scalar node with respect to
  // the meta-parameter (zero if no tangent reached it).
  double meta_directional_derivative(Var v) const;

  // Reverse pass from a scalar loss.  Returns one gradient per requested
  // parameter (exact zeros, same shape, when the loss does not depend on
  // it).  Gradients are DualTensors: their tangent channel is the
  // derivative of the gradient itself w.r.t. the meta-parameter.
  std::vector<DualTensor> gradient(Var loss, const std::vector<Var>& params);

 private:
  struct Node {
    DualTensor out;
    bool on_grad_path = false;
    std::function<void(Tape&, const DualTensor&)> backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  Var push(DualTensor out, bool on_path,
           std::function<void(Tape&, const DualTensor&)> backward);
  void check_finite(const DualTensor& t, const char* op) const;
  void add_adjoint(int id, DualTensor contribution);
  bool on_path(Var v) const { return node(v).on_grad_path; }

  std::vector<Node> nodes_;
  std::vector<DualTensor> adjoints_;
  bool recording_ = true;
  bool consumed_ = false;
};

}  // namespace selftune

#endif
