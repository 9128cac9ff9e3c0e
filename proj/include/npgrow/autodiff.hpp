#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "npgrow/tensor.hpp"

namespace npgrow {

// Reverse-mode autodiff on a per-graph tape. Nodes live in the tape's arena
// and are referenced by raw pointer; a tape is built, run backward once and
// discarded. Tapes are independent, so batch items can run on separate
// threads as long as each thread owns its tape.
struct Node {
  Tensor val;
  Tensor grad;  // allocated on first accumulation
  bool need_grad = false;
  int param_index = -1;  // >= 0 marks a parameter leaf
  std::function<void()> back;
};

using Var = Node*;

class Tape {
 public:
  Var node(Tensor val, bool need_grad);
  // Leaf sharing the given buffer. Parameter leaves carry their registry
  // index so gradients can be collected after backward().
  Var leaf(const Tensor& value, bool need_grad = false, int param_index = -1);
  Var constant(Tensor value) { return node(std::move(value), false); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation order.
  void backward(Var loss);

  // Visits every parameter leaf that received a gradient.
  void collect_param_grads(const std::function<void(int, const Tensor&)>& sink) const;

  size_t num_nodes() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

// Accumulates delta into v's gradient if it participates in backprop.
void accum_grad(Var v, const Tensor& delta);
Tensor& ensure_grad(Var v);

// ---- Elementwise / scalar ----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var div_ew(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double alpha);
Var add_scalar(Tape& t, Var a, double c);
Var neg(Tape& t, Var a);
Var exp_ew(Tape& t, Var a);
Var log_ew(Tape& t, Var a);
Var square(Tape& t, Var a);
Var softplus(Tape& t, Var a);
Var silu(Tape& t, Var a);

// ---- Reductions ----
Var sum_all(Tape& t, Var a);
Var mean_all(Tape& t, Var a);
// (C, H, W) -> (C,)
Var sum_spatial(Tape& t, Var a);

// ---- Linear algebra ----
// (M, K) x (K, N) -> (M, N)
Var matmul(Tape& t, Var a, Var b);
// (M, K) x (N, K)^T -> (M, N)
Var matmul_nt(Tape& t, Var a, Var b);
// rows (N, in), weight (out, in), bias (out) or nullptr -> (N, out)
Var linear(Tape& t, Var x, Var w, Var b);

// ---- Shape ----
Var reshape(Tape& t, Var a, Shape shape);
Var concat_channels(Tape& t, const std::vector<Var>& xs);  // (C_i, H, W)
Var concat_cols(Tape& t, const std::vector<Var>& xs);      // (N, M_i)
Var concat_rows(Tape& t, const std::vector<Var>& xs);      // (N_i, M)
// (C, H, W) -> (H, W) plane of one channel
Var slice_channel(Tape& t, Var a, int channel);
// (C, H, W) -> (H*W, C) rows and back
Var grid_to_rows(Tape& t, Var a);
Var rows_to_grid(Tape& t, Var a, int h, int w);

// ---- Neural net ops ----
// x (Cin, H, W), w (Cout, Cin, kh, kw), b (Cout) or nullptr
Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad);
Var instance_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
Var upsample2x(Tape& t, Var x);
Var softmax_rows(Tape& t, Var a);
// softmax over the channel axis of (C, H, W)
Var softmax_channels(Tape& t, Var a);
// Per-pixel weighted sum over timesteps: weights (P, n), values n x (P, dv).
Var weighted_sum_rows(Tape& t, Var weights, const std::vector<Var>& values);
// Mean over pixels of -log softmax(logits)[label]; labels (H, W) of class ids,
// optional per-class weights (num_classes).
Var softmax_cross_entropy(Tape& t, Var logits, const Tensor& labels,
                          const std::vector<double>* class_weights = nullptr);

}  // namespace npgrow
