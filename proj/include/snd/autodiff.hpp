#pragma once

#include <functional>
#include <string>
#include <vector>

#include "snd/types.hpp"

// Reverse-mode automatic differentiation over dense matrices. A Tape owns the
// computation graph; ops are free functions that eagerly compute values and
// register backward closures. Attention ops recompute their softmax weights
// in the backward pass so the tape never stores T x T score matrices.
namespace snd::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var leaf(Matrix value);  // differentiable input

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  // Gradient of the last backward() target w.r.t. v. Zero matrix if v never
  // received gradient.
  Matrix grad(Var v) const;

  void backward(Var loss);
  void clear();
  size_t node_count() const { return nodes_.size(); }

  // --- op-author interface ---
  using Backward = std::function<void(Tape&, const Matrix&)>;
  Var make(Matrix value, std::initializer_list<Var> parents, Backward back);
  Var make(Matrix value, const std::vector<Var>& parents, Backward back);
  Matrix& grad_buffer(Var v);  // allocated as zeros on first touch

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward back;
  };

  int check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::logic_error("autodiff: variable does not belong to this tape");
    return v.id;
  }

  std::vector<Node> nodes_;
};

// ----- elementwise and linear algebra -----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double k);
Var add_scaled(Tape& t, Var a, Var b, double alpha);  // a + alpha * b
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var add_rowvec(Tape& t, Var x, Var r);            // x + replicate(r)
Var linear(Tape& t, Var x, Var w, Var b);         // x * w^T + b, w: out x in
Var sigmoid(Tape& t, Var a);
Var tanh_op(Tape& t, Var a);
Var silu(Tape& t, Var a);
Var glu(Tape& t, Var a);                          // left half gated by right half
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
Var mean_all(Tape& t, Var a);
Var sum_all(Tape& t, Var a);

// ----- shape plumbing -----
Var tile_rows(Tape& t, Var x, int copies);              // [x; x; ...]
Var mean_over_row_blocks(Tape& t, Var x, int block);    // contiguous row blocks
Var add_block_rowvec(Tape& t, Var x, Var e, int block); // e.row(i) over block i
Var permute_rows(Tape& t, Var x, std::vector<int> perm);
Var gather_rows(Tape& t, Var x, std::vector<int> idx);
Var reshape(Tape& t, Var x, int rows, int cols);        // row-major semantics
Var interleave_channels(Tape& t, const std::vector<Var>& channels);
Var select_rows(Tape& t, Var a, Var b, std::vector<bool> take_a);
Var normalize_rows(Tape& t, Var x);

// ----- neural network blocks -----
// Multi-head scaled dot-product attention; head h uses column slice h of
// q/k/v. Optional additive mask (rows(q) x rows(k)) applied to every head.
Var multihead_attention(Tape& t, Var q, Var k, Var v, int heads,
                        const Matrix* mask = nullptr);

// Attention restricted to aligned contiguous blocks: query block i (block_q
// rows) attends within key/value block i (block_k rows).
Var blockwise_attention(Tape& t, Var q, Var k, Var v, int heads, int block_q,
                        int block_k);

// Per-column 1-D convolution over rows with zero padding, w: kernel x D.
Var depthwise_conv1d(Tape& t, Var x, Var w);

struct Conv2dSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 3;
  int kernel_w = 3;
  int stride_h = 1;
  int stride_w = 1;
  int width = 0;  // freq bins per channel in the input layout

  int out_height(int height) const { return (height + (kernel_h - 1) / 2 * 2 - kernel_h) / stride_h + 1; }
  int out_width() const { return (width + (kernel_w - 1) / 2 * 2 - kernel_w) / stride_w + 1; }
};

// 2-D convolution over a (rows=time) x (cols=channels*width) layout where
// column c*width+f holds channel c, position f. w: out_ch x (in_ch*kh*kw),
// b: 1 x out_ch. Zero padding (k-1)/2 per side.
Var conv2d(Tape& t, Var x, Var w, Var b, const Conv2dSpec& spec);

// Per-frame mean and std over the position axis of each channel:
// T x (C*F) -> T x 2C, columns [mean_0..mean_{C-1}, std_0..std_{C-1}].
Var freq_stats(Tape& t, Var x, int channels, double eps = 1e-5);

// Mean and std over all rows per column: T x D -> 1 x 2D.
Var time_stats(Tape& t, Var x, double eps = 1e-5);

// ----- losses -----
// Mean binary cross-entropy over all entries; pred clamped to
// [1e-7, 1 - 1e-7]. truth is constant.
Var bce_loss(Tape& t, Var pred, const Matrix& truth);

// Additive-angular-margin softmax loss, mean over rows of emb. Both emb rows
// and table rows are length-normalized inside the op (gradients flow through
// the normalization). labels[i] indexes the table row of emb row i.
Var arcface_loss(Tape& t, Var emb, Var table, const std::vector<int>& labels,
                 double scale_s, double margin_m);

// ----- helpers -----
Matrix sinusoidal_positions(int frames, int dim);

}  // namespace snd::ad
