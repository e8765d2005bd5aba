#include "snd/autodiff.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>

namespace snd::ad {

namespace {

using ArrayXX = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

constexpr double kBceLo = 1e-7;
constexpr double kBceHi = 1.0 - 1e-7;
constexpr double kCosClip = 1.0 - 1e-7;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
}

template <typename Expr>
void accum(Tape& t, Var v, const Expr& g) {
  if (t.requires_grad(v)) t.grad_buffer(v) += g;
}

void softmax_rows_inplace(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Scalar m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp();
    s.row(i) /= s.row(i).sum();
  }
}

void check_attention_shapes(const char* op, const Matrix& q, const Matrix& k,
                            const Matrix& v, int heads, const Matrix* mask) {
  if (heads < 1) throw std::invalid_argument(std::string(op) + ": heads must be positive");
  if (q.cols() != k.cols())
    throw std::invalid_argument(std::string(op) + ": query/key dim mismatch");
  if (k.rows() != v.rows())
    throw std::invalid_argument(std::string(op) + ": key/value length mismatch");
  if (q.cols() % heads != 0 || v.cols() % heads != 0)
    throw std::invalid_argument(std::string(op) + ": dims not divisible by heads");
  if (mask && (mask->rows() != q.rows() || mask->cols() != k.rows()))
    throw std::invalid_argument(std::string(op) + ": mask shape mismatch");
}

void mha_forward(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                 const Matrix* mask, Eigen::Ref<Matrix> out) {
  const int dh = static_cast<int>(q.cols()) / heads;
  const int dv = static_cast<int>(v.cols()) / heads;
  const Scalar sc = 1.0 / std::sqrt(static_cast<Scalar>(dh));
  for (int h = 0; h < heads; ++h) {
    Matrix s = sc * (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose());
    if (mask) s += *mask;
    softmax_rows_inplace(s);
    out.middleCols(h * dv, dv).noalias() = s * v.middleCols(h * dv, dv);
  }
}

// Recomputes the attention weights instead of storing them on the tape.
void mha_backward(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                  const Matrix* mask, const Eigen::Ref<const Matrix>& gout,
                  Matrix* gq, Matrix* gk, Matrix* gv) {
  const int dh = static_cast<int>(q.cols()) / heads;
  const int dv = static_cast<int>(v.cols()) / heads;
  const Scalar sc = 1.0 / std::sqrt(static_cast<Scalar>(dh));
  for (int h = 0; h < heads; ++h) {
    Matrix a = sc * (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose());
    if (mask) a += *mask;
    softmax_rows_inplace(a);
    const auto gh = gout.middleCols(h * dv, dv);
    if (gv) gv->middleCols(h * dv, dv).noalias() += a.transpose() * gh;
    if (gq || gk) {
      Matrix da = gh * v.middleCols(h * dv, dv).transpose();
      Vector rowdot = (da.array() * a.array()).rowwise().sum();
      Matrix ds = (a.array() * (da.array().colwise() - rowdot.array())).matrix();
      if (gq) gq->middleCols(h * dh, dh).noalias() += sc * (ds * k.middleCols(h * dh, dh));
      if (gk) gk->middleCols(h * dh, dh).noalias() += sc * (ds.transpose() * q.middleCols(h * dh, dh));
    }
  }
}

void normalize_rows_value(const Matrix& x, Matrix& y, Vector& norms, const char* who) {
  norms = x.rowwise().norm();
  if ((norms.array() < 1e-12).any())
    throw std::invalid_argument(std::string(who) + ": zero-norm row");
  y = (x.array().colwise() / norms.array()).matrix();
}

// gx = d(loss)/dx given y = x / |x| per row and gy = d(loss)/dy.
Matrix normalize_rows_backward(const Matrix& y, const Vector& norms, const Matrix& gy) {
  Vector dots = (gy.array() * y.array()).rowwise().sum();
  return (((gy.array() - y.array().colwise() * dots.array())).colwise() / norms.array()).matrix();
}

Matrix im2col(const Matrix& x, const Conv2dSpec& sp) {
  const int height = static_cast<int>(x.rows());
  const int ph = (sp.kernel_h - 1) / 2;
  const int pw = (sp.kernel_w - 1) / 2;
  const int ho = (height + 2 * ph - sp.kernel_h) / sp.stride_h + 1;
  const int wo = (sp.width + 2 * pw - sp.kernel_w) / sp.stride_w + 1;
  const int patch = sp.kernel_h * sp.kernel_w;
  Matrix col = Matrix::Zero(static_cast<Eigen::Index>(ho) * wo,
                            static_cast<Eigen::Index>(sp.in_channels) * patch);
  for (int i = 0; i < ho; ++i)
    for (int j = 0; j < wo; ++j) {
      const int r = i * wo + j;
      for (int c = 0; c < sp.in_channels; ++c)
        for (int u = 0; u < sp.kernel_h; ++u) {
          const int hi = i * sp.stride_h + u - ph;
          if (hi < 0 || hi >= height) continue;
          for (int w = 0; w < sp.kernel_w; ++w) {
            const int wi = j * sp.stride_w + w - pw;
            if (wi < 0 || wi >= sp.width) continue;
            col(r, c * patch + u * sp.kernel_w + w) = x(hi, c * sp.width + wi);
          }
        }
    }
  return col;
}

void col2im_add(const Matrix& dcol, int height, const Conv2dSpec& sp, Matrix& dx) {
  const int ph = (sp.kernel_h - 1) / 2;
  const int pw = (sp.kernel_w - 1) / 2;
  const int ho = (height + 2 * ph - sp.kernel_h) / sp.stride_h + 1;
  const int wo = (sp.width + 2 * pw - sp.kernel_w) / sp.stride_w + 1;
  const int patch = sp.kernel_h * sp.kernel_w;
  for (int i = 0; i < ho; ++i)
    for (int j = 0; j < wo; ++j) {
      const int r = i * wo + j;
      for (int c = 0; c < sp.in_channels; ++c)
        for (int u = 0; u < sp.kernel_h; ++u) {
          const int hi = i * sp.stride_h + u - ph;
          if (hi < 0 || hi >= height) continue;
          for (int w = 0; w < sp.kernel_w; ++w) {
            const int wi = j * sp.stride_w + w - pw;
            if (wi < 0 || wi >= sp.width) continue;
            dx(hi, c * sp.width + wi) += dcol(r, c * patch + u * sp.kernel_w + w);
          }
        }
    }
}

}  // namespace

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  if (n.has_grad) return n.grad;
  return Matrix::Zero(n.value.rows(), n.value.cols());
}

Matrix& Tape::grad_buffer(Var v) {
  Node& n = nodes_[check(v)];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  const int id = check(loss);
  if (nodes_[id].value.rows() != 1 || nodes_[id].value.cols() != 1)
    throw std::invalid_argument("backward: target must be 1x1");
  for (auto& n : nodes_) {
    n.grad.resize(0, 0);
    n.has_grad = false;
  }
  grad_buffer(loss).setOnes();
  for (int i = id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.has_grad && n.back) n.back(*this, n.grad);
  }
}

void Tape::clear() { nodes_.clear(); }

Var Tape::make(Matrix value, std::initializer_list<Var> parents, Backward back) {
  return make(std::move(value), std::vector<Var>(parents), std::move(back));
}

Var Tape::make(Matrix value, const std::vector<Var>& parents, Backward back) {
  bool rg = false;
  for (Var p : parents) rg = rg || nodes_[check(p)].requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  if (rg) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var add(Tape& t, Var a, Var b) {
  check_same_shape("add", t.value(a), t.value(b));
  return t.make(t.value(a) + t.value(b), {a, b}, [a, b](Tape& t, const Matrix& g) {
    accum(t, a, g);
    accum(t, b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape("sub", t.value(a), t.value(b));
  return t.make(t.value(a) - t.value(b), {a, b}, [a, b](Tape& t, const Matrix& g) {
    accum(t, a, g);
    accum(t, b, -g);
  });
}

Var mul(Tape& t, Var a, Var b) {
  check_same_shape("mul", t.value(a), t.value(b));
  return t.make(t.value(a).cwiseProduct(t.value(b)), {a, b},
                [a, b](Tape& t, const Matrix& g) {
                  accum(t, a, g.cwiseProduct(t.value(b)));
                  accum(t, b, g.cwiseProduct(t.value(a)));
                });
}

Var scale(Tape& t, Var a, double k) {
  return t.make(k * t.value(a), {a},
                [a, k](Tape& t, const Matrix& g) { accum(t, a, k * g); });
}

Var add_scaled(Tape& t, Var a, Var b, double alpha) {
  check_same_shape("add_scaled", t.value(a), t.value(b));
  return t.make(t.value(a) + alpha * t.value(b), {a, b},
                [a, b, alpha](Tape& t, const Matrix& g) {
                  accum(t, a, g);
                  accum(t, b, alpha * g);
                });
}

Var matmul(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows())
    throw std::invalid_argument("matmul: inner dim mismatch " +
                                shape_str(t.value(a)) + " * " + shape_str(t.value(b)));
  return t.make(t.value(a) * t.value(b), {a, b}, [a, b](Tape& t, const Matrix& g) {
    accum(t, a, g * t.value(b).transpose());
    accum(t, b, t.value(a).transpose() * g);
  });
}

Var transpose(Tape& t, Var a) {
  return t.make(t.value(a).transpose(), {a},
                [a](Tape& t, const Matrix& g) { accum(t, a, g.transpose()); });
}

Var add_rowvec(Tape& t, Var x, Var r) {
  const Matrix& xv = t.value(x);
  const Matrix& rv = t.value(r);
  if (rv.rows() != 1 || rv.cols() != xv.cols())
    throw std::invalid_argument("add_rowvec: expected 1x" + std::to_string(xv.cols()) +
                                ", got " + shape_str(rv));
  Matrix y = xv;
  y.rowwise() += rv.row(0);
  return t.make(std::move(y), {x, r}, [x, r](Tape& t, const Matrix& g) {
    accum(t, x, g);
    accum(t, r, g.colwise().sum());
  });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  const Matrix& bv = t.value(b);
  if (wv.cols() != xv.cols())
    throw std::invalid_argument("linear: weight " + shape_str(wv) +
                                " does not match input " + shape_str(xv));
  if (bv.rows() != 1 || bv.cols() != wv.rows())
    throw std::invalid_argument("linear: bias " + shape_str(bv) + " does not match weight " +
                                shape_str(wv));
  Matrix y = xv * wv.transpose();
  y.rowwise() += bv.row(0);
  return t.make(std::move(y), {x, w, b}, [x, w, b](Tape& t, const Matrix& g) {
    accum(t, x, g * t.value(w));
    accum(t, w, g.transpose() * t.value(x));
    accum(t, b, g.colwise().sum());
  });
}

Var sigmoid(Tape& t, Var a) {
  Matrix y = (1.0 / (1.0 + (-t.value(a).array()).exp())).matrix();
  Var out{static_cast<int>(t.node_count())};
  return t.make(std::move(y), {a}, [a, out](Tape& t, const Matrix& g) {
    const ArrayXX y = t.value(out).array();
    accum(t, a, (g.array() * y * (1.0 - y)).matrix());
  });
}

Var tanh_op(Tape& t, Var a) {
  Matrix y = t.value(a).array().tanh().matrix();
  Var out{static_cast<int>(t.node_count())};
  return t.make(std::move(y), {a}, [a, out](Tape& t, const Matrix& g) {
    const ArrayXX y = t.value(out).array();
    accum(t, a, (g.array() * (1.0 - y.square())).matrix());
  });
}

Var silu(Tape& t, Var a) {
  const ArrayXX x = t.value(a).array();
  const ArrayXX s = 1.0 / (1.0 + (-x).exp());
  return t.make((x * s).matrix(), {a}, [a](Tape& t, const Matrix& g) {
    const ArrayXX x = t.value(a).array();
    const ArrayXX s = 1.0 / (1.0 + (-x).exp());
    accum(t, a, (g.array() * s * (1.0 + x * (1.0 - s))).matrix());
  });
}

Var glu(Tape& t, Var a) {
  const Matrix& xv = t.value(a);
  if (xv.cols() % 2 != 0) throw std::invalid_argument("glu: odd column count");
  const Eigen::Index d = xv.cols() / 2;
  const ArrayXX s = 1.0 / (1.0 + (-xv.rightCols(d).array()).exp());
  return t.make((xv.leftCols(d).array() * s).matrix(), {a},
                [a, d](Tape& t, const Matrix& g) {
                  if (!t.requires_grad(a)) return;
                  const Matrix& xv = t.value(a);
                  const ArrayXX s = 1.0 / (1.0 + (-xv.rightCols(d).array()).exp());
                  Matrix& buf = t.grad_buffer(a);
                  buf.leftCols(d) += (g.array() * s).matrix();
                  buf.rightCols(d) +=
                      (g.array() * xv.leftCols(d).array() * s * (1.0 - s)).matrix();
                });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gamma);
  const Matrix& bv = t.value(beta);
  if (gv.rows() != 1 || gv.cols() != xv.cols() || bv.rows() != 1 || bv.cols() != xv.cols())
    throw std::invalid_argument("layer_norm: gamma/beta must be 1x" +
                                std::to_string(xv.cols()));
  Vector mu = xv.rowwise().mean();
  Matrix xc = xv.colwise() - mu;
  ArrayX inv = (xc.array().square().rowwise().mean() + eps).rsqrt();
  Matrix xhat = (xc.array().colwise() * inv).matrix();
  Matrix y = (xhat.array().rowwise() * gv.row(0).array()).matrix();
  y.rowwise() += bv.row(0);
  return t.make(std::move(y), {x, gamma, beta},
                [x, gamma, beta, eps](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(x);
    const Matrix& gv = t.value(gamma);
    Vector mu = xv.rowwise().mean();
    Matrix xc = xv.colwise() - mu;
    ArrayX inv = (xc.array().square().rowwise().mean() + eps).rsqrt();
    Matrix xhat = (xc.array().colwise() * inv).matrix();
    accum(t, beta, g.colwise().sum());
    accum(t, gamma, (g.array() * xhat.array()).matrix().colwise().sum());
    if (t.requires_grad(x)) {
      ArrayXX dxhat = g.array().rowwise() * gv.row(0).array();
      ArrayX m1 = dxhat.rowwise().mean();
      ArrayX m2 = (dxhat * xhat.array()).rowwise().mean();
      t.grad_buffer(x) +=
          (((dxhat.colwise() - m1) - xhat.array().colwise() * m2).colwise() * inv).matrix();
    }
  });
}

Var mean_all(Tape& t, Var a) {
  const Matrix& xv = t.value(a);
  Matrix y(1, 1);
  y(0, 0) = xv.mean();
  const double n = static_cast<double>(xv.size());
  return t.make(std::move(y), {a}, [a, n](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(a);
    accum(t, a, Matrix::Constant(xv.rows(), xv.cols(), g(0, 0) / n));
  });
}

Var sum_all(Tape& t, Var a) {
  const Matrix& xv = t.value(a);
  Matrix y(1, 1);
  y(0, 0) = xv.sum();
  return t.make(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(a);
    accum(t, a, Matrix::Constant(xv.rows(), xv.cols(), g(0, 0)));
  });
}

Var tile_rows(Tape& t, Var x, int copies) {
  if (copies < 1) throw std::invalid_argument("tile_rows: copies must be positive");
  const Matrix& xv = t.value(x);
  const Eigen::Index rows = xv.rows();
  return t.make(xv.replicate(copies, 1), {x},
                [x, copies, rows](Tape& t, const Matrix& g) {
                  if (!t.requires_grad(x)) return;
                  Matrix& buf = t.grad_buffer(x);
                  for (int i = 0; i < copies; ++i) buf += g.middleRows(i * rows, rows);
                });
}

Var mean_over_row_blocks(Tape& t, Var x, int block) {
  const Matrix& xv = t.value(x);
  if (block < 1 || xv.rows() % block != 0)
    throw std::invalid_argument("mean_over_row_blocks: rows not divisible by block");
  const Eigen::Index nb = xv.rows() / block;
  Matrix y(nb, xv.cols());
  for (Eigen::Index b = 0; b < nb; ++b)
    y.row(b) = xv.middleRows(b * block, block).colwise().mean();
  return t.make(std::move(y), {x}, [x, block, nb](Tape& t, const Matrix& g) {
    if (!t.requires_grad(x)) return;
    Matrix& buf = t.grad_buffer(x);
    for (Eigen::Index b = 0; b < nb; ++b)
      buf.middleRows(b * block, block).rowwise() += (g.row(b) / block);
  });
}

Var add_block_rowvec(Tape& t, Var x, Var e, int block) {
  const Matrix& xv = t.value(x);
  const Matrix& ev = t.value(e);
  if (block < 1 || xv.rows() % block != 0 || xv.rows() / block != ev.rows() ||
      xv.cols() != ev.cols())
    throw std::invalid_argument("add_block_rowvec: " + shape_str(xv) + " with block " +
                                std::to_string(block) + " does not match " + shape_str(ev));
  const Eigen::Index nb = ev.rows();
  Matrix y = xv;
  for (Eigen::Index b = 0; b < nb; ++b)
    y.middleRows(b * block, block).rowwise() += ev.row(b);
  return t.make(std::move(y), {x, e}, [x, e, block, nb](Tape& t, const Matrix& g) {
    accum(t, x, g);
    if (!t.requires_grad(e)) return;
    Matrix& buf = t.grad_buffer(e);
    for (Eigen::Index b = 0; b < nb; ++b)
      buf.row(b) += g.middleRows(b * block, block).colwise().sum();
  });
}

Var permute_rows(Tape& t, Var x, std::vector<int> perm) {
  const Matrix& xv = t.value(x);
  if (static_cast<Eigen::Index>(perm.size()) != xv.rows())
    throw std::invalid_argument("permute_rows: permutation size mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= static_cast<int>(perm.size()) || seen[p])
      throw std::invalid_argument("permute_rows: not a permutation");
    seen[p] = true;
  }
  Matrix y(xv.rows(), xv.cols());
  for (size_t i = 0; i < perm.size(); ++i) y.row(i) = xv.row(perm[i]);
  return t.make(std::move(y), {x}, [x, perm = std::move(perm)](Tape& t, const Matrix& g) {
    if (!t.requires_grad(x)) return;
    Matrix& buf = t.grad_buffer(x);
    for (size_t i = 0; i < perm.size(); ++i) buf.row(perm[i]) += g.row(i);
  });
}

Var gather_rows(Tape& t, Var x, std::vector<int> idx) {
  const Matrix& xv = t.value(x);
  for (int i : idx)
    if (i < 0 || i >= xv.rows())
      throw std::invalid_argument("gather_rows: index out of range");
  Matrix y(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (size_t i = 0; i < idx.size(); ++i) y.row(i) = xv.row(idx[i]);
  return t.make(std::move(y), {x}, [x, idx = std::move(idx)](Tape& t, const Matrix& g) {
    if (!t.requires_grad(x)) return;
    Matrix& buf = t.grad_buffer(x);
    for (size_t i = 0; i < idx.size(); ++i) buf.row(idx[i]) += g.row(i);
  });
}

namespace {

Matrix reshape_rowmajor(const Matrix& x, Eigen::Index rows, Eigen::Index cols) {
  using RowMajorM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajorM tmp = x;
  Eigen::Map<const RowMajorM> view(tmp.data(), rows, cols);
  return Matrix(view);
}

}  // namespace

Var reshape(Tape& t, Var x, int rows, int cols) {
  const Matrix& xv = t.value(x);
  if (static_cast<Eigen::Index>(rows) * cols != xv.size())
    throw std::invalid_argument("reshape: size mismatch " + shape_str(xv) + " -> " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  const Eigen::Index xr = xv.rows(), xc = xv.cols();
  return t.make(reshape_rowmajor(xv, rows, cols), {x},
                [x, xr, xc](Tape& t, const Matrix& g) {
                  accum(t, x, reshape_rowmajor(g, xr, xc));
                });
}

Var interleave_channels(Tape& t, const std::vector<Var>& channels) {
  if (channels.empty()) throw std::invalid_argument("interleave_channels: no channels");
  const Eigen::Index rows = t.value(channels[0]).rows();
  const Eigen::Index cols = t.value(channels[0]).cols();
  const int nc = static_cast<int>(channels.size());
  for (Var c : channels) check_same_shape("interleave_channels", t.value(channels[0]), t.value(c));
  Matrix y(rows * nc, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (int c = 0; c < nc; ++c) y.row(r * nc + c) = t.value(channels[c]).row(r);
  return t.make(std::move(y), channels, [channels, rows, nc](Tape& t, const Matrix& g) {
    for (int c = 0; c < nc; ++c) {
      if (!t.requires_grad(channels[c])) continue;
      Matrix& buf = t.grad_buffer(channels[c]);
      for (Eigen::Index r = 0; r < rows; ++r) buf.row(r) += g.row(r * nc + c);
    }
  });
}

Var select_rows(Tape& t, Var a, Var b, std::vector<bool> take_a) {
  check_same_shape("select_rows", t.value(a), t.value(b));
  if (static_cast<Eigen::Index>(take_a.size()) != t.value(a).rows())
    throw std::invalid_argument("select_rows: selector size mismatch");
  Matrix y = t.value(b);
  for (size_t i = 0; i < take_a.size(); ++i)
    if (take_a[i]) y.row(i) = t.value(a).row(i);
  return t.make(std::move(y), {a, b},
                [a, b, take_a = std::move(take_a)](Tape& t, const Matrix& g) {
                  for (size_t i = 0; i < take_a.size(); ++i) {
                    Var target = take_a[i] ? a : b;
                    if (t.requires_grad(target)) t.grad_buffer(target).row(i) += g.row(i);
                  }
                });
}

Var normalize_rows(Tape& t, Var x) {
  Matrix y;
  Vector norms;
  normalize_rows_value(t.value(x), y, norms, "normalize_rows");
  Var out{static_cast<int>(t.node_count())};
  return t.make(std::move(y), {x}, [x, out, norms = std::move(norms)](Tape& t, const Matrix& g) {
    accum(t, x, normalize_rows_backward(t.value(out), norms, g));
  });
}

Var multihead_attention(Tape& t, Var q, Var k, Var v, int heads, const Matrix* mask) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  check_attention_shapes("multihead_attention", qv, kv, vv, heads, mask);
  Matrix y(qv.rows(), vv.cols());
  mha_forward(qv, kv, vv, heads, mask, y);
  std::optional<Matrix> mcopy;
  if (mask) mcopy = *mask;
  return t.make(std::move(y), {q, k, v},
                [q, k, v, heads, mcopy = std::move(mcopy)](Tape& t, const Matrix& g) {
    Matrix* gq = t.requires_grad(q) ? &t.grad_buffer(q) : nullptr;
    Matrix* gk = t.requires_grad(k) ? &t.grad_buffer(k) : nullptr;
    Matrix* gv = t.requires_grad(v) ? &t.grad_buffer(v) : nullptr;
    mha_backward(t.value(q), t.value(k), t.value(v), heads,
                 mcopy ? &*mcopy : nullptr, g, gq, gk, gv);
  });
}

Var blockwise_attention(Tape& t, Var q, Var k, Var v, int heads, int block_q, int block_k) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  check_attention_shapes("blockwise_attention", qv, kv, vv, heads, nullptr);
  if (block_q < 1 || block_k < 1 || qv.rows() % block_q != 0 || kv.rows() % block_k != 0 ||
      qv.rows() / block_q != kv.rows() / block_k)
    throw std::invalid_argument("blockwise_attention: inconsistent block sizes");
  const Eigen::Index nb = qv.rows() / block_q;
  Matrix y(qv.rows(), vv.cols());
  for (Eigen::Index b = 0; b < nb; ++b)
    mha_forward(qv.middleRows(b * block_q, block_q), kv.middleRows(b * block_k, block_k),
                vv.middleRows(b * block_k, block_k), heads, nullptr,
                y.middleRows(b * block_q, block_q));
  return t.make(std::move(y), {q, k, v},
                [q, k, v, heads, block_q, block_k, nb](Tape& t, const Matrix& g) {
    const bool wq = t.requires_grad(q), wk = t.requires_grad(k), wv = t.requires_grad(v);
    if (!wq && !wk && !wv) return;
    const Matrix& qv = t.value(q);
    const Matrix& kv = t.value(k);
    const Matrix& vv = t.value(v);
    for (Eigen::Index b = 0; b < nb; ++b) {
      Matrix qb = qv.middleRows(b * block_q, block_q);
      Matrix kb = kv.middleRows(b * block_k, block_k);
      Matrix vb = vv.middleRows(b * block_k, block_k);
      Matrix gqb, gkb, gvb;
      if (wq) gqb = Matrix::Zero(block_q, qb.cols());
      if (wk) gkb = Matrix::Zero(block_k, kb.cols());
      if (wv) gvb = Matrix::Zero(block_k, vb.cols());
      mha_backward(qb, kb, vb, heads, nullptr, g.middleRows(b * block_q, block_q),
                   wq ? &gqb : nullptr, wk ? &gkb : nullptr, wv ? &gvb : nullptr);
      if (wq) t.grad_buffer(q).middleRows(b * block_q, block_q) += gqb;
      if (wk) t.grad_buffer(k).middleRows(b * block_k, block_k) += gkb;
      if (wv) t.grad_buffer(v).middleRows(b * block_k, block_k) += gvb;
    }
  });
}

Var depthwise_conv1d(Tape& t, Var x, Var w) {
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  if (wv.cols() != xv.cols())
    throw std::invalid_argument("depthwise_conv1d: kernel " + shape_str(wv) +
                                " does not match input " + shape_str(xv));
  if (wv.rows() % 2 == 0)
    throw std::invalid_argument("depthwise_conv1d: kernel length must be odd");
  const Eigen::Index frames = xv.rows();
  const int kernel = static_cast<int>(wv.rows());
  const int pad = (kernel - 1) / 2;
  Matrix y = Matrix::Zero(frames, xv.cols());
  for (int u = 0; u < kernel; ++u) {
    const int off = u - pad;
    const Eigen::Index a = std::max<Eigen::Index>(0, -off);
    const Eigen::Index b = std::min<Eigen::Index>(frames, frames - off);
    if (b <= a) continue;
    y.middleRows(a, b - a) += xv.middleRows(a + off, b - a) * wv.row(u).asDiagonal();
  }
  return t.make(std::move(y), {x, w}, [x, w, kernel, pad](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(x);
    const Matrix& wv = t.value(w);
    const Eigen::Index frames = xv.rows();
    for (int u = 0; u < kernel; ++u) {
      const int off = u - pad;
      const Eigen::Index a = std::max<Eigen::Index>(0, -off);
      const Eigen::Index b = std::min<Eigen::Index>(frames, frames - off);
      if (b <= a) continue;
      if (t.requires_grad(x))
        t.grad_buffer(x).middleRows(a + off, b - a) +=
            g.middleRows(a, b - a) * wv.row(u).asDiagonal();
      if (t.requires_grad(w))
        t.grad_buffer(w).row(u) +=
            g.middleRows(a, b - a).cwiseProduct(xv.middleRows(a + off, b - a)).colwise().sum();
    }
  });
}

Var conv2d(Tape& t, Var x, Var w, Var b, const Conv2dSpec& spec) {
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  const Matrix& bv = t.value(b);
  if (spec.width < 1 || spec.in_channels < 1 || spec.out_channels < 1 ||
      spec.stride_h < 1 || spec.stride_w < 1)
    throw std::invalid_argument("conv2d: bad spec");
  if (spec.kernel_h % 2 == 0 || spec.kernel_w % 2 == 0)
    throw std::invalid_argument("conv2d: kernel sizes must be odd");
  if (xv.cols() != static_cast<Eigen::Index>(spec.in_channels) * spec.width)
    throw std::invalid_argument("conv2d: input " + shape_str(xv) + " does not match spec");
  if (wv.rows() != spec.out_channels ||
      wv.cols() != static_cast<Eigen::Index>(spec.in_channels) * spec.kernel_h * spec.kernel_w)
    throw std::invalid_argument("conv2d: weight " + shape_str(wv) + " does not match spec");
  if (bv.rows() != 1 || bv.cols() != spec.out_channels)
    throw std::invalid_argument("conv2d: bias " + shape_str(bv) + " does not match spec");
  const int height = static_cast<int>(xv.rows());
  const int ho = spec.out_height(height);
  const int wo = spec.out_width();
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: empty output");
  Matrix col = im2col(xv, spec);
  Matrix flat = col * wv.transpose();
  flat.rowwise() += bv.row(0);
  Matrix y(ho, static_cast<Eigen::Index>(spec.out_channels) * wo);
  for (int i = 0; i < ho; ++i)
    for (int co = 0; co < spec.out_channels; ++co)
      for (int j = 0; j < wo; ++j) y(i, co * wo + j) = flat(i * wo + j, co);
  return t.make(std::move(y), {x, w, b},
                [x, w, b, spec, height, ho, wo](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(x);
    const Matrix& wv = t.value(w);
    Matrix gflat(static_cast<Eigen::Index>(ho) * wo, spec.out_channels);
    for (int i = 0; i < ho; ++i)
      for (int co = 0; co < spec.out_channels; ++co)
        for (int j = 0; j < wo; ++j) gflat(i * wo + j, co) = g(i, co * wo + j);
    accum(t, b, gflat.colwise().sum());
    if (t.requires_grad(w) || t.requires_grad(x)) {
      if (t.requires_grad(w)) {
        Matrix col = im2col(xv, spec);
        t.grad_buffer(w) += gflat.transpose() * col;
      }
      if (t.requires_grad(x)) {
        Matrix dcol = gflat * wv;
        col2im_add(dcol, height, spec, t.grad_buffer(x));
      }
    }
  });
}

Var freq_stats(Tape& t, Var x, int channels, double eps) {
  const Matrix& xv = t.value(x);
  if (channels < 1 || xv.cols() % channels != 0)
    throw std::invalid_argument("freq_stats: columns not divisible by channels");
  const Eigen::Index bins = xv.cols() / channels;
  Matrix y(xv.rows(), 2 * channels);
  for (int c = 0; c < channels; ++c) {
    auto block = xv.middleCols(c * bins, bins);
    Vector m = block.rowwise().mean();
    ArrayX var = (block.colwise() - m).array().square().rowwise().mean();
    y.col(c) = m;
    y.col(channels + c) = (var + eps).sqrt().matrix();
  }
  return t.make(std::move(y), {x}, [x, channels, bins, eps](Tape& t, const Matrix& g) {
    if (!t.requires_grad(x)) return;
    const Matrix& xv = t.value(x);
    Matrix& buf = t.grad_buffer(x);
    for (int c = 0; c < channels; ++c) {
      auto block = xv.middleCols(c * bins, bins);
      Vector m = block.rowwise().mean();
      ArrayX sd = ((block.colwise() - m).array().square().rowwise().mean() + eps).sqrt();
      ArrayX gm = g.col(c).array() / static_cast<Scalar>(bins);
      ArrayX gs = g.col(channels + c).array() / (static_cast<Scalar>(bins) * sd);
      buf.middleCols(c * bins, bins) +=
          (gm.replicate(1, bins) + (block.colwise() - m).array().colwise() * gs).matrix();
    }
  });
}

Var time_stats(Tape& t, Var x, double eps) {
  const Matrix& xv = t.value(x);
  if (xv.rows() < 1) throw std::invalid_argument("time_stats: empty input");
  const Eigen::Index d = xv.cols();
  const Eigen::Index frames = xv.rows();
  RowVector m = xv.colwise().mean();
  Eigen::Array<Scalar, 1, Eigen::Dynamic> var =
      (xv.rowwise() - m).array().square().colwise().mean();
  Matrix y(1, 2 * d);
  y.leftCols(d) = m;
  y.rightCols(d) = (var + eps).sqrt().matrix();
  return t.make(std::move(y), {x}, [x, d, frames, eps](Tape& t, const Matrix& g) {
    if (!t.requires_grad(x)) return;
    const Matrix& xv = t.value(x);
    RowVector m = xv.colwise().mean();
    Eigen::Array<Scalar, 1, Eigen::Dynamic> sd =
        ((xv.rowwise() - m).array().square().colwise().mean() + eps).sqrt();
    Eigen::Array<Scalar, 1, Eigen::Dynamic> gm =
        g.leftCols(d).array() / static_cast<Scalar>(frames);
    Eigen::Array<Scalar, 1, Eigen::Dynamic> gs =
        g.rightCols(d).array() / (static_cast<Scalar>(frames) * sd);
    ArrayXX gx = (xv.rowwise() - m).array().rowwise() * gs;
    gx.rowwise() += gm;
    t.grad_buffer(x) += gx.matrix();
  });
}

Var bce_loss(Tape& t, Var pred, const Matrix& truth) {
  const Matrix& p = t.value(pred);
  check_same_shape("bce_loss", p, truth);
  const double n = static_cast<double>(p.size());
  ArrayXX pc = p.array().min(kBceHi).max(kBceLo);
  Matrix y(1, 1);
  y(0, 0) = -((truth.array() * pc.log()) + (1.0 - truth.array()) * (1.0 - pc).log()).sum() / n;
  return t.make(std::move(y), {pred}, [pred, truth, n](Tape& t, const Matrix& g) {
    if (!t.requires_grad(pred)) return;
    const ArrayXX p = t.value(pred).array();
    ArrayXX pc = p.min(kBceHi).max(kBceLo);
    ArrayXX dp = (pc - truth.array()) / (pc * (1.0 - pc)) / n;
    ArrayXX zero = ArrayXX::Zero(p.rows(), p.cols());
    t.grad_buffer(pred) += (g(0, 0) * ((p > kBceLo && p < kBceHi).select(dp, zero))).matrix();
  });
}

Var arcface_loss(Tape& t, Var emb, Var table, const std::vector<int>& labels,
                 double scale_s, double margin_m) {
  const Matrix& ev = t.value(emb);
  const Matrix& wv = t.value(table);
  if (ev.cols() != wv.cols())
    throw std::invalid_argument("arcface_loss: embedding dim " + shape_str(ev) +
                                " does not match table " + shape_str(wv));
  if (static_cast<Eigen::Index>(labels.size()) != ev.rows())
    throw std::invalid_argument("arcface_loss: one label per embedding row required");
  for (int l : labels)
    if (l < 0 || l >= wv.rows())
      throw std::invalid_argument("arcface_loss: label out of range");
  const double cos_m = std::cos(margin_m);
  const double sin_m = std::sin(margin_m);

  Matrix en, wn;
  Vector enorm, wnorm;
  normalize_rows_value(ev, en, enorm, "arcface_loss(embeddings)");
  normalize_rows_value(wv, wn, wnorm, "arcface_loss(table)");
  Matrix cosine = en * wn.transpose();
  Matrix z = scale_s * cosine;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double c = std::clamp(cosine(i, labels[i]), -kCosClip, kCosClip);
    z(i, labels[i]) = scale_s * (c * cos_m - std::sqrt(1.0 - c * c) * sin_m);
  }
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double zmax = z.row(i).maxCoeff();
    const double lse = zmax + std::log((z.row(i).array() - zmax).exp().sum());
    loss += lse - z(i, labels[i]);
  }
  Matrix y(1, 1);
  y(0, 0) = loss / static_cast<double>(z.rows());

  return t.make(std::move(y), {emb, table},
                [emb, table, labels, scale_s, cos_m, sin_m](Tape& t, const Matrix& g) {
    const Matrix& ev = t.value(emb);
    const Matrix& wv = t.value(table);
    Matrix en, wn;
    Vector enorm, wnorm;
    normalize_rows_value(ev, en, enorm, "arcface_loss(embeddings)");
    normalize_rows_value(wv, wn, wnorm, "arcface_loss(table)");
    Matrix cosine = en * wn.transpose();
    Matrix z = scale_s * cosine;
    std::vector<double> dtarget(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double raw = cosine(i, labels[i]);
      if (std::abs(raw) < kCosClip) {
        const double root = std::sqrt(1.0 - raw * raw);
        z(i, labels[i]) = scale_s * (raw * cos_m - root * sin_m);
        dtarget[i] = scale_s * (cos_m + raw * sin_m / root);
      } else {
        const double c = std::clamp(raw, -kCosClip, kCosClip);
        z(i, labels[i]) = scale_s * (c * cos_m - std::sqrt(1.0 - c * c) * sin_m);
        dtarget[i] = 0.0;  // clamped: flat in the raw cosine
      }
    }
    const double inv_rows = g(0, 0) / static_cast<double>(z.rows());
    Matrix dcos(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double zmax = z.row(i).maxCoeff();
      RowVector p = (z.row(i).array() - zmax).exp();
      p /= p.sum();
      p(labels[i]) -= 1.0;
      p *= inv_rows;  // dL/dz row
      dcos.row(i) = scale_s * p;
      dcos(i, labels[i]) = p(labels[i]) * dtarget[i];
    }
    if (t.requires_grad(emb)) {
      Matrix den = dcos * wn;
      t.grad_buffer(emb) += normalize_rows_backward(en, enorm, den);
    }
    if (t.requires_grad(table)) {
      Matrix dwn = dcos.transpose() * en;
      t.grad_buffer(table) += normalize_rows_backward(wn, wnorm, dwn);
    }
  });
}

Matrix sinusoidal_positions(int frames, int dim) {
  if (frames < 1 || dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_positions: need frames >= 1 and even dim >= 2");
  Matrix pe(frames, dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double omega = std::exp(-2.0 * i / dim * std::log(10000.0));
    for (int f = 0; f < frames; ++f) {
      pe(f, 2 * i) = std::sin(f * omega);
      pe(f, 2 * i + 1) = std::cos(f * omega);
    }
  }
  return pe;
}

}  // namespace snd::ad
