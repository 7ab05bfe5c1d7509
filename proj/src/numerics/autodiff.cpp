#include "agadapt/numerics/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <numbers>

#include "agadapt/error.hpp"

namespace agadapt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap view(const Tensor& t) {
  return ConstMatMap(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MatMap view(Tensor& t) {
  return MatMap(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Graph& graph_of(Var a) {
  if (!a.graph) throw NumericError("operation on an invalid Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw NumericError("operands belong to different graphs");
  return graph_of(a);
}

void require_shape(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw NumericError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
  }
}

bool wants(Graph& g, std::initializer_list<Var> vs) {
  if (!g.recording()) return false;
  for (auto v : vs) {
    if (g.needs_grad(v)) return true;
  }
  return false;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu_grad(double x) {
  const double x3 = x * x * x;
  const double t = std::tanh(kGeluC * (x + 0.044715 * x3));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

const Tensor& Var::value() const {
  if (!graph) throw NumericError("value() on an invalid Var");
  return graph->value(*this);
}

Var Graph::push(Tensor value, bool needs_grad, Backprop backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Graph::variable(Tensor value) { return push(std::move(value), true, nullptr); }

Var Graph::parameter(const Parameter& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.needs_grad = record_ && p.trainable;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const { return node_value(nodes_.at(v.id)); }

const Tensor* Graph::grad(Var v) const {
  const auto& n = nodes_.at(v.id);
  return n.grad.size() ? &n.grad : nullptr;
}

Tensor& Graph::grad_ref(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Tensor& v = node_value(n);
    n.grad = Tensor(v.shape(), 0.0);
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw NumericError("backward: loss belongs to another graph");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw NumericError("backward: loss must be a scalar, got " + shape_string(lv.shape()));
  if (!record_) throw NumericError("backward: graph was built without gradient recording");
  if (!nodes_[loss.id].needs_grad) return;
  grad_ref(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, i);
  }
}

GradientStore Graph::backward(Var loss, const ParameterStore& params) {
  backward(loss);
  GradientStore out;
  for (const auto& p : params.items()) {
    if (p.trainable) out.emplace(p.name, Tensor(p.value.shape(), 0.0));
  }
  for (const auto& n : nodes_) {
    if (!n.param || !n.param->trainable || n.grad.size() == 0) continue;
    auto it = out.find(n.param->name);
    if (it == out.end()) continue;
    auto dst = it->second.data();
    auto src = n.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  return out;
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_shape(av.cols() == bv.rows(), "matmul", av, bv);
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  view(out).noalias() = view(av) * view(bv);
  return g.push(std::move(out), wants(g, {a, b}), [a, b](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    if (gr.node_needs_grad(a.id)) view(gr.grad_ref(a.id)).noalias() += view(dc) * view(gr.value(b)).transpose();
    if (gr.node_needs_grad(b.id)) view(gr.grad_ref(b.id)).noalias() += view(gr.value(a)).transpose() * view(dc);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_shape(av.cols() == bv.cols(), "matmul_nt", av, bv);
  Tensor out = Tensor::matrix(av.rows(), bv.rows());
  view(out).noalias() = view(av) * view(bv).transpose();
  return g.push(std::move(out), wants(g, {a, b}), [a, b](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    if (gr.node_needs_grad(a.id)) view(gr.grad_ref(a.id)).noalias() += view(dc) * view(gr.value(b));
    if (gr.node_needs_grad(b.id)) view(gr.grad_ref(b.id)).noalias() += view(dc).transpose() * view(gr.value(a));
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_shape(av.rows() == bv.rows() && av.cols() == bv.cols(), "add", av, bv);
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return g.push(std::move(out), wants(g, {a, b}), [a, b](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    for (Var v : {a, b}) {
      if (!gr.node_needs_grad(v.id)) continue;
      Tensor& d = gr.grad_ref(v.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i];
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_shape(av.rows() == bv.rows() && av.cols() == bv.cols(), "sub", av, bv);
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return g.push(std::move(out), wants(g, {a, b}), [a, b](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    if (gr.node_needs_grad(a.id)) {
      Tensor& d = gr.grad_ref(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i];
    }
    if (gr.node_needs_grad(b.id)) {
      Tensor& d = gr.grad_ref(b.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= dc[i];
    }
  });
}

Var add_row(Var a, Var bias) {
  Graph& g = graph_of(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  require_shape(bv.rows() == 1 && bv.cols() == av.cols(), "add_row", av, bv);
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  return g.push(std::move(out), wants(g, {a, bias}), [a, bias](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    if (gr.node_needs_grad(a.id)) {
      Tensor& d = gr.grad_ref(a.id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i];
    }
    if (gr.node_needs_grad(bias.id)) {
      Tensor& d = gr.grad_ref(bias.id);
      const std::size_t cols = d.size();
      for (std::size_t r = 0; r < dc.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) d[c] += dc[r * cols + c];
      }
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_shape(av.rows() == bv.rows() && av.cols() == bv.cols(), "mul", av, bv);
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.push(std::move(out), wants(g, {a, b}), [a, b](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    if (gr.node_needs_grad(a.id)) {
      Tensor& d = gr.grad_ref(a.id);
      const Tensor& bv = gr.value(b);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i] * bv[i];
    }
    if (gr.node_needs_grad(b.id)) {
      Tensor& d = gr.grad_ref(b.id);
      const Tensor& av = gr.value(a);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return g.push(std::move(out), wants(g, {a}), [a, s](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    Tensor& d = gr.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i] * s;
  });
}

Var gelu(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(av[i]);
  return g.push(std::move(out), wants(g, {a}), [a](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    const Tensor& av = gr.value(a);
    Tensor& d = gr.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dc[i] * gelu_grad(av[i]);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = graph_of(x, gamma);
  graph_of(x, beta);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols) {
    throw NumericError("layer_norm: affine parameters do not match width");
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat = Tensor::matrix(rows, cols);
  std::vector<double> inv_std(rows);
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.ptr() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mean) * inv_std[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return g.push(std::move(out), wants(g, {x, gamma, beta}),
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, std::size_t self) {
                  const Tensor& dy = gr.out_grad(self);
                  const std::size_t rows = xhat.rows();
                  const std::size_t cols = xhat.cols();
                  if (gr.node_needs_grad(gamma.id)) {
                    Tensor& dg = gr.grad_ref(gamma.id);
                    for (std::size_t i = 0; i < dy.size(); ++i) dg[i % cols] += dy[i] * xhat[i];
                  }
                  if (gr.node_needs_grad(beta.id)) {
                    Tensor& db = gr.grad_ref(beta.id);
                    for (std::size_t i = 0; i < dy.size(); ++i) db[i % cols] += dy[i];
                  }
                  if (gr.node_needs_grad(x.id)) {
                    const Tensor& gv = gr.value(gamma);
                    Tensor& dx = gr.grad_ref(x.id);
                    std::vector<double> dh(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double m1 = 0.0;
                      double m2 = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        dh[c] = dy[r * cols + c] * gv[c];
                        m1 += dh[c];
                        m2 += dh[c] * xhat[r * cols + c];
                      }
                      m1 /= static_cast<double>(cols);
                      m2 /= static_cast<double>(cols);
                      for (std::size_t c = 0; c < cols; ++c) {
                        dx[r * cols + c] += inv_std[r] * (dh[c] - m1 - xhat[r * cols + c] * m2);
                      }
                    }
                  }
                });
}

Var row_slice(Var a, std::size_t r0, std::size_t r1) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (r0 >= r1 || r1 > av.rows()) throw NumericError("row_slice: bad range");
  const std::size_t cols = av.cols();
  Tensor out = Tensor::matrix(r1 - r0, cols);
  std::copy(av.ptr() + r0 * cols, av.ptr() + r1 * cols, out.ptr());
  return g.push(std::move(out), wants(g, {a}), [a, r0, cols](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    Tensor& d = gr.grad_ref(a.id);
    for (std::size_t i = 0; i < dc.size(); ++i) d[r0 * cols + i] += dc[i];
  });
}

Var col_slice(Var a, std::size_t c0, std::size_t c1) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (c0 >= c1 || c1 > av.cols()) throw NumericError("col_slice: bad range");
  const std::size_t rows = av.rows();
  const std::size_t cols = av.cols();
  const std::size_t w = c1 - c0;
  Tensor out = Tensor::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(av.ptr() + r * cols + c0, av.ptr() + r * cols + c1, out.ptr() + r * w);
  }
  return g.push(std::move(out), wants(g, {a}), [a, c0, w](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    Tensor& d = gr.grad_ref(a.id);
    const std::size_t cols = d.cols();
    for (std::size_t r = 0; r < dc.rows(); ++r) {
      for (std::size_t c = 0; c < w; ++c) d[r * cols + c0 + c] += dc[r * w + c];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw NumericError("concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::size_t total = 0;
  bool need = false;
  for (auto p : parts) {
    graph_of(parts[0], p);
    if (p.value().rows() != rows) throw NumericError("concat_cols: row mismatch");
    total += p.value().cols();
    need = need || (g.recording() && g.needs_grad(p));
  }
  Tensor out = Tensor::matrix(rows, total);
  std::size_t off = 0;
  for (auto p : parts) {
    const Tensor& pv = p.value();
    const std::size_t w = pv.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.ptr() + r * w, pv.ptr() + (r + 1) * w, out.ptr() + r * total + off);
    }
    off += w;
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return g.push(std::move(out), need, [ins = std::move(ins)](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    const std::size_t total = dc.cols();
    std::size_t off = 0;
    for (auto p : ins) {
      const std::size_t w = gr.value(p).cols();
      if (gr.node_needs_grad(p.id)) {
        Tensor& d = gr.grad_ref(p.id);
        for (std::size_t r = 0; r < dc.rows(); ++r) {
          for (std::size_t c = 0; c < w; ++c) d[r * w + c] += dc[r * total + off + c];
        }
      }
      off += w;
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table);
  const Tensor& tv = table.value();
  const std::size_t cols = tv.cols();
  if (ids.empty()) throw NumericError("gather_rows: empty id list");
  Tensor out = Tensor::matrix(ids.size(), cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw NumericError("gather_rows: id out of range");
    }
    const auto src = static_cast<std::size_t>(ids[r]);
    std::copy(tv.ptr() + src * cols, tv.ptr() + (src + 1) * cols, out.ptr() + r * cols);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return g.push(std::move(out), wants(g, {table}), [table, idv = std::move(idv)](Graph& gr, std::size_t self) {
    const Tensor& dc = gr.out_grad(self);
    Tensor& d = gr.grad_ref(table.id);
    const std::size_t cols = d.cols();
    for (std::size_t r = 0; r < idv.size(); ++r) {
      const auto dst = static_cast<std::size_t>(idv[r]);
      for (std::size_t c = 0; c < cols; ++c) d[dst * cols + c] += dc[r * cols + c];
    }
  });
}

Var softmax(Var a, bool causal) {
  Graph& g = graph_of(a);
  Tensor in = a.value();
  if (causal) {
    const std::size_t cols = in.cols();
    for (std::size_t r = 0; r < in.rows(); ++r) {
      for (std::size_t c = r + 1; c < cols; ++c) in[r * cols + c] = -std::numeric_limits<double>::infinity();
    }
  }
  Tensor out = softmax_rows(in);
  return g.push(std::move(out), wants(g, {a}), [a](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.out_grad(self);
    const Tensor& y = gr.value(Var{&gr, self});
    Tensor& dx = gr.grad_ref(a.id);
    const std::size_t cols = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += y[r * cols + c] * (dy[r * cols + c] - dot);
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  Graph& g = graph_of(logits);
  const Tensor& lv = logits.value();
  if (targets.size() != lv.rows()) throw NumericError("softmax_cross_entropy: target count mismatch");
  const std::size_t cols = lv.cols();
  Tensor probs = softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const int t = targets[r];
    if (t < 0) continue;
    if (static_cast<std::size_t>(t) >= cols) throw NumericError("softmax_cross_entropy: target out of range");
    // log-softmax directly to avoid the probability clamp
    const double* row = lv.ptr() + r * cols;
    double mx = row[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    loss -= row[t] - mx - std::log(s);
  }
  std::vector<int> tv(targets.begin(), targets.end());
  return g.push(Tensor::scalar(loss), wants(g, {logits}),
                [logits, tv = std::move(tv), probs = std::move(probs)](Graph& gr, std::size_t self) {
                  const double up = gr.out_grad(self)[0];
                  Tensor& d = gr.grad_ref(logits.id);
                  const std::size_t cols = probs.cols();
                  for (std::size_t r = 0; r < tv.size(); ++r) {
                    if (tv[r] < 0) continue;
                    for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += up * probs[r * cols + c];
                    d[r * cols + static_cast<std::size_t>(tv[r])] -= up;
                  }
                });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return g.push(Tensor::scalar(s), wants(g, {a}), [a](Graph& gr, std::size_t self) {
    const double up = gr.out_grad(self)[0];
    for (double& v : gr.grad_ref(a.id).data()) v += up;
  });
}

Var sum_squares(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return g.push(Tensor::scalar(s), wants(g, {a}), [a](Graph& gr, std::size_t self) {
    const double up = gr.out_grad(self)[0];
    const Tensor& av = gr.value(a);
    Tensor& d = gr.grad_ref(a.id);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * up * av[i];
  });
}

Var column_sq_error(Var a, std::span<const std::size_t> cols, const Tensor& target) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (target.rows() != av.rows() || target.cols() != cols.size()) {
    throw NumericError("column_sq_error: target shape mismatch");
  }
  for (auto c : cols) {
    if (c >= av.cols()) throw NumericError("column_sq_error: column out of range");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const double e = av(i, cols[k]) - target(i, k);
      s += e * e;
    }
  }
  std::vector<std::size_t> cv(cols.begin(), cols.end());
  return g.push(Tensor::scalar(s), wants(g, {a}), [a, cv = std::move(cv), target](Graph& gr, std::size_t self) {
    const double up = gr.out_grad(self)[0];
    const Tensor& av = gr.value(a);
    Tensor& d = gr.grad_ref(a.id);
    for (std::size_t i = 0; i < av.rows(); ++i) {
      for (std::size_t k = 0; k < cv.size(); ++k) d(i, cv[k]) += 2.0 * up * (av(i, cv[k]) - target(i, k));
    }
  });
}

Var add_all(std::span<const Var> scalars) {
  if (scalars.empty()) throw NumericError("add_all: no inputs");
  Graph& g = graph_of(scalars[0]);
  double s = 0.0;
  bool need = false;
  for (auto v : scalars) {
    graph_of(scalars[0], v);
    if (v.value().size() != 1) throw NumericError("add_all: inputs must be scalars");
    s += v.value()[0];
    need = need || (g.recording() && g.needs_grad(v));
  }
  std::vector<Var> ins(scalars.begin(), scalars.end());
  return g.push(Tensor::scalar(s), need, [ins = std::move(ins)](Graph& gr, std::size_t self) {
    const double up = gr.out_grad(self)[0];
    for (auto v : ins) {
      if (gr.node_needs_grad(v.id)) gr.grad_ref(v.id)[0] += up;
    }
  });
}

}  // namespace agadapt
