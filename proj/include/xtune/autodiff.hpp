#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// arrays of doubles. A Tensor is a cheap handle to a graph node; ops build
// new nodes that remember their parents and a backward closure.
//
// Broadcasting is limited to a single-element operand in add/sub/mul.
// Everything else must match exactly or a ShapeError is raised.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xtune/error.hpp"

namespace xtune::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  std::string_view op = "leaf";
  // Gradient barrier: backward never propagates past a stopped node.
  bool stop = false;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values) {
    if (values.size() != ad::numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->grad.assign(values.size(), 0.0);
    n->value = std::move(values);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape) {
    std::vector<double> v(ad::numel(shape), 0.0);
    return from(std::move(shape), std::move(v));
  }

  static Tensor scalar(double v) { return from({}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool stopped() const { return node_->stop; }
  std::string_view op() const { return node_->op; }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Tensor make(std::string_view op, Shape shape, std::vector<double> value,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->grad.assign(value.size(), 0.0);
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backward = std::move(backward);
  return Tensor(std::move(n));
}

[[noreturn]] inline void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

inline void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

// Elementwise binary op with optional single-element broadcast on either side.
template <typename Fwd, typename DA, typename DB>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const bool same = a.shape() == b.shape();
  const bool a_one = a.numel() == 1;
  const bool b_one = b.numel() == 1;
  if (!same && !a_one && !b_one) shape_mismatch(op, a.shape(), b.shape());
  const Shape out_shape = (same || b_one) ? a.shape() : b.shape();
  const std::size_t n = numel(out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  auto at = [&](std::span<const double> v, std::size_t i) { return v.size() == 1 ? v[0] : v[i]; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(at(av, i), at(bv, i));
  return make(op, out_shape, std::move(out), {a.ptr(), b.ptr()}, [da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.grad.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = pa.value.size() == 1 ? 0 : i;
      const std::size_t ib = pb.value.size() == 1 ? 0 : i;
      const double g = self.grad[i];
      pa.grad[ia] += g * da(pa.value[ia], pb.value[ib]);
      pb.grad[ib] += g * db(pa.value[ia], pb.value[ib]);
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(std::string_view op, const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make(op, a.shape(), std::move(out), {a.ptr()}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double factor) {
  return detail::unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// max(x, floor); gradient passes only where x > floor.
inline Tensor clamp_min(const Tensor& a, double floor) {
  return detail::unary(
      "clamp_min", a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

inline Tensor sum(const Tensor& a) {
  const auto v = a.values();
  double s = 0.0;
  for (double x : v) s += x;
  return detail::make("sum", {}, {s}, {a.ptr()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (double& g : p.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) detail::shape_mismatch("reshape", a.shape(), shape);
  std::vector<double> v(a.values().begin(), a.values().end());
  return detail::make("reshape", std::move(shape), std::move(v), {a.ptr()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

// Identity on values; contributes no gradient to `a`.
inline Tensor detach(const Tensor& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  Tensor out = detail::make("detach", a.shape(), std::move(v), {a.ptr()}, nullptr);
  out.node().stop = true;
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  }
  return detail::make("matmul", {m, n}, std::move(out), {a.ptr(), b.ptr()},
                      [m, k, n](Node& self) {
                        Node& pa = *self.parents[0];
                        Node& pb = *self.parents[1];
                        for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < n; ++j) {
                            const double g = self.grad[i * n + j];
                            if (g == 0.0) continue;
                            for (std::size_t p = 0; p < k; ++p) {
                              pa.grad[i * k + p] += g * pb.value[p * n + j];
                              pb.grad[p * n + j] += g * pa.value[i * k + p];
                            }
                          }
                        }
                      });
}

// x[m,n] + bias[n] added to every row. A named op rather than implicit
// broadcasting.
inline Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  detail::require_rank("add_rowwise", x, 2);
  detail::require_rank("add_rowwise", bias, 1);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n) detail::shape_mismatch("add_rowwise", x.shape(), bias.shape());
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return detail::make("add_rowwise", x.shape(), std::move(out), {x.ptr(), bias.ptr()},
                      [m, n](Node& self) {
                        Node& px = *self.parents[0];
                        Node& pb = *self.parents[1];
                        for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < n; ++j) {
                            const double g = self.grad[i * n + j];
                            px.grad[i * n + j] += g;
                            pb.grad[j] += g;
                          }
                        }
                      });
}

// Rows of table[V,d] selected by ids -> [ids.size(), d].
inline Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_rank("embedding_lookup", table, 2);
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto tv = table.values();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= rows) {
      throw IndexError("embedding_lookup: index " + std::to_string(ids[r]) +
                       " out of range for " + std::to_string(rows) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return detail::make("embedding_lookup", {ids.size(), d}, std::move(out), {table.ptr()},
                      [idx = std::move(idx), d](Node& self) {
                        Node& p = *self.parents[0];
                        for (std::size_t r = 0; r < idx.size(); ++r)
                          for (std::size_t j = 0; j < d; ++j)
                            p.grad[idx[r] * d + j] += self.grad[r * d + j];
                      });
}

// Column means of x[m,n] -> [n].
inline Tensor mean_rows(const Tensor& x) {
  detail::require_rank("mean_rows", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (m == 0) throw ShapeError("mean_rows: no rows");
  std::vector<double> out(n, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  return detail::make("mean_rows", {n}, std::move(out), {x.ptr()}, [m, n](Node& self) {
    Node& p = *self.parents[0];
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j] * inv;
  });
}

// Mean of each group of rows of x[m,n] -> [groups.size(), n].
inline Tensor pool_rows(const Tensor& x, const std::vector<std::vector<std::size_t>>& groups) {
  detail::require_rank("pool_rows", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xv = x.values();
  std::vector<double> out(groups.size() * n, 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw ShapeError("pool_rows: empty group " + std::to_string(g));
    for (std::size_t r : groups[g]) {
      if (r >= m) throw IndexError("pool_rows: row " + std::to_string(r) + " out of range");
      for (std::size_t j = 0; j < n; ++j) out[g * n + j] += xv[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[g * n + j] /= static_cast<double>(groups[g].size());
  }
  return detail::make("pool_rows", {groups.size(), n}, std::move(out), {x.ptr()},
                      [groups, n](Node& self) {
                        Node& p = *self.parents[0];
                        for (std::size_t g = 0; g < groups.size(); ++g) {
                          const double inv = 1.0 / static_cast<double>(groups[g].size());
                          for (std::size_t r : groups[g])
                            for (std::size_t j = 0; j < n; ++j)
                              p.grad[r * n + j] += self.grad[g * n + j] * inv;
                        }
                      });
}

// Elements of the flat buffer at the given offsets -> [offsets.size()].
inline Tensor select(const Tensor& x, std::span<const std::size_t> offsets) {
  const auto xv = x.values();
  std::vector<double> out(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i] >= xv.size()) {
      throw IndexError("select: offset " + std::to_string(offsets[i]) + " out of range for " +
                       shape_str(x.shape()));
    }
    out[i] = xv[offsets[i]];
  }
  std::vector<std::size_t> idx(offsets.begin(), offsets.end());
  return detail::make("select", {idx.size()}, std::move(out), {x.ptr()},
                      [idx](Node& self) {
                        Node& p = *self.parents[0];
                        for (std::size_t i = 0; i < idx.size(); ++i) p.grad[idx[i]] += self.grad[i];
                      });
}

// Log-softmax along `axis`, stabilised by subtracting the max of each slice.
inline Tensor log_softmax(const Tensor& x, std::size_t axis = 0) {
  if (axis >= x.rank()) {
    throw ShapeError("log_softmax: axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const auto xv = x.values();
  for (double v : xv) {
    if (!std::isfinite(v)) throw NumericError("log_softmax: non-finite input");
  }
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) z += std::exp(xv[base + k * inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] = xv[base + k * inner] - lse;
    }
  }
  return detail::make("log_softmax", s, std::move(out), {x.ptr()},
                      [outer, inner, len](Node& self) {
                        Node& p = *self.parents[0];
                        for (std::size_t o = 0; o < outer; ++o) {
                          for (std::size_t in = 0; in < inner; ++in) {
                            const std::size_t base = o * len * inner + in;
                            double gsum = 0.0;
                            for (std::size_t k = 0; k < len; ++k) gsum += self.grad[base + k * inner];
                            for (std::size_t k = 0; k < len; ++k) {
                              const std::size_t i = base + k * inner;
                              p.grad[i] += self.grad[i] - std::exp(self.value[i]) * gsum;
                            }
                          }
                        }
                      });
}

// Nodes reachable from root in topological order (parents first). Parents of
// stopped nodes are not visited.
inline std::vector<Node*> topological_order(const Tensor& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (!node->stop && next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

// Accumulates d(root)/d(node) into every reachable node's grad. Intended to
// run once per graph; leaf grads must be zeroed by the caller between steps.
inline void backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }
  const auto order = topological_order(root);
  root.node().grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->stop || !n->backward) continue;
    n->backward(*n);
  }
}

inline void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t param = 0;
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares backward() against central differences of loss_fn over every
// element of every tensor in params. loss_fn must rebuild its graph from the
// current parameter values on each call. The relative error divides by
// max(|analytic|, |numeric|, floor); a gradient that is zero by symmetry
// still shows ~1e-11 of differencing noise, which `floor` absorbs.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                                  std::span<Tensor> params, double step = 1e-5, double floor = 1e-8) {
  zero_grad(params);
  backward(loss_fn());
  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_values();
    const std::vector<double> analytic(params[p].grad().begin(), params[p].grad().end());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_fn().item();
      values[i] = saved - step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > result.max_relative_error) result = {rel, p, i, analytic[i], numeric};
    }
  }
  return result;
}

}  // namespace xtune::ad
