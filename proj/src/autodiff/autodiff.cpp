// Copyright 2026 The Halo Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "halo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "halo/errors.hpp"

namespace halo::ad {

const Tensor& Var::value() const { return tape_->node(id_).value; }
const Shape& Var::shape() const { return value().shape(); }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const ParamStore& store, const std::string& path) {
  auto key = std::make_pair(&store, path);
  if (auto it = param_ids_.find(key); it != param_ids_.end()) {
    return Var(this, it->second);
  }
  Node n;
  n.value = store.get(path);
  n.requires_grad = grad_enabled_;
  n.store = &store;
  n.path = path;
  nodes_.push_back(std::move(n));
  param_ids_.emplace(std::move(key), nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw ContractError("operand recorded on another tape");
    n.requires_grad = n.requires_grad || node(v.id_).requires_grad;
  }
  if (n.requires_grad) {
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) n.inputs.push_back(v.id_);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::detach(Var v) { return constant(v.value()); }

Gradients Tape::backward(Var loss, const ParamStore& store) const {
  if (loss.tape_ != this) throw ContractError("loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_str(loss.shape()));
  }
  std::vector<Tensor> grads(loss.id_ + 1);
  std::vector<char> has(loss.id_ + 1, 0);
  grads[loss.id_] = Tensor::filled(loss.shape(), 1.0);
  has[loss.id_] = 1;
  std::vector<Tensor*> ptrs;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!has[i] || !n.backward) continue;
    ptrs.assign(n.inputs.size(), nullptr);
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      const std::size_t in = n.inputs[j];
      if (!nodes_[in].requires_grad) continue;
      if (!has[in]) {
        grads[in] = Tensor::zeros(nodes_[in].value.shape());
        has[in] = 1;
      }
      ptrs[j] = &grads[in];
    }
    n.backward(grads[i], ptrs);
  }
  Gradients out;
  for (const auto& [path, value] : store.all()) {
    auto it = param_ids_.find(std::make_pair(&store, path));
    if (it != param_ids_.end() && it->second <= loss.id_ && has[it->second]) {
      grads[it->second].check_finite(path.c_str());
      out.emplace(path, std::move(grads[it->second]));
    } else {
      out.emplace(path, Tensor::zeros(value.shape()));
    }
  }
  return out;
}

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("operation on an empty Var");
  return *a.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op,
                                     shape_str(a.shape()), shape_str(b.shape())));
  }
}

void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw DimensionError(fmt::format("{}: expected a matrix, got {}", op,
                                     shape_str(a.shape())));
  }
}

template <typename F>
Var unary(Var a, F&& f, BackwardFn bw) {
  const Tensor& x = a.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return tape_of(a).record(Tensor(x.shape(), std::move(out)), {a}, std::move(bw));
}

}  // namespace

Var matmul(Var a, Var b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  if (B.rows() != k) {
    throw DimensionError(fmt::format("matmul: inner dimensions differ ({} vs {})",
                                     shape_str(A.shape()), shape_str(B.shape())));
  }
  std::vector<double> out(n * m, 0.0);
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
  return tape_of(a).record(
      Tensor({n, m}, std::move(out)), {a, b},
      [a, b, n, k, m](const Tensor& g, std::span<Tensor* const> in) {
        const double* pg = g.data().data();
        if (in[0]) {
          // dA = G * B^T, accumulated row by row over a transposed copy of B.
          const double* pb = b.value().data().data();
          std::vector<double> bt(k * m);
          for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = pb[p * m + j];
          }
          double* da = in[0]->data().data();
          for (std::size_t i = 0; i < n; ++i) {
            const double* grow = pg + i * m;
            double* drow = da + i * k;
            for (std::size_t j = 0; j < m; ++j) {
              const double gv = grow[j];
              if (gv == 0.0) continue;
              const double* btrow = bt.data() + j * k;
              for (std::size_t p = 0; p < k; ++p) drow[p] += gv * btrow[p];
            }
          }
        }
        if (in[1]) {
          // dB = A^T * G
          const double* pa = a.value().data().data();
          double* db = in[1]->data().data();
          for (std::size_t i = 0; i < n; ++i) {
            const double* grow = pg + i * m;
            for (std::size_t p = 0; p < k; ++p) {
              const double av = pa[i * k + p];
              if (av == 0.0) continue;
              double* drow = db + p * m;
              for (std::size_t j = 0; j < m; ++j) drow[j] += av * grow[j];
            }
          }
        }
      });
}

Var add_bias(Var x, Var bias) {
  require_matrix(x, "add_bias");
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  const std::size_t n = X.rows(), m = X.cols();
  if (B.size() != m) {
    throw DimensionError(fmt::format("add_bias: bias {} does not match {}",
                                     shape_str(B.shape()), shape_str(X.shape())));
  }
  std::vector<double> out(X.values());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += B[j];
  }
  return tape_of(x).record(
      Tensor(X.shape(), std::move(out)), {x, bias},
      [n, m](const Tensor& g, std::span<Tensor* const> in) {
        if (in[0]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
        }
        if (in[1]) {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) (*in[1])[j] += g[i * m + j];
          }
        }
      });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  return tape_of(a).record(
      Tensor(A.shape(), std::move(out)), {a, b},
      [](const Tensor& g, std::span<Tensor* const> in) {
        for (Tensor* t : in) {
          if (!t) continue;
          for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
        }
      });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
  return tape_of(a).record(
      Tensor(A.shape(), std::move(out)), {a, b},
      [](const Tensor& g, std::span<Tensor* const> in) {
        if (in[0]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
        }
        if (in[1]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
        }
      });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  return tape_of(a).record(
      Tensor(A.shape(), std::move(out)), {a, b},
      [a, b](const Tensor& g, std::span<Tensor* const> in) {
        if (in[0]) {
          const Tensor& B = b.value();
          for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * B[i];
        }
        if (in[1]) {
          const Tensor& A = a.value();
          for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * A[i];
        }
      });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; },
               [c](const Tensor& g, std::span<Tensor* const> in) {
                 for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += c * g[i];
               });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; },
               [](const Tensor& g, std::span<Tensor* const> in) {
                 for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
               });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [a](const Tensor& g, std::span<Tensor* const> in) {
                 const Tensor& x = a.value();
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   if (x[i] > 0.0) (*in[0])[i] += g[i];
                 }
               });
}

Var sigmoid(Var a) {
  const Tensor& x = a.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    } else {
      const double e = std::exp(x[i]);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor y(x.shape(), std::move(out));
  return tape_of(a).record(y, {a},
                           [y](const Tensor& g, std::span<Tensor* const> in) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               (*in[0])[i] += g[i] * y[i] * (1.0 - y[i]);
                             }
                           });
}

Var log(Var a) {
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) {
      throw NumericError(fmt::format("log of non-positive value {} at {}", x[i], i));
    }
  }
  return unary(a, [](double v) { return std::log(v); },
               [a](const Tensor& g, std::span<Tensor* const> in) {
                 const Tensor& x = a.value();
                 for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] / x[i];
               });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [a, lo, hi](const Tensor& g, std::span<Tensor* const> in) {
                 const Tensor& x = a.value();
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   if (x[i] >= lo && x[i] <= hi) (*in[0])[i] += g[i];
                 }
               });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  return tape_of(a).record(Tensor::scalar(s), {a},
                           [](const Tensor& g, std::span<Tensor* const> in) {
                             const double gv = g[0];
                             for (double& v : in[0]->data()) v += gv;
                           });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return tape_of(a).record(std::move(out), {a},
                           [](const Tensor& g, std::span<Tensor* const> in) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                           });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t n = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.value().rows() != n) {
      throw DimensionError(fmt::format("concat_cols: row count {} vs {}",
                                       p.value().rows(), n));
    }
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(x.data().data() + i * widths[k], widths[k],
                  out.data() + i * total + offset);
    }
    offset += widths[k];
  }
  return tape_of(parts.front())
      .record(Tensor({n, total}, std::move(out)), parts,
              [n, total, widths](const Tensor& g, std::span<Tensor* const> in) {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < in.size(); ++k) {
                  if (in[k]) {
                    double* d = in[k]->data().data();
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < widths[k]; ++j) {
                        d[i * widths[k] + j] += g[i * total + offset + j];
                      }
                    }
                  }
                  offset += widths[k];
                }
              });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  if (begin > end || end > m) {
    throw DimensionError(fmt::format("slice_cols: [{}, {}) outside width {}",
                                     begin, end, m));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.data().data() + i * m + begin, w, out.data() + i * w);
  }
  return tape_of(a).record(Tensor({n, w}, std::move(out)), {a},
                           [n, m, w, begin](const Tensor& g, std::span<Tensor* const> in) {
                             double* d = in[0]->data().data();
                             for (std::size_t i = 0; i < n; ++i) {
                               for (std::size_t j = 0; j < w; ++j) {
                                 d[i * m + begin + j] += g[i * w + j];
                               }
                             }
                           });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  require_matrix(a, "gather_rows");
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * m);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) {
      throw DimensionError(fmt::format("gather_rows: row {} out of range {}",
                                       idx[r], n));
    }
    std::copy_n(x.data().data() + idx[r] * m, m, out.data() + r * m);
  }
  const std::size_t count = idx.size();
  return tape_of(a).record(Tensor({count, m}, std::move(out)), {a},
                           [idx = std::move(idx), m](const Tensor& g,
                                                     std::span<Tensor* const> in) {
                             double* d = in[0]->data().data();
                             for (std::size_t r = 0; r < idx.size(); ++r) {
                               for (std::size_t j = 0; j < m; ++j) {
                                 d[idx[r] * m + j] += g[r * m + j];
                               }
                             }
                           });
}

Var row_norm(Var a) {
  require_matrix(a, "row_norm");
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += x.at(i, j) * x.at(i, j);
    out[i] = std::sqrt(s);
  }
  Tensor norms({n}, out);
  return tape_of(a).record(std::move(norms), {a},
                           [a, norms = Tensor({n}, out), m](const Tensor& g,
                                                            std::span<Tensor* const> in) {
                             const Tensor& x = a.value();
                             double* d = in[0]->data().data();
                             for (std::size_t i = 0; i < norms.size(); ++i) {
                               if (norms[i] == 0.0) continue;
                               const double c = g[i] / norms[i];
                               for (std::size_t j = 0; j < m; ++j) {
                                 d[i * m + j] += c * x[i * m + j];
                               }
                             }
                           });
}

Var smooth_l1(Var a, double delta) {
  if (!(delta > 0.0)) throw ContractError("smooth_l1: delta must be positive");
  return unary(
      a,
      [delta](double x) {
        const double ax = std::abs(x);
        return ax < delta ? 0.5 * x * x / delta : ax - 0.5 * delta;
      },
      [a, delta](const Tensor& g, std::span<Tensor* const> in) {
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = std::abs(x[i]) < delta ? x[i] / delta
                                                  : (x[i] > 0.0 ? 1.0 : -1.0);
          (*in[0])[i] += g[i] * d;
        }
      });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets,
                          bool implicit_zero_logit) {
  require_matrix(logits, "softmax_cross_entropy");
  const Tensor& z = logits.value();
  const std::size_t n = z.rows(), c = z.cols();
  const std::size_t classes = c + (implicit_zero_logit ? 1 : 0);
  if (targets.size() != n) {
    throw DimensionError(fmt::format(
        "softmax_cross_entropy: {} targets for {} rows", targets.size(), n));
  }
  std::vector<double> probs(n * classes);
  std::vector<double> out(n);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (tgt[i] >= classes) {
      throw DimensionError(fmt::format("softmax_cross_entropy: target {} >= {}",
                                       tgt[i], classes));
    }
    double mx = implicit_zero_logit ? 0.0 : -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z.at(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      const double zj = j < c ? z.at(i, j) : 0.0;
      probs[i * classes + j] = std::exp(zj - mx);
      denom += probs[i * classes + j];
    }
    for (std::size_t j = 0; j < classes; ++j) probs[i * classes + j] /= denom;
    const double zt = tgt[i] < c ? z.at(i, tgt[i]) : 0.0;
    out[i] = std::log(denom) + mx - zt;
  }
  return tape_of(logits).record(
      Tensor({n}, std::move(out)), {logits},
      [probs = std::move(probs), tgt = std::move(tgt), c, classes](
          const Tensor& g, std::span<Tensor* const> in) {
        double* d = in[0]->data().data();
        for (std::size_t i = 0; i < tgt.size(); ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double indicator = (j == tgt[i]) ? 1.0 : 0.0;
            d[i * c + j] += g[i] * (probs[i * classes + j] - indicator);
          }
        }
      });
}

Var grouped_max_pool(Var features, const Tensor& mask) {
  const Tensor& x = features.value();
  if (x.rank() != 3) {
    throw DimensionError("grouped_max_pool: features must be G x K x D, got " +
                         shape_str(x.shape()));
  }
  const std::size_t groups = x.dim(0), k = x.dim(1), d = x.dim(2);
  if (mask.shape() != Shape{groups, k}) {
    throw DimensionError(fmt::format("grouped_max_pool: mask {} does not match {}",
                                     shape_str(mask.shape()), shape_str(x.shape())));
  }
  std::vector<double> out(groups * d);
  std::vector<std::size_t> arg(groups * d);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    bool any = false;
    for (std::size_t j = 0; j < k; ++j) {
      if (mask[gi * k + j] == 0.0) continue;
      const double* row = x.data().data() + (gi * k + j) * d;
      for (std::size_t c = 0; c < d; ++c) {
        // Strict comparison keeps the lowest index on ties.
        if (!any || row[c] > out[gi * d + c]) {
          out[gi * d + c] = row[c];
          arg[gi * d + c] = j;
        }
      }
      any = true;
    }
    if (!any) {
      throw EmptyGroupError(fmt::format("grouped_max_pool: group {} is fully masked", gi));
    }
  }
  return tape_of(features).record(
      Tensor({groups, d}, std::move(out)), {features},
      [arg = std::move(arg), k, d](const Tensor& g, std::span<Tensor* const> in) {
        double* dx = in[0]->data().data();
        const std::size_t groups = g.size() / std::max<std::size_t>(d, 1);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          for (std::size_t c = 0; c < d; ++c) {
            dx[(gi * k + arg[gi * d + c]) * d + c] += g[gi * d + c];
          }
        }
      });
}

}  // namespace halo::ad
