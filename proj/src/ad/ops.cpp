// Copyright 2026 The revcurr Authors.
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

#include "revcurr/ad/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "revcurr/error.hpp"

namespace revcurr::ad {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Strided = Eigen::OuterStride<>;
using BlockMap = Eigen::Map<RowMat, 0, Strided>;
using ConstBlockMap = Eigen::Map<const RowMat, 0, Strided>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
MatMap as_matrix(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }
bool wants(Node& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.value().size() != b.value().size() || a.rows() != b.rows()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " +
                         shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out(matrix_shape(a.rows(), b.cols()));
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  return make_node(std::move(out), {a, b}, [](Node& self) {
    auto g = as_matrix(self.grad);
    if (wants(self, 0)) {
      Node& pa = parent(self, 0);
      as_matrix(pa.grad_buffer()).noalias() +=
          g * as_matrix(parent(self, 1).value).transpose();
    }
    if (wants(self, 1)) {
      Node& pb = parent(self, 1);
      as_matrix(pb.grad_buffer()).noalias() +=
          as_matrix(parent(self, 0).value).transpose() * g;
    }
  });
}

Var transpose(const Var& a) {
  Tensor out(matrix_shape(a.cols(), a.rows()));
  as_matrix(out) = as_matrix(a.value()).transpose();
  return make_node(std::move(out), {a}, [](Node& self) {
    as_matrix(parent(self, 0).grad_buffer()) +=
        as_matrix(self.grad).transpose();
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (wants(self, p)) parent(self, p).accumulate_grad(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) parent(self, 0).accumulate_grad(self.grad);
    if (wants(self, 1)) {
      Tensor& gb = parent(self, 1).grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      const Tensor& other = parent(self, 1 - p).value;
      Tensor& gp = parent(self, p).grad_buffer();
      for (std::size_t i = 0; i < gp.size(); ++i) {
        gp[i] += self.grad[i] * other[i];
      }
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return make_node(std::move(out), {a}, [factor](Node& self) {
    Tensor& ga = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

Var add_scalar(const Var& a, double offset) {
  Tensor out = a.value();
  for (double& v : out.values()) v += offset;
  return make_node(std::move(out), {a}, [](Node& self) {
    parent(self, 0).accumulate_grad(self.grad);
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::size_t cols = x.cols();
  if (bias.value().size() != cols) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) +
                         " does not match last axis of " +
                         shape_string(x.shape()));
  }
  Tensor out = x.value();
  const double* b = bias.value().data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* row = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += b[c];
  }
  return make_node(std::move(out), {x, bias}, [cols](Node& self) {
    if (wants(self, 0)) parent(self, 0).accumulate_grad(self.grad);
    if (wants(self, 1)) {
      Tensor& gb = parent(self, 1).grad_buffer();
      for (std::size_t r = 0; r < self.grad.rows(); ++r) {
        const double* row = self.grad.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) gb[c] += row[c];
      }
    }
  });
}

Var scale_rows(const Var& x, const Var& s) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (s.value().size() != rows) {
    throw DimensionError("scale_rows: " + std::to_string(s.value().size()) +
                         " scales for " + std::to_string(rows) + " rows");
  }
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double f = s.value()[r];
    double* row = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= f;
  }
  return make_node(std::move(out), {x, s}, [rows, cols](Node& self) {
    const Tensor& xv = parent(self, 0).value;
    const Tensor& sv = parent(self, 1).value;
    if (wants(self, 0)) {
      Tensor& gx = parent(self, 0).grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          gx[r * cols + c] += self.grad[r * cols + c] * sv[r];
        }
      }
    }
    if (wants(self, 1)) {
      Tensor& gs = parent(self, 1).grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          acc += self.grad[r * cols + c] * xv[r * cols + c];
        }
        gs[r] += acc;
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(out), {x}, [](Node& self) {
    const Tensor& xv = parent(self, 0).value;
    Tensor& gx = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

Var dropout(const Var& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ParameterError("dropout rate must be in [0, 1)");
  }
  if (rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::bernoulli_distribution coin(keep);
  std::vector<double> factor(x.value().size());
  for (double& f : factor) f = coin(rng) ? 1.0 / keep : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return make_node(std::move(out), {x},
                   [factor = std::move(factor)](Node& self) {
                     Tensor& gx = parent(self, 0).grad_buffer();
                     for (std::size_t i = 0; i < gx.size(); ++i) {
                       gx[i] += self.grad[i] * factor[i];
                     }
                   });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gamma.value().size() != cols || beta.value().size() != cols) {
    throw DimensionError("layer_norm: gain/bias width must equal " +
                         std::to_string(cols));
  }
  Tensor normed(matrix_shape(rows, cols));
  std::vector<double> inv_std(rows);
  Tensor out(matrix_shape(rows, cols));
  const double* g = gamma.value().data();
  const double* b = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double n = (xr[c] - mu) * inv_std[r];
      normed[r * cols + c] = n;
      out[r * cols + c] = n * g[c] + b[c];
    }
  }
  return make_node(
      std::move(out), {x, gamma, beta},
      [rows, cols, normed = std::move(normed),
       inv_std = std::move(inv_std)](Node& self) {
        const Tensor& gv = parent(self, 1).value;
        if (wants(self, 0)) {
          Tensor& gx = parent(self, 0).grad_buffer();
          std::vector<double> dn(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dn = 0.0, mean_dn_n = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              dn[c] = self.grad[r * cols + c] * gv[c];
              mean_dn += dn[c];
              mean_dn_n += dn[c] * normed[r * cols + c];
            }
            mean_dn /= static_cast<double>(cols);
            mean_dn_n /= static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
              gx[r * cols + c] += inv_std[r] * (dn[c] - mean_dn -
                                                normed[r * cols + c] * mean_dn_n);
            }
          }
        }
        if (wants(self, 1)) {
          Tensor& gg = parent(self, 1).grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              gg[c] += self.grad[r * cols + c] * normed[r * cols + c];
            }
          }
        }
        if (wants(self, 2)) {
          Tensor& gb = parent(self, 2).grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              gb[c] += self.grad[r * cols + c];
            }
          }
        }
      });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  const std::size_t rows = table.rows(), cols = table.cols();
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  Tensor out(matrix_shape(ids.size(), cols));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(ids[i]) +
                       " outside [0, " + std::to_string(rows) + ")");
    }
    std::copy_n(table.value().data() + ids[i] * cols, cols,
                out.data() + i * cols);
  }
  return make_node(std::move(out), {table},
                   [cols, idx = std::vector<int>(ids.begin(), ids.end())](
                       Node& self) {
                     Tensor& gt = parent(self, 0).grad_buffer();
                     for (std::size_t i = 0; i < idx.size(); ++i) {
                       double* dst = gt.data() + idx[i] * cols;
                       const double* src = self.grad.data() + i * cols;
                       for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                     }
                   });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  const std::size_t cols = x.cols();
  if (count == 0 || begin + count > x.rows()) {
    throw IndexError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " +
                     std::to_string(x.rows()) + " rows");
  }
  const double* src = x.value().data() + begin * cols;
  Tensor out(matrix_shape(count, cols),
             std::vector<double>(src, src + count * cols));
  return make_node(std::move(out), {x}, [begin, cols](Node& self) {
    Tensor& gx = parent(self, 0).grad_buffer();
    double* dst = gx.data() + begin * cols;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0/1");
  std::size_t rows = 0, cols = 0;
  if (axis == 0) {
    cols = parts[0].cols();
    for (const Var& p : parts) {
      if (p.cols() != cols) throw DimensionError("concat: column mismatch");
      rows += p.rows();
    }
  } else {
    rows = parts[0].rows();
    for (const Var& p : parts) {
      if (p.rows() != rows) throw DimensionError("concat: row mismatch");
      cols += p.cols();
    }
  }
  Tensor out(matrix_shape(rows, cols));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    offsets.push_back(offset);
    const Tensor& v = p.value();
    if (axis == 0) {
      std::copy(v.data(), v.data() + v.size(), out.data() + offset * cols);
      offset += v.rows();
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(v.data() + r * v.cols(), v.cols(),
                    out.data() + r * cols + offset);
      }
      offset += v.cols();
    }
  }
  return make_node(
      std::move(out), parts,
      [axis, rows, cols, offsets = std::move(offsets)](Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
          if (!wants(self, p)) continue;
          Tensor& gp = parent(self, p).grad_buffer();
          if (axis == 0) {
            const double* src = self.grad.data() + offsets[p] * cols;
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
          } else {
            const std::size_t pc = gp.cols();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < pc; ++c) {
                gp[r * pc + c] += self.grad[r * cols + offsets[p] + c];
              }
            }
          }
        }
      });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_node(Tensor::scalar(total), {x}, [](Node& self) {
    const double g = self.grad[0];
    Tensor& gx = parent(self, 0).grad_buffer();
    for (double& v : gx.values()) v += g;
  });
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var weighted_sum(const Var& x, std::span<const double> weights) {
  if (weights.size() != x.value().size()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(x.value().size()) +
                         " values");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    total += weights[i] * x.value()[i];
  }
  return make_node(
      Tensor::scalar(total), {x},
      [w = std::vector<double>(weights.begin(), weights.end())](Node& self) {
        const double g = self.grad[0];
        Tensor& gx = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
      });
}

Var segment_mean(const Var& x, std::size_t group) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (group == 0 || rows % group != 0) {
    throw DimensionError("segment_mean: " + std::to_string(rows) +
                         " rows not divisible by " + std::to_string(group));
  }
  const std::size_t n = rows / group;
  const double inv = 1.0 / static_cast<double>(group);
  Tensor out(matrix_shape(n, cols));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < group; ++j) {
      const double* src = x.value().data() + (s * group + j) * cols;
      for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] += src[c] * inv;
    }
  }
  return make_node(std::move(out), {x}, [n, group, cols, inv](Node& self) {
    Tensor& gx = parent(self, 0).grad_buffer();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < group; ++j) {
        double* dst = gx.data() + (s * group + j) * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          dst[c] += self.grad[s * cols + c] * inv;
        }
      }
    }
  });
}

Var softmax_rows(const Var& x, double temperature) {
  if (!(temperature > 0.0)) {
    throw ParameterError("softmax temperature must be positive");
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out(matrix_shape(rows, cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * cols;
    double* yr = out.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, xr[c]);
    if (!std::isfinite(mx)) continue;  // fully masked row stays zero
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp((xr[c] - mx) / temperature);
      z += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= z;
  }
  Tensor saved = out;
  return make_node(
      std::move(out), {x},
      [rows, cols, temperature, y = std::move(saved)](Node& self) {
        Tensor& gx = parent(self, 0).grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* yr = y.data() + r * cols;
          const double* gr = self.grad.data() + r * cols;
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
          for (std::size_t c = 0; c < cols; ++c) {
            gx[r * cols + c] += yr[c] * (gr[c] - dot) / temperature;
          }
        }
      });
}

Var apply_mask(const Var& x, std::span<const std::uint8_t> allowed,
               double fill) {
  if (allowed.size() != x.value().size()) {
    throw DimensionError("apply_mask: mask size " +
                         std::to_string(allowed.size()) + " for " +
                         shape_string(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!allowed[i]) out[i] = fill;
  }
  return make_node(
      std::move(out), {x},
      [keep = std::vector<std::uint8_t>(allowed.begin(), allowed.end())](
          Node& self) {
        Tensor& gx = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          if (keep[i]) gx[i] += self.grad[i];
        }
      });
}

Var stop_gradient(const Var& x) { return Var::constant(x.value()); }

Var straight_through(const Tensor& hard, const Var& soft) {
  if (hard.shape() != soft.shape()) {
    throw DimensionError("straight_through: shape " + shape_string(hard.shape()) +
                         " vs " + shape_string(soft.shape()));
  }
  return make_node(hard, {soft}, [](Node& self) {
    if (wants(self, 0)) parent(self, 0).accumulate_grad(self.grad);
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " rows");
  }
  Tensor probs(matrix_shape(rows, cols));
  Tensor out(matrix_shape(rows, 1));
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) +
                       " outside logit width " + std::to_string(cols));
    }
    const double* lr = logits.value().data() + r * cols;
    double mx = lr[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, lr[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      probs[r * cols + c] = std::exp(lr[c] - mx);
      z += probs[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= z;
    out[r] = std::log(z) + mx - lr[targets[r]];
  }
  return make_node(
      std::move(out), {logits},
      [rows, cols, probs = std::move(probs),
       tgt = std::vector<int>(targets.begin(), targets.end())](Node& self) {
        Tensor& gl = parent(self, 0).grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const double g = self.grad[r];
          if (g == 0.0) continue;
          for (std::size_t c = 0; c < cols; ++c) {
            gl[r * cols + c] += g * probs[r * cols + c];
          }
          gl[r * cols + tgt[r]] -= g;
        }
      });
}

Var attention(const Var& q, const Var& k, const Var& v,
              const AttentionSpec& spec) {
  const std::size_t batch = spec.batch, heads = spec.heads;
  const std::size_t d = q.cols();
  if (batch == 0 || heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) +
                         " not divisible into " + std::to_string(heads) +
                         " heads");
  }
  const bool shared = !spec.key_block.empty();
  const std::size_t key_blocks = shared ? spec.key_blocks : batch;
  if (key_blocks == 0 || k.cols() != d || v.cols() != d ||
      k.rows() != v.rows() || q.rows() % batch != 0 ||
      k.rows() % key_blocks != 0) {
    throw DimensionError("attention: incompatible q/k/v shapes");
  }
  std::vector<std::size_t> kblock(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    kblock[b] = shared ? spec.key_block[b] : b;
  }
  if (shared && (spec.key_block.size() != batch ||
                 *std::max_element(kblock.begin(), kblock.end()) >= key_blocks)) {
    throw DimensionError("attention: bad key block mapping");
  }
  const std::size_t nq = q.rows() / batch, nk = k.rows() / key_blocks;
  const std::size_t dh = d / heads;
  if (!spec.key_valid.empty() && spec.key_valid.size() != key_blocks * nk) {
    throw DimensionError("attention: key mask size mismatch");
  }
  if (spec.causal && nq != nk) {
    throw DimensionError("attention: causal mode needs equal query/key length");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto sd = static_cast<Eigen::Index>(d);
  const auto enq = static_cast<Eigen::Index>(nq);
  const auto enk = static_cast<Eigen::Index>(nk);
  const auto edh = static_cast<Eigen::Index>(dh);

  std::vector<std::uint8_t> allowed(nq * nk * batch, 1);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < nk; ++j) {
        bool ok = spec.key_valid.empty() || spec.key_valid[kblock[b] * nk + j];
        if (spec.causal && j > i) ok = false;
        allowed[(b * nq + i) * nk + j] = ok;
      }
    }
  }

  std::vector<double> probs(batch * heads * nq * nk, 0.0);
  Tensor out(matrix_shape(batch * nq, d));
  RowMat scores(enq, enk);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      ConstBlockMap qh(q.value().data() + b * nq * d + h * dh, enq, edh,
                       Strided(sd));
      ConstBlockMap kh(k.value().data() + kblock[b] * nk * d + h * dh, enk,
                       edh, Strided(sd));
      ConstBlockMap vh(v.value().data() + kblock[b] * nk * d + h * dh, enk,
                       edh, Strided(sd));
      scores.noalias() = qh * kh.transpose();
      MatMap p(probs.data() + (b * heads + h) * nq * nk, enq, enk);
      for (std::size_t i = 0; i < nq; ++i) {
        const std::uint8_t* ok = allowed.data() + (b * nq + i) * nk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nk; ++j) {
          if (ok[j]) mx = std::max(mx, scores(i, j) * inv_sqrt);
        }
        if (!std::isfinite(mx)) continue;
        double z = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          const double e = ok[j] ? std::exp(scores(i, j) * inv_sqrt - mx) : 0.0;
          p(i, j) = e;
          z += e;
        }
        p.row(i) /= z;
      }
      BlockMap oh(out.data() + b * nq * d + h * dh, enq, edh, Strided(sd));
      oh.noalias() = p * vh;
    }
  }

  return make_node(
      std::move(out), {q, k, v},
      [batch, heads, nq, nk, d, dh, inv_sqrt, kblock = std::move(kblock),
       probs = std::move(probs)](Node& self) {
        const auto sd = static_cast<Eigen::Index>(d);
        const auto enq = static_cast<Eigen::Index>(nq);
        const auto enk = static_cast<Eigen::Index>(nk);
        const auto edh = static_cast<Eigen::Index>(dh);
        const bool want_q = wants(self, 0), want_k = wants(self, 1),
                   want_v = wants(self, 2);
        double* gq = want_q ? parent(self, 0).grad_buffer().data() : nullptr;
        double* gk = want_k ? parent(self, 1).grad_buffer().data() : nullptr;
        double* gv = want_v ? parent(self, 2).grad_buffer().data() : nullptr;
        const double* qv = parent(self, 0).value.data();
        const double* kv = parent(self, 1).value.data();
        const double* vv = parent(self, 2).value.data();
        RowMat dp(enq, enk);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t qoff = b * nq * d + h * dh;
            const std::size_t koff = kblock[b] * nk * d + h * dh;
            ConstMatMap p(probs.data() + (b * heads + h) * nq * nk, enq, enk);
            ConstBlockMap go(self.grad.data() + qoff, enq, edh, Strided(sd));
            if (want_v) {
              BlockMap gvh(gv + koff, enk, edh, Strided(sd));
              gvh.noalias() += p.transpose() * go;
            }
            if (!want_q && !want_k) continue;
            ConstBlockMap vh(vv + koff, enk, edh, Strided(sd));
            dp.noalias() = go * vh.transpose();
            for (Eigen::Index i = 0; i < enq; ++i) {
              const double dot = dp.row(i).dot(p.row(i));
              for (Eigen::Index j = 0; j < enk; ++j) {
                dp(i, j) = p(i, j) * (dp(i, j) - dot) * inv_sqrt;
              }
            }
            if (want_q) {
              ConstBlockMap kh(kv + koff, enk, edh, Strided(sd));
              BlockMap gqh(gq + qoff, enq, edh, Strided(sd));
              gqh.noalias() += dp * kh;
            }
            if (want_k) {
              ConstBlockMap qh(qv + qoff, enq, edh, Strided(sd));
              BlockMap gkh(gk + koff, enk, edh, Strided(sd));
              gkh.noalias() += dp.transpose() * qh;
            }
          }
        }
      });
}

}  // namespace revcurr::ad
