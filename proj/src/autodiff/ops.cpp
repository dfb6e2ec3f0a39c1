#include "jst/autodiff/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "jst/error.hpp"

namespace jst::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap value_map(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap value_map_mut(Tensor& t) { return MutMap(t.mutable_data().data(), t.rows(), t.cols()); }
ConstMap grad_map(const Tensor& t) { return ConstMap(t.grad().data(), t.rows(), t.cols()); }

// Gradient sink for an operand. Takes the handle by value so const captures
// can write through it; flags the tensor as touched for the optimizer.
MutMap grad_sink(Tensor t) {
  t.mark_grad_touched();
  return MutMap(t.mutable_grad().data(), t.rows(), t.cols());
}

std::span<double> grad_sink_flat(Tensor t) {
  t.mark_grad_touched();
  return t.mutable_grad();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() < 1 || t.rank() > 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Tensor make_output(Graph& g, Shape shape, std::initializer_list<const Tensor*> operands) {
  return Tensor::zeros(std::move(shape), g.needs_grad(operands));
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out = make_output(g, matrix_shape(a.rows(), b.cols()), {&a, &b});
  value_map_mut(out).noalias() = value_map(a) * value_map(b);
  if (out.requires_grad()) {
    g.record([a, b, out]() mutable {
      const auto dc = grad_map(out);
      if (a.requires_grad()) grad_sink(a).noalias() += dc * value_map(b).transpose();
      if (b.requires_grad()) grad_sink(b).noalias() += value_map(a).transpose() * dc;
    });
  }
  return out;
}

Tensor transpose(Graph& g, const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor out = make_output(g, matrix_shape(a.cols(), a.rows()), {&a});
  value_map_mut(out) = value_map(a).transpose();
  if (out.requires_grad()) {
    g.record([a, out]() mutable { grad_sink(a) += grad_map(out).transpose(); });
  }
  return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_output(g, a.shape(), {&a, &b});
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (out.requires_grad()) {
    g.record([a, b, out]() mutable {
      auto d = out.grad();
      if (a.requires_grad()) {
        auto s = grad_sink_flat(a);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += d[i];
      }
      if (b.requires_grad()) {
        auto s = grad_sink_flat(b);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += d[i];
      }
    });
  }
  return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_output(g, a.shape(), {&a, &b});
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (out.requires_grad()) {
    g.record([a, b, out]() mutable {
      auto d = out.grad();
      if (a.requires_grad()) {
        auto s = grad_sink_flat(a);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += d[i];
      }
      if (b.requires_grad()) {
        auto s = grad_sink_flat(b);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] -= d[i];
      }
    });
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_output(g, a.shape(), {&a, &b});
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (out.requires_grad()) {
    g.record([a, b, out]() mutable {
      auto d = out.grad();
      if (a.requires_grad()) {
        auto s = grad_sink_flat(a);
        auto y = b.data();
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += d[i] * y[i];
      }
      if (b.requires_grad()) {
        auto s = grad_sink_flat(b);
        auto x = a.data();
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += d[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(Graph& g, const Tensor& a, double factor) {
  Tensor out = make_output(g, a.shape(), {&a});
  auto o = out.mutable_data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (out.requires_grad()) {
    g.record([a, out, factor]() mutable {
      auto d = out.grad();
      auto s = grad_sink_flat(a);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += d[i] * factor;
    });
  }
  return out;
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& b) {
  require_matrix(x, "add_bias");
  if (b.size() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(b.shape()) + " does not fit rows of " +
                         shape_string(x.shape()));
  }
  Tensor out = make_output(g, x.shape(), {&x, &b});
  const Eigen::Map<const Eigen::RowVectorXd> bias(b.data().data(), static_cast<Eigen::Index>(b.size()));
  value_map_mut(out) = value_map(x).rowwise() + bias;
  if (out.requires_grad()) {
    g.record([x, b, out]() mutable {
      const auto d = grad_map(out);
      if (x.requires_grad()) grad_sink(x) += d;
      if (b.requires_grad()) {
        auto s = grad_sink_flat(b);
        Eigen::Map<Eigen::RowVectorXd>(s.data(), static_cast<Eigen::Index>(s.size())) += d.colwise().sum();
      }
    });
  }
  return out;
}

Tensor gather_rows(Graph& g, const Tensor& table, std::span<const TokenId> ids) {
  require_matrix(table, "gather_rows");
  if (ids.empty()) throw LengthError("gather_rows: empty id sequence");
  const std::size_t vocab = table.rows();
  const std::size_t width = table.cols();
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(vocab));
    }
  }
  Tensor out = make_output(g, matrix_shape(ids.size(), width), {&table});
  auto o = out.mutable_data();
  auto t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                o.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  if (out.requires_grad()) {
    std::vector<TokenId> saved(ids.begin(), ids.end());
    g.record([table, out, saved = std::move(saved), width]() mutable {
      auto d = out.grad();
      auto s = grad_sink_flat(table);
      for (std::size_t i = 0; i < saved.size(); ++i) {
        const std::size_t base = static_cast<std::size_t>(saved[i]) * width;
        for (std::size_t j = 0; j < width; ++j) s[base + j] += d[i * width + j];
      }
    });
  }
  return out;
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows();
  const std::size_t w = x.cols();
  if (gain.size() != w || bias.size() != w) {
    throw DimensionError("layer_norm: gain/bias width does not match " + shape_string(x.shape()));
  }
  Tensor out = make_output(g, x.shape(), {&x, &gain, &bias});
  auto xhat = std::make_shared<std::vector<double>>(n * w);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * w;
    double mean = 0.0;
    for (std::size_t j = 0; j < w; ++j) mean += row[j];
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t j = 0; j < w; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(w);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < w; ++j) {
      const double h = (row[j] - mean) * inv;
      (*xhat)[r * w + j] = h;
      o[r * w + j] = h * gv[j] + bv[j];
    }
  }
  if (out.requires_grad()) {
    g.record([x, gain, bias, out, xhat, inv_std, n, w]() mutable {
      auto d = out.grad();
      auto gv = gain.data();
      if (gain.requires_grad()) {
        auto s = grad_sink_flat(gain);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < w; ++j) s[j] += d[r * w + j] * (*xhat)[r * w + j];
      }
      if (bias.requires_grad()) {
        auto s = grad_sink_flat(bias);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < w; ++j) s[j] += d[r * w + j];
      }
      if (x.requires_grad()) {
        auto s = grad_sink_flat(x);
        const double inv_w = 1.0 / static_cast<double>(w);
        for (std::size_t r = 0; r < n; ++r) {
          double mean_dh = 0.0;
          double mean_dh_h = 0.0;
          for (std::size_t j = 0; j < w; ++j) {
            const double dh = d[r * w + j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * (*xhat)[r * w + j];
          }
          mean_dh *= inv_w;
          mean_dh_h *= inv_w;
          const double inv = (*inv_std)[r];
          for (std::size_t j = 0; j < w; ++j) {
            const double dh = d[r * w + j] * gv[j];
            s[r * w + j] += inv * (dh - mean_dh - (*xhat)[r * w + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(Graph& g, const Tensor& x) {
  Tensor out = make_output(g, x.shape(), {&x});
  auto o = out.mutable_data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] > 0.0 ? v[i] : 0.0;
  if (out.requires_grad()) {
    g.record([x, out]() mutable {
      auto d = out.grad();
      auto v = x.data();
      auto s = grad_sink_flat(x);
      for (std::size_t i = 0; i < s.size(); ++i)
        if (v[i] > 0.0) s[i] += d[i];
    });
  }
  return out;
}

Tensor dropout(Graph& g, const Tensor& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must lie in [0, 1)");
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (auto& m : *mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = make_output(g, x.shape(), {&x});
  auto o = out.mutable_data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * (*mask)[i];
  if (out.requires_grad()) {
    g.record([x, out, mask]() mutable {
      auto d = out.grad();
      auto s = grad_sink_flat(x);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += d[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor log_softmax_rows(Graph& g, const Tensor& x) {
  require_matrix(x, "log_softmax_rows");
  Tensor out = make_output(g, x.shape(), {&x});
  const auto xv = value_map(x);
  auto o = value_map_mut(out);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mx = xv.row(r).maxCoeff();
    const double lse = mx + std::log((xv.row(r).array() - mx).exp().sum());
    o.row(r) = xv.row(r).array() - lse;
  }
  if (out.requires_grad()) {
    g.record([x, out]() mutable {
      const auto d = grad_map(out);
      const auto y = value_map(out);
      auto s = grad_sink(x);
      for (Eigen::Index r = 0; r < d.rows(); ++r) {
        const double total = d.row(r).sum();
        s.row(r).array() += d.row(r).array() - y.row(r).array().exp() * total;
      }
    });
  }
  return out;
}

Tensor softmax_cols(Graph& g, const Tensor& x) {
  require_matrix(x, "softmax_cols");
  Tensor out = make_output(g, x.shape(), {&x});
  const auto xv = value_map(x);
  auto o = value_map_mut(out);
  for (Eigen::Index c = 0; c < xv.cols(); ++c) {
    const double mx = xv.col(c).maxCoeff();
    o.col(c) = (xv.col(c).array() - mx).exp();
    o.col(c) /= o.col(c).sum();
  }
  if (out.requires_grad()) {
    g.record([x, out]() mutable {
      const auto d = grad_map(out);
      const auto y = value_map(out);
      auto s = grad_sink(x);
      for (Eigen::Index c = 0; c < d.cols(); ++c) {
        const double inner = y.col(c).dot(d.col(c));
        s.col(c).array() += y.col(c).array() * (d.col(c).array() - inner);
      }
    });
  }
  return out;
}

Tensor stop_gradient(Graph&, const Tensor& x) { return x.detached_copy(); }

Tensor l2_normalize_cols(Graph& g, const Tensor& x, double min_norm, std::size_t* clamped) {
  require_matrix(x, "l2_normalize_cols");
  Tensor out = make_output(g, x.shape(), {&x});
  const auto xv = value_map(x);
  auto o = value_map_mut(out);
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(xv.cols()));
  for (Eigen::Index c = 0; c < xv.cols(); ++c) {
    const double n = xv.col(c).norm();
    (*norms)[static_cast<std::size_t>(c)] = n;
    double denom = n;
    if (n < min_norm) {
      denom = min_norm;
      if (clamped != nullptr) ++*clamped;
    }
    o.col(c) = xv.col(c) / denom;
  }
  if (out.requires_grad()) {
    g.record([x, out, norms, min_norm]() mutable {
      const auto d = grad_map(out);
      const auto y = value_map(out);
      auto s = grad_sink(x);
      for (Eigen::Index c = 0; c < d.cols(); ++c) {
        const double n = (*norms)[static_cast<std::size_t>(c)];
        if (n < min_norm) {
          s.col(c) += d.col(c) / min_norm;
        } else {
          s.col(c) += (d.col(c) - y.col(c) * y.col(c).dot(d.col(c))) / n;
        }
      }
    });
  }
  return out;
}

Tensor frobenius_norm(Graph& g, const Tensor& x) {
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  Tensor out = Tensor::scalar(norm, g.needs_grad({&x}));
  if (out.requires_grad()) {
    g.record([x, out, norm]() mutable {
      if (norm == 0.0) return;
      const double d = out.grad()[0] / norm;
      auto s = grad_sink_flat(x);
      auto v = x.data();
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += d * v[i];
    });
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total, g.needs_grad({&x}));
  if (out.requires_grad()) {
    g.record([x, out]() mutable {
      const double d = out.grad()[0];
      for (auto& s : grad_sink_flat(x)) s += d;
    });
  }
  return out;
}

Tensor attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                 bool causal) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t width = q.cols();
  if (k.cols() != width || v.cols() != width || k.rows() != v.rows()) {
    throw DimensionError("attention: incompatible q/k/v shapes " + shape_string(q.shape()) + ", " +
                         shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  if (n_heads == 0 || width % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(width) + " not divisible by heads");
  }
  if (causal && q.rows() != k.rows()) throw DimensionError("attention: causal mask needs square scores");
  const auto lq = static_cast<Eigen::Index>(q.rows());
  const auto lk = static_cast<Eigen::Index>(k.rows());
  const auto dh = static_cast<Eigen::Index>(width / n_heads);
  const double temperature = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out = make_output(g, matrix_shape(q.rows(), width), {&q, &k, &v});
  const auto qv = value_map(q);
  const auto kv = value_map(k);
  const auto vv = value_map(v);
  auto o = value_map_mut(out);
  auto probs = std::make_shared<std::vector<RowMat>>(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    RowMat scores = (qv.middleCols(c0, dh) * kv.middleCols(c0, dh).transpose()) * temperature;
    for (Eigen::Index i = 0; i < lq; ++i) {
      const Eigen::Index visible = causal ? i + 1 : lk;
      const double mx = scores.row(i).head(visible).maxCoeff();
      double total = 0.0;
      for (Eigen::Index j = 0; j < lk; ++j) {
        const double e = j < visible ? std::exp(scores(i, j) - mx) : 0.0;
        scores(i, j) = e;
        total += e;
      }
      scores.row(i) /= total;
    }
    o.middleCols(c0, dh).noalias() = scores * vv.middleCols(c0, dh);
    (*probs)[h] = std::move(scores);
  }
  if (out.requires_grad()) {
    g.record([q, k, v, out, probs, n_heads, dh, temperature]() mutable {
      const auto d = grad_map(out);
      const auto qv = value_map(q);
      const auto kv = value_map(k);
      const auto vv = value_map(v);
      for (std::size_t h = 0; h < n_heads; ++h) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
        const RowMat& p = (*probs)[h];
        const auto d_head = d.middleCols(c0, dh);
        if (v.requires_grad()) grad_sink(v).middleCols(c0, dh).noalias() += p.transpose() * d_head;
        if (!q.requires_grad() && !k.requires_grad()) continue;
        RowMat dp = d_head * vv.middleCols(c0, dh).transpose();
        const Eigen::VectorXd inner = (dp.array() * p.array()).rowwise().sum();
        RowMat ds = (p.array() * (dp.colwise() - inner).array()) * temperature;
        if (q.requires_grad()) grad_sink(q).middleCols(c0, dh).noalias() += ds * kv.middleCols(c0, dh);
        if (k.requires_grad()) grad_sink(k).middleCols(c0, dh).noalias() += ds.transpose() * qv.middleCols(c0, dh);
      }
    });
  }
  return out;
}

}  // namespace jst::ad
