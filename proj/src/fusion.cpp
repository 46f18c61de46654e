#include "gedit/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace gedit::fusion {

using numcore::Matrix;

const char* to_string(FusionMode m) {
  switch (m) {
    case FusionMode::hard: return "hard";
    case FusionMode::soft: return "soft";
    case FusionMode::bypass: return "bypass";
  }
  return "?";
}

void add_fusion_params(numcore::ParamStore& params, FusionMode mode, int dim,
                       int hidden_dim) {
  if (mode == FusionMode::soft) params.add("fusion.attn", dim, dim);
  params.add("fusion.w1", hidden_dim, 2 * dim);
  params.add("fusion.b", hidden_dim, 1);
  params.add("fusion.w2", dim, hidden_dim);
}

Matrix hard_fuse(const Matrix& enc, const depgraph::DepGraph& g, const Matrix& h2) {
  const std::size_t d = enc.cols();
  Matrix fused(enc.rows(), 2 * d);
  for (std::size_t i = 0; i < enc.rows(); ++i) {
    const int v = g.node_of(i);
    for (std::size_t c = 0; c < d; ++c) {
      fused(i, c) = enc(i, c);
      fused(i, d + c) = h2(v, c);
    }
  }
  return fused;
}

Matrix soft_fuse(const Matrix& enc, const Matrix& h2, const Matrix& attn,
                 FusionCache* cache) {
  const std::size_t d = enc.cols();
  const std::size_t nodes = h2.rows();
  Matrix fused(enc.rows(), 2 * d);
  Matrix q(enc.rows(), d), z(enc.rows(), nodes), alpha(enc.rows(), nodes);
  for (std::size_t i = 0; i < enc.rows(); ++i) {
    const auto qi = numcore::matvec(attn, enc.row(i));
    for (std::size_t c = 0; c < d; ++c) q(i, c) = qi[c];
    double mx = -1e300;
    for (std::size_t k = 0; k < nodes; ++k) {
      z(i, k) = std::tanh(numcore::dot(h2.row(k), qi));
      mx = std::max(mx, z(i, k));
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) sum += std::exp(z(i, k) - mx);
    for (std::size_t k = 0; k < nodes; ++k) alpha(i, k) = std::exp(z(i, k) - mx) / sum;
    for (std::size_t c = 0; c < d; ++c) {
      fused(i, c) = enc(i, c);
      double agg = 0.0;
      for (std::size_t k = 0; k < nodes; ++k) agg += alpha(i, k) * h2(k, c);
      fused(i, d + c) = agg;
    }
  }
  if (cache) {
    cache->q = std::move(q);
    cache->z = std::move(z);
    cache->alpha = std::move(alpha);
  }
  return fused;
}

Matrix fuse(FusionMode mode, const Matrix& enc, const depgraph::DepGraph* g,
            const Matrix& h2, const numcore::ParamStore& params, FusionCache* cache) {
  Matrix fused;
  switch (mode) {
    case FusionMode::hard:
      if (!g) throw ValidationError("hard fusion requires a dependency graph");
      fused = hard_fuse(enc, *g, h2);
      break;
    case FusionMode::soft:
      fused = soft_fuse(enc, h2, params.at("fusion.attn"), cache);
      break;
    case FusionMode::bypass: {
      const std::size_t d = enc.cols();
      fused = Matrix(enc.rows(), 2 * d);
      for (std::size_t i = 0; i < enc.rows(); ++i)
        for (std::size_t c = 0; c < d; ++c) fused(i, c) = enc(i, c);
      break;
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->enc = enc;
    cache->h2 = h2;
    cache->fused = fused;
  }
  return fused;
}

void fuse_backward(const FusionCache& cache, const depgraph::DepGraph* g,
                   const numcore::ParamStore& params, const Matrix& upstream,
                   Matrix& denc, Matrix& dh2, numcore::GradMap& grads) {
  if (cache.fused.rows() == 0) throw ValidationError("fuse_backward: missing cache");
  const std::size_t d = cache.enc.cols();
  const std::size_t length = cache.enc.rows();
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t c = 0; c < d; ++c) denc(i, c) += upstream(i, c);

  switch (cache.mode) {
    case FusionMode::bypass:
      return;  // second half was a constant zero
    case FusionMode::hard: {
      if (!g) throw ValidationError("fuse_backward: missing graph");
      for (std::size_t i = 0; i < length; ++i) {
        const int v = g->node_of(i);
        for (std::size_t c = 0; c < d; ++c) dh2(v, c) += upstream(i, d + c);
      }
      return;
    }
    case FusionMode::soft: {
      const Matrix& attn = params.at("fusion.attn");
      const std::size_t nodes = cache.h2.rows();
      auto& dattn = numcore::grad_slot(grads, "fusion.attn", d, d);
      std::vector<double> dsp(d), dalpha(nodes), dz(nodes), dq(d);
      for (std::size_t i = 0; i < length; ++i) {
        for (std::size_t c = 0; c < d; ++c) dsp[c] = upstream(i, d + c);
        // s_i' = sum_k alpha_k H2_k
        for (std::size_t k = 0; k < nodes; ++k) {
          dalpha[k] = numcore::dot(dsp, cache.h2.row(k));
          for (std::size_t c = 0; c < d; ++c)
            dh2(k, c) += cache.alpha(i, k) * dsp[c];
        }
        // softmax jacobian
        double mean = 0.0;
        for (std::size_t k = 0; k < nodes; ++k) mean += cache.alpha(i, k) * dalpha[k];
        for (std::size_t k = 0; k < nodes; ++k)
          dz[k] = cache.alpha(i, k) * (dalpha[k] - mean);
        // z_k = tanh(H2_k . q_i)
        std::fill(dq.begin(), dq.end(), 0.0);
        for (std::size_t k = 0; k < nodes; ++k) {
          const double dm = dz[k] * (1.0 - cache.z(i, k) * cache.z(i, k));
          for (std::size_t c = 0; c < d; ++c) {
            dh2(k, c) += dm * cache.q(i, c);
            dq[c] += dm * cache.h2(k, c);
          }
        }
        numcore::add_outer(dattn, dq, cache.enc.row(i));
        const auto ds = numcore::matvec_t(attn, dq);
        for (std::size_t c = 0; c < d; ++c) denc(i, c) += ds[c];
      }
      return;
    }
  }
}

Matrix project(const Matrix& fused, const Matrix& w1, const Matrix& w2,
               const Matrix& b, ProjectCache* cache) {
  const std::size_t length = fused.rows();
  const std::size_t hidden = w1.rows();
  const std::size_t d = w2.rows();
  Matrix pre(length, hidden), relu(length, hidden), out(length, d);
  for (std::size_t i = 0; i < length; ++i) {
    auto h = numcore::matvec(w1, fused.row(i));
    for (std::size_t c = 0; c < hidden; ++c) {
      pre(i, c) = h[c] + b(c, 0);
      relu(i, c) = std::max(0.0, pre(i, c));
    }
    const auto y = numcore::matvec(w2, relu.row(i));
    for (std::size_t c = 0; c < d; ++c) out(i, c) = y[c];
  }
  if (cache) {
    cache->input = fused;
    cache->pre = pre;
    cache->hidden = relu;
    cache->out = out;
  }
  return out;
}

void project_backward(const ProjectCache& cache, const Matrix& w1, const Matrix& w2,
                      const Matrix& upstream, Matrix& dfused, numcore::GradMap& grads) {
  if (cache.pre.rows() == 0) throw ValidationError("project_backward: missing cache");
  const std::size_t length = cache.input.rows();
  const std::size_t hidden = w1.rows();
  auto& dw1 = numcore::grad_slot(grads, "fusion.w1", w1.rows(), w1.cols());
  auto& db = numcore::grad_slot(grads, "fusion.b", hidden, 1);
  auto& dw2 = numcore::grad_slot(grads, "fusion.w2", w2.rows(), w2.cols());

  std::vector<double> dg(hidden);
  for (std::size_t i = 0; i < length; ++i) {
    numcore::add_outer(dw2, upstream.row(i), cache.hidden.row(i));
    const auto dh = numcore::matvec_t(w2, upstream.row(i));
    for (std::size_t c = 0; c < hidden; ++c) {
      dg[c] = cache.pre(i, c) > 0.0 ? dh[c] : 0.0;
      db(c, 0) += dg[c];
    }
    numcore::add_outer(dw1, dg, cache.input.row(i));
    const auto df = numcore::matvec_t(w1, dg);
    for (std::size_t c = 0; c < df.size(); ++c) dfused(i, c) += df[c];
  }
}

}  // namespace gedit::fusion
