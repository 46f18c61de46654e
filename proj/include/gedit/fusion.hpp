#pragma once

#include <string>

#include "gedit/depgraph.hpp"
#include "gedit/numcore.hpp"

namespace gedit::fusion {

enum class FusionMode { hard, soft, bypass };
const char* to_string(FusionMode m);

// Parameters: "fusion.w1" (d_h x 2d), "fusion.b" (d_h x 1), "fusion.w2"
// (d x d_h); soft mode adds the bilinear "fusion.attn" (d x d).
void add_fusion_params(numcore::ParamStore& params, FusionMode mode, int dim,
                       int hidden_dim);

struct FusionCache {
  FusionMode mode = FusionMode::hard;
  numcore::Matrix enc;    // L x d input rows
  numcore::Matrix h2;     // |V| x d node rows (unused in bypass)
  numcore::Matrix fused;  // L x 2d
  // soft attention intermediates
  numcore::Matrix q;      // L x d, q_i = W s_i
  numcore::Matrix z;      // L x |V|, tanh scores
  numcore::Matrix alpha;  // L x |V|, softmax weights
};

// Row i = concat(s_i, H2 row of the node owning sub-word i).
numcore::Matrix hard_fuse(const numcore::Matrix& enc, const depgraph::DepGraph& g,
                          const numcore::Matrix& h2);

// Per sub-word: z_k = tanh(H2_k . (W s_i)), alpha = softmax(z),
// s_i' = sum_k alpha_k H2_k; row i = concat(s_i, s_i').
numcore::Matrix soft_fuse(const numcore::Matrix& enc, const numcore::Matrix& h2,
                          const numcore::Matrix& attn, FusionCache* cache = nullptr);

// Dispatches by mode; bypass concatenates a zero vector so downstream
// shapes are unchanged. `g` may be null in bypass mode.
numcore::Matrix fuse(FusionMode mode, const numcore::Matrix& enc,
                     const depgraph::DepGraph* g, const numcore::Matrix& h2,
                     const numcore::ParamStore& params, FusionCache* cache = nullptr);

// Gradients w.r.t. encoder rows, node rows and the attention matrix.
void fuse_backward(const FusionCache& cache, const depgraph::DepGraph* g,
                   const numcore::ParamStore& params, const numcore::Matrix& upstream,
                   numcore::Matrix& denc, numcore::Matrix& dh2,
                   numcore::GradMap& grads);

struct ProjectCache {
  numcore::Matrix input;   // L x 2d
  numcore::Matrix pre;     // L x d_h
  numcore::Matrix hidden;  // L x d_h, ReLU
  numcore::Matrix out;     // L x d
};

// Row-wise s_hat = W2 ReLU(W1 s_tilde + b).
numcore::Matrix project(const numcore::Matrix& fused, const numcore::Matrix& w1,
                        const numcore::Matrix& w2, const numcore::Matrix& b,
                        ProjectCache* cache = nullptr);

void project_backward(const ProjectCache& cache, const numcore::Matrix& w1,
                      const numcore::Matrix& w2, const numcore::Matrix& upstream,
                      numcore::Matrix& dfused, numcore::GradMap& grads);

}  // namespace gedit::fusion
