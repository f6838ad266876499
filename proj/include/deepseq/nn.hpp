#pragma once

// Layers built on the tensor core. Parameters live in a ParamStore under a
// name prefix.

#include <span>
#include <string>

#include "deepseq/tensor.hpp"

namespace dseq::nn::inline DSEQ_PRECISION_NS {

/// prefix.{w0,b0,w1,b1,w2,b2}: in -> hidden -> hidden -> out.
void add_mlp3(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
              std::size_t out, Rng& rng);
/// Three affine layers with ReLU between; returns the final pre-activation.
Var mlp3(const Var& x, const ParamStore& store, const std::string& prefix);

/// prefix.{wi_r,wi_z,wi_n} (in x H), prefix.{wh_r,wh_z,wh_n} (H x H) and the
/// matching 1 x H biases bi_* / bh_*.
void add_gru(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
             Rng& rng);
/// r = sig(x Wir + bir + h Whr + bhr), z likewise,
/// n = tanh(x Win + bin + r * (h Whn + bhn)), h' = (1 - z) * n + z * h.
Var gru_cell(const Var& x, const Var& h, const ParamStore& store, const std::string& prefix);

/// prefix.w1 (query_dim x 1) and prefix.w2 (key_dim x 1).
void add_attention(ParamStore& store, const std::string& prefix, std::size_t query_dim,
                   std::size_t key_dim, Rng& rng);
/// Batched attention over predecessor sets. Row k of `keys` belongs to
/// target seg[k] (a row of `query`). Per target, alpha = softmax over its
/// keys of (w1 . query + w2 . key) and the message is sum alpha * key.
/// Throws std::invalid_argument if a target has no keys.
Var attn_aggregate(const Var& query, const Var& keys, std::span<const std::uint32_t> seg,
                   const Var& w1, const Var& w2);

}  // namespace dseq::nn::inline DSEQ_PRECISION_NS
