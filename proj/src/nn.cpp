#include "deepseq/nn.hpp"

#include <stdexcept>

namespace dseq::nn::inline DSEQ_PRECISION_NS {

void add_mlp3(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
              std::size_t out, Rng& rng) {
  store.add_weight(prefix + ".w0", in, hidden, rng);
  store.add_zeros(prefix + ".b0", 1, hidden);
  store.add_weight(prefix + ".w1", hidden, hidden, rng);
  store.add_zeros(prefix + ".b1", 1, hidden);
  store.add_weight(prefix + ".w2", hidden, out, rng);
  store.add_zeros(prefix + ".b2", 1, out);
}

Var mlp3(const Var& x, const ParamStore& store, const std::string& prefix) {
  auto layer = [&](const Var& in, const char* w, const char* b) {
    return add_row(matmul(in, store.at(prefix + w)), store.at(prefix + b));
  };
  Var h = relu(layer(x, ".w0", ".b0"));
  h = relu(layer(h, ".w1", ".b1"));
  return layer(h, ".w2", ".b2");
}

void add_gru(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
             Rng& rng) {
  for (const char* g : {"r", "z", "n"}) {
    store.add_weight(prefix + ".wi_" + g, in, hidden, rng);
    store.add_weight(prefix + ".wh_" + g, hidden, hidden, rng);
    store.add_zeros(prefix + ".bi_" + g, 1, hidden);
    store.add_zeros(prefix + ".bh_" + g, 1, hidden);
  }
}

Var gru_cell(const Var& x, const Var& h, const ParamStore& store, const std::string& prefix) {
  auto in = [&](const char* g) {
    return add_row(matmul(x, store.at(prefix + ".wi_" + g)), store.at(prefix + ".bi_" + g));
  };
  auto rec = [&](const char* g) {
    return add_row(matmul(h, store.at(prefix + ".wh_" + g)), store.at(prefix + ".bh_" + g));
  };
  Var r = sigmoid(add(in("r"), rec("r")));
  Var z = sigmoid(add(in("z"), rec("z")));
  Var n = tanh(add(in("n"), mul(r, rec("n"))));
  return add(n, mul(z, sub(h, n)));
}

void add_attention(ParamStore& store, const std::string& prefix, std::size_t query_dim,
                   std::size_t key_dim, Rng& rng) {
  store.add_weight(prefix + ".w1", query_dim, 1, rng);
  store.add_weight(prefix + ".w2", key_dim, 1, rng);
}

Var attn_aggregate(const Var& query, const Var& keys, std::span<const std::uint32_t> seg,
                   const Var& w1, const Var& w2) {
  const std::size_t m = query.rows();
  std::vector<char> seen(m, 0);
  for (auto s : seg) {
    if (s >= m) throw std::invalid_argument("attn_aggregate: segment id out of range");
    seen[s] = 1;
  }
  for (char c : seen) {
    if (!c) throw std::invalid_argument("attn_aggregate: empty predecessor set");
  }
  Var scores = add(gather_rows(matmul(query, w1), seg), matmul(keys, w2));
  Var alpha = segment_softmax(scores, seg, m);
  return segment_sum(scale_rows(keys, alpha), seg, m);
}

}  // namespace dseq::nn::inline DSEQ_PRECISION_NS
