#include "takand/attention_enhancer.hpp"

#include <stdexcept>

namespace takand {

namespace {

ad::Var activate(const ad::Var& x, Activation a) {
  return a == Activation::Tanh ? ad::tanh(x) : x;
}

ad::Var affine(const ad::Var& w, const ad::Var& x, const ad::Var& b) {
  return ad::add(ad::matmul(w, x), b);
}

void require_neighbors(std::span<const NeighborSignal> neighbors, const char* stage) {
  if (neighbors.empty())
    throw std::invalid_argument(std::string(stage) +
                                ": empty neighbor list (supply a self-loop neighbor)");
}

template <typename Get>
ad::Var stack_columns(std::span<const NeighborSignal> neighbors, Get get) {
  std::vector<ad::Var> cols;
  cols.reserve(neighbors.size());
  for (const auto& n : neighbors) cols.push_back(get(n));
  return ad::hcat(cols);
}

ad::Var attend(const ad::Var& query, const ad::Var& keys, const ad::Var& values) {
  return ad::matmul(values, attention_weights(query, keys));
}

}  // namespace

EnhancerParams EnhancerParams::create(ParamStore& store, const std::string& prefix,
                                      std::size_t dim, Rng& rng) {
  EnhancerParams p;
  p.dim = dim;
  const std::size_t d = dim, ha = p.half_a(), hb = p.half_b();
  auto mat = [&](const char* name, std::size_t rows, std::size_t cols) {
    return store.add(prefix + "." + name, rows, cols, fan_in_uniform(rows, cols, cols, rng));
  };
  auto vec = [&](const char* name, std::size_t rows) {
    return store.add(prefix + "." + name, rows, 1, std::vector<double>(rows, 0.0));
  };
  p.nbr_w = mat("nbr_w", d, 2 * d);
  p.nbr_b = vec("nbr_b", d);
  p.wq1 = mat("wq1", d, d);
  p.wk1 = mat("wk1", d, d);
  p.wv1 = mat("wv1", d, d);
  p.wq2 = mat("wq2", d, d);
  p.wk2 = mat("wk2", d, d);
  p.wv2 = mat("wv2", d, d);
  p.gate_w = mat("gate_w", d, 2 * d);
  p.gate_b = vec("gate_b", d);
  p.split_a = mat("split_a", ha, d);
  p.split_b = mat("split_b", hb, d);
  p.ff_a1 = mat("ff_a1", ha, ha);
  p.ff_a1_b = vec("ff_a1_b", ha);
  p.ff_a2 = mat("ff_a2", ha, ha);
  p.ff_a2_b = vec("ff_a2_b", ha);
  p.ff_b1 = mat("ff_b1", hb, hb);
  p.ff_b1_b = vec("ff_b1_b", hb);
  p.ff_b2 = mat("ff_b2", hb, hb);
  p.ff_b2_b = vec("ff_b2_b", hb);
  p.compress_w = mat("compress_w", d, d);
  p.compress_b = vec("compress_b", d);
  return p;
}

EnhancerParams EnhancerParams::zeros(std::size_t dim) {
  EnhancerParams p;
  p.dim = dim;
  const std::size_t d = dim, ha = p.half_a(), hb = p.half_b();
  auto z = [](std::size_t r, std::size_t c) {
    return ad::parameter(r, c, std::vector<double>(r * c, 0.0));
  };
  p.nbr_w = z(d, 2 * d);
  p.nbr_b = z(d, 1);
  p.wq1 = z(d, d);
  p.wk1 = z(d, d);
  p.wv1 = z(d, d);
  p.wq2 = z(d, d);
  p.wk2 = z(d, d);
  p.wv2 = z(d, d);
  p.gate_w = z(d, 2 * d);
  p.gate_b = z(d, 1);
  p.split_a = z(ha, d);
  p.split_b = z(hb, d);
  p.ff_a1 = z(ha, ha);
  p.ff_a1_b = z(ha, 1);
  p.ff_a2 = z(ha, ha);
  p.ff_a2_b = z(ha, 1);
  p.ff_b1 = z(hb, hb);
  p.ff_b1_b = z(hb, 1);
  p.ff_b2 = z(hb, hb);
  p.ff_b2_b = z(hb, 1);
  p.compress_w = z(d, d);
  p.compress_b = z(d, 1);
  return p;
}

ad::Var encode_neighbor(const ad::Var& relation, const ad::Var& neighbor, const EnhancerParams& p) {
  return activate(affine(p.nbr_w, ad::vcat({relation, neighbor}), p.nbr_b), p.neighbor_activation);
}

ad::Var attention_weights(const ad::Var& query, const ad::Var& keys) {
  // keys: d x n, one column per neighbor.
  return ad::softmax(ad::matmul(ad::transpose(keys), query));
}

ad::Var stage1_attend(const ad::Var& task_relation, std::span<const NeighborSignal> neighbors,
                      const EnhancerParams& p) {
  require_neighbors(neighbors, "stage1_attend");
  const ad::Var q = ad::matmul(p.wq1, task_relation);
  const ad::Var k = ad::matmul(p.wk1, stack_columns(neighbors, [](auto& n) { return n.relation; }));
  const ad::Var v = ad::matmul(p.wv1, stack_columns(neighbors, [](auto& n) { return n.encoded; }));
  return attend(q, k, v);
}

ad::Var stage2_attend(const ad::Var& query_entity, std::span<const NeighborSignal> neighbors,
                      const EnhancerParams& p) {
  require_neighbors(neighbors, "stage2_attend");
  const ad::Var q = ad::matmul(p.wq2, query_entity);
  const ad::Var k = ad::matmul(p.wk2, stack_columns(neighbors, [](auto& n) { return n.entity; }));
  const ad::Var v = ad::matmul(p.wv2, stack_columns(neighbors, [](auto& n) { return n.encoded; }));
  return attend(q, k, v);
}

ad::Var couple(const ad::Var& x, const ad::Var& x_nbr, const EnhancerParams& p) {
  const ad::Var g = ad::sigmoid(affine(p.gate_w, ad::vcat({x, x_nbr}), p.gate_b));
  // g*x + (1-g)*x_nbr == x_nbr + g*(x - x_nbr)
  return ad::add(x_nbr, ad::mul(g, ad::sub(x, x_nbr)));
}

NeighborCache::NeighborCache(const NeighborIndex& index, const EmbeddingTable& table,
                             const EnhancerParams& p)
    : index_(index), table_(table), params_(p) {}

ad::Var NeighborCache::embedding(EntityId e) {
  if (e >= table_.entity_count())
    throw std::out_of_range("unknown entity id " + std::to_string(e));
  auto it = rows_.find(e);
  if (it != rows_.end()) return it->second;
  ad::Var row = ad::gather_row(table_.entities, e);
  rows_.emplace(e, row);
  return row;
}

const std::vector<NeighborSignal>& NeighborCache::signals(EntityId e) {
  auto it = signals_.find(e);
  if (it != signals_.end()) return it->second;
  std::vector<NeighborSignal> out;
  const ad::Var self = embedding(e);
  if (e < index_.entity_count() && !index_.of(e).empty()) {
    for (const auto& edge : index_.of(e)) {
      ad::Var rel = ad::gather_row(table_.relations, edge.relation);
      if (edge.direction == Direction::Incoming) rel = ad::scale(rel, -1.0);
      ad::Var nbr = embedding(edge.neighbor);
      out.push_back({rel, nbr, encode_neighbor(rel, nbr, params_)});
    }
  } else {
    // Self-loop through a zero relation keeps softmax defined.
    ad::Var rel = ad::zeros(table_.dim, 1);
    out.push_back({rel, self, encode_neighbor(rel, self, params_)});
  }
  return signals_.emplace(e, std::move(out)).first->second;
}

namespace {

ad::Var neighbor_mean(std::span<const NeighborSignal> signals) {
  std::vector<ad::Var> cols;
  for (const auto& s : signals) cols.push_back(s.entity);
  return ad::row_mean(ad::hcat(cols));
}

}  // namespace

EnhancedPair enhance_pair(EntityId head, EntityId tail, NeighborCache& cache,
                          const BilinearParams& bilinear, const EnhancerParams& p,
                          EnhancerMode mode) {
  const ad::Var h = cache.embedding(head);
  const ad::Var t = cache.embedding(tail);
  const auto& hs = cache.signals(head);
  const auto& ts = cache.signals(tail);

  if (mode == EnhancerMode::Simple) {
    return {ad::scale(ad::add(h, neighbor_mean(hs)), 0.5),
            ad::scale(ad::add(t, neighbor_mean(ts)), 0.5)};
  }

  const ad::Var r = bilinear_relation(h, t, bilinear);
  const ad::Var h_r = couple(h, stage1_attend(r, hs, p), p);
  const ad::Var t_r = couple(t, stage1_attend(r, ts, p), p);
  // Second stage: each side is queried by the other side's first-stage vector.
  return {couple(h_r, stage2_attend(t_r, hs, p), p), couple(t_r, stage2_attend(h_r, ts, p), p)};
}

EnhancedPair enhance_pair(EntityId head, EntityId tail, const NeighborIndex& index,
                          const EmbeddingTable& table, const BilinearParams& bilinear,
                          const EnhancerParams& p, EnhancerMode mode) {
  NeighborCache cache(index, table, p);
  return enhance_pair(head, tail, cache, bilinear, p, mode);
}

ad::Var extract_task_relation(std::span<const EnhancedPair> support,
                              const BilinearParams& bilinear, const EnhancerParams& p) {
  if (support.empty()) throw std::invalid_argument("extract_task_relation: empty support set");
  ad::Var acc;
  for (const auto& pair : support) {
    ad::Var b = bilinear_relation(pair.head, pair.tail, bilinear);
    acc = acc.defined() ? ad::add(acc, b) : b;
  }
  const ad::Var m = ad::scale(acc, 1.0 / static_cast<double>(support.size()));
  const ad::Var a = ad::tanh(affine(
      p.ff_a2, ad::tanh(affine(p.ff_a1, ad::matmul(p.split_a, m), p.ff_a1_b)), p.ff_a2_b));
  const ad::Var b = ad::tanh(affine(
      p.ff_b2, ad::tanh(affine(p.ff_b1, ad::matmul(p.split_b, m), p.ff_b1_b)), p.ff_b2_b));
  return ad::tanh(affine(p.compress_w, ad::vcat({a, b}), p.compress_b));
}

}  // namespace takand
