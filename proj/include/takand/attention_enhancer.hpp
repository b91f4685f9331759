#pragma once

// Two-stage neighbor attention that turns TransE entity vectors into
// task-aware entity representations, plus the task-relation extractor.

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "takand/autodiff.hpp"
#include "takand/embedding.hpp"
#include "takand/kg_store.hpp"
#include "takand/params.hpp"

namespace takand {

enum class Activation { Identity, Tanh };

struct EnhancerParams {
  std::size_t dim = 0;
  Activation neighbor_activation = Activation::Tanh;

  ad::Var nbr_w, nbr_b;              // neighbor encoder: d x 2d, d x 1
  ad::Var wq1, wk1, wv1;             // relation-role attention
  ad::Var wq2, wk2, wv2;             // entity-role attention
  ad::Var gate_w, gate_b;            // coupling gate: d x 2d, d x 1
  ad::Var split_a, split_b;          // disentangle heads: d/2 x d, (d - d/2) x d
  ad::Var ff_a1, ff_a1_b, ff_a2, ff_a2_b;
  ad::Var ff_b1, ff_b1_b, ff_b2, ff_b2_b;
  ad::Var compress_w, compress_b;    // d x d, d x 1

  std::size_t half_a() const { return dim / 2; }
  std::size_t half_b() const { return dim - dim / 2; }

  static EnhancerParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                               Rng& rng);
  // Unregistered parameters, all zeros; tests fill in what they need.
  static EnhancerParams zeros(std::size_t dim);
};

struct NeighborSignal {
  ad::Var relation;  // r_i (negated for incoming edges)
  ad::Var entity;    // n_i
  ad::Var encoded;   // e_i = f(r_i, n_i)
};

struct EnhancedPair {
  ad::Var head;
  ad::Var tail;
};

ad::Var encode_neighbor(const ad::Var& relation, const ad::Var& neighbor, const EnhancerParams& p);

// softmax(q^T k_i) over neighbors, unscaled logits, single head.
ad::Var attention_weights(const ad::Var& query, const ad::Var& keys);

// Relation-role attention: query W_Q1 r, keys W_K1 r_i, values W_V1 e_i.
ad::Var stage1_attend(const ad::Var& task_relation, std::span<const NeighborSignal> neighbors,
                      const EnhancerParams& p);
// Entity-role attention: query W_Q2 x, keys W_K2 n_i, values W_V2 e_i.
ad::Var stage2_attend(const ad::Var& query_entity, std::span<const NeighborSignal> neighbors,
                      const EnhancerParams& p);

// Gated residual: g = sigmoid(W_g [x; x_nbr] + b_g), g * x + (1 - g) * x_nbr.
ad::Var couple(const ad::Var& x, const ad::Var& x_nbr, const EnhancerParams& p);

// Neighbor signals per entity, built once and shared by every pair that
// touches the entity. Not thread-safe; use one cache per thread.
class NeighborCache {
 public:
  NeighborCache(const NeighborIndex& index, const EmbeddingTable& table, const EnhancerParams& p);
  const std::vector<NeighborSignal>& signals(EntityId e);
  ad::Var embedding(EntityId e);

 private:
  const NeighborIndex& index_;
  const EmbeddingTable& table_;
  const EnhancerParams& params_;
  std::unordered_map<EntityId, std::vector<NeighborSignal>> signals_;
  std::unordered_map<EntityId, ad::Var> rows_;
};

enum class EnhancerMode {
  TwoStage,  // learned attention in both stages
  Simple,    // neighbor mean coupled by a fixed average, nothing learned
};

EnhancedPair enhance_pair(EntityId head, EntityId tail, NeighborCache& cache,
                          const BilinearParams& bilinear, const EnhancerParams& p,
                          EnhancerMode mode = EnhancerMode::TwoStage);
EnhancedPair enhance_pair(EntityId head, EntityId tail, const NeighborIndex& index,
                          const EmbeddingTable& table, const BilinearParams& bilinear,
                          const EnhancerParams& p, EnhancerMode mode = EnhancerMode::TwoStage);

// Aggregate (mean bilinear estimate over the support), disentangle (two
// half-width projection heads with their own two-layer tanh stacks) and
// compress (concatenate, project to d, tanh).
ad::Var extract_task_relation(std::span<const EnhancedPair> support,
                              const BilinearParams& bilinear, const EnhancerParams& p);

}  // namespace takand
