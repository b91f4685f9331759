#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "takand/autodiff.hpp"
#include "takand/kg_store.hpp"
#include "takand/params.hpp"

namespace takand {

// Entity and relation vectors. Both tables are trainable leaves; the entity
// table tracks touched rows so fine-tuning only updates what an episode saw.
struct EmbeddingTable {
  std::size_t dim = 0;
  ad::Var entities;   // |E| x d
  ad::Var relations;  // |R| x d

  static EmbeddingTable from_values(std::size_t dim, std::size_t entity_count,
                                    std::vector<double> entity_values, std::size_t relation_count,
                                    std::vector<double> relation_values);
  std::size_t entity_count() const { return entities.rows(); }
  std::size_t relation_count() const { return relations.rows(); }
  std::span<const double> entity(EntityId e) const;
  std::span<const double> relation(RelationId r) const;
  // Grows the entity table (new rows random-initialized and unit-normalized)
  // when task files introduced entities the background graph lacks.
  void extend_entities(std::size_t new_count, Rng& rng);
};

double transe_distance(std::span<const double> h, std::span<const double> r,
                       std::span<const double> t);

// out_k = h^T W_k t + b_k. Full form stores all d matrices W_k as a
// (d*d) x d weight; the low-rank form stores W_k = U_k V_k^T as two
// (d*rank) x d factors.
struct BilinearParams {
  std::size_t dim = 0;
  std::size_t rank = 0;  // 0 = full form
  ad::Var weight;        // full form
  ad::Var left;          // low-rank U
  ad::Var right;         // low-rank V
  ad::Var bias;          // d x 1

  static BilinearParams full(std::size_t dim, ad::Var weight, ad::Var bias);
  static BilinearParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                               std::size_t rank, Rng& rng);
};

ad::Var bilinear_relation(const ad::Var& h, const ad::Var& t, const BilinearParams& p);

struct TranseConfig {
  std::size_t dim = 100;
  std::size_t epochs = 100;
  double margin = 1.0;
  double learning_rate = 0.01;
};

// One positive triple and its corruption.
struct TranseSample {
  Triple positive;
  Triple negative;
};

// Summed margin loss max(0, margin + d(pos) - d(neg)) with the L2 distance.
// When the grad pointers are non-null its gradient is accumulated into them
// (row-major, same shape as the tables).
double transe_margin_loss(std::span<const double> entities, std::span<const double> relations,
                          std::size_t dim, std::span<const TranseSample> samples, double margin,
                          std::vector<double>* entity_grad = nullptr,
                          std::vector<double>* relation_grad = nullptr);

struct TranseResult {
  EmbeddingTable table;
  std::vector<double> epoch_loss;  // mean margin loss per epoch
};

// Standard TransE: uniform init in +-6/sqrt(d), relations normalized once,
// entity rows renormalized to unit L2 at the start of every epoch, triples
// visited in a shuffled order, head or tail corrupted with probability 1/2,
// plain SGD on the margin loss. The optional callback sees the table after
// every epoch.
TranseResult pretrain_transe(const TripleSet& ts, const TranseConfig& cfg, Rng& rng,
                             const std::function<void(std::size_t, const EmbeddingTable&)>&
                                 on_epoch = {});

// Whitespace separated text matrix, one row per id.
void export_text_matrix(const std::filesystem::path& path, std::span<const double> values,
                        std::size_t rows, std::size_t cols);
std::vector<double> import_text_matrix(const std::filesystem::path& path, std::size_t& rows,
                                       std::size_t& cols);

// Reads entity and relation text matrices (e.g. entity2vec.TransE). Row counts
// must equal the vocabulary sizes; expected_dim of 0 accepts any width.
EmbeddingTable import_pretrained(const std::filesystem::path& entity_path,
                                 const std::filesystem::path& relation_path,
                                 std::size_t entity_count, std::size_t relation_count,
                                 std::size_t expected_dim = 0);

// Binary checkpoint: <stem>.bin holds raw little-endian doubles (entities then
// relations); <stem>.json is the sidecar {dim, entity_count, relation_count,
// vocab_hash}.
void save_embeddings(const std::filesystem::path& stem, const EmbeddingTable& table,
                     std::uint64_t vocab_hash);
EmbeddingTable load_embeddings(const std::filesystem::path& stem,
                               std::uint64_t expected_vocab_hash);
std::uint64_t embedding_vocab_hash(const Vocab& entities, const Vocab& relations);

}  // namespace takand
