#pragma once

// Episodic training, evaluation metrics and the model checkpoint archive.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "takand/attention_enhancer.hpp"
#include "takand/dataset.hpp"
#include "takand/diffusion.hpp"
#include "takand/embedding.hpp"
#include "takand/kg_store.hpp"
#include "takand/params.hpp"
#include "takand/scorer.hpp"

namespace takand {

enum class Variant {
  Full,
  V1,  // neighbors averaged into the entity, no learned attention
  V2,  // neural-process replacement; not implemented
  V3,  // Linear + SiLU bottleneck instead of the KAN layer
};
std::string variant_name(Variant v);
Variant parse_variant(std::string_view s);

struct TrainConfig {
  std::size_t k_shot = 5;
  std::size_t query_size = 0;  // 0: same as k_shot
  double margin = 1.0;
  std::size_t timesteps = 1000;
  double learning_rate = 1e-3;
  std::size_t dim = 100;
  std::size_t steps = 1000;
  std::size_t batch_size = 1;  // episodes averaged per optimizer step
  std::size_t eval_interval = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 42;
  Variant variant = Variant::Full;
  double lambda = 1.0;

  std::size_t max_neighbors = 50;
  std::size_t bilinear_rank = 8;
  std::size_t bilinear_full_below = 50;  // full bilinear form when dim is smaller
  std::string neighbor_activation = "tanh";

  std::vector<std::size_t> channels{64, 128};
  std::size_t groups = 8;
  std::size_t token_dim = 64;
  std::size_t time_dim = 32;
  std::size_t label_dim = 8;
  std::size_t kan_intervals = 5;
  int kan_order = 3;
  double kan_range = 1.0;
  std::size_t sample_steps = 50;
  double clip_denoised = 1.0;

  bool score_unfused = false;
  bool finetune_embeddings = true;
  bool shared_task_relations = false;  // evaluation support comes from the train split

  std::size_t transe_epochs = 100;
  double transe_learning_rate = 0.01;
  double transe_margin = 1.0;

  std::size_t queries_per_episode() const { return query_size == 0 ? k_shot : query_size; }
  DenoiserConfig denoiser() const;
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Keys absent from `j` keep the value in `base`; unknown keys are an InputError.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct Model {
  TrainConfig config;
  ParamStore store;
  EmbeddingTable table;
  BilinearParams bilinear;
  EnhancerParams enhancer;
  Denoiser denoiser;
  ScorerParams scorer;
  NoiseSchedule schedule;

  EnhancerMode enhancer_mode() const;
};

// Registers every module's parameters. Throws InputError for V2.
Model make_model(const TrainConfig& config, EmbeddingTable table);

// TransE pretraining over the background graph with the config's settings.
EmbeddingTable pretrain_embeddings(const DataBundle& data, const TrainConfig& config);

NeighborIndex model_neighbor_index(const DataBundle& data, const TrainConfig& config);

struct EpisodeLoss {
  ad::Var total;
  ad::Var hinge;
  ad::Var diffusion;
  std::size_t timestep = 0;
};

EpisodeLoss episode_loss(const Model& model, const NeighborIndex& index, const Episode& episode,
                         Rng& rng);

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricsReport;

struct TrainOptions {
  std::filesystem::path diagnostics_dir;  // where a non-finite episode is dumped
  std::function<void(std::size_t step, const MetricsReport&)> on_improvement;
};

struct TrainResult {
  std::vector<double> loss_trace;
  std::vector<double> hinge_trace;
  std::vector<double> diffusion_trace;
  std::size_t steps_run = 0;
  std::optional<double> best_valid_mrr;
  std::size_t best_step = 0;
  bool early_stopped = false;
};

// Adam on every registered parameter, one step per batch of episodes. With a non-empty validation split the
// model is evaluated every eval_interval steps, the best parameters are kept
// and training stops after `patience` evaluations without improvement.
TrainResult train(Model& model, const DataBundle& data, const NeighborIndex& index,
                  const TrainOptions& opts = {});

// ---- evaluation ----

double mrr(std::span<const std::size_t> ranks);
double hits_at(std::span<const std::size_t> ranks, std::size_t n);

struct RelationMetrics {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits5 = 0.0;
  double hits10 = 0.0;
  std::size_t n_queries = 0;
};

struct MetricsReport {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits5 = 0.0;
  double hits10 = 0.0;
  std::size_t n_queries = 0;
  std::map<std::string, RelationMetrics> per_relation;
  std::vector<std::size_t> ranks;  // query order: relations by id, queries in split order

  nlohmann::json to_json() const;
};

MetricsReport metrics_from_ranks(std::span<const std::size_t> ranks);

// Scores the candidates of one relation given its support. Implementations
// must allow concurrent score_candidates calls.
class RelationScorer {
 public:
  virtual ~RelationScorer() = default;
  virtual std::vector<double> score_candidates(EntityId head,
                                               std::span<const EntityId> candidates) const = 0;
};

class ScoringModel {
 public:
  virtual ~ScoringModel() = default;
  virtual std::unique_ptr<RelationScorer> prepare(RelationId relation,
                                                  std::span<const TaskPair> support,
                                                  std::span<const TaskPair> support_neg,
                                                  Rng& rng) const = 0;
};

class ModelScoring : public ScoringModel {
 public:
  ModelScoring(const Model& model, const NeighborIndex& index) : model_(model), index_(index) {}
  std::unique_ptr<RelationScorer> prepare(RelationId relation, std::span<const TaskPair> support,
                                          std::span<const TaskPair> support_neg,
                                          Rng& rng) const override;

 private:
  const Model& model_;
  const NeighborIndex& index_;
};

// Scores true (head, tail) pairs 0 and everything else 1.
class RankOracle : public ScoringModel {
 public:
  explicit RankOracle(const TaskSet& tasks) : tasks_(tasks) {}
  std::unique_ptr<RelationScorer> prepare(RelationId relation, std::span<const TaskPair> support,
                                          std::span<const TaskPair> support_neg,
                                          Rng& rng) const override;

 private:
  const TaskSet& tasks_;
};

struct EvalOptions {
  std::size_t k_shot = 5;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: TAKAND_NUM_THREADS or the hardware count
  bool support_from_train = false;
};

// Per relation: a seeded shuffle picks K support pairs, the rest are queries
// (with support_from_train, support comes from the train split and every pair
// of `split` is a query). Each query's true tail is ranked against the
// relation's candidates minus the head's other true tails. Micro-averaged.
MetricsReport evaluate(const ScoringModel& model, const TaskSet& tasks, Split split,
                       const CandidateMap& cmap, const EvalOptions& opts);

std::size_t worker_count(std::size_t requested);

// ---- checkpoint archive ----
// "TAKANDv1", little-endian u64 header length, JSON header, then the raw
// doubles of every section in header order.

struct CheckpointSection {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

struct Checkpoint {
  std::string kind;  // "model" or "rank-oracle"
  nlohmann::json header;
  std::vector<CheckpointSection> sections;
};

nlohmann::json vocab_hashes(const DataBundle& data);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& vocab);
void save_rank_oracle(const std::filesystem::path& path, const nlohmann::json& vocab);
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Rebuilds the model and copies every section in; shapes must match.
Model model_from_checkpoint(const Checkpoint& ckpt);
void check_vocab(const Checkpoint& ckpt, const nlohmann::json& vocab);

}  // namespace takand
