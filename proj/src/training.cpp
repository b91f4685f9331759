#include "takand/training.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

namespace takand {

namespace {

enum class Stream : std::uint64_t { Init = 1, Index = 2, Train = 3, Transe = 4, Eval = 5 };

Rng stream(std::uint64_t seed, Stream s, std::uint64_t extra = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(extra),
                    static_cast<std::uint32_t>(extra >> 32)};
  return Rng(seq);
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::V1: return "v1";
    case Variant::V2: return "v2";
    case Variant::V3: return "v3";
  }
  return "full";
}

Variant parse_variant(std::string_view s) {
  std::string lower(s);
  std::ranges::transform(lower, lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "full") return Variant::Full;
  if (lower == "v1") return Variant::V1;
  if (lower == "v2") return Variant::V2;
  if (lower == "v3") return Variant::V3;
  throw InputError("unknown variant '" + std::string(s) + "' (expected full, v1, v2 or v3)");
}

DenoiserConfig TrainConfig::denoiser() const {
  DenoiserConfig d;
  d.dim = dim;
  d.channels = channels;
  d.groups = groups;
  d.token_dim = token_dim;
  d.time_dim = time_dim;
  d.label_dim = label_dim;
  d.use_kan = variant != Variant::V3;
  d.kan_intervals = kan_intervals;
  d.kan_order = kan_order;
  d.kan_range = kan_range;
  return d;
}

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* key) {
    if (!ok) throw InputError(std::string("config: ") + key + " must be positive");
  };
  positive(k_shot > 0, "k_shot");
  positive(margin > 0, "margin");
  positive(timesteps > 0, "timesteps");
  positive(learning_rate > 0, "learning_rate");
  positive(dim > 0, "dim");
  positive(batch_size > 0, "batch_size");
  positive(max_neighbors > 0, "max_neighbors");
  positive(bilinear_rank > 0, "bilinear_rank");
  positive(!channels.empty(), "channels");
  for (auto c : channels) positive(c > 0, "channels");
  positive(groups > 0, "groups");
  positive(token_dim > 0, "token_dim");
  positive(time_dim > 0, "time_dim");
  positive(label_dim > 0, "label_dim");
  positive(kan_intervals > 0, "kan_intervals");
  positive(kan_order >= 0, "kan_order");
  positive(kan_range > 0, "kan_range");
  positive(sample_steps > 0, "sample_steps");
  positive(lambda >= 0, "lambda");
  positive(clip_denoised >= 0, "clip_denoised");
  if (neighbor_activation != "tanh" && neighbor_activation != "identity")
    throw InputError("config: neighbor_activation must be 'tanh' or 'identity'");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"k_shot", c.k_shot},
          {"query_size", c.query_size},
          {"margin", c.margin},
          {"timesteps", c.timesteps},
          {"learning_rate", c.learning_rate},
          {"dim", c.dim},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"eval_interval", c.eval_interval},
          {"patience", c.patience},
          {"seed", c.seed},
          {"variant", variant_name(c.variant)},
          {"lambda", c.lambda},
          {"max_neighbors", c.max_neighbors},
          {"bilinear_rank", c.bilinear_rank},
          {"bilinear_full_below", c.bilinear_full_below},
          {"neighbor_activation", c.neighbor_activation},
          {"channels", c.channels},
          {"groups", c.groups},
          {"token_dim", c.token_dim},
          {"time_dim", c.time_dim},
          {"label_dim", c.label_dim},
          {"kan_intervals", c.kan_intervals},
          {"kan_order", c.kan_order},
          {"kan_range", c.kan_range},
          {"sample_steps", c.sample_steps},
          {"clip_denoised", c.clip_denoised},
          {"score_unfused", c.score_unfused},
          {"finetune_embeddings", c.finetune_embeddings},
          {"shared_task_relations", c.shared_task_relations},
          {"transe_epochs", c.transe_epochs},
          {"transe_learning_rate", c.transe_learning_rate},
          {"transe_margin", c.transe_margin}};
}

namespace {

bool non_negative_integer(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw InputError("config: training section must be an object");
  using Setter = std::function<void(const nlohmann::json&)>;
  auto count = [](std::size_t& f) {
    return Setter([&f](const nlohmann::json& v) {
      if (!non_negative_integer(v)) throw std::invalid_argument("expected a non-negative integer");
      f = v.get<std::size_t>();
    });
  };
  auto real = [](double& f) {
    return Setter([&f](const nlohmann::json& v) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
      f = v.get<double>();
    });
  };
  auto flag = [](bool& f) {
    return Setter([&f](const nlohmann::json& v) {
      if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
      f = v.get<bool>();
    });
  };
  const std::map<std::string, Setter> setters{
      {"k_shot", count(c.k_shot)},
      {"query_size", count(c.query_size)},
      {"margin", real(c.margin)},
      {"timesteps", count(c.timesteps)},
      {"learning_rate", real(c.learning_rate)},
      {"dim", count(c.dim)},
      {"steps", count(c.steps)},
      {"batch_size", count(c.batch_size)},
      {"eval_interval", count(c.eval_interval)},
      {"patience", count(c.patience)},
      {"seed",
       [&c](const nlohmann::json& v) {
         if (!non_negative_integer(v)) throw std::invalid_argument("expected a non-negative integer");
         c.seed = v.get<std::uint64_t>();
       }},
      {"variant",
       [&c](const nlohmann::json& v) {
         if (!v.is_string()) throw std::invalid_argument("expected a string");
         c.variant = parse_variant(v.get<std::string>());
       }},
      {"lambda", real(c.lambda)},
      {"max_neighbors", count(c.max_neighbors)},
      {"bilinear_rank", count(c.bilinear_rank)},
      {"bilinear_full_below", count(c.bilinear_full_below)},
      {"neighbor_activation",
       [&c](const nlohmann::json& v) {
         if (!v.is_string()) throw std::invalid_argument("expected a string");
         c.neighbor_activation = v.get<std::string>();
       }},
      {"channels",
       [&c](const nlohmann::json& v) {
         if (!v.is_array()) throw std::invalid_argument("expected a list of integers");
         std::vector<std::size_t> out;
         for (const auto& e : v) {
           if (!non_negative_integer(e)) throw std::invalid_argument("expected a list of integers");
           out.push_back(e.get<std::size_t>());
         }
         c.channels = std::move(out);
       }},
      {"groups", count(c.groups)},
      {"token_dim", count(c.token_dim)},
      {"time_dim", count(c.time_dim)},
      {"label_dim", count(c.label_dim)},
      {"kan_intervals", count(c.kan_intervals)},
      {"kan_order",
       [&c](const nlohmann::json& v) {
         if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
         c.kan_order = v.get<int>();
       }},
      {"kan_range", real(c.kan_range)},
      {"sample_steps", count(c.sample_steps)},
      {"clip_denoised", real(c.clip_denoised)},
      {"score_unfused", flag(c.score_unfused)},
      {"finetune_embeddings", flag(c.finetune_embeddings)},
      {"shared_task_relations", flag(c.shared_task_relations)},
      {"transe_epochs", count(c.transe_epochs)},
      {"transe_learning_rate", real(c.transe_learning_rate)},
      {"transe_margin", real(c.transe_margin)},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw InputError("config: unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const InputError&) {
      throw;
    } catch (const std::exception& e) {
      throw InputError("config: key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

EnhancerMode Model::enhancer_mode() const {
  return config.variant == Variant::V1 ? EnhancerMode::Simple : EnhancerMode::TwoStage;
}

Model make_model(const TrainConfig& config, EmbeddingTable table) {
  config.validate();
  if (config.variant == Variant::V2)
    throw InputError("variant v2 (neural-process replacement of the diffusion module) is not implemented");
  if (table.dim != config.dim)
    throw InputError("embedding dimension " + std::to_string(table.dim) +
                     " does not match config dim " + std::to_string(config.dim));
  Model m;
  m.config = config;
  m.table = std::move(table);
  if (config.finetune_embeddings) {
    m.store.adopt("embedding.entities", m.table.entities);
    m.store.adopt("embedding.relations", m.table.relations);
  } else {
    m.table.entities = ad::detach(m.table.entities);
    m.table.relations = ad::detach(m.table.relations);
  }
  Rng rng = stream(config.seed, Stream::Init);
  const std::size_t d = config.dim;
  m.bilinear = BilinearParams::create(m.store, "bilinear", d,
                                      d < config.bilinear_full_below ? 0 : config.bilinear_rank, rng);
  m.enhancer = EnhancerParams::create(m.store, "enhancer", d, rng);
  m.enhancer.neighbor_activation =
      config.neighbor_activation == "identity" ? Activation::Identity : Activation::Tanh;
  m.denoiser = Denoiser::create(m.store, "denoiser", config.denoiser(), rng);
  m.scorer = ScorerParams::create(m.store, "scorer", d, rng);
  m.scorer.score_unfused = config.score_unfused;
  m.schedule = cosine_schedule(config.timesteps);
  return m;
}

EmbeddingTable pretrain_embeddings(const DataBundle& data, const TrainConfig& config) {
  TranseConfig tc;
  tc.dim = config.dim;
  tc.epochs = config.transe_epochs;
  tc.margin = config.transe_margin;
  tc.learning_rate = config.transe_learning_rate;
  Rng rng = stream(config.seed, Stream::Transe);
  auto table = pretrain_transe(data.background, tc, rng).table;
  table.extend_entities(data.entities().size(), rng);
  return table;
}

NeighborIndex model_neighbor_index(const DataBundle& data, const TrainConfig& config) {
  Rng rng = stream(config.seed, Stream::Index);
  return build_neighbor_index(data.background, config.max_neighbors, rng, data.entities().size());
}

EpisodeLoss episode_loss(const Model& m, const NeighborIndex& index, const Episode& ep, Rng& rng) {
  const auto mode = m.enhancer_mode();
  NeighborCache cache(index, m.table, m.enhancer);
  auto enhance = [&](const TaskPair& p) {
    return enhance_pair(p.head, p.tail, cache, m.bilinear, m.enhancer, mode);
  };
  std::vector<EnhancedPair> support, negatives;
  for (const auto& p : ep.support) support.push_back(enhance(p));
  for (const auto& p : ep.support_neg) negatives.push_back(enhance(p));

  const ad::Var r_bar = extract_task_relation(support, m.bilinear, m.enhancer);
  const TripleGrid grid = build_z0(support, negatives);
  const ConditionPack cond = film_condition(r_bar, support, negatives, m.denoiser);

  EpisodeLoss out;
  out.timestep = std::uniform_int_distribution<std::size_t>(1, m.schedule.T)(rng);
  const ad::Var eps = ad::constant(grid.tokens.rows(), grid.tokens.cols(),
                                   normal_values(grid.tokens.size(), 1.0, rng));
  const ad::Var z_t = forward_noise(grid.tokens, out.timestep, eps, m.schedule);
  const ad::Var eps_hat = predict_eps(m.denoiser, z_t, out.timestep, cond);
  out.diffusion = diffusion_loss(eps_hat, eps);

  ad::Var z0_hat = estimate_z0(z_t, out.timestep, eps_hat, m.schedule);
  if (m.config.clip_denoised > 0)
    z0_hat = ad::clamp(z0_hat, -m.config.clip_denoised, m.config.clip_denoised);
  const ad::Var z = extract_latent_rule(z0_hat);

  std::vector<ad::Var> pos, neg;
  for (std::size_t i = 0; i < ep.queries.size(); ++i) {
    const auto q = enhance(ep.queries[i]);
    const auto qn = enhance(ep.query_neg[i]);
    pos.push_back(score_query(q.head, r_bar, q.tail, z, m.scorer));
    neg.push_back(score_query(qn.head, r_bar, qn.tail, z, m.scorer));
  }
  out.hinge = hinge_loss(pos, neg, m.config.margin);
  out.total = total_loss(out.hinge, out.diffusion, m.config.lambda);
  return out;
}

namespace {

nlohmann::json describe_episode(const Episode& ep, const DataBundle& data) {
  auto pairs = [&](const std::vector<TaskPair>& ps) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : ps) a.push_back({data.entities().name(p.head), data.entities().name(p.tail)});
    return a;
  };
  return {{"relation", data.tasks.relations.name(ep.relation)},
          {"support", pairs(ep.support)},
          {"support_neg", pairs(ep.support_neg)},
          {"queries", pairs(ep.queries)},
          {"query_neg", pairs(ep.query_neg)}};
}

}  // namespace

TrainResult train(Model& m, const DataBundle& data, const NeighborIndex& index,
                  const TrainOptions& opts) {
  const auto& cfg = m.config;
  const auto relations = data.tasks.relations_in(Split::Train);
  TrainResult result;
  if (cfg.steps == 0) return result;
  if (relations.empty()) throw InputError("no training relations");

  Rng rng = stream(cfg.seed, Stream::Train);
  Adam adam(cfg.learning_rate);
  const bool validate = cfg.eval_interval > 0 && !data.tasks.split(Split::Valid).empty();
  std::vector<std::vector<double>> best_params;
  std::size_t stale = 0;
  std::uniform_int_distribution<std::size_t> pick(0, relations.size() - 1);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    m.store.zero_grad();
    ad::Var total, hinge, diffusion;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const RelationId rel = relations[pick(rng)];
      const Episode ep = sample_episode(data.tasks, Split::Train, rel, cfg.k_shot,
                                        cfg.queries_per_episode(), data.candidates, rng);
      const EpisodeLoss loss = episode_loss(m, index, ep, rng);
      if (!std::isfinite(loss.total.item())) {
        nlohmann::json dump = describe_episode(ep, data);
        dump["step"] = step;
        dump["batch_index"] = b;
        dump["timestep"] = loss.timestep;
        dump["hinge"] = std::to_string(loss.hinge.item());
        dump["diffusion"] = std::to_string(loss.diffusion.item());
        std::string where;
        if (!opts.diagnostics_dir.empty()) {
          std::filesystem::create_directories(opts.diagnostics_dir);
          const auto path =
              opts.diagnostics_dir / ("nonfinite_step_" + std::to_string(step) + ".json");
          std::ofstream(path) << dump.dump(2) << '\n';
          where = "; episode written to " + path.string();
        } else {
          where = "; episode: " + dump.dump();
        }
        throw NonFiniteLoss("non-finite loss at step " + std::to_string(step) + where);
      }
      total = b == 0 ? loss.total : ad::add(total, loss.total);
      hinge = b == 0 ? loss.hinge : ad::add(hinge, loss.hinge);
      diffusion = b == 0 ? loss.diffusion : ad::add(diffusion, loss.diffusion);
    }
    const double inv = 1.0 / static_cast<double>(cfg.batch_size);
    if (cfg.batch_size > 1) total = ad::scale(total, inv);
    result.loss_trace.push_back(total.item());
    result.hinge_trace.push_back(hinge.item() * inv);
    result.diffusion_trace.push_back(diffusion.item() * inv);
    ad::backward(total);
    adam.step(m.store);
    result.steps_run = step + 1;

    if (validate && (step + 1) % cfg.eval_interval == 0) {
      EvalOptions eo;
      eo.k_shot = cfg.k_shot;
      eo.seed = cfg.seed;
      eo.support_from_train = cfg.shared_task_relations;
      const auto report = evaluate(ModelScoring(m, index), data.tasks, Split::Valid,
                                   data.candidates, eo);
      if (!result.best_valid_mrr || report.mrr > *result.best_valid_mrr) {
        result.best_valid_mrr = report.mrr;
        result.best_step = step + 1;
        best_params = m.store.snapshot();
        stale = 0;
        if (opts.on_improvement) opts.on_improvement(step + 1, report);
      } else if (++stale >= cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  if (!best_params.empty()) m.store.restore(best_params);
  return result;
}

// ---- metrics ----

double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr: empty rank list");
  double s = 0.0;
  for (auto r : ranks) {
    if (r == 0) throw std::invalid_argument("mrr: ranks start at 1");
    s += 1.0 / static_cast<double>(r);
  }
  return s / static_cast<double>(ranks.size());
}

double hits_at(std::span<const std::size_t> ranks, std::size_t n) {
  if (ranks.empty()) throw std::invalid_argument("hits_at: empty rank list");
  if (n < 1) throw std::invalid_argument("hits_at: n must be >= 1");
  const auto hit = std::ranges::count_if(ranks, [n](std::size_t r) { return r <= n; });
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

MetricsReport metrics_from_ranks(std::span<const std::size_t> ranks) {
  MetricsReport r;
  r.mrr = mrr(ranks);
  r.hits1 = hits_at(ranks, 1);
  r.hits5 = hits_at(ranks, 5);
  r.hits10 = hits_at(ranks, 10);
  r.n_queries = ranks.size();
  r.ranks.assign(ranks.begin(), ranks.end());
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, m] : per_relation)
    per[name] = {{"mrr", m.mrr}, {"hits1", m.hits1}, {"hits5", m.hits5}, {"hits10", m.hits10},
                 {"n_queries", m.n_queries}};
  return {{"mrr", mrr},     {"hits1", hits1},         {"hits5", hits5},
          {"hits10", hits10}, {"n_queries", n_queries}, {"per_relation", per}};
}

std::size_t worker_count(std::size_t requested) {
  std::size_t n = requested;
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("TAKAND_NUM_THREADS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && cap > 0) n = std::min<std::size_t>(n, cap);
  }
  return n;
}

namespace {

class ModelRelationScorer : public RelationScorer {
 public:
  ModelRelationScorer(const Model& m, const NeighborIndex& index, ad::Var r_bar, ad::Var z)
      : m_(m), index_(index), r_bar_(std::move(r_bar)), z_(std::move(z)) {}

  std::vector<double> score_candidates(EntityId head,
                                       std::span<const EntityId> candidates) const override {
    ad::NoGradGuard guard;
    NeighborCache cache(index_, m_.table, m_.enhancer);
    std::vector<double> out;
    out.reserve(candidates.size());
    for (EntityId c : candidates) {
      const auto pair = enhance_pair(head, c, cache, m_.bilinear, m_.enhancer, m_.enhancer_mode());
      out.push_back(score_query(pair.head, r_bar_, pair.tail, z_, m_.scorer).item());
    }
    return out;
  }

 private:
  const Model& m_;
  const NeighborIndex& index_;
  ad::Var r_bar_;
  ad::Var z_;
};

class OracleRelationScorer : public RelationScorer {
 public:
  explicit OracleRelationScorer(TruthMap truth) : truth_(std::move(truth)) {}
  std::vector<double> score_candidates(EntityId head,
                                       std::span<const EntityId> candidates) const override {
    std::vector<double> out;
    const auto it = truth_.find(head);
    for (EntityId c : candidates)
      out.push_back(it != truth_.end() && it->second.contains(c) ? 0.0 : 1.0);
    return out;
  }

 private:
  TruthMap truth_;
};

}  // namespace

std::unique_ptr<RelationScorer> ModelScoring::prepare(RelationId, std::span<const TaskPair> support,
                                                      std::span<const TaskPair> support_neg,
                                                      Rng& rng) const {
  ad::NoGradGuard guard;
  const Model& m = model_;
  NeighborCache cache(index_, m.table, m.enhancer);
  std::vector<EnhancedPair> pos, neg;
  for (const auto& p : support)
    pos.push_back(enhance_pair(p.head, p.tail, cache, m.bilinear, m.enhancer, m.enhancer_mode()));
  for (const auto& p : support_neg)
    neg.push_back(enhance_pair(p.head, p.tail, cache, m.bilinear, m.enhancer, m.enhancer_mode()));
  const ad::Var r_bar = extract_task_relation(pos, m.bilinear, m.enhancer);
  const ConditionPack cond = film_condition(r_bar, pos, neg, m.denoiser);
  SampleOptions so;
  so.steps = std::min(m.config.sample_steps, m.schedule.T);
  so.clip = m.config.clip_denoised;
  const ad::Var z = extract_latent_rule(reverse_sample(m.denoiser, cond, m.schedule, so, rng));
  return std::make_unique<ModelRelationScorer>(m, index_, ad::detach(r_bar), ad::detach(z));
}

std::unique_ptr<RelationScorer> RankOracle::prepare(RelationId relation, std::span<const TaskPair>,
                                                    std::span<const TaskPair>, Rng&) const {
  const auto all = tasks_.all_pairs(relation);
  return std::make_unique<OracleRelationScorer>(truth_by_head(all));
}

MetricsReport evaluate(const ScoringModel& model, const TaskSet& tasks, Split split,
                       const CandidateMap& cmap, const EvalOptions& opts) {
  const std::size_t k = opts.k_shot;
  std::vector<std::size_t> all_ranks;
  std::map<std::string, RelationMetrics> per_relation;
  const std::size_t workers = worker_count(opts.threads);

  for (const auto& [rel, pairs] : tasks.split(split)) {
    const std::string& name = tasks.relations.name(rel);
    if (!cmap.contains(rel)) throw InputError("no candidate list for relation '" + name + "'");
    Rng rng = stream(opts.seed, Stream::Eval, rel);

    std::vector<TaskPair> support, queries;
    if (opts.support_from_train) {
      const auto& train = tasks.split(Split::Train);
      const auto it = train.find(rel);
      if (it == train.end() || it->second.size() < k)
        throw InputError("relation '" + name + "' has fewer than K=" + std::to_string(k) +
                         " training triples to use as support");
      std::vector<TaskPair> shuffled = it->second;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      support.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
      queries = pairs;
    } else {
      if (pairs.size() < k + 1)
        throw InputError("relation '" + name + "' has " + std::to_string(pairs.size()) +
                         " triples; need at least K+1 = " + std::to_string(k + 1));
      std::vector<TaskPair> shuffled = pairs;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      support.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
      queries.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(k), shuffled.end());
    }

    TruthMap truth = truth_by_head(tasks.all_pairs(rel));
    std::vector<TaskPair> support_neg;
    for (const auto& p : support)
      support_neg.push_back(corrupt_tail(p, rel, cmap, truth[p.head], rng));
    const auto scorer = model.prepare(rel, support, support_neg, rng);
    const auto& candidates = cmap.of(rel);

    std::vector<std::size_t> ranks(queries.size(), 0);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < queries.size();) {
          const auto& q = queries[i];
          const auto& known = truth.at(q.head);
          std::vector<EntityId> pool{q.tail};
          for (EntityId c : candidates)
            if (c != q.tail && !known.contains(c)) pool.push_back(c);
          const auto scores = scorer->score_candidates(q.head, pool);
          ranks[i] = rank_of(scores[0], std::span<const double>(scores).subspan(1));
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    };
    const std::size_t n_threads = std::min(workers, std::max<std::size_t>(queries.size(), 1));
    if (n_threads <= 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work);
      for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    if (ranks.empty()) continue;

    const auto rm = metrics_from_ranks(ranks);
    per_relation[name] = {rm.mrr, rm.hits1, rm.hits5, rm.hits10, rm.n_queries};
    all_ranks.insert(all_ranks.end(), ranks.begin(), ranks.end());
  }
  if (all_ranks.empty())
    throw InputError("split '" + std::string(split_name(split)) + "' has no queries to evaluate");
  MetricsReport report = metrics_from_ranks(all_ranks);
  report.per_relation = std::move(per_relation);
  return report;
}

// ---- checkpoint ----

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");
constexpr char kMagic[8] = {'T', 'A', 'K', 'A', 'N', 'D', 'v', '1'};

void write_archive(const std::filesystem::path& path, nlohmann::json header,
                   const std::vector<CheckpointSection>& sections) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& s : sections) table.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  header["sections"] = table;
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& s : sections)
    out.write(reinterpret_cast<const char*>(s.values.data()),
              static_cast<std::streamsize>(s.values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

}  // namespace

nlohmann::json vocab_hashes(const DataBundle& data) {
  return {{"entities", data.entities().hash()},
          {"relations", data.background.relations.hash()},
          {"task_relations", data.tasks.relations.hash()}};
}

void save_checkpoint(const std::filesystem::path& path, const Model& m, const nlohmann::json& vocab) {
  nlohmann::json header{{"kind", "model"},
                        {"config", to_json(m.config)},
                        {"vocab", vocab},
                        {"schedule",
                         {{"T", m.schedule.T}, {"s", m.schedule.offset}, {"clip", m.schedule.beta_clip}}}};
  std::vector<CheckpointSection> sections;
  auto add = [&](const std::string& name, const ad::Var& v) {
    sections.push_back({name, v.rows(), v.cols(), v.to_vector()});
  };
  if (!m.config.finetune_embeddings) {
    add("embedding.entities", m.table.entities);
    add("embedding.relations", m.table.relations);
  }
  for (const auto& p : m.store.all()) add(p.name, p.var);
  write_archive(path, std::move(header), sections);
}

void save_rank_oracle(const std::filesystem::path& path, const nlohmann::json& vocab) {
  write_archive(path, {{"kind", "rank-oracle"}, {"vocab", vocab}}, {});
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path.string());
  char magic[sizeof kMagic];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw InputError(path.string() + " is not a checkpoint archive");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw InputError(path.string() + ": truncated header");
  Checkpoint c;
  try {
    c.header = nlohmann::json::parse(text);
    c.kind = c.header.at("kind").get<std::string>();
    for (const auto& s : c.header.at("sections")) {
      CheckpointSection sec;
      sec.name = s.at("name").get<std::string>();
      sec.rows = s.at("rows").get<std::size_t>();
      sec.cols = s.at("cols").get<std::size_t>();
      sec.values.resize(sec.rows * sec.cols);
      in.read(reinterpret_cast<char*>(sec.values.data()),
              static_cast<std::streamsize>(sec.values.size() * sizeof(double)));
      if (!in) throw InputError(path.string() + ": truncated section '" + sec.name + "'");
      c.sections.push_back(std::move(sec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  return c;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "model") throw InputError("checkpoint kind '" + ckpt.kind + "' holds no model");
  const TrainConfig cfg = train_config_from_json(ckpt.header.at("config"));
  std::map<std::string, const CheckpointSection*> by_name;
  for (const auto& s : ckpt.sections) by_name[s.name] = &s;
  auto section = [&](const std::string& name) -> const CheckpointSection& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InputError("checkpoint lacks section '" + name + "'");
    return *it->second;
  };
  const auto& ent = section("embedding.entities");
  const auto& rel = section("embedding.relations");
  Model m = make_model(cfg, EmbeddingTable::from_values(ent.cols, ent.rows, ent.values, rel.rows,
                                                        rel.values));
  for (auto& p : m.store.all()) {
    const auto& s = section(p.name);
    if (s.rows != p.var.rows() || s.cols != p.var.cols())
      throw InputError("checkpoint section '" + p.name + "' has shape " + std::to_string(s.rows) +
                       "x" + std::to_string(s.cols) + ", model expects " +
                       std::to_string(p.var.rows()) + "x" + std::to_string(p.var.cols()));
    std::ranges::copy(s.values, p.var.mutable_value().begin());
  }
  return m;
}

void check_vocab(const Checkpoint& ckpt, const nlohmann::json& vocab) {
  if (!ckpt.header.contains("vocab") || ckpt.header.at("vocab") != vocab)
    throw InputError("checkpoint was built for a different dataset vocabulary");
}

}  // namespace takand
