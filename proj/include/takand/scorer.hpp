#pragma once

// Candidate scoring with the latent rule and the joint training objective.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "takand/autodiff.hpp"
#include "takand/params.hpp"

namespace takand {

struct ScorerParams {
  std::size_t dim = 0;
  ad::Var head_w, head_b;  // d x 5d, d x 1
  ad::Var tail_w, tail_b;
  // Score the enhanced entities directly and leave z unused.
  bool score_unfused = false;

  static ScorerParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                             Rng& rng);
  static ScorerParams zeros(std::size_t dim);
};

// tanh(W [entity; z] + b) + entity.
ad::Var fuse(const ad::Var& entity, const ad::Var& z, const ad::Var& w, const ad::Var& b);

// ||g_h(h, z) + r_bar - g_t(t, z)||_2, lower is more plausible.
ad::Var score_query(const ad::Var& h_tilde, const ad::Var& r_bar, const ad::Var& t_tilde,
                    const ad::Var& z, const ScorerParams& p);

// 1 + #strictly better + #other candidates tied with the true tail.
std::size_t rank_of(double true_score, std::span<const double> other_scores);

// Scores every pool member with `score` (called once per id) and ranks the true
// tail. The true tail is added to the pool if absent.
template <typename ScoreFn>
std::size_t rank_candidates(std::size_t true_tail, std::span<const std::size_t> pool,
                            ScoreFn&& score);

ad::Var hinge_loss(std::span<const ad::Var> pos_scores, std::span<const ad::Var> neg_scores,
                   double gamma);
double hinge_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                  double gamma);

ad::Var diffusion_loss(const ad::Var& eps_hat, const ad::Var& eps);

ad::Var total_loss(const ad::Var& hinge, const ad::Var& diff, double lambda = 1.0);
double total_loss(double hinge, double diff, double lambda = 1.0);

template <typename ScoreFn>
std::size_t rank_candidates(std::size_t true_tail, std::span<const std::size_t> pool,
                            ScoreFn&& score) {
  if (pool.empty()) throw std::invalid_argument("rank_candidates: empty candidate pool");
  const double target = score(true_tail);
  std::vector<double> others;
  others.reserve(pool.size());
  for (std::size_t c : pool)
    if (c != true_tail) others.push_back(score(c));
  return rank_of(target, others);
}

}  // namespace takand
