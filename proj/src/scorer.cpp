#include "takand/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace takand {

ScorerParams ScorerParams::create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                  Rng& rng) {
  ScorerParams p;
  p.dim = dim;
  const std::size_t in = 5 * dim;
  p.head_w = store.add(prefix + ".head_w", dim, in, fan_in_uniform(dim, in, in, rng));
  p.head_b = store.add(prefix + ".head_b", dim, 1, std::vector<double>(dim, 0.0));
  p.tail_w = store.add(prefix + ".tail_w", dim, in, fan_in_uniform(dim, in, in, rng));
  p.tail_b = store.add(prefix + ".tail_b", dim, 1, std::vector<double>(dim, 0.0));
  return p;
}

ScorerParams ScorerParams::zeros(std::size_t dim) {
  ScorerParams p;
  p.dim = dim;
  p.head_w = ad::parameter(dim, 5 * dim, std::vector<double>(5 * dim * dim, 0.0));
  p.head_b = ad::parameter(dim, 1, std::vector<double>(dim, 0.0));
  p.tail_w = ad::parameter(dim, 5 * dim, std::vector<double>(5 * dim * dim, 0.0));
  p.tail_b = ad::parameter(dim, 1, std::vector<double>(dim, 0.0));
  return p;
}

ad::Var fuse(const ad::Var& entity, const ad::Var& z, const ad::Var& w, const ad::Var& b) {
  return ad::add(ad::tanh(ad::add(ad::matmul(w, ad::vcat({entity, z})), b)), entity);
}

ad::Var score_query(const ad::Var& h_tilde, const ad::Var& r_bar, const ad::Var& t_tilde,
                    const ad::Var& z, const ScorerParams& p) {
  if (h_tilde.rows() != r_bar.rows() || t_tilde.rows() != r_bar.rows())
    throw std::invalid_argument("score_query: dimension mismatch");
  if (p.score_unfused) return ad::l2norm(ad::sub(ad::add(h_tilde, r_bar), t_tilde));
  const ad::Var h = fuse(h_tilde, z, p.head_w, p.head_b);
  const ad::Var t = fuse(t_tilde, z, p.tail_w, p.tail_b);
  return ad::l2norm(ad::sub(ad::add(h, r_bar), t));
}

std::size_t rank_of(double true_score, std::span<const double> other_scores) {
  const auto worse_or_tied =
      std::count_if(other_scores.begin(), other_scores.end(),
                    [&](double s) { return s <= true_score; });
  return 1 + static_cast<std::size_t>(worse_or_tied);
}

namespace {

void check_pairs(std::size_t a, std::size_t b) {
  if (a != b)
    throw std::invalid_argument("hinge_loss: " + std::to_string(a) + " positive scores but " +
                                std::to_string(b) + " negative scores");
  if (a == 0) throw std::invalid_argument("hinge_loss: no score pairs");
}

}  // namespace

ad::Var hinge_loss(std::span<const ad::Var> pos_scores, std::span<const ad::Var> neg_scores,
                   double gamma) {
  check_pairs(pos_scores.size(), neg_scores.size());
  std::vector<ad::Var> terms;
  for (std::size_t i = 0; i < pos_scores.size(); ++i)
    terms.push_back(ad::relu(ad::add_scalar(ad::sub(pos_scores[i], neg_scores[i]), gamma)));
  return ad::mean(ad::vcat(terms));
}

double hinge_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                  double gamma) {
  check_pairs(pos_scores.size(), neg_scores.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pos_scores.size(); ++i)
    s += std::max(0.0, gamma - neg_scores[i] + pos_scores[i]);
  return s / static_cast<double>(pos_scores.size());
}

ad::Var diffusion_loss(const ad::Var& eps_hat, const ad::Var& eps) {
  if (eps_hat.rows() != eps.rows() || eps_hat.cols() != eps.cols())
    throw std::invalid_argument("diffusion_loss: shape mismatch");
  return ad::mean(ad::square(ad::sub(eps_hat, eps)));
}

ad::Var total_loss(const ad::Var& hinge, const ad::Var& diff, double lambda) {
  return ad::add(hinge, ad::scale(diff, lambda));
}

double total_loss(double hinge, double diff, double lambda) { return hinge + lambda * diff; }

}  // namespace takand
