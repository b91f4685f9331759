#pragma once

// Conditional diffusion over the grid of enhanced support/negative pairs:
// noise schedule, forward noising, the U-shaped denoiser with a KAN
// bottleneck, reverse sampling and latent-rule pooling.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "takand/attention_enhancer.hpp"
#include "takand/autodiff.hpp"
#include "takand/kan.hpp"
#include "takand/params.hpp"

namespace takand {

// Arrays are indexed by timestep with index 0 the clean reference point
// (alpha_bar[0] = 1, beta[0] = 0). Valid timesteps are 1..T.
struct NoiseSchedule {
  std::size_t T = 0;
  double offset = 0.008;
  double beta_clip = 0.999;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
};

// Squared-cosine curve f(u) = cos^2(((u/T) + s)/(1 + s) * pi/2). beta_t is
// 1 - f(t)/f(t-1) clipped to beta_clip, and alpha_bar is the running product
// of 1 - beta, so alpha_bar_t = f(t)/f(0) wherever no clipping happened.
NoiseSchedule cosine_schedule(std::size_t T, double offset = 0.008, double beta_clip = 0.999);
double cosine_alpha_bar(double t, std::size_t T, double offset = 0.008);

// Channels x positions: column i is concat(h_i, t_i); columns 0..K-1 hold the
// support pairs, K..2K-1 the negatives.
struct TripleGrid {
  ad::Var tokens;            // 2d x 2K
  std::vector<char> labels;  // 1 for support positions

  std::size_t positions() const { return tokens.cols(); }
  std::size_t shots() const { return tokens.cols() / 2; }
};

TripleGrid build_z0(std::span<const EnhancedPair> support, std::span<const EnhancedPair> negatives);

// sqrt(alpha_bar) * z0 + sqrt(1 - alpha_bar) * eps.
ad::Var forward_noise(const ad::Var& z0, std::size_t t, const ad::Var& eps,
                      const NoiseSchedule& sched);
ad::Var forward_noise_at(const ad::Var& z0, double alpha_bar, const ad::Var& eps);

// (z_t - sqrt(1 - alpha_bar) * eps_hat) / sqrt(alpha_bar).
ad::Var estimate_z0(const ad::Var& z_t, std::size_t t, const ad::Var& eps_hat,
                    const NoiseSchedule& sched);
ad::Var estimate_z0_at(const ad::Var& z_t, double alpha_bar, const ad::Var& eps_hat);

struct DenoiserConfig {
  std::size_t dim = 100;                       // entity dimension d; grid has 2d channels
  std::vector<std::size_t> channels{64, 128};  // one entry per resolution level
  std::size_t groups = 8;                      // group-norm groups (reduced to a divisor)
  std::size_t token_dim = 64;
  std::size_t time_dim = 32;
  std::size_t label_dim = 8;
  bool use_kan = true;  // false: Linear + SiLU bottleneck
  std::size_t kan_intervals = 5;
  int kan_order = 3;
  double kan_range = 1.0;
};

struct Linear {
  ad::Var weight;  // out x in
  ad::Var bias;    // out x 1
};

struct Conv {
  ad::Var weight;  // out x (in * kernel)
  ad::Var bias;
  std::size_t kernel = 3;
};

struct GroupNorm {
  ad::Var gain;
  ad::Var bias;
  std::size_t groups = 1;
};

struct ResBlock {
  std::size_t in = 0;
  std::size_t out = 0;
  GroupNorm norm1;
  Linear film;  // condition -> (scale, shift), 2*in rows
  Conv conv1;
  GroupNorm norm2;
  Conv conv2;
  std::optional<Conv> skip;  // 1x1 when in != out
};

struct Denoiser {
  DenoiserConfig config;
  ad::Var label_pos, label_neg;  // label_dim x 1
  Conv in_conv;
  std::vector<ResBlock> down;
  std::vector<Conv> downsample;  // stride 2, between levels
  Linear token_in;
  Linear time_hidden, time_out;
  KanLayer kan;
  Linear plain;  // used instead of the KAN when use_kan is false
  ad::Var ln_gain, ln_bias;
  Linear token_out;
  std::vector<ResBlock> up;  // up[i] runs at resolution level i
  GroupNorm out_norm;
  Conv out_conv;  // zero-initialized

  std::size_t film_dim() const { return 5 * config.dim; }
  static Denoiser create(ParamStore& store, const std::string& prefix, const DenoiserConfig& cfg,
                         Rng& rng);
};

struct ConditionPack {
  ad::Var r_bar;        // d
  ad::Var pos_summary;  // 2d, mean of concat(h, t) over the support
  ad::Var neg_summary;  // 2d, mean over the negatives
  ad::Var film;         // concat(r_bar, pos_summary, neg_summary); undefined disables FiLM
  ad::Var labels;       // label_dim x 2K
};

ConditionPack film_condition(const ad::Var& r_bar, std::span<const EnhancedPair> support,
                             std::span<const EnhancedPair> negatives, const Denoiser& den);

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim);

ad::Var predict_eps(const Denoiser& den, const ad::Var& z_t, std::size_t t,
                    const ConditionPack& cond);

struct SampleOptions {
  std::size_t steps = 50;
  double clip = 0.0;  // clamp each x0 estimate to [-clip, clip]; 0 disables
};

// Descending strided timesteps: {T} for one step, otherwise S values spread
// evenly from T down to 1.
std::vector<std::size_t> sample_timesteps(std::size_t T, std::size_t steps);

// Ancestral sampling from N(0, I) with the x0-form posterior mean and the
// posterior variance. One std::normal_distribution drives the whole call:
// z_T first (row-major), then the noise of every non-final step.
ad::Var reverse_sample(const Denoiser& den, const ConditionPack& cond, const NoiseSchedule& sched,
                       const SampleOptions& opts, Rng& rng);

// Mean over the first and second half of the positions, concatenated (4d).
ad::Var extract_latent_rule(const ad::Var& z0_tilde);

}  // namespace takand
