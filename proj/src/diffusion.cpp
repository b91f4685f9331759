#include "takand/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace takand {

double cosine_alpha_bar(double t, std::size_t T, double offset) {
  auto f = [&](double u) {
    const double c = std::cos((u / static_cast<double>(T) + offset) / (1.0 + offset) *
                              std::numbers::pi / 2.0);
    return c * c;
  };
  return f(t) / f(0.0);
}

NoiseSchedule cosine_schedule(std::size_t T, double offset, double beta_clip) {
  if (T < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
  NoiseSchedule s;
  s.T = T;
  s.offset = offset;
  s.beta_clip = beta_clip;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  for (std::size_t t = 1; t <= T; ++t) {
    const double ratio = cosine_alpha_bar(static_cast<double>(t), T, offset) /
                         cosine_alpha_bar(static_cast<double>(t - 1), T, offset);
    s.beta[t] = std::min(1.0 - ratio, beta_clip);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

namespace {

void check_timestep(std::size_t t, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T)
    throw std::out_of_range("timestep " + std::to_string(t) + " outside 1.." +
                            std::to_string(sched.T));
}

void check_same_shape(const ad::Var& a, const ad::Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace

TripleGrid build_z0(std::span<const EnhancedPair> support, std::span<const EnhancedPair> negatives) {
  if (support.size() != negatives.size())
    throw std::invalid_argument("build_z0: support has " + std::to_string(support.size()) +
                                " pairs but negatives has " + std::to_string(negatives.size()));
  if (support.empty()) throw std::invalid_argument("build_z0: empty support");
  std::vector<ad::Var> cols;
  TripleGrid g;
  for (const auto& p : support) {
    cols.push_back(ad::vcat({p.head, p.tail}));
    g.labels.push_back(1);
  }
  for (const auto& p : negatives) {
    cols.push_back(ad::vcat({p.head, p.tail}));
    g.labels.push_back(0);
  }
  g.tokens = ad::hcat(cols);
  return g;
}

ad::Var forward_noise_at(const ad::Var& z0, double alpha_bar, const ad::Var& eps) {
  check_same_shape(z0, eps, "forward_noise");
  return ad::add(ad::scale(z0, std::sqrt(alpha_bar)), ad::scale(eps, std::sqrt(1.0 - alpha_bar)));
}

ad::Var forward_noise(const ad::Var& z0, std::size_t t, const ad::Var& eps,
                      const NoiseSchedule& sched) {
  check_timestep(t, sched);
  return forward_noise_at(z0, sched.alpha_bar[t], eps);
}

ad::Var estimate_z0_at(const ad::Var& z_t, double alpha_bar, const ad::Var& eps_hat) {
  check_same_shape(z_t, eps_hat, "estimate_z0");
  return ad::scale(ad::sub(z_t, ad::scale(eps_hat, std::sqrt(1.0 - alpha_bar))),
                   1.0 / std::sqrt(alpha_bar));
}

ad::Var estimate_z0(const ad::Var& z_t, std::size_t t, const ad::Var& eps_hat,
                    const NoiseSchedule& sched) {
  check_timestep(t, sched);
  return estimate_z0_at(z_t, sched.alpha_bar[t], eps_hat);
}

namespace {

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   Rng& rng, bool zero = false) {
  Linear l;
  l.weight = store.add(name + ".weight", out, in,
                       zero ? std::vector<double>(out * in, 0.0) : fan_in_uniform(out, in, in, rng));
  l.bias = store.add(name + ".bias", out, 1, std::vector<double>(out, 0.0));
  return l;
}

Conv make_conv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel, Rng& rng, bool zero = false) {
  Conv c;
  c.kernel = kernel;
  const std::size_t fan = in * kernel;
  c.weight = store.add(name + ".weight", out, fan,
                       zero ? std::vector<double>(out * fan, 0.0) : fan_in_uniform(out, fan, fan, rng));
  c.bias = store.add(name + ".bias", out, 1, std::vector<double>(out, 0.0));
  return c;
}

GroupNorm make_norm(ParamStore& store, const std::string& name, std::size_t channels,
                    std::size_t groups) {
  GroupNorm n;
  n.groups = std::gcd(channels, std::max<std::size_t>(groups, 1));
  n.gain = store.add(name + ".gain", channels, 1, std::vector<double>(channels, 1.0));
  n.bias = store.add(name + ".bias", channels, 1, std::vector<double>(channels, 0.0));
  return n;
}

ResBlock make_block(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                    const DenoiserConfig& cfg, Rng& rng) {
  ResBlock b;
  b.in = in;
  b.out = out;
  b.norm1 = make_norm(store, name + ".norm1", in, cfg.groups);
  b.film = make_linear(store, name + ".film", 5 * cfg.dim, 2 * in, rng, /*zero=*/true);
  b.conv1 = make_conv(store, name + ".conv1", in, out, 3, rng);
  b.norm2 = make_norm(store, name + ".norm2", out, cfg.groups);
  b.conv2 = make_conv(store, name + ".conv2", out, out, 3, rng);
  if (in != out) b.skip = make_conv(store, name + ".skip", in, out, 1, rng);
  return b;
}

ad::Var apply(const Linear& l, const ad::Var& x) {
  return ad::add_col(ad::matmul(l.weight, x), l.bias);
}

ad::Var apply(const Conv& c, const ad::Var& x, std::size_t stride = 1) {
  return ad::conv1d(x, c.weight, c.bias, c.kernel, stride, c.kernel / 2);
}

ad::Var apply(const GroupNorm& n, const ad::Var& x) {
  return ad::add_col(ad::mul_col(ad::group_standardize(x, n.groups), n.gain), n.bias);
}

ad::Var apply(const ResBlock& b, const ad::Var& x, const ad::Var& film) {
  ad::Var h = apply(b.norm1, x);
  if (film.defined()) {
    const ad::Var ss = apply(b.film, film);
    const ad::Var scale = ad::add_scalar(ad::slice_rows(ss, 0, b.in), 1.0);
    const ad::Var shift = ad::slice_rows(ss, b.in, b.in);
    h = ad::add_col(ad::mul_col(h, scale), shift);
  }
  h = apply(b.conv1, ad::silu(h));
  h = apply(b.conv2, ad::silu(apply(b.norm2, h)));
  const ad::Var skip = b.skip ? apply(*b.skip, x) : x;
  return ad::add(skip, h);
}

ad::Var upsample_nearest(const ad::Var& x, std::size_t length) {
  const std::size_t src = x.cols();
  std::vector<std::size_t> idx(length);
  for (std::size_t j = 0; j < length; ++j) idx[j] = j * src / length;
  return ad::gather_cols(x, idx);
}

}  // namespace

Denoiser Denoiser::create(ParamStore& store, const std::string& prefix, const DenoiserConfig& cfg,
                          Rng& rng) {
  if (cfg.channels.empty()) throw std::invalid_argument("denoiser needs at least one channel level");
  Denoiser d;
  d.config = cfg;
  const auto& ch = cfg.channels;
  const std::size_t grid_ch = 2 * cfg.dim;
  d.label_pos = store.add(prefix + ".label_pos", cfg.label_dim, 1,
                          normal_values(cfg.label_dim, 1.0, rng));
  d.label_neg = store.add(prefix + ".label_neg", cfg.label_dim, 1,
                          normal_values(cfg.label_dim, 1.0, rng));
  d.in_conv = make_conv(store, prefix + ".in_conv", grid_ch + cfg.label_dim, ch[0], 3, rng);
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const std::size_t in = i == 0 ? ch[0] : ch[i - 1];
    d.down.push_back(make_block(store, prefix + ".down" + std::to_string(i), in, ch[i], cfg, rng));
    if (i + 1 < ch.size())
      d.downsample.push_back(
          make_conv(store, prefix + ".downsample" + std::to_string(i), ch[i], ch[i], 3, rng));
  }
  const std::size_t last = ch.back();
  d.token_in = make_linear(store, prefix + ".token_in", last, cfg.token_dim, rng);
  d.time_hidden = make_linear(store, prefix + ".time_hidden", cfg.time_dim, cfg.token_dim, rng);
  d.time_out = make_linear(store, prefix + ".time_out", cfg.token_dim, cfg.token_dim, rng);
  if (cfg.use_kan)
    d.kan = KanLayer::create(store, prefix + ".kan", cfg.token_dim, cfg.token_dim,
                             cfg.kan_intervals, cfg.kan_order, cfg.kan_range, rng);
  else
    d.plain = make_linear(store, prefix + ".plain", cfg.token_dim, cfg.token_dim, rng);
  d.ln_gain = store.add(prefix + ".ln_gain", cfg.token_dim, 1, std::vector<double>(cfg.token_dim, 1.0));
  d.ln_bias = store.add(prefix + ".ln_bias", cfg.token_dim, 1, std::vector<double>(cfg.token_dim, 0.0));
  d.token_out = make_linear(store, prefix + ".token_out", cfg.token_dim, last, rng);
  d.up.resize(ch.size());
  for (std::size_t i = ch.size(); i-- > 0;) {
    const std::size_t below = i + 1 < ch.size() ? ch[i + 1] : last;
    d.up[i] = make_block(store, prefix + ".up" + std::to_string(i), below + ch[i], ch[i], cfg, rng);
  }
  d.out_norm = make_norm(store, prefix + ".out_norm", ch[0], cfg.groups);
  d.out_conv = make_conv(store, prefix + ".out_conv", ch[0], grid_ch, 3, rng, /*zero=*/true);
  return d;
}

ConditionPack film_condition(const ad::Var& r_bar, std::span<const EnhancedPair> support,
                             std::span<const EnhancedPair> negatives, const Denoiser& den) {
  if (support.size() != negatives.size() || support.empty())
    throw std::invalid_argument("film_condition: support and negatives must both have K >= 1 pairs");
  auto pooled = [](std::span<const EnhancedPair> pairs) {
    ad::Var acc;
    for (const auto& p : pairs) {
      ad::Var v = ad::vcat({p.head, p.tail});
      acc = acc.defined() ? ad::add(acc, v) : v;
    }
    return ad::scale(acc, 1.0 / static_cast<double>(pairs.size()));
  };
  ConditionPack c;
  c.r_bar = r_bar;
  c.pos_summary = pooled(support);
  c.neg_summary = pooled(negatives);
  c.film = ad::vcat({c.r_bar, c.pos_summary, c.neg_summary});
  std::vector<ad::Var> cols(support.size(), den.label_pos);
  cols.insert(cols.end(), negatives.size(), den.label_neg);
  c.labels = ad::hcat(cols);
  return c;
}

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(static_cast<double>(t) * freq);
    out[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return out;
}

ad::Var predict_eps(const Denoiser& den, const ad::Var& z_t, std::size_t t,
                    const ConditionPack& cond) {
  const auto& cfg = den.config;
  if (z_t.rows() != 2 * cfg.dim)
    throw std::invalid_argument("predict_eps: grid has " + std::to_string(z_t.rows()) +
                                " channels, expected " + std::to_string(2 * cfg.dim));
  if (!cond.labels.defined() || cond.labels.cols() != z_t.cols())
    throw std::invalid_argument("predict_eps: label embeddings do not match the grid positions");

  ad::Var h = apply(den.in_conv, ad::vcat({z_t, cond.labels}));
  std::vector<ad::Var> skips;
  for (std::size_t i = 0; i < den.down.size(); ++i) {
    h = apply(den.down[i], h, cond.film);
    skips.push_back(h);
    if (i < den.downsample.size()) h = apply(den.downsample[i], h, 2);
  }

  // Bottleneck: per-position tokens, timestep embedding, KAN, layer norm.
  const ad::Var temb = apply(
      den.time_out, ad::silu(apply(den.time_hidden, ad::column(timestep_embedding(t, cfg.time_dim)))));
  ad::Var tok = ad::add_col(apply(den.token_in, h), temb);
  tok = cfg.use_kan ? kan_forward(den.kan, tok) : ad::silu(apply(den.plain, tok));
  tok = ad::add_col(ad::mul_col(ad::column_standardize(tok), den.ln_gain), den.ln_bias);
  h = ad::add(h, apply(den.token_out, tok));

  for (std::size_t i = den.up.size(); i-- > 0;) {
    h = apply(den.up[i], ad::vcat({h, skips[i]}), cond.film);
    if (i > 0) h = upsample_nearest(h, skips[i - 1].cols());
  }
  return apply(den.out_conv, ad::silu(apply(den.out_norm, h)));
}

std::vector<std::size_t> sample_timesteps(std::size_t T, std::size_t steps) {
  if (steps < 1 || steps > T)
    throw std::invalid_argument("sample steps must be in 1.." + std::to_string(T));
  if (steps == 1) return {T};
  std::vector<std::size_t> out(steps);
  for (std::size_t i = 0; i < steps; ++i)
    out[steps - 1 - i] = 1 + (T - 1) * i / (steps - 1);
  return out;
}

ad::Var reverse_sample(const Denoiser& den, const ConditionPack& cond, const NoiseSchedule& sched,
                       const SampleOptions& opts, Rng& rng) {
  ad::NoGradGuard guard;
  const auto taus = sample_timesteps(sched.T, opts.steps);
  const std::size_t rows = 2 * den.config.dim, cols = cond.labels.cols();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(rows * cols);
  for (double& v : z) v = normal(rng);

  for (std::size_t i = 0; i < taus.size(); ++i) {
    const std::size_t t = taus[i];
    const std::size_t prev = i + 1 < taus.size() ? taus[i + 1] : 0;
    const ad::Var eps = predict_eps(den, ad::constant(rows, cols, z), t, cond);
    const double ab = sched.alpha_bar[t], abp = sched.alpha_bar[prev];
    std::vector<double> x0(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
      x0[k] = (z[k] - std::sqrt(1.0 - ab) * eps.value()[k]) / std::sqrt(ab);
      if (opts.clip > 0.0) x0[k] = std::clamp(x0[k], -opts.clip, opts.clip);
    }
    if (prev == 0) {
      z = std::move(x0);
      break;
    }
    const double a = ab / abp, b = 1.0 - a;
    const double c0 = std::sqrt(abp) * b / (1.0 - ab);
    const double ct = std::sqrt(a) * (1.0 - abp) / (1.0 - ab);
    const double sigma = std::sqrt((1.0 - abp) / (1.0 - ab) * b);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = c0 * x0[k] + ct * z[k] + sigma * normal(rng);
  }
  return ad::constant(rows, cols, std::move(z));
}

ad::Var extract_latent_rule(const ad::Var& z0_tilde) {
  const std::size_t n = z0_tilde.cols();
  if (n == 0 || n % 2 != 0)
    throw std::invalid_argument("extract_latent_rule: token count " + std::to_string(n) +
                                " is not even");
  const std::size_t k = n / 2;
  return ad::vcat({ad::row_mean(ad::slice_cols(z0_tilde, 0, k)),
                   ad::row_mean(ad::slice_cols(z0_tilde, k, k))});
}

}  // namespace takand
