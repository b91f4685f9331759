#include "takand/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace takand {

ad::Var ParamStore::add(std::string name, std::size_t rows, std::size_t cols,
                        std::vector<double> init, bool track_rows) {
  ad::Var v = ad::parameter(rows, cols, std::move(init), track_rows);
  adopt(std::move(name), v);
  return v;
}

void ParamStore::adopt(std::string name, ad::Var var) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  if (!var.requires_grad()) var.node()->requires_grad = true;
  params_.push_back({std::move(name), std::move(var)});
}

const ad::Var& ParamStore::get(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.var;
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const NamedParam& p) { return p.name == name; });
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) ad::zero_grad(p.var);
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.var.to_vector());
  return out;
}

void ParamStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("snapshot size mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].var.mutable_value();
    if (dst.size() != values[i].size())
      throw std::invalid_argument("snapshot shape mismatch for " + params_[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> out(n);
  for (auto& x : out) x = dist(rng);
  return out;
}

std::vector<double> normal_values(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(n);
  for (auto& x : out) x = dist(rng);
  return out;
}

std::vector<double> fan_in_uniform(std::size_t rows, std::size_t fan_in, std::size_t cols,
                                   Rng& rng) {
  return uniform_values(rows * cols, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& store) {
  auto& params = store.all();
  if (state_.size() != params.size()) {
    state_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state_[i].m.assign(params[i].var.size(), 0.0);
      state_[i].v.assign(params[i].var.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));

  auto update = [&](Moments& s, std::span<double> w, std::span<const double> g,
                    std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g[i];
      s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g[i] * g[i];
      const double mhat = s.m[i] / c1;
      const double vhat = s.v[i] / c2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  };

  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Node* n = params[i].var.node();
    if (n->grad.empty()) continue;
    auto w = params[i].var.mutable_value();
    std::span<const double> g = n->grad;
    if (n->track_rows) {
      for (std::size_t r : n->touched_rows) update(state_[i], w, g, r * n->cols, (r + 1) * n->cols);
    } else {
      update(state_[i], w, g, 0, w.size());
    }
  }
}

}  // namespace takand
