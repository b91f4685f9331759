#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "takand/autodiff.hpp"

namespace takand {

using Rng = std::mt19937_64;

struct NamedParam {
  std::string name;
  ad::Var var;
};

// Ordered registry of trainable leaves. Order is registration order and is
// the order used by checkpoints and the optimizer.
class ParamStore {
 public:
  ad::Var add(std::string name, std::size_t rows, std::size_t cols, std::vector<double> init,
              bool track_rows = false);
  // Registers an existing leaf (e.g. a pretrained embedding table).
  void adopt(std::string name, ad::Var var);

  const std::vector<NamedParam>& all() const { return params_; }
  std::vector<NamedParam>& all() { return params_; }
  const ad::Var& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t scalar_count() const;
  void zero_grad();

  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<NamedParam> params_;
};

std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng);
std::vector<double> normal_values(std::size_t n, double stddev, Rng& rng);
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual linear-layer default.
std::vector<double> fan_in_uniform(std::size_t rows, std::size_t fan_in, std::size_t cols,
                                   Rng& rng);

// Adam with bias correction. Row-tracked leaves get lazy per-row updates,
// only rows that received gradient this step are touched.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(ParamStore& store);
  std::int64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Moments> state_;
};

}  // namespace takand
