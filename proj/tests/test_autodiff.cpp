#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "takand/autodiff.hpp"
#include "takand/params.hpp"
#include "test_util.hpp"

namespace ad = takand::ad;
using testutil::check_gradients;
using testutil::random_param;

namespace {

// Weighted sum so every output element gets a distinct upstream gradient.
ad::Var probe(const ad::Var& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(y, ad::constant(y.rows(), y.cols(),
                                         testutil::random_values(y.size(), rng))));
}

}  // namespace

TEST_CASE("matmul, transpose and reshape values") {
  auto a = ad::constant(2, 3, {1, 2, 3, 4, 5, 6});
  auto b = ad::constant(3, 2, {7, 8, 9, 10, 11, 12});
  auto c = ad::matmul(a, b);
  CHECK(c.rows() == 2);
  CHECK(c.cols() == 2);
  CHECK(c.at(0, 0) == 58);
  CHECK(c.at(0, 1) == 64);
  CHECK(c.at(1, 0) == 139);
  CHECK(c.at(1, 1) == 154);
  auto t = ad::transpose(a);
  CHECK(t.at(2, 1) == 6);
  auto r = ad::reshape(a, 3, 2);
  CHECK(r.at(2, 0) == 5);
  CHECK_THROWS(ad::matmul(a, a));
}

TEST_CASE("softmax sums to one and is shift invariant") {
  auto x = ad::column({1000.0, 1001.0, 999.0});
  auto s = ad::softmax(x);
  double total = 0;
  for (double v : s.value()) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  auto s2 = ad::softmax(ad::column({0.0, 1.0, -1.0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(s.at(i) == doctest::Approx(s2.at(i)).epsilon(1e-12));
}

TEST_CASE("group standardization gives zero mean and unit variance per group") {
  std::mt19937_64 rng(1);
  auto x = ad::constant(4, 5, testutil::random_values(20, rng, -3, 3));
  auto y = ad::group_standardize(x, 2, 0.0);
  for (std::size_t g = 0; g < 2; ++g) {
    double m = 0, v = 0;
    for (std::size_t r = 2 * g; r < 2 * g + 2; ++r)
      for (std::size_t c = 0; c < 5; ++c) m += y.at(r, c);
    m /= 10;
    for (std::size_t r = 2 * g; r < 2 * g + 2; ++r)
      for (std::size_t c = 0; c < 5; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
    CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(v / 10 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("conv1d matches direct summation") {
  std::mt19937_64 rng(2);
  const std::size_t cin = 2, cout = 3, L = 7, k = 3;
  auto x = ad::constant(cin, L, testutil::random_values(cin * L, rng));
  auto w = ad::constant(cout, cin * k, testutil::random_values(cout * cin * k, rng));
  auto b = ad::constant(cout, 1, testutil::random_values(cout, rng));
  for (std::size_t stride : {1u, 2u}) {
    auto y = ad::conv1d(x, w, b, k, stride, 1);
    const std::size_t lout = (L + 2 - k) / stride + 1;
    REQUIRE(y.cols() == lout);
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t p = 0; p < lout; ++p) {
        double acc = b.at(o);
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t j = 0; j < k; ++j) {
            const long pos = static_cast<long>(p * stride + j) - 1;
            if (pos >= 0 && pos < static_cast<long>(L)) acc += w.at(o, c * k + j) * x.at(c, pos);
          }
        CHECK(y.at(o, p) == doctest::Approx(acc).epsilon(1e-12));
      }
  }
}

TEST_CASE("elementwise op gradients match finite differences") {
  std::mt19937_64 rng(3);
  auto a = random_param(3, 2, rng, 0.2, 1.0);
  auto b = random_param(3, 2, rng, 0.2, 1.0);
  const std::vector<std::pair<const char*, std::function<ad::Var()>>> cases{
      {"add", [&] { return probe(ad::add(a, b)); }},
      {"sub", [&] { return probe(ad::sub(a, b)); }},
      {"mul", [&] { return probe(ad::mul(a, b)); }},
      {"scale", [&] { return probe(ad::scale(a, -2.5)); }},
      {"add_scalar", [&] { return probe(ad::add_scalar(a, 0.3)); }},
      {"sigmoid", [&] { return probe(ad::sigmoid(a)); }},
      {"tanh", [&] { return probe(ad::tanh(a)); }},
      {"silu", [&] { return probe(ad::silu(ad::sub(a, b))); }},
      {"relu", [&] { return probe(ad::relu(a)); }},
      {"clamp", [&] { return probe(ad::clamp(a, 0.0, 2.0)); }},
      {"square", [&] { return probe(ad::square(a)); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(check_gradients(f, {a, b}).max_rel < 1e-6);
  }
}

TEST_CASE("layout and reduction gradients match finite differences") {
  std::mt19937_64 rng(4);
  auto a = random_param(3, 4, rng);
  auto b = random_param(3, 2, rng);
  auto v = random_param(3, 1, rng);
  auto m = random_param(4, 3, rng);
  const std::vector<std::size_t> cols{3, 0, 0, 2};
  const std::vector<std::pair<const char*, std::function<ad::Var()>>> cases{
      {"add_col", [&] { return probe(ad::add_col(a, v)); }},
      {"mul_col", [&] { return probe(ad::mul_col(a, v)); }},
      {"matmul", [&] { return probe(ad::matmul(a, m)); }},
      {"transpose", [&] { return probe(ad::transpose(a)); }},
      {"reshape", [&] { return probe(ad::reshape(a, 6, 2)); }},
      {"vcat", [&] { return probe(ad::vcat({a, ad::transpose(m)})); }},
      {"hcat", [&] { return probe(ad::hcat(std::vector<ad::Var>{a, b})); }},
      {"slice_rows", [&] { return probe(ad::slice_rows(a, 1, 2)); }},
      {"slice_cols", [&] { return probe(ad::slice_cols(a, 1, 2)); }},
      {"gather_row", [&] { return probe(ad::gather_row(m, 2)); }},
      {"gather_cols", [&] { return probe(ad::gather_cols(a, cols)); }},
      {"sum", [&] { return ad::sum(ad::square(a)); }},
      {"mean", [&] { return ad::mean(ad::square(a)); }},
      {"row_sum", [&] { return probe(ad::row_sum(a)); }},
      {"row_mean", [&] { return probe(ad::row_mean(a)); }},
      {"l2norm", [&] { return ad::l2norm(a); }},
      {"softmax", [&] { return probe(ad::softmax(a)); }},
      {"group_standardize", [&] { return probe(ad::group_standardize(ad::vcat({a, ad::transpose(m)}), 3)); }},
      {"column_standardize", [&] { return probe(ad::column_standardize(a)); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(check_gradients(f, {a, b, v, m}).max_rel < 1e-5);
  }
}

TEST_CASE("conv1d gradients match finite differences") {
  std::mt19937_64 rng(5);
  auto x = random_param(3, 6, rng);
  auto w = random_param(2, 9, rng);
  auto b = random_param(2, 1, rng);
  for (std::size_t stride : {1u, 2u}) {
    CAPTURE(stride);
    auto f = [&] { return probe(ad::conv1d(x, w, b, 3, stride, 1)); };
    CHECK(check_gradients(f, {x, w, b}).max_rel < 1e-6);
  }
}

TEST_CASE("a node reused twice accumulates both gradient paths") {
  auto x = ad::parameter(1, 1, {3.0});
  auto y = ad::mul(x, x);
  ad::backward(ad::add(y, x));
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("no-grad guard records no graph") {
  auto x = ad::parameter(2, 1, {1.0, 2.0});
  {
    ad::NoGradGuard g;
    CHECK_FALSE(ad::grad_enabled());
    auto y = ad::sum(ad::square(x));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.item() == 5.0);
  }
  CHECK(ad::grad_enabled());
  CHECK(ad::sum(x).requires_grad());
}

TEST_CASE("gather_row marks touched rows and Adam updates only those") {
  takand::ParamStore store;
  auto table = store.add("table", 4, 2, std::vector<double>(8, 1.0), /*track_rows=*/true);
  ad::backward(ad::sum(ad::gather_row(table, 2)));
  REQUIRE(table.node()->touched_rows.size() == 1);
  CHECK(table.node()->touched_rows[0] == 2);
  takand::Adam adam(0.1);
  adam.step(store);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 2; ++c) CHECK(table.at(r, c) == doctest::Approx(r == 2 ? 0.9 : 1.0));
  store.zero_grad();
  CHECK(table.node()->touched_rows.empty());
}

TEST_CASE("Adam first step moves each weight by the learning rate") {
  // With bias correction, m_hat = g and v_hat = g^2 after one step.
  takand::ParamStore store;
  auto w = store.add("w", 3, 1, {1.0, -2.0, 0.5});
  ad::backward(ad::sum(ad::mul(w, ad::constant(3, 1, {0.5, -4.0, 2.0}))));
  takand::Adam adam(0.01);
  adam.step(store);
  CHECK(w.at(0) == doctest::Approx(0.99));
  CHECK(w.at(1) == doctest::Approx(-1.99));
  CHECK(w.at(2) == doctest::Approx(0.49));
}

TEST_CASE("shape errors are reported") {
  auto a = ad::constant(2, 2, {1, 2, 3, 4});
  auto b = ad::constant(3, 1, {1, 2, 3});
  CHECK_THROWS(ad::add(a, b));
  CHECK_THROWS(ad::add_col(a, b));
  CHECK_THROWS(ad::slice_rows(a, 1, 2));
  CHECK_THROWS(ad::gather_row(a, 2));
  CHECK_THROWS(ad::backward(a));
}
