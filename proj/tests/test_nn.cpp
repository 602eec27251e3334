#include "doctest.h"

#include "magtach/nn.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace magtach;
using namespace magtach::nn;

namespace {

Tensor random_tensor(std::size_t c, std::size_t l, std::mt19937_64 &rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(c, l);
  for (auto &x : t.data) {
    x = u(rng);
  }
  return t;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto &x : v) {
    x = u(rng);
  }
  return v;
}

double dot(const Tensor &a, const Tensor &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    s += a.data[i] * b.data[i];
  }
  return s;
}

double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-7});
}

// Max relative error between `analytic` and central differences of `loss` w.r.t. `x`.
double fd_check(std::vector<double> &x, std::span<const double> analytic,
                const std::function<double()> &loss, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

} // namespace

TEST_CASE("conv1d forward by hand") {
  Tensor in(1, 4);
  in.data = {1.0, 2.0, 3.0, 4.0};
  const std::vector<double> w = {1.0, 0.0, -1.0};
  const std::vector<double> b = {0.5};
  const auto out = conv1d(in, w, b, 1, 3);
  // same padding: out[t] = in[t-1] - in[t+1] + 0.5
  CHECK(out.data == std::vector<double>{0.5 - 2.0, 1.0 - 3.0 + 0.5, 2.0 - 4.0 + 0.5, 3.0 + 0.5});
}

TEST_CASE("layer gradients match finite differences") {
  std::mt19937_64 rng(123);

  SUBCASE("conv1d") {
    auto in = random_tensor(3, 11, rng);
    auto w = random_vec(2 * 3 * 5, rng);
    auto b = random_vec(2, rng);
    const auto r = random_tensor(2, 11, rng);
    auto loss = [&] { return dot(conv1d(in, w, b, 2, 5), r); };
    std::vector<double> gw(w.size(), 0.0);
    std::vector<double> gb(b.size(), 0.0);
    const auto gin = conv1d_backward(in, r, w, 5, gw, gb);
    CHECK(fd_check(in.data, gin.data, loss) < 1e-4);
    CHECK(fd_check(w, gw, loss) < 1e-4);
    CHECK(fd_check(b, gb, loss) < 1e-4);
  }

  SUBCASE("elu") {
    auto in = random_tensor(2, 9, rng, -2.0, 2.0);
    const auto r = random_tensor(2, 9, rng);
    auto loss = [&] { return dot(elu(in), r); };
    const auto g = elu_backward(elu(in), r);
    CHECK(fd_check(in.data, g.data, loss) < 1e-4);
  }

  SUBCASE("max pool") {
    auto in = random_tensor(2, 16, rng);
    const auto r = random_tensor(2, 8, rng);
    auto loss = [&] { return dot(max_pool(in, 2).out, r); };
    const auto pool = max_pool(in, 2);
    const auto g = max_pool_backward(in, pool, r);
    CHECK(fd_check(in.data, g.data, loss) < 1e-4);
  }

  SUBCASE("linear upsample") {
    auto in = random_tensor(2, 5, rng);
    const auto r = random_tensor(2, 10, rng);
    auto loss = [&] { return dot(upsample_linear(in, 10), r); };
    const auto g = upsample_linear_backward(r, 5);
    CHECK(fd_check(in.data, g.data, loss) < 1e-4);
  }

  SUBCASE("adaptive average pool") {
    for (std::size_t n : {1, 2, 4, 3}) {
      auto in = random_tensor(2, 13, rng);
      const auto r = random_tensor(2, n, rng);
      auto loss = [&] { return dot(adaptive_avg_pool(in, n), r); };
      const auto g = adaptive_avg_pool_backward(r, 13);
      CHECK(fd_check(in.data, g.data, loss) < 1e-4);
    }
  }

  SUBCASE("concat and split") {
    auto a = random_tensor(2, 6, rng);
    auto b = random_tensor(3, 6, rng);
    const auto r = random_tensor(5, 6, rng);
    auto loss = [&] {
      const Tensor *parts[] = {&a, &b};
      return dot(concat(parts), r);
    };
    const std::size_t counts[] = {2, 3};
    const auto g = split(r, counts);
    REQUIRE(g.size() == 2);
    CHECK(fd_check(a.data, g[0].data, loss) < 1e-4);
    CHECK(fd_check(b.data, g[1].data, loss) < 1e-4);
  }

  SUBCASE("sigmoid") {
    auto in = random_tensor(1, 12, rng, -4.0, 4.0);
    const auto r = random_tensor(1, 12, rng);
    auto loss = [&] { return dot(sigmoid(in), r); };
    const auto g = sigmoid_backward(sigmoid(in), r);
    CHECK(fd_check(in.data, g.data, loss) < 1e-4);
  }

  SUBCASE("batch norm, training mode") {
    std::vector<Tensor> batch = {random_tensor(2, 7, rng), random_tensor(2, 7, rng),
                                 random_tensor(2, 7, rng)};
    auto gamma = random_vec(2, rng);
    auto beta = random_vec(2, rng);
    std::vector<Tensor> r = {random_tensor(2, 7, rng), random_tensor(2, 7, rng),
                             random_tensor(2, 7, rng)};
    auto loss = [&] {
      BatchNormCache cache;
      const auto out = batch_norm_train(batch, gamma, beta, 1e-5, cache);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        s += dot(out[i], r[i]);
      }
      return s;
    };
    BatchNormCache cache;
    batch_norm_train(batch, gamma, beta, 1e-5, cache);
    std::vector<double> gg(2, 0.0);
    std::vector<double> gbeta(2, 0.0);
    const auto gin = batch_norm_backward(cache, r, gamma, 1e-5, gg, gbeta);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(fd_check(batch[i].data, gin[i].data, loss) < 1e-4);
    }
    CHECK(fd_check(gamma, gg, loss) < 1e-4);
    CHECK(fd_check(beta, gbeta, loss) < 1e-4);
  }
}

TEST_CASE("batch norm inference uses running statistics") {
  Tensor in(1, 3);
  in.data = {1.0, 2.0, 3.0};
  const std::vector<double> gamma = {2.0};
  const std::vector<double> beta = {0.5};
  const std::vector<double> mean = {1.0};
  const std::vector<double> var = {4.0};
  const auto out = batch_norm_infer(in, gamma, beta, mean, var, 0.0);
  CHECK(out.data[0] == doctest::Approx(0.5));
  CHECK(out.data[1] == doctest::Approx(1.5));
  CHECK(out.data[2] == doctest::Approx(2.5));
}

TEST_CASE("dice loss") {
  const std::vector<double> label = {1.0, 0.0, 1.0, 0.0};
  CHECK(dice_loss(label, label, 0.0) == doctest::Approx(0.0));
  CHECK(dice_loss(label, label, 1.0) == doctest::Approx(0.0));
  CHECK(dice_loss(std::vector<double>(4, 0.0), label, 1e-9) == doctest::Approx(1.0));
  CHECK(dice_loss(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0}, 0.0) ==
        doctest::Approx(0.5));

  SUBCASE("gradient on 4-bin cases") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> p(4);
      for (auto &x : p) {
        x = u(rng);
      }
      std::vector<double> y = {static_cast<double>(trial & 1), 1.0, 0.0,
                               static_cast<double>((trial >> 1) & 1)};
      const double smooth = trial % 3 == 0 ? 0.0 : 1.0;
      const auto g = dice_loss_grad(p, y, smooth);
      // dice is a ratio of linear forms, so a small step keeps truncation error tiny
      CHECK(fd_check(p, g, [&] { return dice_loss(p, y, smooth); }, 1e-5) < 1e-8);
    }
  }
}

TEST_CASE("sigmoid range") {
  Tensor in(1, 5);
  in.data = {-30.0, -1.0, 0.0, 1.0, 30.0};
  for (double v : sigmoid(in).data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(sigmoid(0.0) == 0.5);
}
