#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mlde/errors.hpp"
#include "mlde/layers.hpp"

namespace mlde {
namespace {

Tensor random_tensor(Shape4 shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

void randomize(Layer& layer, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-0.8f, 0.8f);
  layer.visit_parameters([&](Parameter& p) {
    for (auto& v : p.value.data()) v = u(rng);
  });
  std::uniform_real_distribution<float> var(0.5f, 1.5f);
  layer.visit_buffers([&](Parameter& p) {
    const bool is_var = p.name.find("running_var") != std::string::npos;
    for (auto& v : p.value.data()) v = is_var ? var(rng) : u(rng);
  });
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

struct FdOptions {
  float step = 1e-2f;
  double tolerance = 1e-3;
  std::size_t max_coords = 40;  // per tensor, evenly spaced
};

// Loss <g, layer(x)>. Checks the input gradient and every parameter gradient
// against central differences.
void check_layer_gradients(Layer& layer, Tensor x, std::mt19937_64& rng, FdOptions opt = {}) {
  const Tensor y = layer.forward(x, true);
  const Tensor g = random_tensor(y.shape(), rng);
  const Tensor gx = layer.backward(g, {true, true});
  ASSERT_EQ(gx.shape(), x.shape());

  const auto loss = [&](const Tensor& input) { return dot(g, layer.forward(input, false)); };
  const auto check = [&](std::span<float> values, std::span<const float> analytic, const std::string& what,
                         const std::function<double()>& eval) {
    const std::size_t stride = std::max<std::size_t>(1, values.size() / opt.max_coords);
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const float saved = values[i];
      values[i] = saved + opt.step;
      const double up = eval();
      values[i] = saved - opt.step;
      const double down = eval();
      values[i] = saved;
      const double fd = (up - down) / (2.0 * opt.step);
      EXPECT_NEAR(analytic[i], fd, opt.tolerance * (1.0 + std::abs(fd))) << what << "[" << i << "]";
    }
  };

  check(x.data(), gx.data(), "input", [&] { return loss(x); });
  std::vector<Parameter*> params;
  layer.visit_parameters([&](Parameter& p) { params.push_back(&p); });
  for (Parameter* p : params) {
    const std::vector<float> grad(p->grad.data().begin(), p->grad.data().end());
    check(p->value.data(), grad, p->name, [&] { return loss(x); });
  }
}

TEST(Conv2dLayer, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  Conv2d conv("c", 3, 4, 3, 2, 1, true);
  randomize(conv, rng);
  check_layer_gradients(conv, random_tensor({2, 3, 7, 6}, rng), rng);
}

TEST(Conv2dLayer, RejectsChannelMismatch) {
  Conv2d conv("c", 3, 4, 3, 1, 1, false);
  EXPECT_THROW(conv.forward(Tensor({1, 2, 4, 4}), false), TrainingError);
}

TEST(BatchNormLayer, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  BatchNorm2d bn("bn", 3);
  randomize(bn, rng);
  check_layer_gradients(bn, random_tensor({2, 3, 4, 5}, rng), rng);
}

TEST(BatchNormLayer, UsesRunningStatistics) {
  BatchNorm2d bn("bn", 1, 0.0f);
  bn.visit_buffers([](Parameter& p) {
    p.value.fill(p.name.find("mean") != std::string::npos ? 2.0f : 4.0f);
  });
  Tensor x({1, 1, 1, 2});
  x[0] = 4.0f;
  x[1] = 0.0f;
  const Tensor y = bn.forward(x, false);
  EXPECT_FLOAT_EQ(y[0], 1.0f);
  EXPECT_FLOAT_EQ(y[1], -1.0f);
}

TEST(ReluLayer, GradientsAwayFromTheKink) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({1, 2, 5, 5}, rng);
  for (auto& v : x.data()) v = v < 0 ? v - 0.1f : v + 0.1f;
  ReLU relu;
  check_layer_gradients(relu, x, rng);
}

TEST(MaxPoolLayer, GradientsWithDistinctValues) {
  std::mt19937_64 rng(4);
  Tensor x({1, 2, 7, 7});
  std::vector<int> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.05f * static_cast<float>(order[i]);
  MaxPool2d pool(3, 2, 1);
  check_layer_gradients(pool, x, rng);
}

TEST(MaxPoolLayer, PicksWindowMaximum) {
  Tensor x({1, 1, 2, 2});
  x[0] = 1;
  x[1] = 5;
  x[2] = 3;
  x[3] = 2;
  MaxPool2d pool(2, 2, 0);
  EXPECT_EQ(pool.forward(x, false)[0], 5.0f);
}

TEST(BottleneckLayer, ProjectionShortcutGradients) {
  std::mt19937_64 rng(5);
  Bottleneck block("b", 4, 2, 6, 2);
  randomize(block, rng);
  check_layer_gradients(block, random_tensor({1, 4, 6, 6}, rng), rng, {1e-3f, 2e-2, 12});
}

TEST(BottleneckLayer, IdentityShortcutGradients) {
  std::mt19937_64 rng(6);
  Bottleneck block("b", 6, 3, 6, 1);
  randomize(block, rng);
  check_layer_gradients(block, random_tensor({1, 6, 5, 5}, rng), rng, {1e-3f, 2e-2, 12});
}

TEST(SequentialLayer, CopyIsDeep) {
  Sequential a;
  a.add(std::make_unique<Conv2d>("c", 1, 1, 1, 1, 0, false));
  Sequential b = a;
  b.visit_parameters([](Parameter& p) { p.value.fill(3.0f); });
  a.visit_parameters([](Parameter& p) { EXPECT_EQ(p.value[0], 0.0f); });
}

TEST(BackwardMode, FrozenLayerLeavesGradUntouched) {
  std::mt19937_64 rng(7);
  Conv2d conv("c", 2, 2, 3, 1, 1, true);
  randomize(conv, rng);
  conv.weight().grad.fill(-7.0f);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  const Tensor y = conv.forward(x, true);
  const Tensor gx = conv.backward(random_tensor(y.shape(), rng), {false, false});
  EXPECT_TRUE(gx.empty());
  for (float v : conv.weight().grad.data()) EXPECT_EQ(v, -7.0f);
}

}  // namespace
}  // namespace mlde
