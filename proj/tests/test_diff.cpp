#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "support.hpp"

namespace pmoe {
namespace {

using testing::check_tensor_gradients;
using testing::finite_difference_error;
using testing::random_tensor;

Var weighted_sum(Tape& tape, Var x, Rng& rng) {
  return sum(x * tape.constant(random_tensor(x.shape(), rng)));
}

TEST(Forward, IdentityLayer) {
  Layer layer{Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor(Shape{2}), Activation::identity};
  Mlp mlp("id", std::vector<Layer>{layer});
  const Tensor out = infer(mlp, Tensor::matrix(1, 2, {1, 2}));
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[1], 2.0);
}

TEST(Forward, ReluLayer) {
  Layer layer{Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor(Shape{2}), Activation::relu};
  Mlp mlp("relu", std::vector<Layer>{layer});
  const Tensor out = infer(mlp, Tensor::matrix(1, 2, {-1, 3}));
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 3.0);
}

TEST(Forward, MatchesHandRolledMatmul) {
  Rng rng(11);
  Mlp mlp("net", {5, 7, 3}, {Activation::tanh, Activation::identity}, rng);
  const Tensor x = random_tensor({4, 5}, rng);
  const Tensor out = infer(mlp, x);
  const auto& L = mlp.layers();
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<double> h(7);
    for (std::size_t j = 0; j < 7; ++j) {
      double acc = L[0].bias[j];
      for (std::size_t i = 0; i < 5; ++i) acc += x(r, i) * L[0].weight(i, j);
      h[j] = std::tanh(acc);
    }
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = L[1].bias[j];
      for (std::size_t i = 0; i < 7; ++i) acc += h[i] * L[1].weight(i, j);
      EXPECT_NEAR(out(r, j), acc, 1e-12);
    }
  }
}

TEST(Forward, ShapeMismatchIsConfigError) {
  Rng rng(1);
  Mlp mlp("net", {3, 2}, {Activation::relu}, rng);
  EXPECT_THROW(infer(mlp, Tensor::matrix(1, 2, {1, 2})), ConfigError);
  EXPECT_THROW(Mlp("bad", {3, 2}, {Activation::relu, Activation::relu}, rng), ConfigError);
}

TEST(Forward, Deterministic) {
  Rng rng(5);
  Mlp mlp("net", {4, 16, 16, 2}, {Activation::relu, Activation::relu, Activation::identity}, rng);
  const Tensor x = random_tensor({8, 4}, rng);
  EXPECT_EQ(infer(mlp, x), infer(mlp, x));
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(3.0));
  const Gradients g = tape.backward(square(x));
  EXPECT_DOUBLE_EQ(g.of(x).item(), 6.0);
}

TEST(Backward, SoftmaxCrossEntropyUniformLogits) {
  Tape tape;
  const Var logits = tape.variable(Tensor::matrix(1, 4, {0.3, 0.3, 0.3, 0.3}));
  const Gradients g = tape.backward(softmax_cross_entropy(logits, {0}));
  const Tensor d = g.of(logits);
  EXPECT_NEAR(d[0], -0.75, 1e-15);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(d[i], 0.25, 1e-15);
}

TEST(Backward, NonScalarLossIsUsageError) {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), UsageError);
}

TEST(Backward, SecondSweepIsUsageError) {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(2.0));
  const Var y = square(x);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), UsageError);
}

TEST(Backward, DetachBlocksGradient) {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(2.0));
  const Var y = square(x) + detach(square(x)) * x;
  const Gradients g = tape.backward(y);
  // d/dx [x^2 + c*x] with c = 4
  EXPECT_DOUBLE_EQ(g.of(x).item(), 8.0);
  EXPECT_FALSE(tape.depends_on(detach(x), x));
}

TEST(Backward, RandomMlpMatchesFiniteDifferences) {
  Rng rng(21);
  Mlp mlp("net", {4, 8, 6, 3}, {Activation::tanh, Activation::relu, Activation::softmax}, rng);
  const Tensor x = random_tensor({5, 4}, rng);
  const Tensor c = random_tensor({5, 3}, rng);
  auto loss = [&](Tape& tape, const BoundMlp& b) { return sum(mlp.forward(b, tape.constant(x)) * tape.constant(c)); };
  Tape tape;
  const BoundMlp b = mlp.bind(tape);
  const Gradients g = tape.backward(loss(tape, b));
  auto value = [&] {
    Tape t;
    return loss(t, mlp.bind(t)).value().item();
  };
  EXPECT_LT(finite_difference_error(mlp.parameters(), value, Mlp::gradients(g, b), 1e-5), 1e-4);
}

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<Var(Tape&, const std::vector<Var>&, Rng&)> build;
  double lo = -1.0, hi = 1.0;
};

std::vector<OpCase> op_cases() {
  using V = const std::vector<Var>&;
  return {
      {"add", {{3, 4}, {3, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, x[0] + x[1], r); }},
      {"add_column", {{3, 4}, {3, 1}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, x[0] + x[1], r); }},
      {"sub_scalar", {{3, 4}, {}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, x[0] - x[1], r); }},
      {"mul", {{3, 4}, {3, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, x[0] * x[1], r); }},
      {"mul_column", {{3, 4}, {3, 1}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, x[0] * x[1], r); }},
      {"minimum", {{3, 4}, {3, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, minimum(x[0], x[1]), r); }},
      {"scale", {{2, 3}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, scale(x[0], -2.5) + 1.5, r); }},
      {"relu", {{4, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, relu(x[0]), r); }},
      {"tanh", {{4, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, tanh(x[0]), r); }},
      {"exp", {{4, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, exp(x[0]), r); }},
      {"log", {{4, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, log(x[0]), r); }, 0.2, 2.0},
      {"sqrt", {{4, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, sqrt(x[0]), r); }, 0.2, 2.0},
      {"square", {{4, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, square(x[0]), r); }},
      {"softplus", {{4, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, softplus(scale(x[0], 5.0)), r); }},
      {"clamp", {{4, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, clamp(x[0], -0.5, 0.5), r); }},
      {"matmul", {{3, 5}, {5, 2}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, matmul(x[0], x[1]), r); }},
      {"add_bias", {{3, 5}, {5}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, add_bias(x[0], x[1]), r); }},
      {"mean", {{3, 5}}, [](Tape&, V x, Rng&) { return mean(square(x[0])); }},
      {"sum_rows", {{3, 5}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, sum_rows(x[0]), r); }},
      {"logsumexp_rows", {{3, 5}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, logsumexp_rows(scale(x[0], 3.0)), r); }},
      {"softmax_rows", {{3, 5}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, softmax_rows(scale(x[0], 3.0)), r); }},
      {"log_softmax_rows", {{3, 5}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, log_softmax_rows(scale(x[0], 3.0)), r); }},
      {"concat_cols", {{3, 2}, {3, 3}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, concat_cols({x[0], x[1], x[0]}), r); }},
      {"slice_cols", {{3, 6}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, slice_cols(x[0], 2, 3), r); }},
      {"gather_cols", {{3, 4}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, gather_cols(x[0], {3, 0, 1}), r); }},
      {"sum_blocks", {{3, 6}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, sum_blocks(x[0], 2), r); }},
      {"sum_across_blocks", {{3, 6}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, sum_across_blocks(x[0], 2), r); }},
      {"repeat_blocks", {{3, 3}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, repeat_blocks(x[0], 2), r); }},
      {"tile_cols", {{3, 2}}, [](Tape& t, V x, Rng& r) { return weighted_sum(t, tile_cols(x[0], 3), r); }},
      {"softmax_cross_entropy", {{3, 4}}, [](Tape&, V x, Rng&) { return softmax_cross_entropy(scale(x[0], 2.0), {1, 3, 0}); }},
  };
}

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferencesAtTenPoints) {
  const OpCase& c = GetParam();
  Rng rng(std::hash<std::string>{}(c.name));
  for (int point = 0; point < 10; ++point) {
    std::vector<Tensor> inputs;
    for (const Shape& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.lo, c.hi));
    const std::uint64_t weights_seed = rng.index(1u << 30);
    const double err = check_tensor_gradients(
        inputs,
        [&](Tape& tape, const std::vector<Var>& vars) {
          Rng w(weights_seed);
          return c.build(tape, vars, w);
        },
        1e-5);
    EXPECT_LT(err, 1e-4) << c.name << " point " << point;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(op_cases()),
                         [](const ::testing::TestParamInfo<OpCase>& info) { return info.param.name; });

TEST(Softmax, RowsAreNonNegativeAndSumToOne) {
  Rng rng(3);
  Tape tape;
  const Var p = softmax_rows(tape.constant(random_tensor({50, 7}, rng, -30, 30)));
  for (std::size_t r = 0; r < 50; ++r) {
    double s = 0.0;
    for (double v : p.value().row(r)) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, IncompatibleShapesAreConfigErrors) {
  Tape tape;
  const Var a = tape.constant(Tensor(Shape{2, 3}));
  const Var b = tape.constant(Tensor(Shape{3, 2}));
  EXPECT_THROW(a + b, ConfigError);
  EXPECT_THROW(matmul(a, a), ConfigError);
}

TEST(Adam, ZeroGradientKeepsParamsAndDecaysMoments) {
  Tensor x = Tensor::vector({1.0, -2.0});
  std::vector<ParamRef> p{{"x", &x}};
  AdamState s(0.1);
  adam_step(p, std::vector<Tensor>{Tensor::vector({1.0, 1.0})}, s);
  const double m = s.first_moment[0][0], v = s.second_moment[0][0];
  adam_step(p, std::vector<Tensor>{Tensor::vector({0.0, 0.0})}, s);
  EXPECT_DOUBLE_EQ(s.first_moment[0][0], 0.9 * m);
  EXPECT_DOUBLE_EQ(s.second_moment[0][0], 0.999 * v);
  EXPECT_EQ(s.step, 2u);

  Tensor y = Tensor::vector({3.0});
  std::vector<ParamRef> q{{"y", &y}};
  AdamState fresh;
  adam_step(q, std::vector<Tensor>{Tensor::vector({0.0})}, fresh);
  EXPECT_EQ(y[0], 3.0);
}

TEST(Adam, FirstStepIsSignTimesLearningRate) {
  Tensor x = Tensor::vector({0.5, 0.5, 0.5});
  std::vector<ParamRef> p{{"x", &x}};
  AdamState s(0.01);
  adam_step(p, std::vector<Tensor>{Tensor::vector({3.0, -0.2, 1e-3})}, s);
  EXPECT_NEAR(x[0], 0.5 - 0.01, 1e-8);
  EXPECT_NEAR(x[1], 0.5 + 0.01, 1e-8);
  EXPECT_NEAR(x[2], 0.5 - 0.01, 1e-7);
}

TEST(Adam, QuadraticMatchesIndependentRecurrence) {
  Tensor x = Tensor::scalar(1.0);
  std::vector<ParamRef> p{{"x", &x}};
  AdamState s(0.1);
  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    Tape tape;
    const Var xv = tape.variable(x);
    const Gradients g = tape.backward(square(xv));
    adam_step(p, std::vector<Tensor>{g.of(xv)}, s);
    const double grad = 2.0 * ref;
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(x.item(), ref, 1e-12);
  EXPECT_LT(std::abs(x.item()), 0.1);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Tensor x = Tensor::vector({1.0});
  std::vector<ParamRef> p{{"trunk.0.weight", &x}};
  AdamState s;
  try {
    adam_step(p, std::vector<Tensor>{Tensor::vector({NAN})}, s);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("trunk.0.weight"), std::string::npos);
  }
  EXPECT_EQ(x[0], 1.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(8);
  Mlp mlp("net", {3, 5, 2}, {Activation::relu, Activation::identity}, rng);
  mlp.layers()[0].weight[0] = 0.1 + 1e-17;
  mlp.layers()[0].weight[1] = -0.0;
  mlp.layers()[0].weight[2] = 5e-324;
  Checkpoint c;
  c.metadata = "k = 3\nname = net\n";
  c.add(mlp.parameters());
  const std::string path = (std::filesystem::temp_directory_path() / "pmoe_ckpt_roundtrip.bin").string();
  c.save(path);
  const Checkpoint back = Checkpoint::load(path);
  EXPECT_EQ(back.metadata, c.metadata);
  EXPECT_EQ(back.version, Checkpoint::kFormatVersion);
  ASSERT_EQ(back.entries.size(), c.entries.size());
  for (std::size_t i = 0; i < c.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].name, c.entries[i].name);
    const Tensor& a = c.entries[i].tensor;
    const Tensor& b = back.entries[i].tensor;
    ASSERT_EQ(a.shape(), b.shape());
    EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)), 0);
  }
  Rng other(99);
  Mlp restored("net", {3, 5, 2}, {Activation::relu, Activation::identity}, other);
  back.restore(restored.parameters());
  EXPECT_EQ(restored.layers()[0].weight, mlp.layers()[0].weight);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsShapeMismatchAndGarbage) {
  Rng rng(1);
  Mlp mlp("net", {3, 2}, {Activation::identity}, rng);
  Checkpoint c;
  c.add(mlp.parameters());
  Mlp wider("net", {4, 2}, {Activation::identity}, rng);
  EXPECT_THROW(c.restore(wider.parameters()), UsageError);
  const std::string path = (std::filesystem::temp_directory_path() / "pmoe_ckpt_garbage.bin").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint";
  }
  EXPECT_ANY_THROW(Checkpoint::load(path));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pmoe
