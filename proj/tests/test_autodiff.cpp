#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "contok/autodiff.hpp"
#include "contok/gradcheck.hpp"
#include "contok/gradcheck_suite.hpp"

using namespace contok;
using namespace contok::ad;

namespace {

Var<double> random_var(const Shape& shape, std::uint64_t seed, bool grad = true) {
  Rng rng(seed);
  Array<double> a(shape);
  for (auto& v : a.data()) v = rng.normal();
  return Var<double>(std::move(a), grad);
}

}  // namespace

TEST(Autodiff, MatmulMatchesLoops) {
  auto a = random_var({2, 3, 4}, 1), b = random_var({2, 4, 5}, 2);
  const auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t l = 0; l < 4; ++l) s += a.value()[(k * 3 + i) * 4 + l] * b.value()[(k * 4 + l) * 5 + j];
        EXPECT_NEAR(c.value()[(k * 3 + i) * 5 + j], s, 1e-12);
      }
    }
  }
}

TEST(Autodiff, MatmulRejectsMismatch) {
  EXPECT_THROW(matmul(random_var({2, 3}, 1), random_var({4, 2}, 2)), DimensionError);
}

TEST(Autodiff, BroadcastOnlyOverTrailingSuffix) {
  auto a = random_var({2, 3}, 1);
  EXPECT_NO_THROW(add(a, random_var({3}, 2)));
  EXPECT_THROW(add(a, random_var({2}, 3)), DimensionError);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  const auto p = softmax(random_var({4, 6}, 3));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) s += p.value()[r * 6 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autodiff, LayerNormMatchesFormula) {
  auto x = random_var({2, 5}, 4);
  Var<double> g(Array<double>(Shape{5}, 2.0)), b(Array<double>(Shape{5}, 0.5));
  const auto y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < 2; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 5; ++j) mean += x.value()[r * 5 + j] / 5;
    for (std::size_t j = 0; j < 5; ++j) var += std::pow(x.value()[r * 5 + j] - mean, 2) / 5;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(y.value()[r * 5 + j], 2.0 * (x.value()[r * 5 + j] - mean) / std::sqrt(var + 1e-5) + 0.5, 1e-12);
    }
  }
}

TEST(Autodiff, CrossEntropyMatchesLogSumExp) {
  Var<double> logits(Array<double>(Shape{2, 3}, std::vector<double>{1, 2, 3, 0, 0, 0}), true);
  const auto loss = cross_entropy(logits, {2, 0});
  const double l0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  const double l1 = std::log(3.0);
  EXPECT_NEAR(loss.item(), (l0 + l1) / 2, 1e-12);
}

TEST(Autodiff, CrossEntropyAllIgnoredIsZeroWithoutGradient) {
  auto logits = random_var({3, 4}, 5);
  Tape<double> tape;
  const auto loss = cross_entropy(logits, {-1, -1, -1});
  EXPECT_EQ(loss.item(), 0.0);
  tape.backward(loss);
  EXPECT_FALSE(logits.has_grad());
}

TEST(Autodiff, EmbeddingNegativeIdGivesZeroRow) {
  auto table = random_var({4, 2}, 6);
  const auto e = embedding_lookup(table, {3, -1}, {2});
  EXPECT_EQ(e.value()[0], table.value()[6]);
  EXPECT_EQ(e.value()[2], 0.0);
  EXPECT_EQ(e.value()[3], 0.0);
  EXPECT_THROW(embedding_lookup(table, {4}, {1}), DimensionError);
}

TEST(Autodiff, NoTapeMeansNoGraph) {
  auto a = random_var({2, 2}, 7);
  const auto y = sum(mul(a, a));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, GradientOfSquareIsTwiceInput) {
  auto a = random_var({3}, 8);
  {
    Tape<double> tape;
    tape.backward(sum(mul(a, a)));
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.grad()[i], 2 * a.value()[i], 1e-14);
}

TEST(Autodiff, GradientsAccumulateAcrossBackwardCalls) {
  auto a = random_var({3}, 9);
  for (int k = 0; k < 2; ++k) {
    Tape<double> tape;
    tape.backward(sum(a));
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.grad()[i], 2.0);
}

TEST(Autodiff, FrozenLeafGetsNoGradientButPassesItThrough) {
  auto x = random_var({2, 3}, 10);
  auto w = random_var({3, 3}, 11, false);
  {
    Tape<double> tape;
    tape.backward(sum(matmul(x, w)));
  }
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(w.has_grad());
}

TEST(Autodiff, BackwardRootMustBeScalar) {
  auto a = random_var({2}, 12);
  Tape<double> tape;
  EXPECT_THROW(tape.backward(mul(a, a)), DimensionError);
}

TEST(GradCheck, PassesOnCompositeExpression) {
  auto a = random_var({3, 4}, 13), b = random_var({4, 2}, 14), g = random_var({2}, 15), bias = random_var({2}, 16);
  auto f = [=] { return mean(silu(layer_norm(matmul(a, b), g, bias))); };
  const auto rep = check_gradients<double>(f, {{"a", a}, {"b", b}, {"g", g}, {"bias", bias}});
  EXPECT_LT(rep.max_rel_error, 1e-6);
  EXPECT_EQ(rep.entries.size(), 4u);
}

TEST(GradCheck, DetectsAWrongBackward) {
  auto a = random_var({3}, 17);
  // y = sum(a^3) with a deliberately wrong derivative 2a.
  auto f = [=] {
    Array<double> v = Array<double>::scalar(0.0);
    for (double x : a.value().data()) v[0] += x * x * x;
    return ad::detail::make_result(std::move(v), ad::detail::tracking<double>({&a}), [a](const Node<double>& self) {
      auto g = a.node()->grad_sink();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad->item() * 2 * a.value()[i];
    });
  };
  const auto rep = check_gradients<double>(f, {{"a", a}});
  EXPECT_GT(rep.max_rel_error, 1e-2);
  EXPECT_EQ(rep.worst, "a");
}

TEST(GradCheck, SubsetProbingIsSeeded) {
  auto a = random_var({50}, 18);
  auto f = [=] { return sum(mul(a, a)); };
  GradCheckOptions opt;
  opt.max_entries = 5;
  const auto r1 = check_gradients<double>(f, {{"a", a}}, opt);
  EXPECT_EQ(r1.entries[0].checked, 5u);
  EXPECT_LT(r1.max_rel_error, 1e-8);
}

TEST(GradCheck, NonFiniteDerivativeNamesParameter) {
  Var<double> a(Array<double>(Shape{1}, std::vector<double>{0.0}), true);
  auto f = [=] {
    const double x = a.value()[0];
    return Var<double>(Array<double>::scalar(x == 0.0 ? 0.0 : std::numeric_limits<double>::infinity()));
  };
  try {
    check_gradients<double>(f, {{"weight", a}});
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("weight"), std::string::npos);
  }
}

TEST(GradCheck, FullSuiteBelowTolerance) {
  const auto results = run_gradcheck_suite(3);
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) EXPECT_LT(r.max_rel_error, 1e-4) << r.name << " worst " << r.worst;
}
