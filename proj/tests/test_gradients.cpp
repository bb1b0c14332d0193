// Reverse-mode gradients of every op against central differences.

#include <gtest/gtest.h>

#include "avsal/gradcheck.hpp"

using namespace avsal;
using TD = Tensor<double>;
using Leaves = std::vector<std::pair<std::string, TD>>;

namespace {

TD rnd(Shape s, std::uint64_t seed, double bound = 1.0) {
  Rng rng(seed);
  return rng.uniform_tensor<double>(std::move(s), bound);
}

// Values bounded away from zero so that kinks stay outside the stencil.
TD rnd_nonzero(Shape s, std::uint64_t seed) {
  auto t = rnd(std::move(s), seed);
  for (auto& v : t.mutable_data()) v = v < 0 ? v - 0.1 : v + 0.1;
  return t;
}

void expect_grad_ok(const std::string& name, Leaves leaves, const std::function<TD()>& f,
                    GradCheckOptions opt = {}) {
  const auto r = check_gradients(name, std::move(leaves), f, opt);
  EXPECT_TRUE(r.passed) << name << " max rel error " << r.max_rel_error << " at " << r.worst;
  EXPECT_GT(r.entries_checked, 0u);
}

}  // namespace

TEST(Gradients, BroadcastArithmetic) {
  auto a = rnd({2, 3, 4}, 1), b = rnd({1, 3, 1}, 2), c = rnd_nonzero({4}, 3);
  expect_grad_ok("arith", {{"a", a}, {"b", b}, {"c", c}}, [&] {
    return projected_loss(div(sub(a * b, scale(a, 0.5)), c) + add_scalar(b, 2.0), 10);
  });
}

TEST(Gradients, Activations) {
  auto x = rnd_nonzero({3, 5}, 4);
  for (auto act : {Activation::kSigmoid, Activation::kRelu, Activation::kGelu}) {
    expect_grad_ok("act", {{"x", x}}, [&] { return projected_loss(activate(x, act), 11); });
  }
  auto p = add_scalar(rnd({6}, 5, 0.5), 1.0);
  expect_grad_ok("exp_log", {{"p", p}}, [&] { return projected_loss(log(exp(p) + p), 12); });
}

TEST(Gradients, ShapeOps) {
  auto x = rnd({2, 3, 4}, 6), y = rnd({2, 2, 4}, 7);
  expect_grad_ok("shape", {{"x", x}, {"y", y}}, [&] {
    auto z = concat<double>({x, y}, 1);
    auto p = permute(reshape(z, {2, 5, 2, 2}), {3, 0, 2, 1});
    return projected_loss(narrow(p, 3, 1, 3), 13);
  });
  expect_grad_ok("reduce", {{"x", x}}, [&] {
    return projected_loss(sum(x, {0, 2}, true) + mean(x, {0, 2}, true), 14) + sum(x);
  });
  auto v = rnd({2, 3, 2, 3, 4}, 8);
  expect_grad_ok("gap", {{"v", v}}, [&] { return projected_loss(global_avg_pool(v), 15); });
}

TEST(Gradients, ChannelShiftBothBoundaries) {
  auto x = rnd({1, 5, 2, 3, 4}, 9);
  for (auto bd : {ShiftBoundary::kCyclic, ShiftBoundary::kZero}) {
    expect_grad_ok("shift", {{"x", x}}, [&] {
      return projected_loss(channel_group_shift(channel_group_shift(x, 4, {-1, 0, 1}, bd), 3,
                                                {1, 0, -1}, bd),
                            16);
    });
  }
}

TEST(Gradients, Conv3dStridedPadded) {
  auto x = rnd({2, 2, 3, 5, 6}, 20), w = rnd({3, 2, 2, 3, 3}, 21), b = rnd({3}, 22);
  expect_grad_ok("conv3d", {{"x", x}, {"w", w}, {"b", b}}, [&] {
    return projected_loss(conv3d(x, w, b, {1, 2, 2}, {1, 1, 1}), 17);
  });
}

TEST(Gradients, TrilinearResize) {
  auto x = rnd({1, 2, 2, 3, 3}, 23);
  expect_grad_ok("upsample", {{"x", x}},
                 [&] { return projected_loss(trilinear_upsample(x, {2, 2, 4}), 18); });
  expect_grad_ok("resize", {{"x", x}},
                 [&] { return projected_loss(resize_trilinear(x, {3, 5, 2}), 19); });
}

TEST(Gradients, Normalization) {
  auto x = rnd({2, 4, 2, 2, 3}, 24), g = rnd({4}, 25), b = rnd({4}, 26);
  expect_grad_ok("layer_norm", {{"x", x}, {"g", g}, {"b", b}},
                 [&] { return projected_loss(layer_norm(x, 1, 1, g, b), 20); });
  auto g2 = rnd({4, 2}, 27), b2 = rnd({4, 2}, 28);
  expect_grad_ok("layer_norm_range", {{"x", x}, {"g", g2}, {"b", b2}},
                 [&] { return projected_loss(layer_norm(x, 1, 2, g2, b2), 21); });
  BatchNormState<double> st{std::vector<double>(4, 0.0), std::vector<double>(4, 1.0)};
  expect_grad_ok("batch_norm", {{"x", x}, {"g", g}, {"b", b}}, [&] {
    return projected_loss(batch_norm(x, g, b, st, true), 22);
  });
  expect_grad_ok("batch_norm_eval", {{"x", x}, {"g", g}, {"b", b}}, [&] {
    return projected_loss(batch_norm(x, g, b, st, false), 23);
  });
}

TEST(Gradients, LinearMatmulSoftmax) {
  auto x = rnd({2, 3, 4}, 30), w = rnd({5, 4}, 31), b = rnd({5}, 32);
  expect_grad_ok("linear", {{"x", x}, {"w", w}, {"b", b}},
                 [&] { return projected_loss(softmax(linear(x, w, b), 2), 24); });
  auto a = rnd({3, 4}, 33), c = rnd({4, 2}, 34);
  expect_grad_ok("matmul", {{"a", a}, {"c", c}},
                 [&] { return projected_loss(softmax(matmul(a, c), 0), 25); });
}

TEST(Gradients, DeformableConvIncludingOffsets) {
  auto x = rnd({1, 2, 2, 4, 5}, 40), w = rnd({2, 2, 1, 3, 3}, 41), b = rnd({2}, 42);
  auto off = rnd({1, 18, 2, 4, 5}, 43, 1.3);
  expect_grad_ok("deform", {{"x", x}, {"off", off}, {"w", w}, {"b", b}}, [&] {
    return projected_loss(deform_conv3d(x, off, w, b, {1, 1}, {1, 1}), 26);
  });
  auto off2 = rnd({1, 18, 2, 2, 3}, 44, 0.8);
  expect_grad_ok("deform_strided", {{"x", x}, {"off", off2}, {"w", w}}, [&] {
    return projected_loss(deform_conv3d(x, off2, w, TD(), {2, 2}, {1, 1}), 27);
  });
}

TEST(Gradients, CorruptedRuleIsDetected) {
  auto x = rnd({4}, 50);
  auto doubled_square = [&] {
    std::vector<double> out;
    for (double v : x.data()) out.push_back(v * v);
    return detail::make_result<double>(x.shape(), std::move(out), "bad_square", {&x},
                                       [xn = x.node()](const TensorNode<double>& o) {
                                         double* g = detail::grad_sink(xn);
                                         for (std::size_t i = 0; i < o.grad.size(); ++i)
                                           g[i] += o.grad[i] * 4.0 * xn->data[i];
                                       });
  };
  const auto r = check_gradients("bad", {{"x", x}}, [&] { return projected_loss(doubled_square(), 1); });
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.4);
}

TEST(Tape, BackwardSemantics) {
  reset_tape<double>();
  TD x = rnd({3}, 60);
  x.set_requires_grad(true);
  auto loss = sum(sigmoid(scale(x, 0.0)));
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.0);  // d/dx sigmoid(0*x) = 0
  EXPECT_THROW(backward(loss), TapeError);
  reset_tape<double>();

  TD z({2}, 0.0);
  z.set_requires_grad(true);
  auto s = sum(sigmoid(z));
  backward(s);
  EXPECT_EQ(z.grad(), (std::vector<double>{0.25, 0.25}));
  reset_tape<double>();

  TD y({2}, 1.0);
  y.set_requires_grad(true);
  EXPECT_THROW(backward(scale(y, 2.0)), TapeError);
  reset_tape<double>();
  {
    NoGradGuard<double> guard;
    (void)sum(y);
    EXPECT_EQ(GradTape<double>::active().size(), 0u);
  }
  auto q = sum(exp(y));
  ASSERT_EQ(GradTape<double>::active().size(), 2u);
  EXPECT_EQ(GradTape<double>::active().op_name(0), "exp");
  EXPECT_EQ(GradTape<double>::active().op_name(1), "sum");
  backward(q);
  EXPECT_NEAR(y.grad()[0], std::exp(1.0), 1e-15);
  reset_tape<double>();
}

TEST(Tape, NonFiniteForwardThrows) {
  TD x({1}, -1.0);
  EXPECT_THROW(log(x), NumericError);
}
