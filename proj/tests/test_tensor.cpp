#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dhmamba/oracles.hpp"
#include "dhmamba/tensor.hpp"

using namespace dhm;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, bool rg = true) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), rg);
}

// scalar probe with fixed random weights so gradients are nondegenerate
Tensor probe(const Tensor& t, uint64_t seed = 17) {
  Rng rng(seed, "probe");
  std::vector<double> w(static_cast<size_t>(t.size()));
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum_all(mul(t, Tensor::from(t.shape(), std::move(w))));
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Tensor a = Tensor::from({2, 2}, {1.0, -2.0, 3.0, 0.5});
  Tensor b = Tensor::from({2, 2}, {0.5, 4.0, -1.0, 2.0});
  CHECK(add(a, b).data()[1] == doctest::Approx(2.0));
  CHECK(sub(a, b).data()[0] == doctest::Approx(0.5));
  CHECK(mul(a, b).data()[2] == doctest::Approx(-3.0));
  CHECK(scale(a, 3.0).data()[3] == doctest::Approx(1.5));
  CHECK(neg(a).data()[0] == doctest::Approx(-1.0));
  CHECK(abs(a).data()[1] == doctest::Approx(2.0));
  CHECK(mean_all(a).item() == doctest::Approx(0.625));
  CHECK(sum_all(a).item() == doctest::Approx(2.5));
}

TEST_CASE("activation closed forms") {
  Tensor x = Tensor::from({4}, {0.0, 1.0, -1.0, 3.0});
  Tensor g = activation(Act::gelu, x);
  CHECK(g.data()[0] == doctest::Approx(0.0));
  CHECK(g.data()[1] == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))));
  Tensor s = activation(Act::sigmoid, x);
  CHECK(s.data()[0] == doctest::Approx(0.5));
  Tensor sp = activation(Act::softplus, x);
  CHECK(sp.data()[1] == doctest::Approx(std::log(1.0 + std::exp(1.0))));
  Tensor si = activation(Act::silu, x);
  CHECK(si.data()[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("finite differences: elementwise and activations") {
  Rng rng(5);
  Tensor a = rand_tensor({2, 3, 4}, rng);
  Tensor b = rand_tensor({2, 3, 4}, rng);
  CHECK(oracle::fd_max_rel_err([&] { return probe(add(a, b)); }, {a, b}) < 1e-4);
  CHECK(oracle::fd_max_rel_err([&] { return probe(sub(a, b)); }, {a, b}) < 1e-4);
  CHECK(oracle::fd_max_rel_err([&] { return probe(mul(a, b)); }, {a, b}) < 1e-4);
  CHECK(oracle::fd_max_rel_err([&] { return probe(scale(a, -1.7)); }, {a}) < 1e-4);
  for (Act act : {Act::gelu, Act::silu, Act::sigmoid, Act::softplus})
    CHECK(oracle::fd_max_rel_err([&] { return probe(activation(act, a)); }, {a}) < 1e-4);
  // |.| is nondifferentiable at 0; inputs here are generic normals
  CHECK(oracle::fd_max_rel_err([&] { return sum_all(abs(a)); }, {a}) < 1e-4);
}

TEST_CASE("conv2d matches the direct convolution sum") {
  Rng rng(11);
  for (auto [stride, padding, groups] : std::vector<std::array<int, 3>>{
           {1, 0, 1}, {1, 1, 1}, {2, 1, 1}, {1, 1, 2}, {2, 0, 4}}) {
    const int b = 2, cin = 4, cout = 4, h = 6, w = 5, k = 3;
    Tensor x = rand_tensor({b, cin, h, w}, rng, false);
    Tensor wt = rand_tensor({cout, cin / groups, k, k}, rng, false);
    Tensor bias = rand_tensor({cout}, rng, false);
    Tensor y = conv2d(x, wt, bias, stride, padding, groups);
    const auto ref = oracle::conv2d_reference(
        {x.data(), x.data() + x.size()}, b, cin, h, w, {wt.data(), wt.data() + wt.size()}, cout,
        k, k, {bias.data(), bias.data() + bias.size()}, stride, padding, groups);
    REQUIRE(y.size() == static_cast<int64_t>(ref.size()));
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d without bias and 1x1 conv") {
  Rng rng(13);
  Tensor x = rand_tensor({1, 3, 4, 4}, rng, false);
  Tensor wt = rand_tensor({2, 3, 1, 1}, rng, false);
  Tensor y = conv2d(x, wt, Tensor(), 1, 0);
  // manual check at one position
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) acc += x.data()[c * 16 + 5] * wt.data()[c];
  CHECK(y.data()[5] == doctest::Approx(acc));
}

TEST_CASE("finite differences: conv2d, linear_seq, layer_norm") {
  Rng rng(7);
  Tensor x = rand_tensor({2, 4, 5, 5}, rng);
  Tensor wt = rand_tensor({3, 4, 3, 3}, rng);
  Tensor bias = rand_tensor({3}, rng);
  CHECK(oracle::fd_max_rel_err([&] { return probe(conv2d(x, wt, bias, 1, 1)); }, {x, wt, bias}) <
        1e-4);
  Tensor dw = rand_tensor({4, 1, 2, 2}, rng);
  CHECK(oracle::fd_max_rel_err([&] { return probe(conv2d(x, dw, Tensor(), 2, 0, 4)); }, {x, dw}) <
        1e-4);

  Tensor xs = rand_tensor({2, 4, 6}, rng);
  Tensor wl = rand_tensor({3, 4}, rng);
  Tensor bl = rand_tensor({3}, rng);
  CHECK(oracle::fd_max_rel_err([&] { return probe(linear_seq(xs, wl, bl)); }, {xs, wl, bl}) <
        1e-4);

  Tensor g = rand_tensor({4}, rng);
  Tensor be = rand_tensor({4}, rng);
  CHECK(oracle::fd_max_rel_err([&] { return probe(layer_norm(x, g, be)); }, {x, g, be}) < 1e-4);
}

TEST_CASE("layer_norm normalizes the channel axis") {
  Rng rng(3);
  Tensor x = rand_tensor({1, 5, 2, 2}, rng, false);
  Tensor g = Tensor::full({5}, 1.0);
  Tensor b = Tensor::zeros({5});
  Tensor y = layer_norm(x, g, b);
  for (int p = 0; p < 4; ++p) {
    double mean = 0.0, var = 0.0;
    for (int c = 0; c < 5; ++c) mean += y.data()[c * 4 + p];
    mean /= 5.0;
    for (int c = 0; c < 5; ++c) {
      const double d = y.data()[c * 4 + p] - mean;
      var += d * d;
    }
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var / 5.0 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("pixel shuffle round trip and layout") {
  Rng rng(19);
  Tensor x = rand_tensor({2, 8, 3, 3}, rng, false);
  Tensor y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{2, 2, 6, 6});
  Tensor back = pixel_unshuffle(y, 2);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(back.data()[i] == x.data()[i]);
  // channel c*r^2 block maps to interleaved spatial offsets
  CHECK(y.data()[0] == x.data()[0]);            // (0,0) <- channel 0
  CHECK(y.data()[1] == x.data()[1 * 9]);        // (0,1) <- channel 1
  CHECK(y.data()[6] == x.data()[2 * 9]);        // (1,0) <- channel 2
}

TEST_CASE("upsample shapes and values") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor n = upsample(x, 2, UpsampleMode::nearest);
  CHECK(n.shape() == Shape{1, 1, 4, 4});
  CHECK(n.data()[0] == 1.0);
  CHECK(n.data()[1] == 1.0);
  CHECK(n.data()[2] == 2.0);
  CHECK(n.data()[15] == 4.0);
  Tensor bl = upsample(x, 2, UpsampleMode::bilinear);
  CHECK(bl.shape() == Shape{1, 1, 4, 4});
  // interior interpolation stays within the input range
  for (int64_t i = 0; i < bl.size(); ++i) {
    CHECK(bl.data()[i] >= 1.0);
    CHECK(bl.data()[i] <= 4.0);
  }
}

TEST_CASE("finite differences: layout ops") {
  Rng rng(23);
  Tensor x = rand_tensor({1, 4, 4, 4}, rng);
  CHECK(oracle::fd_max_rel_err([&] { return probe(pixel_shuffle(x, 2)); }, {x}) < 1e-4);
  CHECK(oracle::fd_max_rel_err([&] { return probe(upsample(x, 2, UpsampleMode::nearest)); }, {x}) <
        1e-4);
  CHECK(oracle::fd_max_rel_err([&] { return probe(upsample(x, 2, UpsampleMode::bilinear)); },
                               {x}) < 1e-4);
  CHECK(oracle::fd_max_rel_err([&] { return probe(pad_replicate_br(x, 1, 2)); }, {x}) < 1e-4);
  CHECK(oracle::fd_max_rel_err([&] { return probe(crop_br(x, 3, 2)); }, {x}) < 1e-4);
  Tensor y = rand_tensor({1, 2, 4, 4}, rng);
  CHECK(oracle::fd_max_rel_err([&] { return probe(concat_channels(x, y)); }, {x, y}) < 1e-4);
  CHECK(oracle::fd_max_rel_err([&] { return probe(slice_channels(x, 1, 3)); }, {x}) < 1e-4);
}

TEST_CASE("pad and crop are mutually inverse on the padded region") {
  Rng rng(29);
  Tensor x = rand_tensor({1, 2, 3, 5}, rng, false);
  Tensor p = pad_replicate_br(x, 2, 1);
  CHECK(p.shape() == Shape{1, 2, 5, 6});
  // replicated rows copy the last row
  CHECK(p.data()[4 * 6 + 2] == x.data()[2 * 5 + 2]);
  Tensor c = crop_br(p, 3, 5);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(c.data()[i] == x.data()[i]);
}

TEST_CASE("gather/scatter positions round trip") {
  Rng rng(31);
  Tensor x = rand_tensor({2, 3, 3, 4}, rng);
  std::vector<int> order(12);
  for (int i = 0; i < 12; ++i) order[static_cast<size_t>(i)] = (i * 5) % 12;  // a permutation
  Tensor seq = gather_positions(x, order);
  CHECK(seq.shape() == Shape{2, 3, 12});
  Tensor back = scatter_positions(seq, order, 3, 4);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(back.data()[i] == x.data()[i]);
  CHECK(oracle::fd_max_rel_err([&] { return probe(gather_positions(x, order)); }, {x}) < 1e-4);
}

TEST_CASE("channel-structured ops") {
  Rng rng(37);
  Tensor x = rand_tensor({2, 3, 2, 2}, rng);
  Tensor s = rand_tensor({3}, rng);
  Tensor y = scale_channels(x, s);
  CHECK(y.data()[4] == doctest::Approx(x.data()[4] * s.data()[1]));
  CHECK(oracle::fd_max_rel_err([&] { return probe(scale_channels(x, s)); }, {x, s}) < 1e-4);

  Tensor gate = rand_tensor({2, 3, 1, 1}, rng);
  CHECK(oracle::fd_max_rel_err([&] { return probe(mul_channel_gate(x, gate)); }, {x, gate}) <
        1e-4);

  Tensor g = global_avg_pool(x);
  CHECK(g.shape() == Shape{2, 3, 1, 1});
  double mean = 0.0;
  for (int p = 0; p < 4; ++p) mean += x.data()[p];
  CHECK(g.data()[0] == doctest::Approx(mean / 4.0));
  CHECK(oracle::fd_max_rel_err([&] { return probe(global_avg_pool(x)); }, {x}) < 1e-4);
}

TEST_CASE("channel attention: zero weights halve the features") {
  Rng rng(41);
  Tensor f = rand_tensor({1, 4, 3, 3}, rng, false);
  ChannelAttention p;
  p.ratio = 4;
  p.w1 = Tensor::zeros({1, 4, 1, 1}, true);
  p.b1 = Tensor::zeros({1}, true);
  p.w2 = Tensor::zeros({4, 1, 1, 1}, true);
  p.b2 = Tensor::zeros({4}, true);
  Tensor y = channel_attention(f, p);
  for (int64_t i = 0; i < f.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(0.5 * f.data()[i]));
}

TEST_CASE("finite differences: channel attention") {
  Rng rng(43);
  Tensor f = rand_tensor({1, 4, 3, 3}, rng);
  ChannelAttention p = ChannelAttention::init(4, 4, rng);
  CHECK(oracle::fd_max_rel_err([&] { return probe(channel_attention(f, p)); },
                               {f, p.w1, p.b1, p.w2, p.b2}) < 1e-4);
}

TEST_CASE("l1 loss value and gradient") {
  Tensor a = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0}, true);
  Tensor b = Tensor::from({2, 2}, {0.0, 4.0, 3.5, 4.0});
  Tensor l = l1_loss(a, b);
  CHECK(l.item() == doctest::Approx((1.0 + 2.0 + 0.5 + 0.0) / 4.0));
  l.backward();
  CHECK(a.grad()[0] == doctest::Approx(0.25));
  CHECK(a.grad()[1] == doctest::Approx(-0.25));
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Tensor x = Tensor::from({1}, {3.0}, true);
  Tensor y = mul(x, x);           // x^2
  Tensor z = add(y, mul(y, x));   // x^2 + x^3
  sum_all(z).backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0 * 3.0 + 3.0 * 9.0));
}

TEST_CASE("no-grad guard suppresses taping") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  NoGradGuard ng;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("deterministic initialization under a fixed seed") {
  Rng r1(99, "weights"), r2(99, "weights");
  Tensor a = Tensor::uniform_fan_in({3, 3}, 3, r1);
  Tensor b = Tensor::uniform_fan_in({3, 3}, 3, r2);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
  const double bound = 1.0 / std::sqrt(3.0);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i]) <= bound);
}
