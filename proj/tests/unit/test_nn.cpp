// Copyright 2026 The EchoQA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "echoqa/nn/checkpoint.hpp"
#include "echoqa/nn/layers.hpp"
#include "echoqa/nn/optim.hpp"
#include "support/gradient_cases.hpp"
#include "support/oracles.hpp"

using namespace echoqa;
using namespace echoqa::nn;

TEST_CASE("tensor rejects zero dimensions and mismatched data") {
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), ConfigurationError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ConfigurationError);
  Tensor<float> t({2, 3, 4, 5});
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t[t.size() - 1] == 7.0f);
  CHECK_THROWS_AS(t.reshaped({7}), ConfigurationError);
}

TEST_CASE("conv2d matches the direct-loop oracle exactly on integer data") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t ks = 1 + rng.below(3);
    const ConvGeometry g{1 + rng.below(3), rng.below(2)};
    auto x = oracle::random_integer_tensor<double>({1 + rng.below(2), 1 + rng.below(3), ks + rng.below(6), ks + rng.below(6)},
                                                   rng, -5, 5);
    auto w = oracle::random_integer_tensor<double>({1 + rng.below(4), x.dim(1), ks, ks}, rng, -3, 3);
    auto b = oracle::random_integer_tensor<double>({w.dim(0)}, rng, -2, 2);
    CHECK(kernels::conv2d(x, w, b, g) == oracle::conv2d(x, w, b, g.stride, g.pad));
  }
}

TEST_CASE("conv2d matches the oracle on real data within 1e-10") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = oracle::random_tensor<double>({2, 3, 9, 7}, rng);
    auto w = oracle::random_tensor<double>({4, 3, 3, 3}, rng);
    auto b = oracle::random_tensor<double>({4}, rng);
    const auto got = kernels::conv2d(x, w, b, {2, 1});
    const auto want = oracle::conv2d(x, w, b, 2, 1);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-10);
  }
}

TEST_CASE("conv2d accepts an unbatched input and checks shapes") {
  Tensor<float> x({1, 3, 3}, 1.0f), w({1, 1, 2, 2}, 1.0f), b({1}, 0.5f);
  auto y = kernels::conv2d(x, w, b, {});
  CHECK(y.shape() == Shape{1, 2, 2});
  CHECK(y[0] == 4.5f);
  CHECK_THROWS_AS(kernels::conv2d(x, Tensor<float>({1, 2, 2, 2}), b, {}), ConfigurationError);
  CHECK_THROWS_AS(kernels::conv2d(x, Tensor<float>({1, 1, 5, 5}), b, {}), ConfigurationError);
  CHECK_THROWS_AS(kernels::conv2d(x, w, b, {0, 0}), ConfigurationError);
}

TEST_CASE("maxpool matches the oracle and breaks ties on the first maximum") {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    auto x = oracle::random_integer_tensor<double>({1, 2, 2 + rng.below(6), 2 + rng.below(6)}, rng, 0, 3);
    CHECK(kernels::maxpool2d(x, 2, 2, nullptr) == oracle::maxpool(x, 2, 2));
  }
  Tensor<double> tie({1, 1, 2, 2}, 1.0);
  std::vector<std::size_t> argmax;
  kernels::maxpool2d(tie, 2, 2, &argmax);
  REQUIRE(argmax.size() == 1);
  CHECK(argmax[0] == 0);
}

TEST_CASE("dense layer worked example") {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 2}, {1, 1}));
  auto w = tape.constant(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  auto b = tape.constant(Tensor<float>({2}, {0.5f, -0.5f}));
  auto y = linear(x, w, b).value();
  CHECK(y[0] == 3.5f);
  CHECK(y[1] == 6.5f);
}

TEST_CASE("sigmoid is saturating and finite at extreme inputs") {
  CHECK(sigmoid_scalar(1000.0f) == 1.0f);
  CHECK(sigmoid_scalar(-1000.0f) == 0.0f);
  CHECK(sigmoid_scalar(0.0) == 0.5);
  Tape<float> tape;
  auto y = sigmoid(tape.constant(Tensor<float>({3}, {-1e4f, 0.0f, 1e4f}))).value();
  CHECK(y.all_finite());
}

TEST_CASE("batchnorm statistics lifecycle") {
  BatchNormLayer<double> bn("bn", 2);
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({2, 2}, {1.0, 10.0, 3.0, 20.0}));
  CHECK_THROWS_AS(bn.forward(x, Mode::infer), StateError);
  auto y = bn.forward(x, Mode::train).value();
  // Train mode normalises with the biased batch variance.
  CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.at(1, 1) == doctest::Approx(1.0).epsilon(1e-5));
  // The first update copies the batch mean and the unbiased variance.
  CHECK(bn.stats.running_mean[0] == doctest::Approx(2.0));
  CHECK(bn.stats.running_var[0] == doctest::Approx(2.0));
  CHECK(bn.stats.running_var[1] == doctest::Approx(50.0));
  bn.forward(tape.constant(Tensor<double>({2, 2}, {3.0, 10.0, 5.0, 20.0})), Mode::train);
  CHECK(bn.stats.running_mean[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 4.0));
  auto inf = bn.forward(tape.constant(Tensor<double>({1, 2}, {2.2, 15.0})), Mode::infer).value();
  CHECK(inf.at(0, 0) == doctest::Approx(0.0).epsilon(1e-4));
  CHECK_THROWS_AS(bn.forward(tape.constant(Tensor<double>({1, 2})), Mode::train), ConfigurationError);
}

TEST_CASE("lstm forget-gate bias starts at one and outputs are bounded") {
  Rng rng(3);
  LstmLayer<float> lstm("lstm", 3, 4, rng);
  for (std::size_t j = 0; j < 16; ++j) CHECK(lstm.bias.value[j] == (j >= 4 && j < 8 ? 1.0f : 0.0f));
  Tape<float> tape;
  std::vector<Var<float>> xs;
  for (int t = 0; t < 5; ++t) xs.push_back(tape.constant(oracle::random_tensor<float>({2, 3}, rng, -10, 10)));
  auto hs = lstm.forward(xs);
  REQUIRE(hs.size() == 5);
  for (const auto& h : hs)
    for (float v : h.value().data()) CHECK(std::abs(v) < 1.0f);
}

TEST_CASE("tape is single-use until reset") {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({1}, 2.0));
  auto y = mul(x, x);
  tape.backward(y);
  CHECK(tape.gradient(x)[0] == 4.0);
  CHECK_THROWS_AS(tape.backward(y), StateError);
  tape.reset();
  auto z = tape.variable(Tensor<double>({2}, 1.0));
  CHECK_THROWS_AS(tape.backward(z), ConfigurationError);
}

TEST_CASE("gradients match central differences") {
  SUBCASE("conv") { CHECK(gradcases::conv(21) <= 1e-4); }
  SUBCASE("maxpool") { CHECK(gradcases::maxpool(22) <= 1e-4); }
  SUBCASE("batchnorm") { CHECK(gradcases::batchnorm(23) <= 1e-4); }
  SUBCASE("dense") { CHECK(gradcases::dense(24) <= 1e-4); }
  SUBCASE("lstm") { CHECK(gradcases::lstm(25) <= 1e-4); }
  SUBCASE("sigmoid head") { CHECK(gradcases::sigmoid_head(26) <= 1e-4); }
  SUBCASE("elementwise") { CHECK(gradcases::elementwise(27) <= 1e-4); }
}

TEST_CASE("parameter gradients accumulate across backward passes") {
  Parameter<double> p("p", Tensor<double>({2}, {1.0, -2.0}));
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    auto v = tape.parameter(p);
    tape.backward(sum(mul(v, v)));
  }
  CHECK(p.grad[0] == 4.0);
  CHECK(p.grad[1] == -8.0);
  p.zero_grad();
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("learning-rate schedule decays by 0.1 every 15 epochs") {
  CHECK(lr_schedule(2e-4, 0) == 2e-4);
  CHECK(lr_schedule(2e-4, 14) == 2e-4);
  CHECK(lr_schedule(2e-4, 15) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(lr_schedule(2e-4, 15) / lr_schedule(2e-4, 14) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_schedule(2e-4, 30) == doctest::Approx(2e-6).epsilon(1e-12));
  CHECK_THROWS_AS(lr_schedule(1.0, 1, 0.1, 0), ConfigurationError);
}

TEST_CASE("adam matches the closed-form bias-corrected update") {
  Parameter<double> p("p", Tensor<double>({1}, 1.0));
  AdamConfig cfg;
  Adam<double> opt({&p}, cfg);
  const double g1 = 0.5, g2 = -0.25, lr = 1e-2;
  p.grad[0] = g1;
  opt.step(lr);
  // Step 1: mhat = g, vhat = g^2.
  const double after1 = 1.0 - lr * g1 / (std::abs(g1) + cfg.eps);
  CHECK(p.value[0] == doctest::Approx(after1).epsilon(1e-12));
  p.grad[0] = g2;
  opt.step(lr);
  const double m = cfg.beta1 * (1 - cfg.beta1) * g1 + (1 - cfg.beta1) * g2;
  const double v = cfg.beta2 * (1 - cfg.beta2) * g1 * g1 + (1 - cfg.beta2) * g2 * g2;
  const double mhat = m / (1 - cfg.beta1 * cfg.beta1), vhat = v / (1 - cfg.beta2 * cfg.beta2);
  CHECK(p.value[0] == doctest::Approx(after1 - lr * mhat / (std::sqrt(vhat) + cfg.eps)).epsilon(1e-12));
  CHECK(opt.state().step == 2);
}

TEST_CASE("adam with zero gradient from a fresh state leaves parameters unchanged") {
  Parameter<float> p("p", Tensor<float>({3}, {1.0f, 2.0f, 3.0f}));
  Adam<float> opt({&p}, {});
  opt.step(1e-3);
  CHECK(p.value == Tensor<float>({3}, {1.0f, 2.0f, 3.0f}));
}

TEST_CASE("one adam step lowers the loss of a single example") {
  Rng rng(5);
  DenseLayer<double> layer("d", 4, 1, rng);
  auto x = oracle::random_tensor<double>({1, 4}, rng);
  const Tensor<double> target({1, 1}, 0.9);
  auto loss_of = [&](bool backward) {
    Tape<double> tape;
    auto loss = l1_loss(sigmoid(layer.forward(tape.constant(x))), target);
    if (backward) tape.backward(loss);
    return loss.value()[0];
  };
  Adam<double> opt(layer.parameters(), {});
  const double before = loss_of(true);
  opt.step(1e-3);
  CHECK(loss_of(false) < before);
}

TEST_CASE("checkpoint round trip and format validation") {
  const auto dir = std::filesystem::temp_directory_path() / "echoqa_test_nn";
  std::filesystem::create_directories(dir);
  Checkpoint ck;
  ck.metadata["note"] = "x";
  ck.arrays.push_back({"a", {2, 2}, {1.0f, -2.5f, 3.25f, 1e-30f}});
  ck.arrays.push_back({"b", {1}, {42.0f}});
  save_checkpoint(dir / "m.ckpt", ck);
  auto back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.metadata["note"] == "x");
  CHECK(back.find("a").data == ck.arrays[0].data);
  CHECK(back.find("b").shape == Shape{1});
  CHECK_THROWS_AS(back.find("zzz"), IoError);

  // Bump the version in the header.
  std::ifstream in(dir / "m.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  const auto pos = bytes.find("\"version\":1");
  REQUIRE(pos != std::string::npos);
  bytes.replace(pos, 11, "\"version\":9");
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), IoError);

  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}
