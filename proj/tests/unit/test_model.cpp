#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "camgauge/error.hpp"
#include "camgauge/model.hpp"
#include "camgauge/rng.hpp"

using namespace camgauge;

namespace {

SmallCnnConfig tiny_config(std::uint64_t seed = 3) {
  SmallCnnConfig c;
  c.input_size = 32;
  c.stem_width = 4;
  c.stage_widths = {4, 6, 8, 8};
  c.convs_per_stage = 2;
  c.norm_groups = 2;
  c.seed = seed;
  return c;
}

Image random_image(int c, int h, int w, std::uint64_t seed) {
  Image img(c, h, w);
  Rng rng(seed);
  for (double& v : img.pixels()) v = rng.uniform();
  return img;
}

double cross_entropy(BasicSmallCnn<double>& net, const Image& x, int label) {
  const auto logits = net.logits({&x, 1})[0];
  return -std::log(softmax(logits)[label]);
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("parameter count matches the analytic formula") {
    SmallCnnConfig c;
    const auto net = build_small_cnn(c);
    CHECK(net->parameter_count() == small_cnn_parameter_count(c));
    // stem 3->16, stages 16/32/64/128 with two convs each, per-channel scale and shift, 6-way head
    CHECK(small_cnn_parameter_count(c) == 297110);
    c.norm_groups = 0;
    CHECK(small_cnn_parameter_count(c) == 296614);
  }

  TEST_CASE("layer list runs shallow to deep with halving resolution") {
    const auto net = build_small_cnn(SmallCnnConfig{});
    const LayerList layers = net->layer_list();
    REQUIRE(layers.size() == 4);
    CHECK(layers[0].name == "stage1");
    CHECK(layers[0].height == 56);
    CHECK(layers[1].height == 28);
    CHECK(layers[2].height == 14);
    CHECK(layers[3].height == 7);
    CHECK(layers[3].channels == 128);
    CHECK(find_layer(layers, "stage3").index == 2);
    CHECK_THROWS_AS(find_layer(layers, "conv9"), LookupError);
  }

  TEST_CASE("invalid inputs are rejected") {
    auto net = build_small_cnn(tiny_config());
    const Image wrong(3, 16, 16);
    CHECK_THROWS_AS(net->logits({&wrong, 1}), InvalidInput);
    const Image ok = random_image(3, 32, 32, 1);
    CHECK_THROWS_AS(net->activations(ok, 7), LookupError);
    CHECK_THROWS_AS(net->activations_and_gradients(ok, 0, 6), InvalidInput);
    SmallCnnConfig bad = tiny_config();
    bad.input_size = 36;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = tiny_config();
    bad.stage_widths = {4, 6, 8, 8};
    bad.norm_groups = 4;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
  }

  TEST_CASE("probabilities sum to one") {
    auto net = build_small_cnn(tiny_config());
    const Image x = random_image(3, 32, 32, 2);
    const auto p = net->forward({&x, 1})[0];
    double s = 0.0;
    for (double v : p.probs) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("layer gradients match finite differences") {
    BasicSmallCnn<double> net(tiny_config(11));
    const Image x = random_image(3, 32, 32, 5);
    for (int layer = 0; layer < 4; ++layer) {
      const int cls = layer % 6;
      const ActivationsAndGradient ag = net.activations_and_gradients(x, layer, cls);
      const Tensor3 direct = net.activations(x, layer);
      CHECK(std::equal(direct.values().begin(), direct.values().end(), ag.activations.values().begin()));
      const auto base = net.logits_from_layer(ag.activations, layer);
      CHECK(base[cls] == doctest::Approx(net.logits({&x, 1})[0][cls]).epsilon(1e-12));
      Rng pick(layer);
      for (int t = 0; t < 12; ++t) {
        const std::size_t i = pick.below(ag.activations.values().size());
        if (ag.activations.values()[i] <= 1e-3) continue;  // stay off the ReLU kink
        const double h = 1e-6;
        Tensor3 plus = ag.activations, minus = ag.activations;
        plus.values()[i] += h;
        minus.values()[i] -= h;
        const double fd = (net.logits_from_layer(plus, layer)[cls] - net.logits_from_layer(minus, layer)[cls]) / (2 * h);
        CHECK(ag.gradient.values()[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
      }
    }
  }

  TEST_CASE("parameter gradients match finite differences") {
    BasicSmallCnn<double> net(tiny_config(21));
    const Image x = random_image(3, 32, 32, 9);
    const int label = 2;
    std::vector<double> grad(net.parameter_count(), 0.0);
    const auto px = x.pixels();
    const double loss = net.accumulate_gradient(px, label, 1.0, grad);
    CHECK(loss == doctest::Approx(cross_entropy(net, x, label)).epsilon(1e-12));

    auto params = net.parameters();
    Rng pick(4);
    std::vector<std::size_t> probe;
    for (const auto& c : net.convs()) {
      probe.push_back(c.weight_offset + pick.below(static_cast<std::uint64_t>(c.out_ch) * c.in_ch * 9));
      probe.push_back(c.bias_offset + pick.below(c.out_ch));
      probe.push_back(c.gamma_offset + pick.below(c.out_ch));
    }
    probe.push_back(net.parameter_count() - 1);  // head bias
    probe.push_back(net.parameter_count() - 7);  // head weight
    for (std::size_t i : probe) {
      const double h = 1e-6;
      const double saved = params[i];
      params[i] = saved + h;
      const double up = cross_entropy(net, x, label);
      params[i] = saved - h;
      const double down = cross_entropy(net, x, label);
      params[i] = saved;
      CHECK(grad[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4).scale(1e-7));
    }
  }

  TEST_CASE("checkpoints round-trip bit-exactly") {
    auto net = build_small_cnn(tiny_config(8));
    const auto dir = std::filesystem::temp_directory_path() / "camgauge_test_ckpt";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    save_checkpoint(*net, {"a", "b", "c", "d", "e", "f"}, dir / "model.bin");
    CHECK(std::filesystem::exists(dir / "model.json"));
    CheckpointMeta meta;
    auto loaded = load_checkpoint(resolve_checkpoint_path(dir), &meta);
    CHECK(meta.class_names.size() == 6);
    CHECK(meta.config.input_size == 32);
    REQUIRE(loaded->parameter_count() == net->parameter_count());
    CHECK(std::equal(net->parameters().begin(), net->parameters().end(), loaded->parameters().begin()));
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("initialization is seeded") {
    auto a = build_small_cnn(tiny_config(1));
    auto b = build_small_cnn(tiny_config(1));
    auto c = build_small_cnn(tiny_config(2));
    CHECK(std::equal(a->parameters().begin(), a->parameters().end(), b->parameters().begin()));
    CHECK_FALSE(std::equal(a->parameters().begin(), a->parameters().end(), c->parameters().begin()));
  }
}
