#include <doctest.h>

#include <cmath>

#include "anyres/inference.hpp"
#include "anyres/rng.hpp"

using namespace anyres;

namespace {

Tensor<float> random_images(std::size_t n, int size, Rng& rng) {
  Tensor<float> t({n, 3, static_cast<std::size_t>(size), static_cast<std::size_t>(size)});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

Model<float> desk_model(std::uint64_t seed = 3) {
  return make_model<float>(tiny_resnet({4, 8}, 1, 10), {32, 24, 16}, 0, false, seed);
}

}  // namespace

TEST_CASE("nearest resolution search with tie-break toward the smaller") {
  const std::vector<int> scales = {224, 192, 160, 128, 96};
  CHECK(nearest_resolution(208, scales) == 192);
  CHECK(nearest_resolution(176, scales) == 160);
  CHECK(nearest_resolution(144, scales) == 128);
  CHECK(nearest_resolution(112, scales) == 96);
  CHECK(nearest_resolution(216, scales) == 224);
  CHECK(nearest_resolution(200, scales) == 192);
  CHECK(nearest_resolution(192, scales) == 192);
  CHECK(nearest_resolution(2000, scales) == 224);
  CHECK(nearest_resolution(1, scales) == 96);
  CHECK_THROWS_AS(nearest_resolution(100, {}), std::invalid_argument);
}

TEST_CASE("nearest resolution is idempotent and stable") {
  const std::vector<int> scales = {224, 192, 160, 128, 96};
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const int t = rng.uniform_int(1, 300);
    const int s = nearest_resolution(t, scales);
    CHECK(nearest_resolution(s, scales) == s);
  }
}

TEST_CASE("flanking neighbors") {
  const std::vector<int> scales = {224, 192, 160, 128, 96};
  CHECK(neighbors(176, scales) == std::pair<int, int>{160, 192});
  CHECK(neighbors(104, scales) == std::pair<int, int>{96, 128});
  CHECK_THROWS_AS(neighbors(300, scales), std::range_error);
  CHECK_THROWS_AS(neighbors(50, scales), std::range_error);
  CHECK_THROWS_AS(neighbors(192, scales), std::range_error);
}

TEST_CASE("the three modes agree bitwise on training resolutions") {
  const Model<float> model = desk_model();
  SyntheticSpec sspec;
  sspec.num_classes = 10;
  sspec.samples_per_class = 4;
  sspec.base_resolution = 32;
  const Dataset calib = make_synthetic(sspec);
  Rng rng(5);
  for (const int t : model.resolutions) {
    const Tensor<float> inputs = random_images(32, t, rng);
    const Tensor<float> p = proxy_infer(model, inputs, t);
    const Tensor<float> d = datafree_infer(model, inputs, t);
    const Tensor<float> i = ideal_infer(model, inputs, t, &calib);
    CHECK(p.data == d.data);
    CHECK(p.data == i.data);
  }
}

TEST_CASE("proxy inference keeps the native input resolution") {
  const Model<float> model = desk_model();
  Rng rng(7);
  const Tensor<float> at28 = random_images(3, 28, rng);
  // S(28) ties between 24 and 32 and resolves to 24
  const Tensor<float> got = proxy_infer(model, at28, 28);
  const Tensor<float> manual =
      softmax_rows(forward_eval(model.backbone, model.parameterize_for(24), at28));
  CHECK(got.data == manual.data);
}

TEST_CASE("proxy outputs are independent of batching in eval mode") {
  const Model<float> model = desk_model();
  Rng rng(11);
  const Tensor<float> pair = random_images(2, 24, rng);
  const Tensor<float> batched = proxy_infer(model, pair, 24);
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor<float> single({1, 3, 24, 24});
    std::copy(pair.ptr() + i * 3 * 24 * 24, pair.ptr() + (i + 1) * 3 * 24 * 24, single.ptr());
    const Tensor<float> one = proxy_infer(model, single, 24);
    for (std::size_t c = 0; c < 10; ++c)
      CHECK(one.at2(0, c) == batched.at2(i, c));
  }
}

TEST_CASE("prediction distributions are normalized") {
  const Model<float> model = desk_model();
  Rng rng(13);
  const Tensor<float> probs = proxy_infer(model, random_images(5, 20, rng), 20);
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 10; ++c) {
      CHECK(probs.at2(i, c) >= 0.0f);
      sum += probs.at2(i, c);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("data-free parameterization interpolates and clamps") {
  Model<float> model = desk_model();
  Rng rng(17);
  for (auto& sp : model.bank.sets)
    for (auto& site : sp->sites) {
      for (auto& v : site.mean) v = static_cast<float>(rng.normal());
      for (auto& v : site.var) v = static_cast<float>(rng.uniform(0.2, 2.0));
    }

  SUBCASE("interior resolution blends the flanking sets") {
    const auto params = datafree_parameterize(model, 28);
    CHECK(params.encoding == doctest::Approx(model.encoder.encode(28)));
    const BnSet<float> manual = interpolate_bn(model.bank, 28);
    for (std::size_t s = 0; s < manual.sites.size(); ++s) {
      CHECK(params.bn->sites[s].mean == manual.sites[s].mean);
      CHECK(params.bn->sites[s].var == manual.sites[s].var);
    }
  }
  SUBCASE("extrapolated resolutions clamp to the nearest endpoint") {
    const auto above = datafree_parameterize(model, 48);
    CHECK(above.bn == model.bank.set_ptr(32));
    CHECK(above.encoding == doctest::Approx(model.encoder.encode(48)));
    const auto below = datafree_parameterize(model, 8);
    CHECK(below.bn == model.bank.set_ptr(16));
  }
  SUBCASE("training resolutions reuse the stored set") {
    const auto at24 = datafree_parameterize(model, 24);
    CHECK(at24.bn == model.bank.set_ptr(24));
  }
}

TEST_CASE("ideal inference calibrates statistics when off the training grid") {
  const Model<float> model = desk_model();
  SyntheticSpec sspec;
  sspec.num_classes = 10;
  sspec.samples_per_class = 3;
  sspec.base_resolution = 32;
  const Dataset calib = make_synthetic(sspec);

  const auto params = ideal_parameterize(model, 28, &calib);
  CHECK(params.bn_key == 24);  // gamma/beta source: S(28) = 24
  const BnSet<float>& stored = model.bank.set_for(24);
  bool stats_moved = false;
  for (std::size_t s = 0; s < stored.sites.size(); ++s) {
    CHECK(params.bn->sites[s].gamma == stored.sites[s].gamma);
    CHECK(params.bn->sites[s].beta == stored.sites[s].beta);
    if (params.bn->sites[s].mean != stored.sites[s].mean) stats_moved = true;
  }
  CHECK(stats_moved);
}

TEST_CASE("ideal inference without calibration data is a configuration error") {
  const Model<float> model = desk_model();
  Rng rng(19);
  const Tensor<float> at28 = random_images(2, 28, rng);
  CHECK_THROWS_AS(ideal_infer(model, at28, 28, nullptr), ConfigError);
  Dataset empty;
  CHECK_THROWS_AS(ideal_infer(model, at28, 28, &empty), ConfigError);
}

TEST_CASE("calibration cache makes repeated ideal calls identical and cheap") {
  const Model<float> model = desk_model();
  SyntheticSpec sspec;
  sspec.num_classes = 10;
  sspec.samples_per_class = 3;
  sspec.base_resolution = 32;
  const Dataset calib = make_synthetic(sspec);
  Rng rng(23);
  const Tensor<float> at28 = random_images(4, 28, rng);

  CalibrationCache<float> cache;
  cache.reset(0x1234);
  const Tensor<float> first = ideal_infer(model, at28, 28, &calib, &cache);
  CHECK(cache.by_resolution.count(28) == 1);
  const auto cached_set = cache.by_resolution.at(28);
  const Tensor<float> second = ideal_infer(model, at28, 28, &calib, &cache);
  CHECK(first.data == second.data);
  CHECK(cache.by_resolution.at(28) == cached_set);  // reused, not recomputed

  // a new model version invalidates the cache
  cache.reset(0x9999);
  CHECK(cache.by_resolution.empty());
}
