#include <doctest.h>

#include <cmath>

#include "anyres/rng.hpp"
#include "anyres/scale_meta.hpp"

using namespace anyres;

namespace {

ConvLayerSpec tiny_layer(int c_out, int c_in, int k, int groups = 1) {
  ConvLayerSpec l;
  l.c_out = c_out;
  l.c_in = c_in;
  l.kernel = k;
  l.groups = groups;
  return l;
}

template <typename T>
double rel_l2(const Tensor<T>& got, const Tensor<T>& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double d = static_cast<double>(got.data[i]) - static_cast<double>(want.data[i]);
    num += d * d;
    den += static_cast<double>(want.data[i]) * static_cast<double>(want.data[i]);
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace

TEST_CASE("scale encoding formula") {
  ScaleEncoder enc;  // coefficient 0.1, R 32
  CHECK(enc.encode(224) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(enc.encode(96) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(enc.encode(32) == doctest::Approx(0.1).epsilon(1e-12));

  ScaleEncoder desk;
  desk.downsample_rate = 4;
  CHECK(desk.encode(32) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(desk.encode(16) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("scale encoding rejects non-positive resolutions") {
  ScaleEncoder enc;
  CHECK_THROWS_AS(enc.encode(0), std::invalid_argument);
  CHECK_THROWS_AS(enc.encode(-5), std::invalid_argument);
}

TEST_CASE("scale encoding is strictly increasing") {
  ScaleEncoder enc;
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const int a = rng.uniform_int(1, 4000);
    const int b = a + rng.uniform_int(1, 100);
    CHECK(enc.encode(a) < enc.encode(b));
  }
}

TEST_CASE("linear kernel generation evaluates eps*w + b") {
  MetaLearnerParams<float> p;
  p.w = {1.0f, 2.0f};
  p.b = {0.5f, -0.5f};
  const auto layer = tiny_layer(2, 1, 1);
  const Tensor<float> k = generate_kernel(p, 0.7, layer);
  REQUIRE(k.size() == 2);
  CHECK(k.data[0] == doctest::Approx(1.2f));
  CHECK(k.data[1] == doctest::Approx(0.9f));
  CHECK(k.shape == std::vector<std::size_t>{2, 1, 1, 1});
}

TEST_CASE("zero weights give the bias exactly") {
  MetaLearnerParams<float> p;
  p.w = {0.0f, 0.0f, 0.0f, 0.0f};
  p.b = {0.25f, -1.0f, 3.5f, 0.0f};
  const auto layer = tiny_layer(1, 1, 2);
  for (const double eps : {0.1, 0.5, 0.9}) {
    const Tensor<float> k = generate_kernel(p, eps, layer);
    for (std::size_t i = 0; i < 4; ++i) CHECK(k.data[i] == p.b[i]);
  }
}

TEST_CASE("kernel generation rejects a mismatched layer spec") {
  MetaLearnerParams<float> p;
  p.w = {1.0f, 2.0f};
  p.b = {0.0f, 0.0f};
  CHECK_THROWS_AS(generate_kernel(p, 0.5, tiny_layer(2, 2, 3)), ConfigError);
}

TEST_CASE("linear mode interpolation identity over random triples") {
  const BackboneSpec spec = tiny_resnet({4, 8}, 1, 10);
  const auto params = init_meta_params<float>(spec, 0, 42);
  Rng rng(3);
  for (const auto& p : params) {
    const auto& layer = spec.convs[p.layer_id];
    for (int trial = 0; trial < 100; ++trial) {
      const double e1 = rng.uniform(0.05, 1.0);
      const double e2 = rng.uniform(0.05, 1.0);
      const double a = rng.uniform();
      const Tensor<float> k1 = generate_kernel(p, e1, layer);
      const Tensor<float> k2 = generate_kernel(p, e2, layer);
      const Tensor<float> km = generate_kernel(p, a * e1 + (1.0 - a) * e2, layer);
      Tensor<float> blend(k1.shape);
      for (std::size_t i = 0; i < blend.size(); ++i)
        blend.data[i] = static_cast<float>(a) * k1.data[i] +
                        static_cast<float>(1.0 - a) * k2.data[i];
      CHECK(rel_l2(km, blend) <= 1e-6);
    }
  }
}

TEST_CASE("kernel differences recover (e1-e2)*w") {
  const BackboneSpec spec = tiny_resnet({4, 8}, 1, 10);
  ScaleEncoder enc;  // encodings of distinct training resolutions sit >= 0.1 apart
  const std::vector<int> scales = {224, 192, 160, 128, 96};

  const auto params = init_meta_params<float>(spec, 0, 11);
  for (const auto& p : params) {
    const auto& layer = spec.convs[p.layer_id];
    for (std::size_t i = 0; i < scales.size(); ++i)
      for (std::size_t j = i + 1; j < scales.size(); ++j) {
        const double e1 = enc.encode(scales[i]), e2 = enc.encode(scales[j]);
        const Tensor<float> k1 = generate_kernel(p, e1, layer);
        const Tensor<float> k2 = generate_kernel(p, e2, layer);
        Tensor<float> diff(k1.shape), want(k1.shape);
        for (std::size_t e = 0; e < diff.size(); ++e) {
          diff.data[e] = k1.data[e] - k2.data[e];
          want.data[e] = static_cast<float>(e1 - e2) * p.w[e];
        }
        CHECK(rel_l2(diff, want) <= 1e-6);
      }
  }

  // arbitrary encoding pairs, checked at double precision
  const auto dparams = init_meta_params<double>(spec, 0, 11);
  Rng rng(5);
  for (const auto& p : dparams) {
    const auto& layer = spec.convs[p.layer_id];
    const double e1 = rng.uniform(0.05, 1.0), e2 = rng.uniform(0.05, 1.0);
    const Tensor<double> k1 = generate_kernel(p, e1, layer);
    const Tensor<double> k2 = generate_kernel(p, e2, layer);
    Tensor<double> diff(k1.shape), want(k1.shape);
    for (std::size_t e = 0; e < diff.size(); ++e) {
      diff.data[e] = k1.data[e] - k2.data[e];
      want.data[e] = (e1 - e2) * p.w[e];
    }
    CHECK(rel_l2(diff, want) <= 1e-9);
  }
}

TEST_CASE("hidden-mode generation matches a direct MLP evaluation") {
  const auto layer = tiny_layer(2, 2, 1);  // D = 4
  MetaLearnerParams<double> p;
  p.hidden_units = 3;
  p.w1 = {0.5, -1.0, 2.0};
  p.b1 = {0.1, 0.4, -0.3};
  p.w2 = {0.2, -0.1, 0.3, 0.7, 1.0, 0.5, -0.2, 0.4, -0.6, 0.8, 0.9, -1.1};
  p.b2 = {0.05, -0.05, 0.15, 0.25};
  const double eps = 0.6;
  const Tensor<double> k = generate_kernel(p, eps, layer);
  for (std::size_t d = 0; d < 4; ++d) {
    double want = p.b2[d];
    for (std::size_t u = 0; u < 3; ++u) {
      const double h = std::max(0.0, eps * p.w1[u] + p.b1[u]);
      want += h * p.w2[u * 4 + d];
    }
    CHECK(k.data[d] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("meta init is deterministic and covers every conv layer") {
  const BackboneSpec spec = tiny_resnet({4, 8}, 1, 10);
  const auto a = init_meta_params<float>(spec, 0, 123);
  const auto b = init_meta_params<float>(spec, 0, 123);
  REQUIRE(a.size() == spec.convs.size());
  for (std::size_t l = 0; l < a.size(); ++l) {
    CHECK(a[l].w == b[l].w);
    CHECK(a[l].b == b[l].b);
    CHECK(a[l].kernel_elems() == spec.convs[l].kernel_elems());
  }

  BackboneSpec two = toy_backbone(3, 4);
  const auto params = init_meta_params<float>(two, 0, 9);
  REQUIRE(params.size() == 2);
  CHECK(params[0].kernel_elems() == two.convs[0].kernel_elems());
  CHECK(params[1].kernel_elems() == two.convs[1].kernel_elems());
}

TEST_CASE("hidden params present iff hidden units configured") {
  const BackboneSpec spec = toy_backbone(3, 4);
  const auto linear = init_meta_params<float>(spec, 0, 1);
  CHECK(linear[0].w1.empty());
  CHECK(linear[0].w2.empty());
  CHECK(!linear[0].w.empty());
  const auto hidden = init_meta_params<float>(spec, 8, 1);
  CHECK(hidden[0].w.empty());
  CHECK(hidden[0].w1.size() == 8);
  CHECK(hidden[0].w2.size() == 8 * spec.convs[0].kernel_elems());
}

TEST_CASE("generated kernels start near fan-in-scaled variance") {
  const BackboneSpec spec = tiny_resnet({8, 16}, 1, 10);
  for (const auto& layer : spec.convs) {
    const double ref =
        2.0 / (static_cast<double>(layer.c_in_per_group()) * layer.kernel * layer.kernel);
    double sum = 0.0, sumsq = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto params = init_meta_params<float>(spec, 0, seed);
      const Tensor<float> k = generate_kernel(params[layer.layer_id], 0.4, layer);
      for (const float v : k.data) {
        sum += v;
        sumsq += static_cast<double>(v) * v;
        ++count;
      }
    }
    const double mean = sum / count;
    const double var = sumsq / count - mean * mean;
    CHECK(var <= 4.0 * ref);
    CHECK(var >= ref / 4.0);
  }
}

TEST_CASE("weight/bias ratio report") {
  const BackboneSpec spec = toy_backbone(3, 4);
  auto params = init_meta_params<float>(spec, 0, 2);
  std::fill(params[0].w.begin(), params[0].w.end(), 1.0f);
  params[0].w[1] = -1.0f;  // mean|w| stays 1
  std::fill(params[0].b.begin(), params[0].b.end(), 2.0f);
  std::fill(params[1].b.begin(), params[1].b.end(), 0.0f);

  const auto ratios = weight_bias_ratios(params, spec);
  REQUIRE(ratios.size() == 2);
  CHECK(ratios[0].ratio == doctest::Approx(0.5));
  CHECK(std::isinf(ratios[1].ratio));
}

TEST_CASE("meta gradients match finite differences") {
  const auto layer = tiny_layer(2, 2, 1);
  Rng rng(77);
  for (const int hidden : {0, 3}) {
    MetaLearnerParams<double> p;
    p.hidden_units = hidden;
    const std::size_t d = layer.kernel_elems();
    if (hidden == 0) {
      p.w.resize(d);
      p.b.resize(d);
      for (auto& v : p.w) v = rng.normal();
      for (auto& v : p.b) v = rng.normal();
    } else {
      p.w1.resize(hidden);
      p.b1.resize(hidden);
      p.w2.resize(hidden * d);
      p.b2.resize(d);
      for (auto& v : p.w1) v = rng.normal();
      for (auto& v : p.b1) v = rng.normal();
      for (auto& v : p.w2) v = rng.normal();
      for (auto& v : p.b2) v = rng.normal();
    }
    // scalar loss: weighted sum of kernel entries
    Tensor<double> weights({2, 2, 1, 1});
    for (auto& v : weights.data) v = rng.normal();
    const double eps = 0.55;
    auto loss = [&](const MetaLearnerParams<double>& q) {
      const Tensor<double> k = generate_kernel(q, eps, layer);
      double s = 0.0;
      for (std::size_t i = 0; i < k.size(); ++i) s += weights.data[i] * k.data[i];
      return s;
    };
    MetaGrads<double> g = MetaGrads<double>::zeros_like(p);
    accumulate_meta_grads(p, eps, weights, g);

    auto check_param = [&](std::vector<double>& vec, const std::vector<double>& grad) {
      for (std::size_t i = 0; i < vec.size(); ++i) {
        const double h = 1e-6;
        const double orig = vec[i];
        vec[i] = orig + h;
        const double up = loss(p);
        vec[i] = orig - h;
        const double dn = loss(p);
        vec[i] = orig;
        const double fd = (up - dn) / (2 * h);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
      }
    };
    if (hidden == 0) {
      check_param(p.w, g.w);
      check_param(p.b, g.b);
    } else {
      check_param(p.w1, g.w1);
      check_param(p.b1, g.b1);
      check_param(p.w2, g.w2);
      check_param(p.b2, g.b2);
    }
  }
}
