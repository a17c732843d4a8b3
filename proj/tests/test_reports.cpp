#include <doctest.h>

#include <filesystem>

#include "anyres/reports.hpp"
#include "anyres/rng.hpp"

using namespace anyres;
namespace fs = std::filesystem;

TEST_CASE("matrix evaluation touches every cell exactly once") {
  std::vector<int> labels(100);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);

  int calls = 0;
  const CellEvaluator constant_class = [&](const std::string&, int) {
    ++calls;
    return std::vector<int>(labels.size(), 4);  // always predicts class 4
  };
  const AccuracyMatrix m =
      run_matrix_eval({"32", "16"}, {32, 24, 16}, labels, constant_class);
  CHECK(calls == 6);
  REQUIRE(m.values.size() == 2);
  REQUIRE(m.values[0].size() == 3);
  for (const auto& row : m.values)
    for (const double v : row) CHECK(v == doctest::Approx(10.0));  // balanced 10-class set

  const std::string csv = matrix_to_csv(m);
  CHECK(csv.substr(0, 10) == "train\\test");
  int data_rows = 0;
  for (const char c : csv)
    if (c == '\n') ++data_rows;
  CHECK(data_rows == 3);  // header + 2 rows

  const AccuracyMatrix back = matrix_from_csv(csv);
  CHECK(back.row_labels == m.row_labels);
  CHECK(back.test_resolutions == m.test_resolutions);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(back.values[r][c] == doctest::Approx(m.values[r][c]).epsilon(1e-9));
}

TEST_CASE("empty evaluation sets are rejected") {
  const CellEvaluator nop = [](const std::string&, int) { return std::vector<int>{}; };
  CHECK_THROWS_AS(run_matrix_eval({"32"}, {32}, {}, nop), std::invalid_argument);
}

TEST_CASE("proxy row selection follows the nearest-resolution rule") {
  AccuracyMatrix m;
  m.row_labels = {"32", "24", "16"};
  m.test_resolutions = {32, 28, 24, 20, 16};
  m.values = {{91, 90, 89, 88, 87}, {81, 80, 79, 78, 77}, {71, 70, 69, 68, 67}};
  const auto shaded = proxy_row_selection(m, {32, 24, 16});
  // 28 ties toward 24, 20 ties toward 16
  CHECK(shaded == std::vector<double>{91, 80, 79, 68, 67});
}

TEST_CASE("hit-miss fractions") {
  const std::vector<int> labels = {0, 1, 2, 3};
  SUBCASE("identical predictions give zero") {
    const std::vector<int> p = {0, 1, 0, 3};
    CHECK(hit_miss_fraction(p, p, labels) == 0.0);
  }
  SUBCASE("disjoint correctness gives one") {
    const std::vector<int> wrong = {1, 2, 3, 0};
    const std::vector<int> right = {0, 1, 2, 3};
    CHECK(hit_miss_fraction(wrong, right, labels) == 1.0);
  }
  SUBCASE("length mismatch is rejected") {
    CHECK_THROWS_AS(hit_miss_fraction({0, 1}, {0, 1, 2, 3}, labels), std::invalid_argument);
  }
  SUBCASE("antisymmetric identity: hm(A,B) - hm(B,A) = acc(B) - acc(A)") {
    Rng rng(3);
    std::vector<int> big_labels(997), a(997), b(997);
    for (std::size_t i = 0; i < big_labels.size(); ++i) {
      big_labels[i] = rng.uniform_int(0, 4);
      a[i] = rng.uniform_int(0, 4);
      b[i] = rng.uniform_int(0, 4);
    }
    const double lhs = hit_miss_fraction(a, b, big_labels) - hit_miss_fraction(b, a, big_labels);
    const double rhs = (top1_accuracy_percent(b, big_labels) -
                        top1_accuracy_percent(a, big_labels)) / 100.0;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
  SUBCASE("matrix diagonal is zero") {
    const std::vector<std::vector<int>> preds = {{0, 1, 2, 3}, {1, 1, 2, 0}};
    const HitMissMatrix m = hit_miss_matrix(preds, {32, 16}, labels);
    CHECK(m.values[0][0] == 0.0);
    CHECK(m.values[1][1] == 0.0);
    CHECK(m.values[0][1] >= 0.0);
    const std::string csv = hit_miss_to_csv(m);
    CHECK(csv.substr(0, 8) == "miss\\hit");
  }
}

TEST_CASE("envelope series, CSV mirror and SVG") {
  AccuracyMatrix san;
  san.row_labels = {"32", "16"};
  san.test_resolutions = {32, 24, 16};
  san.values = {{92.349, 88.111, 70.0}, {80.0, 85.5, 84.666}};
  AccuracyMatrix base;
  base.row_labels = {"32"};
  base.test_resolutions = {32, 24, 16};
  base.values = {{90.0, 80.0, 55.5}};

  const auto series = envelope_series({{"san", san}, {"baseline32", base}});
  REQUIRE(series.size() == 3);  // one per matrix row
  CHECK(series[0].points.size() == 3);
  CHECK(series[2].name == "baseline32");

  // CSV re-parse reproduces the plotted (rounded) values exactly
  const std::string csv = envelope_csv(series);
  const auto parsed = envelope_from_csv(csv);
  REQUIRE(parsed.size() == series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    CHECK(parsed[i].name == series[i].name);
    CHECK(parsed[i].points == series[i].points);
  }

  const std::string svg = envelope_svg(series);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t polylines = 0, at = 0;
  while ((at = svg.find("<polyline", at)) != std::string::npos) {
    ++polylines;
    ++at;
  }
  CHECK(polylines == series.size());
  // self-contained: no external assets
  CHECK(svg.find("<image") == std::string::npos);
  CHECK(svg.find("url(") == std::string::npos);
  CHECK(svg.find("@import") == std::string::npos);
}

TEST_CASE("prediction store round trip and matrix reconstruction") {
  std::vector<int> labels(50);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 5);
  Rng rng(7);
  const CellEvaluator noisy = [&](const std::string&, int) {
    std::vector<int> preds(labels.size());
    for (auto& p : preds) p = rng.uniform_int(0, 4);
    return preds;
  };
  PredictionStore store;
  const AccuracyMatrix m = run_matrix_eval({"24", "12"}, {24, 18, 12}, labels, noisy, &store);

  const std::string dir = "/tmp/anyres_test_preds";
  fs::remove_all(dir);
  store.save(dir);
  const PredictionStore loaded = PredictionStore::load(dir);
  CHECK(loaded.labels == store.labels);
  REQUIRE(loaded.entries.size() == store.entries.size());
  for (std::size_t i = 0; i < loaded.entries.size(); ++i)
    CHECK(loaded.entries[i].preds == store.entries[i].preds);

  const AccuracyMatrix rebuilt = loaded.to_matrix();
  for (std::size_t r = 0; r < m.row_labels.size(); ++r)
    for (std::size_t c = 0; c < m.test_resolutions.size(); ++c)
      CHECK(rebuilt.cell(m.row_labels[r], m.test_resolutions[c]) ==
            doctest::Approx(m.values[r][c]));
  fs::remove_all(dir);
}

TEST_CASE("ratio CSV uses the inf sentinel") {
  std::vector<LayerRatio> ratios(2);
  ratios[0].layer_id = 0;
  ratios[0].ratio = 0.5;
  ratios[1].layer_id = 1;
  ratios[1].ratio = std::numeric_limits<double>::infinity();
  const std::string csv = ratios_to_csv(ratios);
  CHECK(csv.find("layer_id,ratio\n") == 0);
  CHECK(csv.find("0,0.5") != std::string::npos);
  CHECK(csv.find("1,inf") != std::string::npos);
}

TEST_CASE("bn dump covers every scale, site and parameter") {
  const Model<float> model =
      make_model<float>(tiny_resnet({4, 8}, 1, 2), {16, 12}, 0, false, 5);
  const std::string csv = bn_dump_csv(model);
  CHECK(csv.find("scale,site_index,param,channel_mean\n") == 0);
  std::size_t rows = 0;
  for (const char c : csv)
    if (c == '\n') ++rows;
  CHECK(rows == 1 + 2 * model.backbone.convs.size() * 4);
  CHECK(csv.find("gamma") != std::string::npos);
  CHECK(csv.find("sigma2") != std::string::npos);
}
