#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "anyres/data.hpp"
#include "anyres/inference.hpp"
#include "anyres/model.hpp"
#include "anyres/scale_meta.hpp"

namespace anyres {

// Top-1 accuracy grid: one row per parameterization, one column per test
// resolution, values in percent.
struct AccuracyMatrix {
  std::vector<std::string> row_labels;
  std::vector<int> test_resolutions;
  std::vector<std::vector<double>> values;

  double at(std::size_t row, std::size_t col) const { return values[row][col]; }
  std::size_t col_index(int t) const;
  std::size_t row_index(const std::string& label) const;
  double cell(const std::string& row, int t) const { return values[row_index(row)][col_index(t)]; }
};

double top1_accuracy_percent(const std::vector<int>& preds, const std::vector<int>& labels);

// Predictions persisted per (parameterization, test resolution) so reports
// never re-run inference.
struct PredictionStore {
  struct Entry {
    std::string row;
    int test_resolution = 0;
    std::vector<int> preds;
  };
  std::vector<int> labels;
  std::vector<Entry> entries;

  void save(const std::string& dir) const;
  static PredictionStore load(const std::string& dir);
  AccuracyMatrix to_matrix() const;
};

// Evaluates every (row, column) pair exactly once through the callable.
using CellEvaluator = std::function<std::vector<int>(const std::string& row, int t)>;
AccuracyMatrix run_matrix_eval(const std::vector<std::string>& rows,
                               const std::vector<int>& test_resolutions,
                               const std::vector<int>& labels, const CellEvaluator& evaluate,
                               PredictionStore* store = nullptr);

// The shaded-cell vector: for each column T, the value in row S(T).
std::vector<double> proxy_row_selection(const AccuracyMatrix& m, const std::vector<int>& scales);

std::string matrix_to_csv(const AccuracyMatrix& m);
AccuracyMatrix matrix_from_csv(const std::string& csv);

// Fraction of samples missed by A's top-1 but hit by B's.
double hit_miss_fraction(const std::vector<int>& preds_a, const std::vector<int>& preds_b,
                         const std::vector<int>& labels);

struct HitMissMatrix {
  std::vector<int> scales;
  std::vector<std::vector<double>> values;  // fractions in [0,1]
};

HitMissMatrix hit_miss_matrix(const std::vector<std::vector<int>>& preds_by_scale,
                              const std::vector<int>& scales, const std::vector<int>& labels);
std::string hit_miss_to_csv(const HitMissMatrix& m);

// Accuracy-vs-resolution curves (one per matrix row), values rounded to two
// decimals once so the CSV mirror and the SVG plot share identical numbers.
struct EnvelopeSeries {
  std::string name;
  std::vector<std::pair<int, double>> points;
};

std::vector<EnvelopeSeries> envelope_series(
    const std::vector<std::pair<std::string, AccuracyMatrix>>& named_matrices);
std::string envelope_csv(const std::vector<EnvelopeSeries>& series);
std::vector<EnvelopeSeries> envelope_from_csv(const std::string& csv);
// Self-contained SVG, x axis in log scale.
std::string envelope_svg(const std::vector<EnvelopeSeries>& series);

std::string ratios_to_csv(const std::vector<LayerRatio>& ratios);

// Diagnostic dump of per-site channel means: scale,site_index,param,channel_mean.
std::string bn_dump_csv(const Model<float>& model);
std::string bn_set_dump_csv(const BnSet<float>& set, const std::string& scale_label);

// Eval-protocol predictions of an assembled network on a dataset at T.
std::vector<int> predict_dataset(const BackboneSpec& spec, const MainNetworkParams<float>& params,
                                 const Dataset& data, int t, std::size_t batch_size = 64);

enum class MatrixMode { Proxy, Ideal, IdealNoCal, DataFree };

// Table-style grid evaluation. Proxy: row parameterization (kernels and BN
// from the row resolution) applied to every column. Ideal: column-encoding
// kernels with the row's gamma/beta and statistics recalibrated at the
// column resolution (IdealNoCal skips the recalibration). DataFree ignores
// rows and produces a single row from interpolated BN.
AccuracyMatrix model_matrix_eval(const Model<float>& model, const Dataset& eval_data,
                                 const std::vector<int>& test_resolutions, MatrixMode mode,
                                 const Dataset* calibration_data = nullptr,
                                 PredictionStore* store = nullptr, std::size_t batch_size = 64);

}  // namespace anyres
