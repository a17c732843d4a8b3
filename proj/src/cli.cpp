#include "anyres/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "anyres/checkpoint.hpp"
#include "anyres/config.hpp"
#include "anyres/inference.hpp"
#include "anyres/reports.hpp"
#include "anyres/training.hpp"

namespace fs = std::filesystem;

namespace anyres {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_file(const std::string& path, const std::string& content) {
  if (const fs::path dir = fs::path(path).parent_path(); !dir.empty())
    fs::create_directories(dir);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
}

// "desk" / "desk:train" / "desk:val" / "synthetic" / an image-folder path.
Dataset dataset_from_arg(const std::string& arg) {
  if (arg == "desk" || arg == "desk:val") return make_desk_dataset(DeskSpec{}, "val");
  if (arg == "desk:train") return make_desk_dataset(DeskSpec{}, "train");
  if (arg == "synthetic") return make_synthetic(SyntheticSpec{});
  return load_image_folder(arg);
}

std::vector<int> parse_resolution_list(const std::string& arg) {
  std::vector<int> out;
  std::stringstream ss(arg);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  if (out.empty()) throw UsageError("empty resolution list");
  return out;
}

int run_train(const std::string& config_path, const std::string& out_override,
              const std::string& log_override, int threads) {
  RunConfig cfg = load_run_config(config_path);
  if (!out_override.empty()) cfg.checkpoint_path = out_override;
  if (!log_override.empty()) cfg.log_path = log_override;
  if (threads > 0) cfg.train.threads = threads;

  auto [train_set, val_set] = make_datasets(cfg.data);
  std::cout << "dataset: " << train_set.size() << " train / " << val_set.size()
            << " val samples, " << train_set.num_classes << " classes\n";

  nlohmann::json echo;
  echo["train"] = training_to_json(cfg.train);
  auto save_hook = [&](const Model<float>& m, int epoch, bool final) {
    const std::string path =
        final ? cfg.checkpoint_path
              : cfg.checkpoint_path + ".epoch" + std::to_string(epoch);
    save_checkpoint(m, path, echo);
    std::cout << (final ? "saved checkpoint " : "saved interim checkpoint ") << path << '\n';
  };
  fit<float>(train_set, cfg.train, cfg.backbone, cfg.log_path, nullptr, save_hook, &std::cout);
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& resolutions_arg,
             const std::string& mode, const std::string& data_arg,
             const std::string& calibration_arg, const std::string& out_csv,
             const std::string& pred_dir, int batch, int threads) {
  if (threads > 0) set_num_threads(threads);
  const std::vector<int> tests = parse_resolution_list(resolutions_arg);
  Model<float> model = load_checkpoint(checkpoint);

  MatrixMode mm;
  if (mode == "proxy") {
    mm = MatrixMode::Proxy;
  } else if (mode == "ideal") {
    mm = MatrixMode::Ideal;
  } else if (mode == "ideal-nocal") {
    mm = MatrixMode::IdealNoCal;
  } else if (mode == "datafree") {
    mm = MatrixMode::DataFree;
  } else {
    throw UsageError("unknown inference mode: " + mode);
  }

  Dataset calib;
  const Dataset* calib_ptr = nullptr;
  if (mm == MatrixMode::Ideal) {
    // statistics are recalibrated for every cell whose column differs from
    // its row, so only an all-diagonal request can run without data
    const bool needs_calibration =
        model.resolutions.size() > 1 ||
        std::any_of(tests.begin(), tests.end(),
                    [&](int t) { return t != model.resolutions.front(); });
    if (needs_calibration && calibration_arg.empty())
      throw UsageError(
          "--inference-mode ideal needs --calibration-data (cells off the training "
          "resolutions recalibrate BN statistics)");
    if (!calibration_arg.empty()) {
      calib = dataset_from_arg(calibration_arg);
      calib_ptr = &calib;
    }
  }

  Dataset eval_set = dataset_from_arg(data_arg);
  PredictionStore store;
  AccuracyMatrix m = model_matrix_eval(model, eval_set, tests, mm, calib_ptr,
                                       pred_dir.empty() ? nullptr : &store,
                                       static_cast<std::size_t>(batch));
  write_file(out_csv, matrix_to_csv(m));
  std::cout << matrix_to_csv(m);
  if (mm == MatrixMode::Proxy) {
    const std::vector<double> shaded = proxy_row_selection(m, model.resolutions);
    std::ostringstream os;
    os << "test_resolution,proxy_accuracy\n";
    for (std::size_t c = 0; c < tests.size(); ++c) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", std::round(shaded[c] * 100.0) / 100.0);
      os << tests[c] << ',' << buf << '\n';
    }
    const std::string proxy_path = out_csv + ".proxy.csv";
    write_file(proxy_path, os.str());
    std::cout << "proxy selection written to " << proxy_path << '\n';
  }
  if (!pred_dir.empty()) {
    store.save(pred_dir);
    std::cout << "predictions written to " << pred_dir << '\n';
  }
  return 0;
}

int run_calibrate(const std::string& checkpoint, int resolution, const std::string& data_arg,
                  const std::string& out_csv, int batch) {
  Model<float> model = load_checkpoint(checkpoint);
  const Dataset data = dataset_from_arg(data_arg);
  const int s = nearest_resolution(resolution, model.resolutions);
  const auto kernels = model.generate_kernels(model.encoder.encode(resolution));
  const auto batches =
      calibration_batches_at<float>(data, resolution, static_cast<std::size_t>(batch));
  const BnSet<float> calibrated =
      calibrate_bn(model.backbone, kernels, model.bank.set_for(s), *model.fc, batches);
  const std::string csv =
      "scale,site_index,param,channel_mean\n" +
      bn_set_dump_csv(calibrated, std::to_string(resolution));
  if (out_csv.empty())
    std::cout << csv;
  else
    write_file(out_csv, csv);
  return 0;
}

int run_report(const std::string& pred_dir, const std::string& out_dir) {
  PredictionStore store = PredictionStore::load(pred_dir);
  fs::create_directories(out_dir);
  AccuracyMatrix m = store.to_matrix();
  write_file((fs::path(out_dir) / "matrix.csv").string(), matrix_to_csv(m));

  const auto series = envelope_series({{"model", m}});
  write_file((fs::path(out_dir) / "envelope.csv").string(), envelope_csv(series));
  write_file((fs::path(out_dir) / "envelope.svg").string(), envelope_svg(series));

  // hit-miss needs each parameterization evaluated at its own resolution
  std::vector<int> scales;
  std::vector<std::vector<int>> diag_preds;
  for (const auto& e : store.entries) {
    if (e.row == std::to_string(e.test_resolution)) {
      scales.push_back(e.test_resolution);
      diag_preds.push_back(e.preds);
    }
  }
  if (scales.size() >= 2) {
    write_file((fs::path(out_dir) / "hitmiss.csv").string(),
               hit_miss_to_csv(hit_miss_matrix(diag_preds, scales, store.labels)));
  }
  std::cout << "reports written to " << out_dir << '\n';
  return 0;
}

int run_dump_bn(const std::string& checkpoint, const std::string& out_csv) {
  Model<float> model = load_checkpoint(checkpoint);
  const std::string csv = bn_dump_csv(model);
  if (out_csv.empty())
    std::cout << csv;
  else
    write_file(out_csv, csv);
  return 0;
}

int run_dump_ratios(const std::string& checkpoint, const std::string& out_csv) {
  Model<float> model = load_checkpoint(checkpoint);
  const std::string csv = ratios_to_csv(weight_bias_ratios(model.meta, model.backbone));
  if (out_csv.empty())
    std::cout << csv;
  else
    write_file(out_csv, csv);
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"anyres: resolution-adaptive image classification networks"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  std::string config_path, train_out, train_log;
  int train_threads = 0;
  train->add_option("--config", config_path, "JSON config file")->required();
  train->add_option("--out", train_out, "checkpoint output path (overrides config)");
  train->add_option("--log", train_log, "training log CSV path (overrides config)");
  train->add_option("--threads", train_threads, "worker threads (0 = auto)");

  // eval
  auto* eval = app.add_subcommand("eval", "accuracy matrix over test resolutions");
  std::string ckpt, test_res, mode = "proxy", eval_data = "desk:val", calib_data, eval_out,
              pred_dir;
  int eval_batch = 64, eval_threads = 0;
  eval->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  eval->add_option("--test-resolutions", test_res, "comma-separated list")->required();
  eval->add_option("--inference-mode", mode, "proxy | ideal | ideal-nocal | datafree");
  eval->add_option("--data", eval_data, "eval set: desk[:split] | synthetic | folder path");
  eval->add_option("--calibration-data", calib_data, "calibration set for ideal mode");
  eval->add_option("--out", eval_out, "matrix CSV output")->required();
  eval->add_option("--pred-dir", pred_dir, "persist per-cell predictions here");
  eval->add_option("--batch", eval_batch, "evaluation batch size");
  eval->add_option("--threads", eval_threads, "worker threads (0 = auto)");

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "recompute BN statistics at a resolution");
  std::string cal_ckpt, cal_data = "desk:train", cal_out;
  int cal_res = 0, cal_batch = 64;
  calibrate->add_option("--checkpoint", cal_ckpt, "model checkpoint")->required();
  calibrate->add_option("--resolution", cal_res, "target resolution")->required();
  calibrate->add_option("--data", cal_data, "calibration set");
  calibrate->add_option("--out", cal_out, "CSV output (stdout when omitted)");
  calibrate->add_option("--batch", cal_batch, "calibration batch size");

  // report
  auto* report = app.add_subcommand("report", "build reports from stored predictions");
  std::string rep_pred_dir, rep_out_dir = "reports";
  report->add_option("--pred-dir", rep_pred_dir, "prediction store directory")->required();
  report->add_option("--out-dir", rep_out_dir, "report output directory");

  // dump-bn
  auto* dump_bn = app.add_subcommand("dump-bn", "per-site BN channel means as CSV");
  std::string bn_ckpt, bn_out;
  dump_bn->add_option("--checkpoint", bn_ckpt, "model checkpoint")->required();
  dump_bn->add_option("--out", bn_out, "CSV output (stdout when omitted)");

  // dump-ratios
  auto* dump_ratios = app.add_subcommand("dump-ratios", "meta weight/bias ratio CSV");
  std::string ratio_ckpt, ratio_out;
  dump_ratios->add_option("--checkpoint", ratio_ckpt, "model checkpoint")->required();
  dump_ratios->add_option("--out", ratio_out, "CSV output (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << '\n';
    return 2;
  }

  try {
    if (*train) return run_train(config_path, train_out, train_log, train_threads);
    if (*eval)
      return run_eval(ckpt, test_res, mode, eval_data, calib_data, eval_out, pred_dir,
                      eval_batch, eval_threads);
    if (*calibrate) return run_calibrate(cal_ckpt, cal_res, cal_data, cal_out, cal_batch);
    if (*report) return run_report(rep_pred_dir, rep_out_dir);
    if (*dump_bn) return run_dump_bn(bn_ckpt, bn_out);
    if (*dump_ratios) return run_dump_ratios(ratio_ckpt, ratio_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace anyres
