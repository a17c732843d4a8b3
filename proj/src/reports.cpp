#include "anyres/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace anyres {

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::size_t AccuracyMatrix::col_index(int t) const {
  for (std::size_t i = 0; i < test_resolutions.size(); ++i)
    if (test_resolutions[i] == t) return i;
  throw std::out_of_range("no column for test resolution " + std::to_string(t));
}

std::size_t AccuracyMatrix::row_index(const std::string& label) const {
  for (std::size_t i = 0; i < row_labels.size(); ++i)
    if (row_labels[i] == label) return i;
  throw std::out_of_range("no row labeled " + label);
}

double top1_accuracy_percent(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size() || preds.empty())
    throw std::invalid_argument("prediction/label size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(preds.size());
}

AccuracyMatrix run_matrix_eval(const std::vector<std::string>& rows,
                               const std::vector<int>& test_resolutions,
                               const std::vector<int>& labels, const CellEvaluator& evaluate,
                               PredictionStore* store) {
  if (labels.empty()) throw std::invalid_argument("empty evaluation set");
  AccuracyMatrix m;
  m.row_labels = rows;
  m.test_resolutions = test_resolutions;
  m.values.assign(rows.size(), std::vector<double>(test_resolutions.size(), 0.0));
  if (store != nullptr) store->labels = labels;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < test_resolutions.size(); ++c) {
      std::vector<int> preds = evaluate(rows[r], test_resolutions[c]);
      m.values[r][c] = top1_accuracy_percent(preds, labels);
      if (store != nullptr)
        store->entries.push_back({rows[r], test_resolutions[c], std::move(preds)});
    }
  return m;
}

std::vector<double> proxy_row_selection(const AccuracyMatrix& m, const std::vector<int>& scales) {
  std::vector<double> out;
  out.reserve(m.test_resolutions.size());
  for (const int t : m.test_resolutions) {
    const int s = nearest_resolution(t, scales);
    out.push_back(m.values[m.row_index(std::to_string(s))][m.col_index(t)]);
  }
  return out;
}

std::string matrix_to_csv(const AccuracyMatrix& m) {
  std::ostringstream os;
  os << "train\\test";
  for (const int t : m.test_resolutions) os << ',' << t;
  os << '\n';
  for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
    os << m.row_labels[r];
    for (std::size_t c = 0; c < m.test_resolutions.size(); ++c)
      os << ',' << fmt2(round2(m.values[r][c]));
    os << '\n';
  }
  return os.str();
}

AccuracyMatrix matrix_from_csv(const std::string& csv) {
  AccuracyMatrix m;
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("empty matrix CSV");
  std::istringstream hdr(line);
  std::string cell;
  std::getline(hdr, cell, ',');
  while (std::getline(hdr, cell, ',')) m.test_resolutions.push_back(std::stoi(cell));
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::getline(row, cell, ',');
    m.row_labels.push_back(cell);
    std::vector<double> vals;
    while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != m.test_resolutions.size())
      throw std::invalid_argument("ragged matrix CSV");
    m.values.push_back(std::move(vals));
  }
  return m;
}

double hit_miss_fraction(const std::vector<int>& preds_a, const std::vector<int>& preds_b,
                         const std::vector<int>& labels) {
  if (preds_a.size() != labels.size() || preds_b.size() != labels.size())
    throw std::invalid_argument("hit-miss input lengths differ");
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (preds_a[i] != labels[i] && preds_b[i] == labels[i]) ++count;
  return static_cast<double>(count) / static_cast<double>(labels.size());
}

HitMissMatrix hit_miss_matrix(const std::vector<std::vector<int>>& preds_by_scale,
                              const std::vector<int>& scales, const std::vector<int>& labels) {
  HitMissMatrix m;
  m.scales = scales;
  const std::size_t k = scales.size();
  m.values.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) m.values[i][j] = hit_miss_fraction(preds_by_scale[i], preds_by_scale[j], labels);
  return m;
}

std::string hit_miss_to_csv(const HitMissMatrix& m) {
  std::ostringstream os;
  os << "miss\\hit";
  for (const int s : m.scales) os << ',' << s;
  os << '\n';
  for (std::size_t i = 0; i < m.scales.size(); ++i) {
    os << m.scales[i];
    for (std::size_t j = 0; j < m.scales.size(); ++j)
      os << ',' << fmt2(round2(100.0 * m.values[i][j]));
    os << '\n';
  }
  return os.str();
}

namespace {

constexpr std::uint32_t kPredMagic = 0x50594e41u;  // "ANYP"

void write_pred_file(const std::string& path, const std::vector<int>& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  const std::uint32_t magic = kPredMagic, version = 1;
  const std::uint64_t n = values.size();
  f.write(reinterpret_cast<const char*>(&magic), 4);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&n), 8);
  for (const int v : values) {
    const std::int32_t x = v;
    f.write(reinterpret_cast<const char*>(&x), 4);
  }
}

std::vector<int> read_pred_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::uint32_t magic = 0, version = 0;
  std::uint64_t n = 0;
  f.read(reinterpret_cast<char*>(&magic), 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&n), 8);
  if (!f || magic != kPredMagic || version != 1)
    throw std::runtime_error("bad prediction file " + path);
  std::vector<int> out(n);
  for (auto& v : out) {
    std::int32_t x;
    f.read(reinterpret_cast<char*>(&x), 4);
    v = x;
  }
  if (!f) throw std::runtime_error("truncated prediction file " + path);
  return out;
}

}  // namespace

void PredictionStore::save(const std::string& dir) const {
  fs::create_directories(dir);
  write_pred_file((fs::path(dir) / "labels.bin").string(), labels);
  nlohmann::json index;
  index["entries"] = nlohmann::json::array();
  for (const auto& e : entries) {
    const std::string file = "preds_" + e.row + "_" + std::to_string(e.test_resolution) + ".bin";
    write_pred_file((fs::path(dir) / file).string(), e.preds);
    nlohmann::json je;
    je["row"] = e.row;
    je["test_resolution"] = e.test_resolution;
    je["file"] = file;
    index["entries"].push_back(je);
  }
  std::ofstream f((fs::path(dir) / "index.json").string());
  f << index.dump(2) << '\n';
}

PredictionStore PredictionStore::load(const std::string& dir) {
  PredictionStore store;
  std::ifstream f((fs::path(dir) / "index.json").string());
  if (!f) throw std::runtime_error("no prediction index under " + dir);
  nlohmann::json index;
  f >> index;
  store.labels = read_pred_file((fs::path(dir) / "labels.bin").string());
  for (const auto& je : index.at("entries")) {
    Entry e;
    e.row = je.at("row").get<std::string>();
    e.test_resolution = je.at("test_resolution").get<int>();
    e.preds = read_pred_file((fs::path(dir) / je.at("file").get<std::string>()).string());
    store.entries.push_back(std::move(e));
  }
  return store;
}

AccuracyMatrix PredictionStore::to_matrix() const {
  AccuracyMatrix m;
  for (const auto& e : entries) {
    if (std::find(m.row_labels.begin(), m.row_labels.end(), e.row) == m.row_labels.end())
      m.row_labels.push_back(e.row);
    if (std::find(m.test_resolutions.begin(), m.test_resolutions.end(), e.test_resolution) ==
        m.test_resolutions.end())
      m.test_resolutions.push_back(e.test_resolution);
  }
  m.values.assign(m.row_labels.size(), std::vector<double>(m.test_resolutions.size(), 0.0));
  for (const auto& e : entries)
    m.values[m.row_index(e.row)][m.col_index(e.test_resolution)] =
        top1_accuracy_percent(e.preds, labels);
  return m;
}

std::vector<EnvelopeSeries> envelope_series(
    const std::vector<std::pair<std::string, AccuracyMatrix>>& named_matrices) {
  std::vector<EnvelopeSeries> out;
  for (const auto& [name, m] : named_matrices)
    for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
      EnvelopeSeries s;
      s.name = m.row_labels.size() == 1 && name.size() ? name : name + "@" + m.row_labels[r];
      for (std::size_t c = 0; c < m.test_resolutions.size(); ++c)
        s.points.emplace_back(m.test_resolutions[c], round2(m.values[r][c]));
      std::sort(s.points.begin(), s.points.end());
      out.push_back(std::move(s));
    }
  return out;
}

std::string envelope_csv(const std::vector<EnvelopeSeries>& series) {
  std::ostringstream os;
  os << "series,test_resolution,accuracy\n";
  for (const auto& s : series)
    for (const auto& [t, v] : s.points) os << s.name << ',' << t << ',' << fmt2(v) << '\n';
  return os.str();
}

std::vector<EnvelopeSeries> envelope_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  std::map<std::string, EnvelopeSeries> by_name;
  std::vector<std::string> order;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string name, t, v;
    std::getline(row, name, ',');
    std::getline(row, t, ',');
    std::getline(row, v, ',');
    if (by_name.find(name) == by_name.end()) {
      by_name[name].name = name;
      order.push_back(name);
    }
    by_name[name].points.emplace_back(std::stoi(t), std::stod(v));
  }
  std::vector<EnvelopeSeries> out;
  for (const auto& n : order) out.push_back(by_name[n]);
  return out;
}

std::string envelope_svg(const std::vector<EnvelopeSeries>& series) {
  const int width = 720, height = 480;
  const double ml = 64, mr = 180, mt = 28, mb = 52;
  double xmin = 1e9, xmax = -1e9, ymin = 100.0, ymax = 0.0;
  for (const auto& s : series)
    for (const auto& [t, v] : s.points) {
      xmin = std::min(xmin, static_cast<double>(t));
      xmax = std::max(xmax, static_cast<double>(t));
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  if (series.empty() || series[0].points.empty()) {
    xmin = 1;
    xmax = 10;
    ymin = 0;
    ymax = 100;
  }
  ymin = std::max(0.0, std::floor(ymin / 10.0) * 10.0 - 5.0);
  ymax = std::min(100.0, std::ceil(ymax / 10.0) * 10.0 + 5.0);
  if (xmax <= xmin) xmax = xmin + 1;
  const double lx0 = std::log(xmin), lx1 = std::log(xmax);
  auto sx = [&](double t) {
    return ml + (std::log(t) - lx0) / (lx1 - lx0) * (width - ml - mr);
  };
  auto sy = [&](double v) { return height - mb - (v - ymin) / (ymax - ymin) * (height - mt - mb); };

  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes
  os << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
     << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << height - mb
     << "\" stroke=\"black\"/>\n";
  // x ticks at every distinct resolution (log scale)
  std::vector<int> ticks;
  for (const auto& s : series)
    for (const auto& [t, v] : s.points)
      if (std::find(ticks.begin(), ticks.end(), t) == ticks.end()) ticks.push_back(t);
  std::sort(ticks.begin(), ticks.end());
  for (const int t : ticks) {
    const double x = sx(t);
    os << "<line x1=\"" << x << "\" y1=\"" << height - mb << "\" x2=\"" << x << "\" y2=\""
       << height - mb + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << x << "\" y=\"" << height - mb + 20
       << "\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">" << t
       << "</text>\n";
  }
  for (double v = ymin; v <= ymax + 1e-9; v += 10.0) {
    const double y = sy(v);
    os << "<line x1=\"" << ml - 5 << "\" y1=\"" << y << "\" x2=\"" << width - mr << "\" y2=\""
       << y << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << ml - 9 << "\" y=\"" << y + 4
       << "\" font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\">" << fmt2(v)
       << "</text>\n";
  }
  os << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 10
     << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">"
     << "test resolution (log scale)</text>\n";
  os << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
     << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\" "
     << "transform=\"rotate(-90 16 " << (mt + height - mb) / 2 << ")\">top-1 accuracy (%)"
     << "</text>\n";
  int idx = 0;
  for (const auto& s : series) {
    const char* color = palette[idx % 10];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (const auto& [t, v] : s.points) os << sx(t) << ',' << sy(v) << ' ';
    os << "\"/>\n";
    for (const auto& [t, v] : s.points)
      os << "<circle cx=\"" << sx(t) << "\" cy=\"" << sy(v) << "\" r=\"2.4\" fill=\"" << color
         << "\"/>\n";
    os << "<text x=\"" << width - mr + 12 << "\" y=\"" << mt + 16 + 16 * idx
       << "\" font-size=\"11\" font-family=\"sans-serif\" fill=\"" << color << "\">" << s.name
       << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

std::string ratios_to_csv(const std::vector<LayerRatio>& ratios) {
  std::ostringstream os;
  os << "layer_id,ratio\n";
  for (const auto& r : ratios) {
    os << r.layer_id << ',';
    if (std::isinf(r.ratio))
      os << "inf";
    else
      os << r.ratio;
    os << '\n';
  }
  return os.str();
}

std::string bn_set_dump_csv(const BnSet<float>& set, const std::string& scale_label) {
  std::ostringstream os;
  const char* params[] = {"gamma", "beta", "mu", "sigma2"};
  for (std::size_t site = 0; site < set.sites.size(); ++site) {
    const std::vector<float>* vecs[] = {&set.sites[site].gamma, &set.sites[site].beta,
                                        &set.sites[site].mean, &set.sites[site].var};
    for (int p = 0; p < 4; ++p) {
      double mean = 0.0;
      for (const float v : *vecs[p]) mean += v;
      mean /= static_cast<double>(vecs[p]->size());
      os << scale_label << ',' << site << ',' << params[p] << ',' << mean << '\n';
    }
  }
  return os.str();
}

std::string bn_dump_csv(const Model<float>& model) {
  std::ostringstream os;
  os << "scale,site_index,param,channel_mean\n";
  const std::size_t n_sets = model.share_bn ? 1 : model.bank.sets.size();
  for (std::size_t i = 0; i < n_sets; ++i) {
    const std::string label =
        model.share_bn ? std::string("shared") : std::to_string(model.bank.scales[i]);
    os << bn_set_dump_csv(*model.bank.sets[i], label);
  }
  return os.str();
}

std::vector<int> predict_dataset(const BackboneSpec& spec, const MainNetworkParams<float>& params,
                                 const Dataset& data, int t, std::size_t batch_size) {
  std::vector<int> preds;
  preds.reserve(data.size());
  std::vector<Image> views;
  views.reserve(batch_size);
  auto flush = [&]() {
    if (views.empty()) return;
    const Tensor<float> batch = assemble_batch(views);
    const Tensor<float> logits = forward_eval(spec, params, batch);
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < views.size(); ++i) {
      const float* row = logits.ptr() + i * classes;
      preds.push_back(static_cast<int>(std::max_element(row, row + classes) - row));
    }
    views.clear();
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    views.push_back(eval_view(data.images[i], t));
    if (views.size() == batch_size) flush();
  }
  flush();
  return preds;
}

AccuracyMatrix model_matrix_eval(const Model<float>& model, const Dataset& eval_data,
                                 const std::vector<int>& test_resolutions, MatrixMode mode,
                                 const Dataset* calibration_data, PredictionStore* store,
                                 std::size_t batch_size) {
  std::vector<std::string> rows;
  if (mode == MatrixMode::DataFree) {
    rows.push_back("datafree");
  } else {
    for (const int s : model.resolutions) rows.push_back(std::to_string(s));
  }
  CellEvaluator evaluate = [&](const std::string& row, int t) {
    MainNetworkParams<float> params;
    switch (mode) {
      case MatrixMode::Proxy:
        params = model.parameterize_for(std::stoi(row));
        break;
      case MatrixMode::DataFree:
        params = datafree_parameterize(model, t);
        break;
      case MatrixMode::IdealNoCal: {
        const int s = std::stoi(row);
        params.kernels = model.generate_kernels(model.encoder.encode(t));
        params.encoding = model.encoder.encode(t);
        params.bn = model.bank.set_ptr(s);
        params.bn_key = s;
        params.fc = model.fc;
        break;
      }
      case MatrixMode::Ideal: {
        const int s = std::stoi(row);
        params.kernels = model.generate_kernels(model.encoder.encode(t));
        params.encoding = model.encoder.encode(t);
        params.bn_key = s;
        params.fc = model.fc;
        if (t == s) {
          params.bn = model.bank.set_ptr(s);
        } else {
          if (calibration_data == nullptr || calibration_data->size() == 0)
            throw ConfigError("ideal matrix evaluation needs calibration data");
          auto batches = calibration_batches_at<float>(*calibration_data, t, batch_size);
          params.bn = std::make_shared<const BnSet<float>>(
              calibrate_bn(model.backbone, params.kernels, model.bank.set_for(s), *model.fc,
                           batches));
        }
        break;
      }
    }
    return predict_dataset(model.backbone, params, eval_data, t, batch_size);
  };
  return run_matrix_eval(rows, test_resolutions, eval_data.labels, evaluate, store);
}

}  // namespace anyres
