#include "anyres/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "anyres/image_io.hpp"
#include "anyres/rng.hpp"

namespace fs = std::filesystem;

namespace anyres {

namespace {

constexpr double kTau = 6.283185307179586477;

void add_noise(Image& img, Rng& rng, double sigma) {
  for (auto& p : img.pix)
    p = std::clamp(p + static_cast<float>(rng.normal(0.0, sigma)), 0.0f, 1.0f);
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 1 || spec.samples_per_class < 1 || spec.base_resolution < 4)
    throw std::invalid_argument("bad synthetic spec");
  Dataset d;
  d.source = "synthetic";
  d.split = "train";
  d.num_classes = spec.num_classes;
  for (int c = 0; c < spec.num_classes; ++c)
    d.class_names.push_back("stripes_" + std::to_string(c));
  Rng rng(spec.seed);
  const int s = spec.base_resolution;
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    const int orientation = cls % 2;
    const int freq = 1 + cls / 2;
    for (int i = 0; i < spec.samples_per_class; ++i) {
      Image img(s, s);
      const double phase = rng.uniform();
      const double amp = rng.uniform(0.30, 0.45);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double t = orientation == 0 ? (y + 0.5) / s : (x + 0.5) / s;
          const float v =
              static_cast<float>(0.5 + amp * std::sin(kTau * (freq * t + phase)));
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = v;
        }
      add_noise(img, rng, 0.02);
      d.images.push_back(std::move(img));
      d.labels.push_back(cls);
    }
  }
  return d;
}

int synthetic_label_rule(const Image& img, int num_classes) {
  const int w = img.width, h = img.height;
  std::vector<double> rows(h, 0.0), cols(w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double g = 0.0;
      for (int c = 0; c < img.channels; ++c) g += img.at(c, y, x);
      g /= img.channels;
      rows[y] += g / w;
      cols[x] += g / h;
    }
  auto variance = [](const std::vector<double>& v) {
    double m = 0.0;
    for (const double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (const double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
  };
  const int orientation = variance(rows) > variance(cols) ? 0 : 1;
  const std::vector<double>& profile = orientation == 0 ? rows : cols;
  const int max_freq = 1 + (num_classes - 1) / 2;
  int best_f = 1;
  double best_mag = -1.0;
  const int n = static_cast<int>(profile.size());
  for (int f = 1; f <= max_freq; ++f) {
    double re = 0.0, im = 0.0;
    for (int t = 0; t < n; ++t) {
      const double angle = kTau * f * (t + 0.5) / n;
      re += profile[t] * std::cos(angle);
      im += profile[t] * std::sin(angle);
    }
    const double mag = re * re + im * im;
    if (mag > best_mag) {
      best_mag = mag;
      best_f = f;
    }
  }
  const int cls = (best_f - 1) * 2 + orientation;
  return std::min(cls, num_classes - 1);
}

const std::vector<std::string>& desk_class_names() {
  static const std::vector<std::string> names = {
      "disk",   "ring",     "square",  "triangle", "cross",
      "hlines", "vlines",   "checker", "dots",     "diagonal"};
  return names;
}

namespace {

struct Palette {
  float bg[3], fg[3];
  float grad_x[3], grad_y[3];
};

Palette sample_palette(Rng& rng) {
  Palette p;
  for (int c = 0; c < 3; ++c) {
    p.bg[c] = static_cast<float>(rng.uniform(0.2, 0.8));
    const double push = rng.uniform(0.35, 0.55);
    p.fg[c] = static_cast<float>(std::clamp(p.bg[c] + (p.bg[c] > 0.5f ? -push : push), 0.05, 0.95));
    p.grad_x[c] = static_cast<float>(rng.uniform(-0.22, 0.22));
    p.grad_y[c] = static_cast<float>(rng.uniform(-0.22, 0.22));
  }
  return p;
}

Image textured_background(int s, const Palette& pal, Rng& rng) {
  Image img(s, s);
  const double f1 = rng.uniform(1.0, 3.5), f2 = rng.uniform(1.0, 3.5);
  const double a1 = rng.uniform(0.02, 0.06), a2 = rng.uniform(0.02, 0.06);
  const double p1 = rng.uniform(0.0, kTau), p2 = rng.uniform(0.0, kTau);
  const double dir = rng.uniform(0.0, kTau);
  const double cx = std::cos(dir), cy = std::sin(dir);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double u = (x + 0.5) / s - 0.5, v = (y + 0.5) / s - 0.5;
      const double tex = a1 * std::sin(kTau * f1 * (u * cx + v * cy) + p1) +
                         a2 * std::sin(kTau * f2 * (u * cy - v * cx) + p2);
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = std::clamp(
            pal.bg[c] + pal.grad_x[c] * static_cast<float>(u) +
                pal.grad_y[c] * static_cast<float>(v) + static_cast<float>(tex),
            0.0f, 1.0f);
    }
  return img;
}

// alpha in [0,1] from a signed distance (negative inside), ~1.2 px soft edge.
double sdf_alpha(double d) { return std::clamp(0.5 - d / 1.2, 0.0, 1.0); }

void composite(Image& img, int y, int x, const float fg[3], double alpha) {
  if (alpha <= 0.0) return;
  for (int c = 0; c < 3; ++c)
    img.at(c, y, x) = static_cast<float>(img.at(c, y, x) * (1.0 - alpha) + fg[c] * alpha);
}

Image render_desk_sample(int cls, int s, Rng& rng) {
  const Palette pal = sample_palette(rng);
  Image img = textured_background(s, pal, rng);

  const double cx = s * (0.5 + rng.uniform(-0.1, 0.1));
  const double cy = s * (0.5 + rng.uniform(-0.1, 0.1));
  const double r = s * rng.uniform(0.22, 0.32);
  const double theta = [&] {
    switch (cls) {
      case 2:
      case 4: return rng.uniform(-0.2, 0.2);
      case 3: return rng.uniform(0.0, kTau);
      case 9: return kTau / 8.0 + rng.uniform(-0.2, 0.2);
      default: return 0.0;
    }
  }();
  const double ct = std::cos(theta), st = std::sin(theta);
  const double opacity = rng.uniform(0.88, 1.0);

  auto shape_sdf = [&](double px, double py) -> double {
    // rotate into shape frame
    const double rx = ct * px + st * py;
    const double ry = -st * px + ct * py;
    switch (cls) {
      case 0:  // disk
        return std::hypot(rx, ry) - r;
      case 1: {  // ring: outer r, hole 0.55 r
        const double mid = 0.775 * r, half = 0.225 * r;
        return std::abs(std::hypot(rx, ry) - mid) - half;
      }
      case 2:  // square
        return std::max(std::abs(rx), std::abs(ry)) - 0.88 * r;
      case 3: {  // equilateral triangle via three half planes
        double d = -1e9;
        for (int e = 0; e < 3; ++e) {
          const double a = kTau * e / 3.0;
          d = std::max(d, rx * std::cos(a) + ry * std::sin(a) - 0.62 * r);
        }
        return d;
      }
      case 4: {  // cross: union of two bars
        const double t = 0.32 * r;
        const double d1 = std::max(std::abs(rx) - r, std::abs(ry) - t);
        const double d2 = std::max(std::abs(ry) - r, std::abs(rx) - t);
        return std::min(d1, d2);
      }
      case 9:  // diagonal bar
        return std::max(std::abs(rx) - 0.95 * s / 2.0, std::abs(ry) - 0.09 * s);
      default:
        return 1e9;
    }
  };

  if (cls == 0 || cls == 1 || cls == 2 || cls == 3 || cls == 4 || cls == 9) {
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double d = shape_sdf(x + 0.5 - cx, y + 0.5 - cy);
        composite(img, y, x, pal.fg, sdf_alpha(d) * opacity);
      }
  } else if (cls == 5 || cls == 6) {  // gratings
    const double f = rng.uniform(2.2, 3.2);
    const double phase = rng.uniform(0.0, 1.0);
    const double amp = rng.uniform(0.22, 0.38);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double t = cls == 5 ? (y + 0.5) / s : (x + 0.5) / s;
        const float dv = static_cast<float>(amp * std::sin(kTau * (f * t + phase)));
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) = std::clamp(img.at(c, y, x) + dv, 0.0f, 1.0f);
      }
  } else if (cls == 7) {  // checkerboard
    const double fx = rng.uniform(2.0, 2.8), fy = rng.uniform(2.0, 2.8);
    const double px = rng.uniform(0.0, 1.0), py = rng.uniform(0.0, 1.0);
    const double amp = rng.uniform(0.22, 0.35);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double u = (x + 0.5) / s, v = (y + 0.5) / s;
        const double grid =
            std::sin(kTau * (fx * u + px)) * std::sin(kTau * (fy * v + py));
        const float dv = static_cast<float>(amp * std::tanh(4.0 * grid));
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) = std::clamp(img.at(c, y, x) + dv, 0.0f, 1.0f);
      }
  } else if (cls == 8) {  // dot grid
    const double fx = rng.uniform(2.0, 2.8), fy = rng.uniform(2.0, 2.8);
    const double px = rng.uniform(0.0, 1.0), py = rng.uniform(0.0, 1.0);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double u = (x + 0.5) / s, v = (y + 0.5) / s;
        const double g =
            std::cos(kTau * (fx * u + px)) * std::cos(kTau * (fy * v + py));
        const double alpha = std::clamp((g - 0.55) / 0.12, 0.0, 1.0);
        composite(img, y, x, pal.fg, alpha * opacity);
      }
  }

  add_noise(img, rng, 0.025);
  return img;
}

}  // namespace

Dataset make_desk_dataset(const DeskSpec& spec, const std::string& split) {
  if (split != "train" && split != "val")
    throw std::invalid_argument("split must be train or val");
  const bool is_train = split == "train";
  const int per_class = is_train ? spec.train_per_class : spec.val_per_class;
  if (per_class < 1) throw std::invalid_argument("desk dataset needs >= 1 sample per class");

  Dataset d;
  d.source = "desk";
  d.split = split;
  d.num_classes = 10;
  d.class_names = desk_class_names();
  Rng rng(spec.seed ^ (is_train ? 0x5eed0001ull : 0x5eed0002ull));
  for (int cls = 0; cls < 10; ++cls)
    for (int i = 0; i < per_class; ++i) {
      d.images.push_back(render_desk_sample(cls, spec.base_resolution, rng));
      d.labels.push_back(cls);
    }
  return d;
}

Dataset load_image_folder(const std::string& root) {
  if (!fs::is_directory(root))
    throw std::invalid_argument("image folder not found: " + root);
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    auto& files = by_class[entry.path().filename().string()];
    for (const auto& f : fs::directory_iterator(entry.path())) {
      const std::string ext = f.path().extension().string();
      if (ext == ".png" || ext == ".PNG" || ext == ".jpg" || ext == ".jpeg" ||
          ext == ".JPG" || ext == ".JPEG")
        files.push_back(f.path().string());
    }
    std::sort(files.begin(), files.end());
  }
  if (by_class.empty()) throw std::invalid_argument("no class directories under " + root);
  Dataset d;
  d.source = "image_folder";
  d.split = "train";
  d.num_classes = static_cast<int>(by_class.size());
  int cls = 0;
  for (const auto& [name, files] : by_class) {
    d.class_names.push_back(name);
    for (const auto& f : files) {
      d.images.push_back(load_image(f));
      d.labels.push_back(cls);
    }
    ++cls;
  }
  if (d.images.empty()) throw std::invalid_argument("image folder has no images: " + root);
  return d;
}

void export_image_folder(const Dataset& data, const std::string& root) {
  fs::create_directories(root);
  std::vector<int> counter(data.num_classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int cls = data.labels[i];
    const std::string name = cls < static_cast<int>(data.class_names.size())
                                 ? data.class_names[cls]
                                 : "class_" + std::to_string(cls);
    const fs::path dir = fs::path(root) / name;
    fs::create_directories(dir);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05d.png", counter[cls]++);
    save_png((dir / buf).string(), data.images[i]);
  }
}

}  // namespace anyres
