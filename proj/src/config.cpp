#include "anyres/config.hpp"

#include <fstream>

#include "anyres/errors.hpp"

namespace anyres {

nlohmann::json backbone_to_json(const BackboneSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["input_channels"] = spec.input_channels;
  j["num_classes"] = spec.num_classes;
  j["feature_dim"] = spec.feature_dim;
  j["downsample_rate"] = spec.downsample_rate;
  nlohmann::json convs = nlohmann::json::array();
  for (const auto& c : spec.convs) {
    nlohmann::json jc;
    jc["layer_id"] = c.layer_id;
    jc["name"] = c.name;
    jc["c_in"] = c.c_in;
    jc["c_out"] = c.c_out;
    jc["kernel"] = c.kernel;
    jc["stride"] = c.stride;
    jc["padding"] = c.padding;
    jc["groups"] = c.groups;
    convs.push_back(jc);
  }
  j["convs"] = convs;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : spec.blocks) {
    nlohmann::json jb;
    jb["kind"] = b.kind == BlockKind::Stem
                     ? "stem"
                     : (b.kind == BlockKind::Basic ? "basic" : "inverted_residual");
    jb["convs"] = b.convs;
    jb["skip_conv"] = b.skip_conv;
    jb["residual"] = b.residual;
    blocks.push_back(jb);
  }
  j["blocks"] = blocks;
  return j;
}

BackboneSpec backbone_from_json(const nlohmann::json& j) {
  BackboneSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.input_channels = j.at("input_channels").get<int>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.feature_dim = j.at("feature_dim").get<int>();
  spec.downsample_rate = j.at("downsample_rate").get<int>();
  for (const auto& jc : j.at("convs")) {
    ConvLayerSpec c;
    c.layer_id = jc.at("layer_id").get<int>();
    c.name = jc.at("name").get<std::string>();
    c.c_in = jc.at("c_in").get<int>();
    c.c_out = jc.at("c_out").get<int>();
    c.kernel = jc.at("kernel").get<int>();
    c.stride = jc.at("stride").get<int>();
    c.padding = jc.at("padding").get<int>();
    c.groups = jc.at("groups").get<int>();
    spec.convs.push_back(c);
  }
  for (const auto& jb : j.at("blocks")) {
    BlockSpec b;
    const std::string kind = jb.at("kind").get<std::string>();
    b.kind = kind == "stem" ? BlockKind::Stem
                            : (kind == "basic" ? BlockKind::Basic : BlockKind::InvertedResidual);
    b.convs = jb.at("convs").get<std::vector<int>>();
    b.skip_conv = jb.at("skip_conv").get<int>();
    b.residual = jb.at("residual").get<bool>();
    spec.blocks.push_back(b);
  }
  spec.validate();
  return spec;
}

BackboneSpec backbone_from_config(const nlohmann::json& j) {
  const std::string name = j.value("name", "tiny_resnet");
  const std::vector<int> widths = j.value("widths", std::vector<int>{8, 16, 32});
  const int blocks = j.value("blocks_per_stage", 2);
  const int classes = j.value("num_classes", 10);
  const int input_channels = j.value("input_channels", 3);
  if (name == "tiny_resnet") return tiny_resnet(widths, blocks, classes, input_channels);
  if (name == "tiny_mobile")
    return tiny_mobile(widths, blocks, j.value("expansion", 2), classes, input_channels);
  if (name == "toy") return toy_backbone(classes, widths.empty() ? 4 : widths[0], input_channels);
  throw ConfigError("unknown backbone name: " + name);
}

nlohmann::json training_to_json(const TrainingConfig& cfg) {
  nlohmann::json j;
  j["resolutions"] = cfg.resolutions;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["lr0"] = cfg.lr0;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["distill"] = cfg.distill;
  j["hidden_units"] = cfg.hidden_units;
  j["share_bn"] = cfg.share_bn;
  j["baseline"] = cfg.baseline;
  j["temperature"] = cfg.temperature;
  j["threads"] = cfg.threads;
  j["checkpoint_every"] = cfg.checkpoint_every;
  return j;
}

TrainingConfig training_from_json(const nlohmann::json& j) {
  TrainingConfig cfg;
  cfg.resolutions = j.value("resolutions", cfg.resolutions);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.beta = j.value("beta", cfg.beta);
  cfg.lr0 = j.value("lr0", cfg.lr0);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.distill = j.value("distill", cfg.distill);
  cfg.hidden_units = j.value("hidden_units", cfg.hidden_units);
  cfg.share_bn = j.value("share_bn", cfg.share_bn);
  cfg.baseline = j.value("baseline", cfg.baseline);
  cfg.temperature = j.value("temperature", cfg.temperature);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  std::sort(cfg.resolutions.begin(), cfg.resolutions.end(), std::greater<int>());
  return cfg;
}

DataConfig data_from_json(const nlohmann::json& j) {
  DataConfig cfg;
  cfg.source = j.value("source", cfg.source);
  cfg.path = j.value("path", cfg.path);
  cfg.train_per_class = j.value("train_per_class", cfg.train_per_class);
  cfg.val_per_class = j.value("val_per_class", cfg.val_per_class);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.samples_per_class = j.value("samples_per_class", cfg.samples_per_class);
  cfg.base_resolution = j.value("base_resolution", cfg.base_resolution);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  cfg.backbone = backbone_from_config(j.value("backbone", nlohmann::json::object()));
  cfg.data = data_from_json(j.value("data", nlohmann::json::object()));
  cfg.train = training_from_json(j.value("train", nlohmann::json::object()));
  const auto out = j.value("out", nlohmann::json::object());
  cfg.checkpoint_path = out.value("checkpoint", cfg.checkpoint_path);
  cfg.log_path = out.value("log", cfg.log_path);
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::pair<Dataset, Dataset> make_datasets(const DataConfig& cfg) {
  if (cfg.source == "desk") {
    DeskSpec spec;
    spec.train_per_class = cfg.train_per_class;
    spec.val_per_class = cfg.val_per_class;
    spec.base_resolution = cfg.base_resolution;
    spec.seed = cfg.seed;
    return {make_desk_dataset(spec, "train"), make_desk_dataset(spec, "val")};
  }
  if (cfg.source == "synthetic") {
    SyntheticSpec spec;
    spec.num_classes = cfg.num_classes;
    spec.samples_per_class = cfg.samples_per_class;
    spec.base_resolution = cfg.base_resolution;
    spec.seed = cfg.seed;
    Dataset train = make_synthetic(spec);
    spec.seed = cfg.seed + 1;
    Dataset val = make_synthetic(spec);
    val.split = "val";
    return {std::move(train), std::move(val)};
  }
  if (cfg.source == "image_folder") {
    Dataset d = load_image_folder(cfg.path);
    return {d, d};
  }
  throw ConfigError("unknown data source: " + cfg.source);
}

}  // namespace anyres
