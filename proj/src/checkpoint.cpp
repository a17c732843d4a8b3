#include "anyres/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "anyres/config.hpp"
#include "anyres/errors.hpp"

namespace anyres {

namespace {

constexpr char kMagic[4] = {'A', 'N', 'Y', 'R'};
constexpr std::uint8_t kDtypeF32 = 0;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void put_record(std::string& blob, const std::string& name,
                const std::vector<std::size_t>& dims, const float* data, std::size_t count) {
  put_u32(blob, static_cast<std::uint32_t>(name.size()));
  blob.append(name);
  blob.push_back(static_cast<char>(kDtypeF32));
  blob.push_back(static_cast<char>(dims.size()));
  for (const std::size_t d : dims) put_u64(blob, static_cast<std::uint64_t>(d));
  blob.append(reinterpret_cast<const char*>(data), count * sizeof(float));
}

void put_vec(std::string& blob, const std::string& name, const std::vector<float>& v) {
  put_record(blob, name, {v.size()}, v.data(), v.size());
}

// Canonical tensor order: meta layers ascending, BN sets in resolution order
// (one set when shared), then the FC.
std::string build_blob(const Model<float>& model) {
  std::string blob;
  for (const auto& p : model.meta) {
    const std::string base = "meta.layer" + std::to_string(p.layer_id) + ".";
    if (p.hidden_units == 0) {
      put_vec(blob, base + "w", p.w);
      put_vec(blob, base + "b", p.b);
    } else {
      put_vec(blob, base + "w1", p.w1);
      put_vec(blob, base + "b1", p.b1);
      put_record(blob, base + "w2",
                 {p.w1.size(), p.b2.size()}, p.w2.data(), p.w2.size());
      put_vec(blob, base + "b2", p.b2);
    }
  }
  const std::size_t n_sets = model.share_bn ? 1 : model.bank.sets.size();
  for (std::size_t i = 0; i < n_sets; ++i) {
    const std::string tag =
        model.share_bn ? std::string("shared") : "s" + std::to_string(model.bank.scales[i]);
    const BnSet<float>& set = *model.bank.sets[i];
    for (std::size_t site = 0; site < set.sites.size(); ++site) {
      const std::string base = "bn." + tag + ".site" + std::to_string(site) + ".";
      put_vec(blob, base + "gamma", set.sites[site].gamma);
      put_vec(blob, base + "beta", set.sites[site].beta);
      put_vec(blob, base + "mean", set.sites[site].mean);
      put_vec(blob, base + "var", set.sites[site].var);
    }
  }
  put_record(blob, "fc.weight", model.fc->weight.shape, model.fc->weight.ptr(),
             model.fc->weight.size());
  put_record(blob, "fc.bias", model.fc->bias.shape, model.fc->bias.ptr(),
             model.fc->bias.size());
  return blob;
}

struct BlobReader {
  const std::string& bytes;
  std::size_t pos = 0;

  explicit BlobReader(const std::string& b) : bytes(b) {}

  void need(std::size_t n) const {
    if (pos + n > bytes.size())
      throw CorruptCheckpointError("checkpoint blob truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes[pos++]);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
  bool done() const { return pos == bytes.size(); }
};

struct TensorRecord {
  std::vector<std::size_t> dims;
  std::vector<float> data;
};

std::map<std::string, TensorRecord> parse_blob(const std::string& blob) {
  std::map<std::string, TensorRecord> out;
  BlobReader r(blob);
  while (!r.done()) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32)
      throw UnsupportedFormatError("unsupported dtype code in tensor " + name);
    const std::uint8_t rank = r.u8();
    TensorRecord rec;
    std::size_t count = 1;
    for (int i = 0; i < rank; ++i) {
      rec.dims.push_back(static_cast<std::size_t>(r.u64()));
      count *= rec.dims.back();
    }
    rec.data.resize(count);
    r.need(count * sizeof(float));
    std::memcpy(rec.data.data(), blob.data() + r.pos, count * sizeof(float));
    r.pos += count * sizeof(float);
    if (!out.emplace(name, std::move(rec)).second)
      throw CorruptCheckpointError("duplicate tensor " + name);
  }
  return out;
}

}  // namespace

std::uint64_t model_content_hash(const Model<float>& model) {
  return fnv1a(build_blob(model));
}

void save_checkpoint(const Model<float>& model, const std::string& path,
                     const nlohmann::json& config_echo) {
  const std::string blob = build_blob(model);
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["content_hash"] = hex64(fnv1a(blob));
  manifest["resolutions"] = model.resolutions;
  manifest["backbone"] = backbone_to_json(model.backbone);
  manifest["hidden_units"] = model.hidden_units;
  manifest["share_bn"] = model.share_bn;
  manifest["frozen_w"] = model.frozen_w;
  manifest["encoder_coefficient"] = model.encoder.coefficient;
  manifest["config"] = config_echo;
  const std::string mstr = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f.write(kMagic, 4);
  const std::uint64_t mlen = mstr.size();
  f.write(reinterpret_cast<const char*>(&mlen), 8);
  f.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw std::runtime_error("short write to checkpoint " + path);
}

namespace {

struct RawCheckpoint {
  nlohmann::json manifest;
  std::string blob;
};

RawCheckpoint read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string all = ss.str();
  if (all.size() < 12 || std::memcmp(all.data(), kMagic, 4) != 0)
    throw CorruptCheckpointError("not a checkpoint file: " + path);
  std::uint64_t mlen;
  std::memcpy(&mlen, all.data() + 4, 8);
  if (12 + mlen > all.size())
    throw CorruptCheckpointError("checkpoint manifest truncated: " + path);
  RawCheckpoint raw;
  try {
    raw.manifest = nlohmann::json::parse(all.substr(12, mlen));
  } catch (const nlohmann::json::exception&) {
    throw CorruptCheckpointError("checkpoint manifest is not valid JSON: " + path);
  }
  if (!raw.manifest.contains("format_version"))
    throw CorruptCheckpointError("checkpoint manifest missing format version");
  const auto version = raw.manifest["format_version"].get<std::uint32_t>();
  if (version != kCheckpointFormatVersion)
    throw UnsupportedFormatError("checkpoint format version " + std::to_string(version) +
                                 " not supported (expected " +
                                 std::to_string(kCheckpointFormatVersion) + ")");
  raw.blob = all.substr(12 + mlen);
  const std::string expect = raw.manifest.value("content_hash", "");
  if (hex64(fnv1a(raw.blob)) != expect)
    throw CorruptCheckpointError("checkpoint blob hash mismatch (file corrupted): " + path);
  return raw;
}

}  // namespace

nlohmann::json load_checkpoint_manifest(const std::string& path) {
  return read_container(path).manifest;
}

Model<float> load_checkpoint(const std::string& path) {
  RawCheckpoint raw = read_container(path);
  auto tensors = parse_blob(raw.blob);

  const BackboneSpec backbone = backbone_from_json(raw.manifest["backbone"]);
  const std::vector<int> resolutions = raw.manifest["resolutions"].get<std::vector<int>>();
  const int hidden = raw.manifest["hidden_units"].get<int>();
  const bool share_bn = raw.manifest["share_bn"].get<bool>();
  const bool frozen_w = raw.manifest["frozen_w"].get<bool>();

  Model<float> model = make_model<float>(backbone, resolutions, hidden, share_bn, 0, frozen_w);
  model.encoder.coefficient = raw.manifest.value("encoder_coefficient", 0.1);

  std::size_t consumed = 0;
  auto take_vec = [&](const std::string& name, std::vector<float>& dst) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw CorruptCheckpointError("checkpoint missing tensor " + name);
    if (it->second.data.size() != dst.size())
      throw CorruptCheckpointError("tensor " + name + " has unexpected size");
    dst = it->second.data;
    ++consumed;
  };
  for (auto& p : model.meta) {
    const std::string base = "meta.layer" + std::to_string(p.layer_id) + ".";
    if (p.hidden_units == 0) {
      take_vec(base + "w", p.w);
      take_vec(base + "b", p.b);
    } else {
      take_vec(base + "w1", p.w1);
      take_vec(base + "b1", p.b1);
      take_vec(base + "w2", p.w2);
      take_vec(base + "b2", p.b2);
    }
  }
  const std::size_t n_sets = share_bn ? 1 : model.bank.sets.size();
  for (std::size_t i = 0; i < n_sets; ++i) {
    const std::string tag =
        share_bn ? std::string("shared") : "s" + std::to_string(model.bank.scales[i]);
    BnSet<float>& set = *model.bank.sets[i];
    for (std::size_t site = 0; site < set.sites.size(); ++site) {
      const std::string base = "bn." + tag + ".site" + std::to_string(site) + ".";
      take_vec(base + "gamma", set.sites[site].gamma);
      take_vec(base + "beta", set.sites[site].beta);
      take_vec(base + "mean", set.sites[site].mean);
      take_vec(base + "var", set.sites[site].var);
    }
  }
  take_vec("fc.weight", model.fc->weight.data);
  take_vec("fc.bias", model.fc->bias.data);
  if (consumed != tensors.size())
    throw CorruptCheckpointError("checkpoint contains unexpected extra tensors");
  return model;
}

}  // namespace anyres
