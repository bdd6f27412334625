#include "flowsan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "flowsan/error.hpp"

namespace flowsan {

namespace fs = std::filesystem;

namespace {

constexpr const char* kWeights = "weights.bin";
constexpr const char* kManifest = "weights.json";

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + path.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write(const std::vector<const Parameter<float>*>& params, const std::string& role, nlohmann::json meta,
           const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream bin(dir / kWeights, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + (dir / kWeights).string());
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Parameter<float>* p : params) {
    for (float v : p->value.values()) {
      const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(v));
      bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    const std::uint64_t bytes = p->value.size() * sizeof(float);
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  if (!bin) throw IoError("failed writing " + (dir / kWeights).string());
  meta["role"] = role;
  meta["dtype"] = "float32-le";
  meta["tensors"] = std::move(tensors);
  meta["total_bytes"] = offset;
  write_json(meta, dir / kManifest);
}

nlohmann::json manifest(const fs::path& dir, const std::string& role) {
  if (!has_checkpoint(dir)) throw IoError("no checkpoint in " + dir.string());
  nlohmann::json j = read_json(dir / kManifest);
  const std::string found = j.value("role", "");
  if (found != role) throw IoError(dir.string() + " holds a '" + found + "' checkpoint, expected '" + role + "'");
  return j;
}

void fill(const std::vector<Parameter<float>*>& params, const nlohmann::json& meta, const fs::path& dir) {
  std::ifstream bin(dir / kWeights, std::ios::binary);
  if (!bin) throw IoError("cannot read " + (dir / kWeights).string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const auto& tensors = meta.at("tensors");
  if (tensors.size() != params.size()) {
    throw IoError("checkpoint in " + dir.string() + " has " + std::to_string(tensors.size()) +
                  " tensors, architecture expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<float>& p = *params[i];
    const auto& t = tensors[i];
    const std::string name = t.at("name");
    const Shape shape = t.at("shape").get<Shape>();
    if (name != p.name || shape != p.value.shape()) {
      throw IoError("checkpoint tensor " + name + " " + shape_str(shape) + " does not match " + p.name + " " +
                    shape_str(p.value.shape()));
    }
    const std::uint64_t offset = t.at("offset");
    const std::uint64_t size = p.value.size() * sizeof(float);
    if (offset + size > bytes.size()) throw IoError("truncated weights in " + dir.string());
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + offset + k * sizeof bits, sizeof bits);
      p.value[k] = std::bit_cast<float>(to_little(bits));
    }
  }
}

}  // namespace

void save_checkpoint(const SanModel<float>& model, const fs::path& dir) {
  write(model.parameters(), "san", {{"arch", to_json(model.config())}, {"seed", model.seed()}}, dir);
}

void save_checkpoint(const GenderClassifier<float>& model, const fs::path& dir) {
  write(model.parameters(), "gender",
        {{"arch", to_json(model.config())},
         {"seed", model.seed()},
         {"height", model.height()},
         {"width", model.width()}},
        dir);
}

void save_checkpoint(const FaceMatcher<float>& model, const fs::path& dir) {
  write(model.parameters(), "matcher",
        {{"arch", to_json(model.config())},
         {"seed", model.seed()},
         {"height", model.height()},
         {"width", model.width()},
         {"n_classes", model.n_classes()}},
        dir);
}

SanModel<float> load_san(const fs::path& dir) {
  const auto meta = manifest(dir, "san");
  SanModel<float> model(san_config_from_json(meta.at("arch")), meta.at("seed").get<std::uint64_t>());
  fill(model.parameters(), meta, dir);
  return model;
}

GenderClassifier<float> load_gender_classifier(const fs::path& dir) {
  const auto meta = manifest(dir, "gender");
  GenderClassifier<float> model(convnet_config_from_json(meta.at("arch")), meta.at("height"), meta.at("width"),
                                meta.at("seed").get<std::uint64_t>());
  fill(model.parameters(), meta, dir);
  return model;
}

FaceMatcher<float> load_face_matcher(const fs::path& dir) {
  const auto meta = manifest(dir, "matcher");
  FaceMatcher<float> model(convnet_config_from_json(meta.at("arch")), meta.at("height"), meta.at("width"),
                           meta.at("n_classes"), meta.at("seed").get<std::uint64_t>());
  fill(model.parameters(), meta, dir);
  return model;
}

std::string checkpoint_role(const fs::path& dir) { return read_json(dir / kManifest).value("role", ""); }

bool has_checkpoint(const fs::path& dir) {
  return fs::is_regular_file(dir / kManifest) && fs::is_regular_file(dir / kWeights);
}

std::uint64_t checkpoint_hash(const fs::path& dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* name : {kManifest, kWeights}) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw IoError("cannot read " + (dir / name).string());
    for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
      h ^= static_cast<unsigned char>(*it);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void save_chain(const SanChain& chain, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json prov = nlohmann::json::array();
  for (int t = 1; t <= chain.size(); ++t) {
    const auto i = static_cast<std::size_t>(t - 1);
    save_checkpoint(chain.members[i], dir / ("san_" + std::to_string(t)));
    const MemberProvenance& p = chain.provenance.at(i);
    prov.push_back({{"classifier_index", p.classifier_index}, {"order", p.order}, {"seed", p.seed}});
  }
  write_json({{"mode", to_string(chain.mode)}, {"size", chain.size()}, {"provenance", prov}}, dir / "chain.json");
}

SanChain load_chain(const fs::path& dir) {
  if (!has_chain(dir)) throw IoError("no SAN chain in " + dir.string());
  const auto meta = read_json(dir / "chain.json");
  SanChain chain;
  chain.mode = chain_mode_from_string(meta.at("mode"));
  const int n = meta.at("size");
  for (int t = 1; t <= n; ++t) {
    chain.members.push_back(load_san(dir / ("san_" + std::to_string(t))));
    const auto& p = meta.at("provenance").at(static_cast<std::size_t>(t - 1));
    chain.provenance.push_back({p.at("classifier_index"), p.at("order"), p.at("seed").get<std::uint64_t>()});
  }
  return chain;
}

bool has_chain(const fs::path& dir) { return fs::is_regular_file(dir / "chain.json"); }

}  // namespace flowsan
