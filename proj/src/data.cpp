#include "flowsan/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "flowsan/seed.hpp"

namespace flowsan {

namespace {

using json = nlohmann::json;

// Geometry is authored on a 32x32 canvas and rescaled to the requested size.
constexpr double kCanvas = 32.0;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Soft coverage of a region with signed distance d (negative inside).
double coverage(double d, double softness = 0.6) { return logistic(-d / softness); }

double ellipse_distance(double u, double v, double cx, double cy, double a, double b) {
  const double du = (u - cx) / a, dv = (v - cy) / b;
  return (std::sqrt(du * du + dv * dv) - 1.0) * std::min(a, b);
}

struct Grating {
  double fu, fv, phase, amp;
};

struct Spot {
  double du, dv, radius, dark;
};

// Everything about a subject that stays fixed across its samples.
struct Subject {
  int gender = 0;
  int cohort = 0;
  double cx = 16, cy = 16.5;
  double half_w = 9, half_h = 12;
  double skin = 0.65;
  double background = 0.2;
  double hair_tone = 0.15;
  double hair_cap = 3.0;
  double hair_len = 4.0;
  double brow_thick = 1.0;
  double brow_dy = -4.5;
  double eye_sep = 4.2;
  double eye_dy = -2.5;
  double eye_r = 1.3;
  double nose_len = 3.0;
  double mouth_w = 3.5;
  double mouth_dy = 5.5;
  double lip_dark = 0.1;
  double beard = 0.0;
  Grating texture[2]{};
  Spot spots[2]{};
};

Subject draw_subject(std::mt19937_64& rng, int gender, int cohort) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Subject s;
  s.gender = gender;
  s.cohort = cohort;

  // Latent gender expression shared by all cues, plus per-cue jitter. The
  // minority cohort expresses gender through partly different cues.
  const double expression = (gender == 1 ? 1.0 : -1.0) + 0.35 * normal(rng);
  auto cue = [&] { return expression + 0.3 * normal(rng); };
  const double w_hair = cohort == 1 ? 0.45 : 1.0;
  const double w_beard = cohort == 1 ? 0.5 : 1.0;
  const double w_brow = cohort == 1 ? 1.5 : 1.0;
  const double w_aspect = cohort == 1 ? 1.3 : 1.0;

  const double c_aspect = cue();
  s.half_w = std::clamp(9.2 + 0.65 * w_aspect * c_aspect + 0.35 * normal(rng), 7.2, 11.5);
  s.half_h = std::clamp(11.8 - 0.35 * w_aspect * c_aspect + 0.35 * normal(rng), 10.0, 13.5);
  s.cx = 16.0 + 0.5 * normal(rng);
  s.cy = 16.6 + 0.5 * normal(rng);

  s.skin = cohort == 1 ? uni(0.38, 0.5) : uni(0.6, 0.74);
  s.background = uni(0.34, 0.5);
  s.hair_tone = uni(0.05, 0.2);
  s.hair_cap = std::clamp(3.0 + 0.6 * normal(rng), 1.8, 4.5);
  s.hair_len = std::clamp(6.5 - 5.5 * w_hair * cue(), 0.0, 16.0);
  s.brow_thick = std::clamp(1.1 + 0.45 * w_brow * cue(), 0.45, 2.4);
  s.brow_dy = -4.6 + 0.4 * normal(rng);
  s.eye_sep = uni(3.2, 5.4);
  s.eye_dy = -2.4 + 0.6 * normal(rng);
  s.eye_r = uni(0.9, 1.8);
  s.nose_len = uni(1.8, 4.6);
  s.mouth_w = uni(2.4, 5.0);
  s.mouth_dy = 5.6 + 0.7 * normal(rng);
  s.lip_dark = 0.22 * logistic(-2.0 * cue());
  s.beard = 0.25 * w_beard * logistic(2.2 * cue() - 0.6);
  for (Grating& g : s.texture) {
    const double angle = uni(0.0, 2.0 * M_PI);
    const double freq = uni(0.25, 0.6);
    g = {freq * std::cos(angle), freq * std::sin(angle), uni(0.0, 2.0 * M_PI), uni(0.04, 0.09)};
  }
  for (Spot& sp : s.spots) {
    sp = {uni(-6.0, 6.0), uni(-7.0, 7.0), uni(1.0, 2.0), uni(0.1, 0.25)};
  }
  return s;
}

// Per-sample nuisance: small pose shift, exposure and expression changes.
struct Nuisance {
  double shift_u, shift_v;
  double brightness, contrast;
  double mouth_scale, eye_scale;
  double noise_sigma;
};

Image render(const Subject& s, const Nuisance& z, int height, int width, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Image img(height, width);
  const double cx = s.cx + z.shift_u, cy = s.cy + z.shift_v;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) * kCanvas / width;
      const double v = (y + 0.5) * kCanvas / height;
      double val = s.background + 0.08 * (v / kCanvas - 0.5);

      // Long hair sits behind the face and falls along its sides.
      const double d_hair_back =
          ellipse_distance(u, v, cx, cy - 0.5, s.half_w + 2.2, s.half_h + 2.0);
      const double hair_bottom = cy - s.half_h * 0.35 + s.hair_len;
      const double hair_back = coverage(d_hair_back) * coverage(v - hair_bottom, 0.8);
      val += (s.hair_tone - val) * hair_back;

      const double d_face = ellipse_distance(u, v, cx, cy, s.half_w, s.half_h);
      const double face = coverage(d_face);
      double skin = s.skin;
      for (const Grating& g : s.texture) {
        skin += g.amp * std::sin(g.fu * (u - cx) + g.fv * (v - cy) + g.phase);
      }
      for (const Spot& sp : s.spots) {
        const double d = std::hypot(u - cx - sp.du, v - cy - sp.dv) - sp.radius;
        skin -= sp.dark * coverage(d, 0.4);
      }
      // Beard shading on the lower face.
      const double jaw = coverage(-(v - (cy + 1.5)), 1.0);
      skin -= s.beard * jaw;
      val += (skin - val) * face;

      // Hair cap over the top of the face.
      const double cap = face * coverage(v - (cy - s.half_h + s.hair_cap), 0.7);
      val += (s.hair_tone - val) * cap;

      // Brows, eyes, nose, mouth.
      for (int side : {-1, 1}) {
        const double ex = cx + side * s.eye_sep;
        const double brow_d = std::max(std::abs(u - ex) - 2.1, std::abs(v - (cy + s.brow_dy)) - 0.5 * s.brow_thick);
        val += (s.hair_tone + 0.05 - val) * 0.9 * coverage(brow_d, 0.45);
        const double eye_d = ellipse_distance(u, v, ex, cy + s.eye_dy, s.eye_r * 1.3 * z.eye_scale,
                                              s.eye_r * 0.8 * z.eye_scale);
        val += (0.08 - val) * coverage(eye_d, 0.4);
      }
      const double nose_d = std::max(std::abs(u - cx) - 0.6, std::abs(v - (cy + 1.0)) - 0.5 * s.nose_len);
      val -= 0.06 * coverage(nose_d, 0.5) * face;
      const double mouth_d =
          ellipse_distance(u, v, cx, cy + s.mouth_dy, s.mouth_w * z.mouth_scale, 0.9);
      val += (s.skin * 0.6 - s.lip_dark - val) * coverage(mouth_d, 0.45);

      val = 0.5 + (val - 0.5) * z.contrast + z.brightness + z.noise_sigma * normal(rng);
      img.at(y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
    }
  }
  return img;
}

Nuisance draw_nuisance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  return {uni(-0.5, 0.5), uni(-0.5, 0.5), uni(-0.03, 0.03), uni(0.95, 1.05),
          uni(0.9, 1.1), uni(0.9, 1.1), 0.015};
}

json spec_to_json(const GenerationSpec& s) {
  return {{"n_identities", s.n_identities}, {"samples_per_identity", s.samples_per_identity},
          {"height", s.height},             {"width", s.width},
          {"cohort_fraction", s.cohort_fraction}, {"seed", s.seed}};
}

GenerationSpec spec_from_json(const json& j) {
  GenerationSpec s;
  s.n_identities = j.at("n_identities").get<int>();
  s.samples_per_identity = j.at("samples_per_identity").get<int>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.cohort_fraction = j.at("cohort_fraction").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

FaceDataset subset_by_identity(const FaceDataset& full, const std::vector<int>& identities,
                               Split split) {
  std::vector<char> keep;
  int max_id = 0;
  for (const FaceSample& s : full.samples) max_id = std::max(max_id, s.identity);
  keep.assign(static_cast<std::size_t>(max_id) + 1, 0);
  for (int id : identities) keep[static_cast<std::size_t>(id)] = 1;
  FaceDataset out;
  out.split = split;
  out.spec = full.spec;
  for (const FaceSample& s : full.samples) {
    if (keep[static_cast<std::size_t>(s.identity)]) out.samples.push_back(s);
  }
  return out;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::full: return "full";
    case Split::aux_train: return "aux-train";
    case Split::san_train: return "san-train";
    case Split::unseen_train: return "unseen-train";
    case Split::eval: return "eval";
  }
  return "full";
}

Split split_from_string(const std::string& name) {
  for (Split s : {Split::full, Split::aux_train, Split::san_train, Split::unseen_train, Split::eval}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown split '" + name + "'");
}

std::vector<Image> FaceDataset::images() const {
  std::vector<Image> out;
  out.reserve(samples.size());
  for (const FaceSample& s : samples) out.push_back(s.image);
  return out;
}

std::vector<int> FaceDataset::genders() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const FaceSample& s : samples) out.push_back(s.gender);
  return out;
}

void validate(const GenerationSpec& spec) {
  if (spec.n_identities < 2) throw ConfigError("n_identities must be >= 2");
  if (spec.samples_per_identity < 1) throw ConfigError("samples_per_identity must be >= 1");
  if (spec.height < 8 || spec.width < 8) throw ConfigError("image height and width must be >= 8");
  if (!(spec.cohort_fraction >= 0.0 && spec.cohort_fraction <= 1.0)) {
    throw ConfigError("cohort_fraction must lie in [0,1]");
  }
}

FaceDataset generate_dataset(const GenerationSpec& spec) {
  validate(spec);
  FaceDataset ds;
  ds.spec = spec;
  ds.split = Split::full;

  // Exact minority count, placed by a seeded permutation of identities.
  std::vector<int> order(static_cast<std::size_t>(spec.n_identities));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 cohort_rng(derive_seed(spec.seed, "cohort"));
  std::shuffle(order.begin(), order.end(), cohort_rng);
  const int n_minority =
      static_cast<int>(std::lround(spec.cohort_fraction * static_cast<double>(spec.n_identities)));
  std::vector<int> cohort(static_cast<std::size_t>(spec.n_identities), 0);
  for (int r = 0; r < n_minority; ++r) cohort[static_cast<std::size_t>(order[r])] = 1;

  ds.samples.reserve(static_cast<std::size_t>(spec.n_identities) * spec.samples_per_identity);
  for (int id = 0; id < spec.n_identities; ++id) {
    std::mt19937_64 rng(derive_seed(spec.seed, "identity", static_cast<std::uint64_t>(id)));
    const int gender = id % 2;
    const Subject subject = draw_subject(rng, gender, cohort[static_cast<std::size_t>(id)]);
    for (int k = 0; k < spec.samples_per_identity; ++k) {
      const Nuisance z = draw_nuisance(rng);
      ds.samples.push_back({render(subject, z, spec.height, spec.width, rng), gender, id, subject.cohort});
    }
  }
  return ds;
}

DatasetPartition partition_dataset(const FaceDataset& full, const PartitionFractions& f) {
  int max_id = -1;
  for (const FaceSample& s : full.samples) max_id = std::max(max_id, s.identity);
  std::vector<int> ids(static_cast<std::size_t>(max_id) + 1);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(derive_seed(full.seed(), "partition"));
  std::shuffle(ids.begin(), ids.end(), rng);

  // Keep every split gender-balanced by partitioning each gender separately.
  std::vector<int> by_gender[2];
  std::vector<int> gender_of(ids.size(), -1);
  for (const FaceSample& s : full.samples) gender_of[static_cast<std::size_t>(s.identity)] = s.gender;
  for (int id : ids) {
    if (gender_of[static_cast<std::size_t>(id)] >= 0) by_gender[gender_of[static_cast<std::size_t>(id)]].push_back(id);
  }
  std::vector<int> parts[4];
  for (const auto& group : by_gender) {
    const auto n = static_cast<double>(group.size());
    const auto a = static_cast<std::size_t>(std::lround(f.aux_train * n));
    const auto b = a + static_cast<std::size_t>(std::lround(f.san_train * n));
    const auto c = b + static_cast<std::size_t>(std::lround(f.unseen_train * n));
    for (std::size_t i = 0; i < group.size(); ++i) {
      const int slot = i < a ? 0 : i < b ? 1 : i < c ? 2 : 3;
      parts[slot].push_back(group[i]);
    }
  }
  return {subset_by_identity(full, parts[0], Split::aux_train),
          subset_by_identity(full, parts[1], Split::san_train),
          subset_by_identity(full, parts[2], Split::unseen_train),
          subset_by_identity(full, parts[3], Split::eval)};
}

GenderPrototypes compute_prototypes(const FaceDataset& dataset) {
  if (dataset.samples.empty()) throw DegenerateInputError("cannot compute prototypes of an empty dataset");
  const int h = dataset.samples.front().image.height, w = dataset.samples.front().image.width;
  std::vector<double> acc[2] = {std::vector<double>(static_cast<std::size_t>(h) * w, 0.0),
                                std::vector<double>(static_cast<std::size_t>(h) * w, 0.0)};
  std::size_t count[2] = {0, 0};
  for (const FaceSample& s : dataset.samples) {
    require_same_size(dataset.samples.front().image, s.image, "compute_prototypes");
    auto& a = acc[s.gender];
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += s.image.pixels[i];
    ++count[s.gender];
  }
  if (count[0] == 0) throw DegenerateInputError("no female samples: female prototype undefined");
  if (count[1] == 0) throw DegenerateInputError("no male samples: male prototype undefined");
  GenderPrototypes p{Image(h, w), Image(h, w)};
  for (std::size_t i = 0; i < p.female.pixels.size(); ++i) {
    p.female.pixels[i] = static_cast<float>(acc[0][i] / static_cast<double>(count[0]));
    p.male.pixels[i] = static_cast<float>(acc[1][i] / static_cast<double>(count[1]));
  }
  return p;
}

PrototypePair select_prototypes(const GenderPrototypes& prototypes, int y) {
  if (y == 1) return {prototypes.male, prototypes.female};
  return {prototypes.female, prototypes.male};
}

std::vector<std::vector<std::size_t>> minority_subsets(const FaceDataset& dataset, int n_members) {
  if (n_members < 1) throw ConfigError("n_members must be >= 1");
  std::vector<std::size_t> minority;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    if (dataset.samples[i].cohort == 1) minority.push_back(i);
  }
  if (minority.empty()) throw DegenerateInputError("dataset has no minority-cohort samples to resample");
  std::mt19937_64 rng(derive_seed(dataset.seed(), "resample:" + to_string(dataset.split)));
  std::shuffle(minority.begin(), minority.end(), rng);
  std::vector<std::vector<std::size_t>> subsets(static_cast<std::size_t>(n_members));
  const std::size_t base = minority.size() / static_cast<std::size_t>(n_members);
  const std::size_t extra = minority.size() % static_cast<std::size_t>(n_members);
  std::size_t pos = 0;
  for (std::size_t m = 0; m < subsets.size(); ++m) {
    const std::size_t len = base + (m < extra ? 1 : 0);
    subsets[m].assign(minority.begin() + static_cast<std::ptrdiff_t>(pos),
                      minority.begin() + static_cast<std::ptrdiff_t>(pos + len));
    std::sort(subsets[m].begin(), subsets[m].end());
    pos += len;
  }
  return subsets;
}

FaceDataset resample_for_diversity(const FaceDataset& dataset, int member_index, int n_members,
                                   int replication) {
  if (member_index < 0 || member_index >= n_members) throw ConfigError("member_index out of range");
  if (replication < 1) throw ConfigError("replication must be >= 1");
  const auto subsets = minority_subsets(dataset, n_members);
  FaceDataset out = dataset;
  const auto& chosen = subsets[static_cast<std::size_t>(member_index)];
  out.samples.reserve(out.samples.size() + chosen.size() * static_cast<std::size_t>(replication));
  for (int r = 0; r < replication; ++r) {
    for (std::size_t i : chosen) out.samples.push_back(dataset.samples[i]);
  }
  return out;
}

void check_invariants(const FaceDataset& dataset) {
  std::vector<int> gender_of;
  bool seen[2] = {false, false};
  for (const FaceSample& s : dataset.samples) {
    if (s.gender != 0 && s.gender != 1) throw DegenerateInputError("gender label outside {0,1}");
    if (s.identity < 0) throw DegenerateInputError("negative identity");
    for (float v : s.image.pixels) {
      if (!(v >= 0.0f && v <= 1.0f)) throw DegenerateInputError("pixel intensity outside [0,1]");
    }
    if (static_cast<std::size_t>(s.identity) >= gender_of.size()) gender_of.resize(static_cast<std::size_t>(s.identity) + 1, -1);
    int& g = gender_of[static_cast<std::size_t>(s.identity)];
    if (g >= 0 && g != s.gender) throw DegenerateInputError("identity with mixed gender labels");
    g = s.gender;
    seen[s.gender] = true;
  }
  if (!seen[0] || !seen[1]) throw DegenerateInputError("dataset must contain both genders");
}

void save_dataset(const FaceDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["spec"] = spec_to_json(dataset.spec);
  manifest["split"] = to_string(dataset.split);
  manifest["seed"] = dataset.seed();
  const int h = dataset.samples.empty() ? dataset.spec.height : dataset.samples.front().image.height;
  const int w = dataset.samples.empty() ? dataset.spec.width : dataset.samples.front().image.width;
  manifest["height"] = h;
  manifest["width"] = w;
  manifest["hash"] = dataset_hash(dataset);
  json samples = json::array();
  std::uint64_t offset = 0;
  const std::uint64_t stride = static_cast<std::uint64_t>(h) * w * sizeof(float);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const FaceSample& s = dataset.samples[i];
    samples.push_back({{"id", i}, {"gender", s.gender}, {"identity", s.identity},
                       {"cohort", s.cohort}, {"offset", offset}});
    offset += stride;
  }
  manifest["samples"] = std::move(samples);

  std::ofstream bin(dir / "images.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + (dir / "images.bin").string());
  for (const FaceSample& s : dataset.samples) {
    for (float v : s.image.pixels) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw IoError("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << '\n';
}

FaceDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("missing dataset manifest " + (dir / "manifest.json").string());
  const json manifest = json::parse(mf);
  FaceDataset ds;
  ds.spec = spec_from_json(manifest.at("spec"));
  ds.split = split_from_string(manifest.at("split").get<std::string>());
  const int h = manifest.at("height").get<int>(), w = manifest.at("width").get<int>();
  std::ifstream bin(dir / "images.bin", std::ios::binary);
  if (!bin) throw IoError("missing " + (dir / "images.bin").string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  for (const json& js : manifest.at("samples")) {
    FaceSample s;
    s.gender = js.at("gender").get<int>();
    s.identity = js.at("identity").get<int>();
    s.cohort = js.at("cohort").get<int>();
    const auto offset = js.at("offset").get<std::uint64_t>();
    s.image = Image(h, w);
    if (offset + s.image.size() * sizeof(float) > bytes.size()) {
      throw IoError("images.bin is shorter than the manifest requires");
    }
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + offset + i * sizeof(float), sizeof bits);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      s.image.pixels[i] = std::bit_cast<float>(bits);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::uint64_t dataset_hash(const FaceDataset& dataset) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const FaceSample& s : dataset.samples) {
    feed(&s.gender, sizeof s.gender);
    feed(&s.identity, sizeof s.identity);
    feed(&s.cohort, sizeof s.cohort);
    feed(s.image.pixels.data(), s.image.pixels.size() * sizeof(float));
  }
  return h;
}

}  // namespace flowsan
