#pragma once

// Model checkpoints: weights.bin holds the parameter tensors as concatenated
// little-endian float32; weights.json lists names, shapes, byte offsets, the
// architecture and the init seed.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "flowsan/inference.hpp"
#include "flowsan/models.hpp"

namespace flowsan {

void save_checkpoint(const SanModel<float>& model, const std::filesystem::path& dir);
void save_checkpoint(const GenderClassifier<float>& model, const std::filesystem::path& dir);
void save_checkpoint(const FaceMatcher<float>& model, const std::filesystem::path& dir);

SanModel<float> load_san(const std::filesystem::path& dir);
GenderClassifier<float> load_gender_classifier(const std::filesystem::path& dir);
FaceMatcher<float> load_face_matcher(const std::filesystem::path& dir);

// Role recorded in a checkpoint manifest: "san", "gender" or "matcher".
std::string checkpoint_role(const std::filesystem::path& dir);
bool has_checkpoint(const std::filesystem::path& dir);

// FNV-1a over the manifest and weight bytes.
std::uint64_t checkpoint_hash(const std::filesystem::path& dir);

// Chains are stored as dir/san_1 .. dir/san_n plus chain.json (mode, provenance).
void save_chain(const SanChain& chain, const std::filesystem::path& dir);
SanChain load_chain(const std::filesystem::path& dir);
bool has_chain(const std::filesystem::path& dir);

}  // namespace flowsan
