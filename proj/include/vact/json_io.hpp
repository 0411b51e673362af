#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vact/domain.hpp"

namespace vact {

// One JSON document per episode, field names matching the domain types.
// Serialization is canonical: fixed key order, two-space indent, trailing
// newline; accepted episodes round-trip byte-identically.
nlohmann::ordered_json episode_to_json(const Episode& e);
Episode episode_from_json(const nlohmann::json& j);

std::string episode_to_string(const Episode& e);
Episode episode_from_string(const std::string& text);

Episode load_episode(const std::filesystem::path& path);
void save_episode(const Episode& e, const std::filesystem::path& path);

// Corpus root marker: subset names plus optional registry extensions.
struct Manifest {
  std::vector<std::string> subsets;
  std::vector<std::string> robots;  // extra registry entries
};

Manifest load_manifest(const std::filesystem::path& corpus_dir);
void save_manifest(const Manifest& m, const std::filesystem::path& corpus_dir);

// Episode files under corpus_dir/<subset>/, sorted by (subset, filename).
std::vector<std::filesystem::path> list_episode_files(const std::filesystem::path& corpus_dir,
                                                      const Manifest& manifest);

}  // namespace vact
