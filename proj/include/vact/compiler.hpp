#pragma once

#include <cstdint>
#include <filesystem>
#include <map>

#include <json.hpp>

#include "vact/codec.hpp"
#include "vact/domain.hpp"
#include "vact/trace.hpp"

namespace vact {

// Declarative subset exclusions; mirrors dropping sources with poor image
// quality or small resolution without hardcoding their names.
struct SubsetFilters {
  int min_image_width = 0;
  int min_image_height = 0;
  std::vector<ControlMode> allowed_modes;  // empty = all
  std::vector<std::string> excluded_subsets;

  bool admits(const Episode& e) const;
};

struct CompileConfig {
  int h = 5;
  int n = 1;
  CodecConfig codec;
  TraceSource trace_source;
  SubsetFilters filters;
  int shard_size = 1000;
  std::uint64_t seed = 0;  // 0 = corpus order, >0 = deterministic shuffle
  int jobs = 1;
};

// One training example: prompt text, target response text, image pointer.
struct DatasetRecord {
  std::string prompt;
  std::string target;
  std::string image_ref;
  std::string subset;
  std::string episode_id;
  int t = 0;
  std::string robot;
  std::string mode;  // prose form

  nlohmann::ordered_json to_json() const;
  static DatasetRecord from_json(const nlohmann::json& j);
};

struct CorpusStats {
  std::uint64_t total = 0;
  std::map<std::string, std::uint64_t> per_subset;
  std::map<std::string, std::uint64_t> per_robot;
  std::map<std::string, std::uint64_t> per_mode;
  std::uint64_t rejected_episodes = 0;
  std::map<std::string, std::uint64_t> rejected_per_subset;

  // Equality over the fields recomputable from shards alone.
  bool records_equal(const CorpusStats& other) const;

  nlohmann::ordered_json to_json() const;
  static CorpusStats from_json(const nlohmann::json& j);
  std::string table() const;
};

// Timesteps with the full n-step action target available.
std::vector<int> eligible_timesteps(const Episode& e, const CompileConfig& cfg);

// Record for (episode, t): prompt from states t-h+1..t (left-padded), target
// from actions t..t+n-1 plus the trace from t. Trace errors propagate.
DatasetRecord emit_record(const Episode& e, int t, const CompileConfig& cfg);

struct CompileResult {
  std::vector<std::filesystem::path> shard_files;
  CorpusStats stats;
};

// Corpus -> JSONL shards "shard-{index:05}.jsonl" + stats. Deterministic for
// fixed (corpus, cfg) at any worker count; unreadable or invalid episodes are
// skipped and counted as rejected. Every emitted record is re-parsed before
// it is written.
CompileResult compile(const std::filesystem::path& corpus_dir,
                      const std::filesystem::path& out_dir, const CompileConfig& cfg);

// Recount from shards on disk. Throws IoError naming shard and line on
// corrupt input.
CorpusStats stats_report(const std::filesystem::path& shards_dir);

}  // namespace vact
