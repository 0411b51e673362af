#include "vact/compiler.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "vact/errors.hpp"
#include "vact/json_io.hpp"
#include "vact/rng.hpp"

namespace fs = std::filesystem;

namespace vact {

bool SubsetFilters::admits(const Episode& e) const {
  for (const auto& s : excluded_subsets) {
    if (e.subset == s) return false;
  }
  if (min_image_width > 0 || min_image_height > 0) {
    if (!e.camera) return false;
    if (e.camera->width < min_image_width || e.camera->height < min_image_height) return false;
  }
  if (!allowed_modes.empty()) {
    bool ok = false;
    for (const auto& m : allowed_modes) {
      if (m == e.mode) {
        ok = true;
        break;
      }
    }
    if (!ok) return false;
  }
  return true;
}

std::vector<int> eligible_timesteps(const Episode& e, const CompileConfig& cfg) {
  if (cfg.n < 1) throw ValidationError("horizon n must be >= 1");
  std::vector<int> ts;
  const int last = e.actioned_frames() - cfg.n + 1;
  ts.reserve(last > 0 ? static_cast<std::size_t>(last) : 0);
  for (int t = 1; t <= last; ++t) ts.push_back(t);
  return ts;
}

DatasetRecord emit_record(const Episode& e, int t, const CompileConfig& cfg) {
  if (cfg.h < 1) throw ValidationError("window h must be >= 1");
  if (cfg.n < 1) throw ValidationError("horizon n must be >= 1");
  if (t < 1 || t + cfg.n - 1 > e.actioned_frames()) {
    throw ValidationError("timestep " + std::to_string(t) +
                          " lacks a full action target in episode " + e.id);
  }

  InstructionPrompt p;
  p.robot = e.robot;
  p.mode = e.mode;
  p.instruction = e.instruction;
  p.h = cfg.h;
  p.n = cfg.n;
  for (int i = std::max(1, t - cfg.h + 1); i <= t; ++i) {
    p.history.push_back(e.frames[static_cast<std::size_t>(i - 1)].state);
  }

  Response r;
  r.include_trace = cfg.codec.include_trace;
  for (int i = t; i <= t + cfg.n - 1; ++i) {
    r.actions.push_back(*e.frames[static_cast<std::size_t>(i - 1)].action);
  }
  if (cfg.codec.include_trace) r.trace = build_trace(e, t, cfg.trace_source);

  DatasetRecord rec;
  rec.prompt = render_prompt(p, cfg.codec);
  rec.target = encode_response(r, cfg.codec);
  rec.image_ref = e.frames[static_cast<std::size_t>(t - 1)].image_ref;
  rec.subset = e.subset;
  rec.episode_id = e.id;
  rec.t = t;
  rec.robot = e.robot.name;
  rec.mode = e.mode.prose();
  return rec;
}

nlohmann::ordered_json DatasetRecord::to_json() const {
  nlohmann::ordered_json j;
  j["prompt"] = prompt;
  j["target"] = target;
  j["image_ref"] = image_ref;
  j["subset"] = subset;
  j["episode_id"] = episode_id;
  j["t"] = t;
  j["robot"] = robot;
  j["mode"] = mode;
  return j;
}

DatasetRecord DatasetRecord::from_json(const nlohmann::json& j) {
  DatasetRecord r;
  r.prompt = j.at("prompt").get<std::string>();
  r.target = j.at("target").get<std::string>();
  r.image_ref = j.at("image_ref").get<std::string>();
  r.subset = j.at("subset").get<std::string>();
  r.episode_id = j.at("episode_id").get<std::string>();
  r.t = j.at("t").get<int>();
  r.robot = j.at("robot").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  return r;
}

namespace {

nlohmann::ordered_json counts_to_json(const std::map<std::string, std::uint64_t>& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

std::map<std::string, std::uint64_t> counts_from_json(const nlohmann::json& j) {
  std::map<std::string, std::uint64_t> m;
  for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = it.value().get<std::uint64_t>();
  return m;
}

}  // namespace

bool CorpusStats::records_equal(const CorpusStats& other) const {
  return total == other.total && per_subset == other.per_subset &&
         per_robot == other.per_robot && per_mode == other.per_mode;
}

nlohmann::ordered_json CorpusStats::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["total"] = total;
  j["per_subset"] = counts_to_json(per_subset);
  j["per_robot"] = counts_to_json(per_robot);
  j["per_mode"] = counts_to_json(per_mode);
  j["rejected_episodes"] = rejected_episodes;
  j["rejected_per_subset"] = counts_to_json(rejected_per_subset);
  return j;
}

CorpusStats CorpusStats::from_json(const nlohmann::json& j) {
  CorpusStats s;
  s.total = j.at("total").get<std::uint64_t>();
  s.per_subset = counts_from_json(j.at("per_subset"));
  s.per_robot = counts_from_json(j.at("per_robot"));
  s.per_mode = counts_from_json(j.at("per_mode"));
  s.rejected_episodes = j.value("rejected_episodes", std::uint64_t{0});
  if (j.contains("rejected_per_subset")) {
    s.rejected_per_subset = counts_from_json(j.at("rejected_per_subset"));
  }
  return s;
}

std::string CorpusStats::table() const {
  std::ostringstream out;
  auto section = [&](const char* name, const std::map<std::string, std::uint64_t>& m) {
    if (m.empty()) return;
    out << "  by " << name << "\n";
    for (const auto& [k, v] : m) out << "    " << k << "  " << v << "\n";
  };
  out << "records  " << total << "\n";
  section("subset", per_subset);
  section("robot", per_robot);
  section("mode", per_mode);
  out << "rejected episodes  " << rejected_episodes << "\n";
  section("rejected subset", rejected_per_subset);
  return out.str();
}

namespace {

struct EpisodeOut {
  std::string subset;      // global-order key
  std::string episode_id;  // global-order key
  bool rejected = false;
  std::vector<DatasetRecord> records;
};

EpisodeOut process_episode(const fs::path& file, const CompileConfig& cfg,
                           const RobotRegistry& registry) {
  EpisodeOut o;
  o.subset = file.parent_path().filename().string();
  o.episode_id = file.stem().string();

  Episode e;
  try {
    e = load_episode(file);
  } catch (const Error&) {
    o.rejected = true;
    return o;
  }
  o.subset = e.subset;
  o.episode_id = e.id;
  if (!cfg.filters.admits(e) || !validate_episode(e, registry).empty()) {
    o.rejected = true;
    return o;
  }
  try {
    for (int t : eligible_timesteps(e, cfg)) {
      o.records.push_back(emit_record(e, t, cfg));
    }
  } catch (const Error&) {
    o.rejected = true;
    o.records.clear();
    return o;
  }

  // Every emitted record must re-parse. A failure here is a codec defect,
  // not bad input data, so it aborts the compile instead of rejecting.
  for (const auto& rec : o.records) {
    try {
      parse_prompt(rec.prompt, cfg.codec);
      parse_response(rec.target, cfg.n, 0, cfg.codec);
    } catch (const Error& ex) {
      throw ValidationError("self-validation failed for episode " + o.episode_id + " t=" +
                            std::to_string(rec.t) + ": " + ex.what());
    }
  }
  return o;
}

}  // namespace

CompileResult compile(const fs::path& corpus_dir, const fs::path& out_dir,
                      const CompileConfig& cfg) {
  if (cfg.h < 1 || cfg.n < 1) throw ValidationError("h and n must be >= 1");
  if (cfg.shard_size < 1) throw ValidationError("shard_size must be >= 1");
  if (cfg.jobs < 1) throw ValidationError("jobs must be >= 1");

  const Manifest manifest = load_manifest(corpus_dir);
  RobotRegistry registry = RobotRegistry::defaults();
  for (const auto& r : manifest.robots) registry.add(r);
  const std::vector<fs::path> files = list_episode_files(corpus_dir, manifest);

  // Episodes map in parallel; the merge below restores the global
  // (subset, episode_id, t) order, so worker count cannot leak into bytes.
  std::vector<EpisodeOut> results(files.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    std::size_t i;
    while (!failed && (i = next.fetch_add(1)) < files.size()) {
      try {
        results[i] = process_episode(files[i], cfg, registry);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_error) first_error = std::current_exception();
        failed = true;
      }
    }
  };
  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), std::max<std::size_t>(files.size(), 1));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::stable_sort(results.begin(), results.end(), [](const EpisodeOut& a, const EpisodeOut& b) {
    if (a.subset != b.subset) return a.subset < b.subset;
    return a.episode_id < b.episode_id;
  });

  CompileResult out;
  std::vector<DatasetRecord> records;
  for (auto& r : results) {
    if (r.rejected) {
      ++out.stats.rejected_episodes;
      ++out.stats.rejected_per_subset[r.subset];
      continue;
    }
    for (auto& rec : r.records) {
      ++out.stats.total;
      ++out.stats.per_subset[rec.subset];
      ++out.stats.per_robot[rec.robot];
      ++out.stats.per_mode[rec.mode];
      records.push_back(std::move(rec));
    }
  }

  if (cfg.seed != 0) {
    Rng rng(cfg.seed);
    for (std::size_t i = records.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
      std::swap(records[i - 1], records[j]);
    }
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("shard-", 0) == 0 && entry.path().extension() == ".jsonl") {
      fs::remove(entry.path());
    }
  }

  for (std::size_t at = 0, shard = 0; at < records.size(); at += cfg.shard_size, ++shard) {
    char name[32];
    std::snprintf(name, sizeof name, "shard-%05zu.jsonl", shard);
    const fs::path shard_path = out_dir / name;
    std::ofstream f(shard_path, std::ios::binary);
    if (!f) throw IoError("cannot open " + shard_path.string() + " for writing");
    const std::size_t end = std::min(records.size(), at + cfg.shard_size);
    for (std::size_t i = at; i < end; ++i) {
      f << records[i].to_json().dump() << "\n";
    }
    if (!f) throw IoError("short write to " + shard_path.string());
    out.shard_files.push_back(shard_path);
  }

  {
    const fs::path stats_path = out_dir / "stats.json";
    std::ofstream f(stats_path, std::ios::binary);
    if (!f) throw IoError("cannot open " + stats_path.string() + " for writing");
    f << out.stats.to_json().dump(2) << "\n";
  }
  return out;
}

CorpusStats stats_report(const fs::path& shards_dir) {
  if (!fs::is_directory(shards_dir)) {
    throw IoError(shards_dir.string() + " is not a directory");
  }
  std::vector<fs::path> shards;
  for (const auto& entry : fs::directory_iterator(shards_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("shard-", 0) == 0 && entry.path().extension() == ".jsonl") {
      shards.push_back(entry.path());
    }
  }
  std::sort(shards.begin(), shards.end());

  CorpusStats stats;
  for (const auto& shard : shards) {
    std::ifstream f(shard, std::ios::binary);
    if (!f) throw IoError("cannot open " + shard.string());
    std::string line;
    for (std::size_t line_no = 1; std::getline(f, line); ++line_no) {
      if (line.empty()) continue;
      DatasetRecord rec;
      try {
        rec = DatasetRecord::from_json(nlohmann::json::parse(line));
      } catch (const std::exception& ex) {
        throw IoError(shard.filename().string() + ":" + std::to_string(line_no) + ": " +
                      ex.what());
      }
      ++stats.total;
      ++stats.per_subset[rec.subset];
      ++stats.per_robot[rec.robot];
      ++stats.per_mode[rec.mode];
    }
  }
  return stats;
}

}  // namespace vact
