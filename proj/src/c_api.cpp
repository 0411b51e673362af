#include "vact/vact.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "vact/compiler.hpp"
#include "vact/errors.hpp"
#include "vact/eval.hpp"
#include "vact/json_io.hpp"
#include "vact/rng.hpp"
#include "vact/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

// One translation from the exception hierarchy to status codes, shared by
// every entry point.
template <typename F>
vact_status guarded(F&& f) {
  try {
    f();
    return VACT_OK;
  } catch (const vact::MalformedResponse& e) {
    set_error(e.what());
    return VACT_ERROR_PARSE;
  } catch (const nlohmann::json::exception& e) {
    set_error(e.what());
    return VACT_ERROR_PARSE;
  } catch (const vact::ValidationError& e) {
    set_error(e.what());
    return VACT_ERROR_INVALID_ARGUMENT;
  } catch (const vact::TraceError& e) {
    set_error(e.what());
    return VACT_ERROR_INVALID_ARGUMENT;
  } catch (const vact::IoError& e) {
    set_error(e.what());
    return VACT_ERROR_IO;
  } catch (const std::exception& e) {
    set_error(e.what());
    return VACT_ERROR_RUNTIME;
  } catch (...) {
    set_error("unknown error");
    return VACT_ERROR_RUNTIME;
  }
}

vact::ControlMode mode_from_json(const json& j) {
  return vact::make_control_mode(
      vact::actuation_from_string(j.at("actuation").get<std::string>()),
      vact::control_frame_from_string(j.at("frame").get<std::string>()));
}

vact::CodecConfig codec_from_json(const json& j) {
  vact::CodecConfig cfg;
  cfg.decimals = j.value("decimals", cfg.decimals);
  cfg.gripper_threshold = j.value("gripper_threshold", cfg.gripper_threshold);
  cfg.include_trace = j.value("include_trace", cfg.include_trace);
  if (j.contains("trace_coord_format")) {
    cfg.trace_coord_format =
        vact::trace_coord_format_from_string(j.at("trace_coord_format").get<std::string>());
  }
  cfg.history_includes_gripper =
      j.value("history_includes_gripper", cfg.history_includes_gripper);
  cfg.image_width = j.value("image_width", cfg.image_width);
  cfg.image_height = j.value("image_height", cfg.image_height);
  return cfg;
}

vact::InstructionPrompt prompt_from_json(const json& j) {
  vact::InstructionPrompt p;
  p.robot.name = j.at("robot").at("name").get<std::string>();
  p.mode = mode_from_json(j.at("mode"));
  p.instruction = j.at("instruction").get<std::string>();
  for (const auto& s : j.at("history")) {
    vact::ProprioState st;
    st.joints = s.at("joints").get<std::vector<double>>();
    st.gripper = s.at("gripper").get<double>();
    p.history.push_back(std::move(st));
  }
  p.h = j.at("h").get<int>();
  p.n = j.at("n").get<int>();
  return p;
}

vact::Response response_from_json(const json& j) {
  vact::Response r;
  for (const auto& a : j.at("actions")) {
    r.actions.push_back(vact::Action{a.at("values").get<std::vector<double>>()});
  }
  r.include_trace = j.value("include_trace", true);
  if (j.contains("trace") && !j.at("trace").is_null()) {
    vact::VisualTrace tr;
    tr.start_t = j.at("trace").value("start_t", 1);
    for (const auto& pt : j.at("trace").at("points")) {
      tr.points.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
    }
    r.trace = std::move(tr);
  }
  return r;
}

ordered_json response_to_json(const vact::Response& r) {
  ordered_json j;
  j["actions"] = ordered_json::array();
  for (const auto& a : r.actions) j["actions"].push_back({{"values", a.values}});
  j["include_trace"] = r.include_trace;
  if (r.trace) {
    ordered_json pts = ordered_json::array();
    for (const auto& p : r.trace->points) pts.push_back({p.x, p.y});
    j["trace"] = {{"points", pts}, {"start_t", r.trace->start_t}};
  } else {
    j["trace"] = nullptr;
  }
  return j;
}

ordered_json scene_to_json(const vact::SceneState& s) {
  ordered_json j;
  j["arm"] = {{"joints", s.arm.joints},
              {"link_lengths", s.arm.link_lengths},
              {"gripper", s.arm.gripper},
              {"held_object", s.arm.held_object ? ordered_json(*s.arm.held_object)
                                                : ordered_json(nullptr)}};
  j["objects"] = ordered_json::array();
  for (const auto& o : s.objects) {
    j["objects"].push_back(
        {{"id", o.id},
         {"position", {o.position.x, o.position.y}},
         {"stacked_on", o.stacked_on ? ordered_json(*o.stacked_on) : ordered_json(nullptr)}});
  }
  j["task"] = {{"kind", vact::to_string(s.task.kind)},
               {"target_id", s.task.target_id},
               {"target_point", {s.task.target_point.x, s.task.target_point.y}},
               {"epsilon", s.task.epsilon},
               {"lift_height", s.task.lift_height}};
  j["step_count"] = s.step_count;
  return j;
}

}  // namespace

struct vact_codec {
  vact::CodecConfig cfg;
};

struct vact_env {
  vact::Env env;
};

extern "C" {

const char* vact_version(void) { return "0.1.0"; }

const char* vact_last_error(void) { return g_last_error.c_str(); }

void vact_string_free(char* s) { std::free(s); }

vact_codec* vact_codec_create(const char* config_json) {
  vact_codec* out = nullptr;
  const vact_status st = guarded([&] {
    vact::CodecConfig cfg;
    if (config_json && *config_json) cfg = codec_from_json(json::parse(config_json));
    if (cfg.decimals < 1 || cfg.decimals > 6) {
      throw vact::ValidationError("decimals must be in 1..6");
    }
    out = new vact_codec{cfg};
  });
  return st == VACT_OK ? out : nullptr;
}

void vact_codec_destroy(vact_codec* codec) { delete codec; }

vact_status vact_render_prompt(const vact_codec* codec, const char* prompt_json,
                               char** text_out) {
  return guarded([&] {
    if (!codec || !prompt_json || !text_out) {
      throw vact::ValidationError("null argument");
    }
    const std::string text =
        vact::render_prompt(prompt_from_json(json::parse(prompt_json)), codec->cfg);
    *text_out = dup_string(text);
  });
}

vact_status vact_encode_response(const vact_codec* codec, const char* response_json,
                                 char** text_out) {
  return guarded([&] {
    if (!codec || !response_json || !text_out) {
      throw vact::ValidationError("null argument");
    }
    const std::string text =
        vact::encode_response(response_from_json(json::parse(response_json)), codec->cfg);
    *text_out = dup_string(text);
  });
}

vact_status vact_parse_response(const vact_codec* codec, const char* text,
                                int32_t expected_n, int32_t expected_arity,
                                char** response_json_out) {
  return guarded([&] {
    if (!codec || !text || !response_json_out) {
      throw vact::ValidationError("null argument");
    }
    const vact::Response r =
        vact::parse_response(text, expected_n, expected_arity, codec->cfg);
    *response_json_out = dup_string(response_to_json(r).dump());
  });
}

vact_env* vact_env_create(const char* config_json) {
  vact_env* out = nullptr;
  const vact_status st = guarded([&] {
    if (!config_json) throw vact::ValidationError("null config");
    const json j = json::parse(config_json);
    const vact::TaskKind task = vact::task_kind_from_string(j.at("task").get<std::string>());
    const std::uint64_t seed = j.at("seed").get<std::uint64_t>();
    vact::ControlMode mode;  // default delta joint velocity
    if (j.contains("mode")) mode = mode_from_json(j.at("mode"));
    out = new vact_env{vact::Env(task, seed, vact::SimParams{}, mode)};
  });
  return st == VACT_OK ? out : nullptr;
}

void vact_env_destroy(vact_env* env) { delete env; }

vact_status vact_env_step(vact_env* env, const double* action, size_t arity) {
  return guarded([&] {
    if (!env || !action) throw vact::ValidationError("null argument");
    vact::Action a;
    a.values.assign(action, action + arity);
    env->env.apply(a);
  });
}

vact_status vact_env_scene_json(const vact_env* env, char** json_out) {
  return guarded([&] {
    if (!env || !json_out) throw vact::ValidationError("null argument");
    *json_out = dup_string(scene_to_json(env->env.scene()).dump());
  });
}

int vact_env_succeeded(const vact_env* env) {
  if (!env) return -1;
  return env->env.succeeded() ? 1 : 0;
}

vact_status vact_gen(const char* config_json, char** summary_json_out) {
  return guarded([&] {
    if (!config_json) throw vact::ValidationError("null config");
    const json j = json::parse(config_json);
    const vact::TaskKind task = vact::task_kind_from_string(j.at("task").get<std::string>());
    const int episodes = j.value("episodes", 1);
    if (episodes < 1) throw vact::ValidationError("episodes must be >= 1");
    const std::uint64_t seed = j.value("seed", std::uint64_t{0});
    const fs::path out_dir = j.at("out").get<std::string>();
    vact::ControlMode mode;
    if (j.contains("mode")) mode = mode_from_json(j.at("mode"));
    const int jobs = j.value("jobs", 1);
    if (jobs < 1) throw vact::ValidationError("jobs must be >= 1");

    const vact::SimParams params;
    const std::string subset = "sim_" + vact::to_string(task);
    std::error_code ec;
    fs::create_directories(out_dir / subset, ec);
    if (ec) throw vact::IoError("cannot create " + (out_dir / subset).string());

    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    auto worker = [&] {
      int i;
      while (!failed && (i = next.fetch_add(1)) < episodes) {
        try {
          const std::uint64_t sub = vact::mix_seed(seed, static_cast<std::uint64_t>(i));
          const vact::DemoResult demo = vact::scripted_demo(task, sub, params, mode, subset);
          vact::save_episode(demo.episode,
                             out_dir / subset / (demo.episode.id + ".json"));
          fs::create_directories(out_dir / subset / "frames" / demo.episode.id);
          for (std::size_t k = 0; k < demo.images.size(); ++k) {
            vact::write_pgm(demo.images[k], out_dir / demo.episode.frames[k].image_ref);
          }
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!first_error) first_error = std::current_exception();
          failed = true;
        }
      }
    };
    const int n_workers = std::min(jobs, episodes);
    if (n_workers <= 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
      for (auto& th : threads) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    // The manifest accumulates subsets so several gen runs can share a corpus.
    vact::Manifest manifest;
    try {
      manifest = vact::load_manifest(out_dir);
    } catch (const vact::Error&) {
    }
    if (std::find(manifest.subsets.begin(), manifest.subsets.end(), subset) ==
        manifest.subsets.end()) {
      manifest.subsets.push_back(subset);
    }
    std::sort(manifest.subsets.begin(), manifest.subsets.end());
    vact::save_manifest(manifest, out_dir);

    if (summary_json_out) {
      ordered_json summary;
      summary["schema_version"] = 1;
      summary["episodes"] = episodes;
      summary["subset"] = subset;
      summary["corpus"] = out_dir.string();
      *summary_json_out = dup_string(summary.dump());
    }
  });
}

vact_status vact_compile(const char* config_json, char** stats_json_out) {
  return guarded([&] {
    if (!config_json) throw vact::ValidationError("null config");
    const json j = json::parse(config_json);
    const fs::path corpus = j.at("corpus").get<std::string>();
    const fs::path out = j.at("out").get<std::string>();

    vact::CompileConfig cfg;
    cfg.h = j.value("h", cfg.h);
    cfg.n = j.value("n", cfg.n);
    cfg.shard_size = j.value("shard_size", cfg.shard_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.jobs = j.value("jobs", cfg.jobs);
    if (j.contains("codec")) cfg.codec = codec_from_json(j.at("codec"));
    if (j.contains("trace_source")) {
      const auto& ts = j.at("trace_source");
      if (ts.contains("kind")) {
        cfg.trace_source.kind = vact::trace_kind_from_string(ts.at("kind").get<std::string>());
      }
      if (ts.contains("oob_policy")) {
        cfg.trace_source.oob_policy =
            vact::oob_policy_from_string(ts.at("oob_policy").get<std::string>());
      }
    }
    if (j.contains("filters")) {
      const auto& f = j.at("filters");
      cfg.filters.min_image_width = f.value("min_image_width", 0);
      cfg.filters.min_image_height = f.value("min_image_height", 0);
      if (f.contains("allowed_modes")) {
        for (const auto& m : f.at("allowed_modes")) {
          cfg.filters.allowed_modes.push_back(mode_from_json(m));
        }
      }
      if (f.contains("excluded_subsets")) {
        cfg.filters.excluded_subsets =
            f.at("excluded_subsets").get<std::vector<std::string>>();
      }
    }

    const vact::CompileResult result = vact::compile(corpus, out, cfg);
    if (stats_json_out) {
      ordered_json stats = result.stats.to_json();
      stats["shards"] = result.shard_files.size();
      *stats_json_out = dup_string(stats.dump());
    }
  });
}

vact_status vact_validate_corpus(const char* corpus_dir, char** report_json_out) {
  return guarded([&] {
    if (!corpus_dir) throw vact::ValidationError("null corpus path");
    const fs::path root = corpus_dir;
    const vact::Manifest manifest = vact::load_manifest(root);
    vact::RobotRegistry registry = vact::RobotRegistry::defaults();
    for (const auto& r : manifest.robots) registry.add(r);

    ordered_json reports = ordered_json::array();
    std::uint64_t total_violations = 0;
    std::uint64_t episode_count = 0;
    for (const fs::path& file : vact::list_episode_files(root, manifest)) {
      ++episode_count;
      const std::string rel = fs::relative(file, root).string();
      try {
        const vact::Episode e = vact::load_episode(file);
        const std::vector<vact::Violation> violations = validate_episode(e, registry);
        if (violations.empty()) continue;
        total_violations += violations.size();
        ordered_json entry;
        entry["file"] = rel;
        entry["episode_id"] = e.id;
        entry["violations"] = ordered_json::array();
        for (const auto& v : violations) {
          entry["violations"].push_back(
              {{"frame", v.frame_index}, {"field", v.field}, {"message", v.message}});
        }
        reports.push_back(std::move(entry));
      } catch (const vact::Error& ex) {
        ++total_violations;
        reports.push_back({{"file", rel}, {"error", ex.what()}});
      }
    }

    if (report_json_out) {
      ordered_json report;
      report["schema_version"] = 1;
      report["episodes"] = episode_count;
      report["total_violations"] = total_violations;
      report["reports"] = std::move(reports);
      *report_json_out = dup_string(report.dump());
    }
  });
}

}  // extern "C"

namespace {

vact::EvalConfig eval_config_from_json(const json& j) {
  vact::EvalConfig cfg;
  cfg.task = vact::task_kind_from_string(j.at("task").get<std::string>());
  cfg.h = j.value("h", cfg.h);
  cfg.n = j.value("n", cfg.n);
  cfg.episodes_per_task = j.value("episodes", cfg.episodes_per_task);
  if (j.contains("seeds")) {
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } else if (j.contains("num_seeds")) {
    const int k = j.at("num_seeds").get<int>();
    if (k < 1) throw vact::ValidationError("num_seeds must be >= 1");
    cfg.seeds.clear();
    for (int i = 1; i <= k; ++i) cfg.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  cfg.max_steps = j.value("max_steps", cfg.max_steps);
  if (j.contains("codec")) cfg.codec = codec_from_json(j.at("codec"));
  if (j.contains("mode")) cfg.mode = mode_from_json(j.at("mode"));
  cfg.response_timeout_s = j.value("timeout_s", cfg.response_timeout_s);
  cfg.jobs = j.value("jobs", cfg.jobs);
  return cfg;
}

}  // namespace

extern "C" vact_status vact_eval(const char* config_json, char** report_json_out) {
  return guarded([&] {
    if (!config_json) throw vact::ValidationError("null config");
    const json j = json::parse(config_json);
    const vact::EvalConfig cfg = eval_config_from_json(j);
    const std::string policy = j.at("policy").get<std::string>();
    const vact::PolicyFactory factory =
        vact::policy_factory_from_spec(policy, cfg.response_timeout_s);
    const vact::EvalReport report = vact::evaluate(cfg, factory);
    if (report_json_out) *report_json_out = dup_string(report.to_json().dump());
  });
}

extern "C" vact_status vact_score(const char* targets_path, const char* dists_path,
                                  char** result_json_out) {
  return guarded([&] {
    if (!targets_path || !dists_path) throw vact::ValidationError("null path");
    auto load_json = [](const char* path) {
      std::ifstream f(path, std::ios::binary);
      if (!f) throw vact::IoError(std::string("cannot open ") + path);
      try {
        return json::parse(f);
      } catch (const json::exception& ex) {
        throw vact::IoError(std::string(path) + ": " + ex.what());
      }
    };
    const std::vector<int> targets = load_json(targets_path).get<std::vector<int>>();
    const std::vector<std::vector<double>> dists =
        load_json(dists_path).get<std::vector<std::vector<double>>>();
    const vact::SequenceNllResult res = vact::sequence_nll(targets, dists);
    if (result_json_out) {
      ordered_json out;
      out["finite"] = std::isfinite(res.value);
      out["nll"] = std::isfinite(res.value) ? ordered_json(res.value) : ordered_json(nullptr);
      out["zero_index"] =
          res.zero_index ? ordered_json(*res.zero_index) : ordered_json(nullptr);
      *result_json_out = dup_string(out.dump());
    }
  });
}

extern "C" vact_status vact_sequence_nll(const int32_t* target_ids, size_t count,
                                         const double* dists, size_t vocab,
                                         double* nll_out) {
  return guarded([&] {
    if ((!target_ids || !dists) && count > 0) throw vact::ValidationError("null argument");
    if (!nll_out) throw vact::ValidationError("null output");
    if (vocab == 0 && count > 0) throw vact::ValidationError("vocab must be > 0");
    std::vector<int> ids(target_ids, target_ids + count);
    std::vector<std::vector<double>> rows;
    rows.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      rows.emplace_back(dists + i * vocab, dists + (i + 1) * vocab);
    }
    *nll_out = vact::sequence_nll(ids, rows).value;
  });
}

extern "C" vact_status vact_policy_serve(const char* policy_spec) {
  return guarded([&] {
    if (!policy_spec) throw vact::ValidationError("null policy spec");
    vact::policy_serve(policy_spec, std::cin, std::cout);
  });
}

namespace {

class CallbackPolicy : public vact::Policy {
 public:
  CallbackPolicy(vact_policy_begin_fn begin_fn, vact_policy_respond_fn respond_fn, void* user)
      : begin_fn_(begin_fn), respond_fn_(respond_fn), user_(user) {}

  void begin_episode(const vact::EpisodeContext& ctx) override {
    if (begin_fn_) begin_fn_(user_, ctx.to_json().dump().c_str());
  }

  std::string respond(const vact::Observation&, const std::string& prompt) override {
    char* response = nullptr;
    const int rc = respond_fn_(user_, prompt.c_str(), &response);
    if (rc != 0 || !response) {
      std::free(response);
      throw vact::PolicyError("callback policy failed with code " + std::to_string(rc));
    }
    std::string out = response;
    std::free(response);
    return out;
  }

 private:
  vact_policy_begin_fn begin_fn_;
  vact_policy_respond_fn respond_fn_;
  void* user_;
};

}  // namespace

extern "C" vact_status vact_eval_with_policy(const char* config_json,
                                             vact_policy_begin_fn begin_fn,
                                             vact_policy_respond_fn respond_fn, void* user,
                                             char** report_json_out) {
  return guarded([&] {
    if (!config_json) throw vact::ValidationError("null config");
    if (!respond_fn) throw vact::ValidationError("null respond callback");
    const vact::EvalConfig cfg = eval_config_from_json(json::parse(config_json));
    const vact::PolicyFactory factory = [&] {
      return std::make_unique<CallbackPolicy>(begin_fn, respond_fn, user);
    };
    const vact::EvalReport report = vact::evaluate(cfg, factory);
    if (report_json_out) *report_json_out = dup_string(report.to_json().dump());
  });
}
