// vact: scripted-demo generation, dataset compilation, and closed-loop
// evaluation behind one binary. All work happens through the shared C API,
// so this file doubles as a usage example for external bindings.

#include <cstdio>
#include <iostream>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vact/vact.h"

using json = nlohmann::ordered_json;

namespace {

// Exit-code contract: 0 success, 1 data/runtime error, 2 usage error.
int exit_code_for(vact_status st) {
  if (st == VACT_OK) return 0;
  std::cerr << "error: " << vact_last_error() << "\n";
  return (st == VACT_ERROR_INVALID_ARGUMENT || st == VACT_ERROR_PARSE) ? 2 : 1;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  vact_string_free(s);
  return out;
}

json mode_json(const std::string& name) {
  if (name == "joint_velocity") {
    return {{"actuation", "joint_velocity"}, {"frame", "delta"}};
  }
  if (name == "joint_position_delta") {
    return {{"actuation", "joint_position"}, {"frame", "delta"}};
  }
  return {{"actuation", "joint_position"}, {"frame", "absolute"}};
}

const std::vector<std::string> kModeNames = {"joint_velocity", "joint_position_delta",
                                             "joint_position_absolute"};
const std::vector<std::string> kTaskNames = {"reach", "pick", "stack", "destack"};

void print_counts(const char* label, const json& m) {
  if (m.empty()) return;
  std::cout << label << ":\n";
  for (auto it = m.begin(); it != m.end(); ++it) {
    std::cout << "  " << it.key() << "  " << it.value().get<std::uint64_t>() << "\n";
  }
}

void print_stats(const json& stats) {
  std::cout << "records  " << stats.at("total").get<std::uint64_t>() << "\n";
  print_counts("per subset", stats.value("per_subset", json::object()));
  print_counts("per robot", stats.value("per_robot", json::object()));
  print_counts("per mode", stats.value("per_mode", json::object()));
  std::cout << "rejected episodes  " << stats.value("rejected_episodes", 0) << "\n";
  std::cout << stats.dump(2) << "\n";
}

void print_report(const json& report) {
  std::cout << "task  " << report.at("task").get<std::string>() << "\n";
  for (const auto& row : report.at("per_seed")) {
    std::printf("seed %llu  %.1f\n",
                static_cast<unsigned long long>(row.at("seed").get<std::uint64_t>()),
                row.at("mean").get<double>());
  }
  std::printf("mean  %.1f\n", report.at("mean").get<double>());
  std::cout << report.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vision-action instruction data and closed-loop evaluation toolkit"};
  app.require_subcommand(1);
  // "--h" is a real option below, so help must not own the "h" short name.
  app.set_help_flag("--help", "print help and exit");
  app.set_version_flag("--version", vact_version());
  app.set_config("--config", "", "key=value overlay; flags take precedence");
  auto add_sub = [&](const std::string& name, const std::string& desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->set_help_flag("--help", "print help and exit");
    return sub;
  };

  // gen ----------------------------------------------------------------
  auto* gen = add_sub("gen", "generate scripted demonstration episodes");
  std::string gen_task, gen_out, gen_mode = "joint_velocity";
  int gen_episodes = 1, gen_jobs = 1;
  std::uint64_t gen_seed = 1;
  gen->add_option("--task", gen_task, "task kind")
      ->required()
      ->check(CLI::IsMember(kTaskNames));
  gen->add_option("--episodes", gen_episodes, "episode count")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--out", gen_out, "corpus directory")->required();
  gen->add_option("--mode", gen_mode, "control mode")->check(CLI::IsMember(kModeNames));
  gen->add_option("--jobs", gen_jobs, "worker threads")->check(CLI::PositiveNumber);

  // compile ------------------------------------------------------------
  auto* compile = add_sub("compile", "compile a corpus into prompt/target shards");
  std::string c_corpus, c_out, c_trace_kind = "bbox_centers", c_oob = "clamp";
  int c_h = 5, c_n = 1, c_shard = 1000, c_jobs = 1, c_decimals = 3;
  int c_min_w = 0, c_min_h = 0;
  std::uint64_t c_seed = 0;
  bool c_no_trace = false, c_strict = false;
  std::vector<std::string> c_exclude, c_allow_modes;
  compile->add_option("--corpus", c_corpus, "episode corpus directory")->required();
  compile->add_option("--out", c_out, "shard output directory")->required();
  compile->add_option("--h", c_h, "history window")->check(CLI::PositiveNumber);
  compile->add_option("--n", c_n, "action horizon")->check(CLI::PositiveNumber);
  compile->add_flag("--no-trace", c_no_trace, "omit the TRACE section from targets");
  compile->add_option("--seed", c_seed, "shuffle seed (0 = corpus order)");
  compile->add_option("--shard-size", c_shard, "records per shard")
      ->check(CLI::PositiveNumber);
  compile->add_option("--jobs", c_jobs, "worker threads")->check(CLI::PositiveNumber);
  compile->add_option("--decimals", c_decimals, "fixed-point decimals in rendered values")
      ->check(CLI::Range(1, 6));
  compile->add_option("--trace-kind", c_trace_kind, "trace keypoint source")
      ->check(CLI::IsMember({"bbox_centers", "projection"}));
  compile->add_option("--oob", c_oob, "out-of-frame trace policy")
      ->check(CLI::IsMember({"clamp", "reject", "keep"}));
  compile->add_option("--exclude-subset", c_exclude, "subsets to drop");
  compile->add_option("--allow-mode", c_allow_modes, "restrict to these control modes")
      ->check(CLI::IsMember(kModeNames));
  compile->add_option("--min-width", c_min_w, "minimum camera width");
  compile->add_option("--min-height", c_min_h, "minimum camera height");
  compile->add_flag("--strict", c_strict, "exit 1 if any episode was rejected");

  // eval ---------------------------------------------------------------
  auto* eval = add_sub("eval", "closed-loop policy evaluation");
  std::string e_task, e_policy, e_mode = "joint_velocity", e_json_path;
  int e_episodes = 25, e_seeds = 5, e_h = 5, e_n = 1, e_max_steps = 200, e_jobs = 1;
  double e_timeout = 10.0;
  bool e_no_trace = false;
  eval->add_option("--task", e_task, "task kind")
      ->required()
      ->check(CLI::IsMember(kTaskNames));
  eval->add_option("--policy", e_policy, "replay | zero | subprocess:CMD")->required();
  eval->add_option("--episodes", e_episodes, "episodes per seed")
      ->check(CLI::PositiveNumber);
  eval->add_option("--seeds", e_seeds, "number of seeds (1..N)")
      ->check(CLI::PositiveNumber);
  eval->add_option("--h", e_h, "history window")->check(CLI::PositiveNumber);
  eval->add_option("--n", e_n, "actions per query")->check(CLI::PositiveNumber);
  eval->add_option("--mode", e_mode, "control mode")->check(CLI::IsMember(kModeNames));
  eval->add_option("--max-steps", e_max_steps, "step budget per episode")
      ->check(CLI::PositiveNumber);
  eval->add_option("--jobs", e_jobs, "worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--timeout", e_timeout, "seconds to wait for a policy response");
  eval->add_flag("--no-trace", e_no_trace, "do not require traces in responses");
  eval->add_option("--json", e_json_path, "also write the report JSON to this file");

  // validate -----------------------------------------------------------
  auto* validate = add_sub("validate", "check every episode in a corpus");
  std::string v_corpus;
  validate->add_option("--corpus", v_corpus, "episode corpus directory")->required();

  // score --------------------------------------------------------------
  auto* score = add_sub("score", "sequence NLL of targets under distributions");
  std::string s_targets, s_dists;
  score->add_option("--targets", s_targets, "JSON array of target token ids")->required();
  score->add_option("--dists", s_dists, "JSON array of per-step distributions")->required();

  // policyd ------------------------------------------------------------
  auto* policyd = add_sub(
      "policyd", "serve a built-in policy over stdin/stdout (line protocol)");
  std::string p_policy = "replay";
  policyd->add_option("--policy", p_policy, "replay | zero");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    json cfg = {{"task", gen_task},   {"episodes", gen_episodes}, {"seed", gen_seed},
                {"out", gen_out},     {"mode", mode_json(gen_mode)},
                {"jobs", gen_jobs}};
    char* summary = nullptr;
    const vact_status st = vact_gen(cfg.dump().c_str(), &summary);
    if (st != VACT_OK) return exit_code_for(st);
    std::cout << take(summary) << "\n";
    return 0;
  }

  if (compile->parsed()) {
    json cfg = {{"corpus", c_corpus}, {"out", c_out},
                {"h", c_h},           {"n", c_n},
                {"shard_size", c_shard}, {"seed", c_seed},
                {"jobs", c_jobs}};
    cfg["codec"] = {{"decimals", c_decimals}, {"include_trace", !c_no_trace}};
    cfg["trace_source"] = {{"kind", c_trace_kind}, {"oob_policy", c_oob}};
    json filters = json::object();
    if (!c_exclude.empty()) filters["excluded_subsets"] = c_exclude;
    if (!c_allow_modes.empty()) {
      filters["allowed_modes"] = json::array();
      for (const auto& m : c_allow_modes) filters["allowed_modes"].push_back(mode_json(m));
    }
    if (c_min_w > 0) filters["min_image_width"] = c_min_w;
    if (c_min_h > 0) filters["min_image_height"] = c_min_h;
    if (!filters.empty()) cfg["filters"] = filters;

    char* stats_text = nullptr;
    const vact_status st = vact_compile(cfg.dump().c_str(), &stats_text);
    if (st != VACT_OK) return exit_code_for(st);
    const json stats = json::parse(take(stats_text));
    print_stats(stats);
    if (c_strict && stats.value("rejected_episodes", 0) > 0) {
      std::cerr << "error: " << stats.at("rejected_episodes") << " episode(s) rejected\n";
      return 1;
    }
    return 0;
  }

  if (eval->parsed()) {
    json cfg = {{"task", e_task},        {"policy", e_policy},
                {"episodes", e_episodes}, {"num_seeds", e_seeds},
                {"h", e_h},              {"n", e_n},
                {"mode", mode_json(e_mode)}, {"max_steps", e_max_steps},
                {"jobs", e_jobs},        {"timeout_s", e_timeout}};
    if (e_no_trace) cfg["codec"] = {{"include_trace", false}};
    char* report_text = nullptr;
    const vact_status st = vact_eval(cfg.dump().c_str(), &report_text);
    if (st != VACT_OK) return exit_code_for(st);
    const std::string text = take(report_text);
    const json report = json::parse(text);
    print_report(report);
    if (!e_json_path.empty()) {
      std::ofstream f(e_json_path, std::ios::binary);
      if (!f) {
        std::cerr << "error: cannot write " << e_json_path << "\n";
        return 1;
      }
      f << report.dump(2) << "\n";
    }
    return 0;
  }

  if (validate->parsed()) {
    char* report_text = nullptr;
    const vact_status st = vact_validate_corpus(v_corpus.c_str(), &report_text);
    if (st != VACT_OK) return exit_code_for(st);
    const json report = json::parse(take(report_text));
    for (const auto& entry : report.at("reports")) {
      if (entry.contains("error")) {
        std::cout << entry.at("file").get<std::string>() << ": "
                  << entry.at("error").get<std::string>() << "\n";
        continue;
      }
      for (const auto& v : entry.at("violations")) {
        std::cout << entry.at("file").get<std::string>() << ": frame "
                  << v.at("frame").get<int>() << " " << v.at("field").get<std::string>()
                  << ": " << v.at("message").get<std::string>() << "\n";
      }
    }
    const auto violations = report.at("total_violations").get<std::uint64_t>();
    std::cout << violations << " violations\n";
    return violations == 0 ? 0 : 1;
  }

  if (score->parsed()) {
    char* result_text = nullptr;
    const vact_status st = vact_score(s_targets.c_str(), s_dists.c_str(), &result_text);
    if (st != VACT_OK) return exit_code_for(st);
    const json result = json::parse(take(result_text));
    if (result.at("finite").get<bool>()) {
      std::printf("%.6f\n", result.at("nll").get<double>());
    } else {
      std::cout << "inf\n";
      if (!result.at("zero_index").is_null()) {
        std::cout << "zero probability at index "
                  << result.at("zero_index").get<std::size_t>() << "\n";
      }
    }
    return 0;
  }

  // policyd: blocks until stdin closes.
  return exit_code_for(vact_policy_serve(p_policy.c_str()));
}
