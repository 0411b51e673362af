#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include <vact/vact.h>

using nlohmann::json;

namespace {

// Owns a char* returned by the library and frees it with the library's own
// deallocator, so mismatched heaps cannot creep into the tests.
struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { vact_string_free(ptr); }
  std::string str() const { return ptr ? std::string(ptr) : std::string(); }
};

struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("vact_capi_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  f << content;
}

char* dup_for_library(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

struct CallbackState {
  int begins = 0;
  int responds = 0;
  std::string response;
  int rc = 0;
};

void count_begin(void* user, const char* episode_json) {
  auto* st = static_cast<CallbackState*>(user);
  ++st->begins;
  CHECK(json::parse(episode_json).contains("task"));
}

int canned_respond(void* user, const char* prompt, char** response_out) {
  auto* st = static_cast<CallbackState*>(user);
  ++st->responds;
  CHECK(std::strstr(prompt, "You are a") != nullptr);
  if (st->rc != 0) return st->rc;
  *response_out = dup_for_library(st->response);
  return 0;
}

}  // namespace

TEST_CASE("version and error strings are always available") {
  REQUIRE(vact_version() != nullptr);
  CHECK(std::string(vact_version()) == "0.1.0");
  REQUIRE(vact_last_error() != nullptr);
  vact_string_free(nullptr);  // must be a no-op
}

TEST_CASE("codec lifecycle and config validation") {
  vact_codec* codec = vact_codec_create(nullptr);
  REQUIRE(codec != nullptr);
  vact_codec_destroy(codec);

  codec = vact_codec_create(R"({"decimals": 2, "include_trace": false})");
  REQUIRE(codec != nullptr);
  vact_codec_destroy(codec);

  CHECK(vact_codec_create(R"({"decimals": 9})") == nullptr);
  CHECK(std::string(vact_last_error()).find("decimals") != std::string::npos);

  CHECK(vact_codec_create("{not json") == nullptr);
}

TEST_CASE("prompt rendering across the boundary") {
  vact_codec* codec = vact_codec_create(nullptr);
  REQUIRE(codec != nullptr);

  const json prompt = {
      {"robot", {{"name", "Franka"}}},
      {"mode", {{"actuation", "joint_velocity"}, {"frame", "delta"}}},
      {"instruction", "open the drawer"},
      {"history", json::array({{{"joints", {0.1, 0.2, 0.3}}, {"gripper", 1.0}}})},
      {"h", 5},
      {"n", 1}};
  OwnedString text;
  REQUIRE(vact_render_prompt(codec, prompt.dump().c_str(), &text.ptr) == VACT_OK);
  const std::string s = text.str();
  CHECK(s.rfind("You are a Franka robot using ", 0) == 0);
  CHECK(s.find(" control. The task is open the drawer, and the previous 5 steps are ") !=
        std::string::npos);
  CHECK(s.find("the next 1 steps?") != std::string::npos);

  OwnedString bad;
  CHECK(vact_render_prompt(codec, "{not json", &bad.ptr) == VACT_ERROR_PARSE);
  CHECK(vact_render_prompt(codec, nullptr, &bad.ptr) == VACT_ERROR_INVALID_ARGUMENT);
  CHECK(vact_render_prompt(nullptr, prompt.dump().c_str(), &bad.ptr) ==
        VACT_ERROR_INVALID_ARGUMENT);

  vact_codec_destroy(codec);
}

TEST_CASE("response encode and parse round trip") {
  vact_codec* codec = vact_codec_create(nullptr);
  REQUIRE(codec != nullptr);

  const json response = {
      {"actions", json::array({{{"values", {0.1, -0.2, 0.0, 1.0}}}})},
      {"include_trace", true},
      {"trace", {{"points", json::array({{64.0, 64.0}})}, {"start_t", 1}}}};
  OwnedString text;
  REQUIRE(vact_encode_response(codec, response.dump().c_str(), &text.ptr) == VACT_OK);
  CHECK(text.str() == "ACTIONS: [0.100, -0.200, 0.000, 1] TRACE: [(64, 64)]");

  OwnedString parsed;
  REQUIRE(vact_parse_response(codec, text.str().c_str(), 1, 4, &parsed.ptr) == VACT_OK);
  const json back = json::parse(parsed.str());
  REQUIRE(back.at("actions").size() == 1);
  const auto values = back.at("actions")[0].at("values").get<std::vector<double>>();
  REQUIRE(values.size() == 4);
  CHECK(values[0] == 0.1);
  CHECK(values[1] == -0.2);
  CHECK(values[2] == 0.0);
  CHECK(values[3] == 1.0);
  CHECK(back.at("trace").at("points").size() == 1);

  OwnedString err;
  CHECK(vact_parse_response(codec, "hello world", 1, 4, &err.ptr) == VACT_ERROR_PARSE);
  CHECK(std::string(vact_last_error()).find("malformed response at byte") !=
        std::string::npos);

  vact_codec_destroy(codec);
}

TEST_CASE("simulator handle: step, scene, success") {
  vact_env* env = vact_env_create(R"({"task": "reach", "seed": 7})");
  REQUIRE(env != nullptr);
  CHECK(vact_env_succeeded(env) == 0);

  const double hold[4] = {0.0, 0.0, 0.0, 1.0};
  REQUIRE(vact_env_step(env, hold, 4) == VACT_OK);

  OwnedString scene;
  REQUIRE(vact_env_scene_json(env, &scene.ptr) == VACT_OK);
  const json j = json::parse(scene.str());
  CHECK(j.at("step_count").get<int>() == 1);
  CHECK(j.at("arm").at("joints").size() == 3);
  CHECK(j.at("task").at("kind").get<std::string>() == "reach");

  const double short_action[2] = {0.0, 0.0};
  CHECK(vact_env_step(env, short_action, 2) == VACT_ERROR_RUNTIME);

  vact_env_destroy(env);

  CHECK(vact_env_create(R"({"task": "fly", "seed": 1})") == nullptr);
  CHECK(vact_env_succeeded(nullptr) == -1);
}

TEST_CASE("generate, validate, compile, evaluate through the C API") {
  TempDir dir("pipeline");
  const std::string corpus = (dir.path / "corpus").string();
  const std::string dataset = (dir.path / "dataset").string();

  const json gen_cfg = {{"task", "reach"}, {"episodes", 2}, {"seed", 5}, {"out", corpus}};
  OwnedString summary;
  REQUIRE(vact_gen(gen_cfg.dump().c_str(), &summary.ptr) == VACT_OK);
  const json sj = json::parse(summary.str());
  CHECK(sj.at("schema_version").get<int>() == 1);
  CHECK(sj.at("episodes").get<int>() == 2);

  OwnedString report;
  REQUIRE(vact_validate_corpus(corpus.c_str(), &report.ptr) == VACT_OK);
  const json rj = json::parse(report.str());
  CHECK(rj.at("episodes").get<int>() == 2);
  CHECK(rj.at("total_violations").get<int>() == 0);

  const json compile_cfg = {{"corpus", corpus}, {"out", dataset}, {"h", 5}, {"n", 1}};
  OwnedString stats;
  REQUIRE(vact_compile(compile_cfg.dump().c_str(), &stats.ptr) == VACT_OK);
  const json cj = json::parse(stats.str());
  CHECK(cj.at("schema_version").get<int>() == 1);
  CHECK(cj.at("total").get<int>() > 0);
  CHECK(cj.at("shards").get<int>() >= 1);
  CHECK(cj.at("rejected_episodes").get<int>() == 0);

  const json eval_cfg = {{"task", "reach"}, {"policy", "replay"},
                         {"episodes", 2},   {"num_seeds", 2},
                         {"h", 5},          {"n", 1}};
  OwnedString eval_out;
  REQUIRE(vact_eval(eval_cfg.dump().c_str(), &eval_out.ptr) == VACT_OK);
  const json ej = json::parse(eval_out.str());
  CHECK(ej.at("mean").get<double>() == 100.0);
  CHECK(ej.at("episodes").size() == 4);

  OwnedString missing;
  CHECK(vact_compile(R"({"corpus": "/nonexistent/nowhere", "out": "/tmp/x"})",
                     &missing.ptr) == VACT_ERROR_IO);
}

TEST_CASE("file-based scoring") {
  TempDir dir("score");
  const auto targets = dir.path / "targets.json";
  const auto dists = dir.path / "dists.json";

  write_file(targets, "[0, 1]");
  write_file(dists, "[[0.5, 0.5], [0.5, 0.5]]");
  OwnedString out;
  REQUIRE(vact_score(targets.string().c_str(), dists.string().c_str(), &out.ptr) == VACT_OK);
  json j = json::parse(out.str());
  CHECK(j.at("finite").get<bool>());
  CHECK(std::abs(j.at("nll").get<double>() - 2.0 * std::log(2.0)) < 1e-12);
  CHECK(j.at("zero_index").is_null());

  write_file(dists, "[[0.0, 1.0], [0.5, 0.5]]");  // zero mass on target 0
  OwnedString zero;
  REQUIRE(vact_score(targets.string().c_str(), dists.string().c_str(), &zero.ptr) == VACT_OK);
  j = json::parse(zero.str());
  CHECK_FALSE(j.at("finite").get<bool>());
  CHECK(j.at("nll").is_null());
  CHECK(j.at("zero_index").get<int>() == 0);

  OwnedString err;
  CHECK(vact_score((dir.path / "absent.json").string().c_str(), dists.string().c_str(),
                   &err.ptr) == VACT_ERROR_IO);

  write_file(targets, "[0, 1");  // truncated JSON
  OwnedString bad;
  CHECK(vact_score(targets.string().c_str(), dists.string().c_str(), &bad.ptr) ==
        VACT_ERROR_IO);
  CHECK(std::string(vact_last_error()).find("targets.json") != std::string::npos);
}

TEST_CASE("flat-array NLL") {
  const int32_t ids[2] = {0, 1};
  const double rows[4] = {0.5, 0.5, 0.25, 0.75};
  double nll = 0.0;
  REQUIRE(vact_sequence_nll(ids, 2, rows, 2, &nll) == VACT_OK);
  CHECK(std::abs(nll - (-std::log(0.5) - std::log(0.75))) < 1e-12);

  const double with_zero[4] = {0.5, 0.5, 1.0, 0.0};
  REQUIRE(vact_sequence_nll(ids, 2, with_zero, 2, &nll) == VACT_OK);
  CHECK(std::isinf(nll));

  const double skewed[2] = {0.9, 0.9};
  const int32_t one[1] = {0};
  CHECK(vact_sequence_nll(one, 1, skewed, 2, &nll) == VACT_ERROR_INVALID_ARGUMENT);
  CHECK(vact_sequence_nll(nullptr, 1, rows, 2, &nll) == VACT_ERROR_INVALID_ARGUMENT);
  CHECK(vact_sequence_nll(ids, 0, rows, 2, &nll) == VACT_OK);
  CHECK(nll == 0.0);
}

TEST_CASE("in-process callback policy") {
  CallbackState st;
  // A syntactically valid response whose zero actions never reach anything.
  st.response = "ACTIONS: [0.000, 0.000, 0.000, 0] TRACE: [(0, 0)]";

  const json cfg = {{"task", "reach"}, {"episodes", 2}, {"num_seeds", 1},
                    {"max_steps", 5}};
  OwnedString report;
  REQUIRE(vact_eval_with_policy(cfg.dump().c_str(), count_begin, canned_respond, &st,
                                &report.ptr) == VACT_OK);
  const json j = json::parse(report.str());
  CHECK(j.at("mean").get<double>() == 0.0);
  CHECK(st.begins == 2);
  CHECK(st.responds >= 2);
  for (const auto& ep : j.at("episodes")) {
    CHECK(ep.at("reason").get<std::string>() == "step_budget_exhausted");
  }

  // A nonzero return code is a policy failure, scored 0 with the reason kept.
  CallbackState failing;
  failing.rc = 3;
  OwnedString failed;
  REQUIRE(vact_eval_with_policy(cfg.dump().c_str(), nullptr, canned_respond, &failing,
                                &failed.ptr) == VACT_OK);
  const json fj = json::parse(failed.str());
  CHECK(fj.at("mean").get<double>() == 0.0);
  for (const auto& ep : fj.at("episodes")) {
    CHECK(ep.at("reason").get<std::string>() == "policy_error");
  }

  CHECK(vact_eval_with_policy(cfg.dump().c_str(), nullptr, nullptr, nullptr, &report.ptr) ==
        VACT_ERROR_INVALID_ARGUMENT);
  CHECK(vact_eval_with_policy(nullptr, nullptr, canned_respond, &st, &report.ptr) ==
        VACT_ERROR_INVALID_ARGUMENT);
}
