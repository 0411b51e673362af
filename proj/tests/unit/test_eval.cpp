#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <sstream>

#include "vact/codec.hpp"
#include "vact/errors.hpp"
#include "vact/eval.hpp"
#include "vact/rng.hpp"
#include "vact/sim.hpp"

using namespace vact;

namespace {

ControlMode velocity_mode() {
  return make_control_mode(Actuation::joint_velocity, ControlFrame::delta);
}

EvalConfig small_config(TaskKind task, int episodes = 3, int seeds = 2) {
  EvalConfig cfg;
  cfg.task = task;
  cfg.episodes_per_task = episodes;
  cfg.seeds.clear();
  for (int i = 1; i <= seeds; ++i) cfg.seeds.push_back(static_cast<std::uint64_t>(i));
  return cfg;
}

// Emits fixed text regardless of the prompt; for failure-path tests.
class CannedPolicy : public Policy {
 public:
  explicit CannedPolicy(std::string text) : text_(std::move(text)) {}
  void begin_episode(const EpisodeContext&) override {}
  std::string respond(const Observation&, const std::string&) override { return text_; }

 private:
  std::string text_;
};

// Replays every other episode and garbles the rest, so a scoreboard is
// guaranteed to mix successes and failures deterministically.
class AlternatingPolicy : public Policy {
 public:
  void begin_episode(const EpisodeContext& ctx) override {
    sabotage_ = (++episode_ % 2 == 0);
    inner_->begin_episode(ctx);
  }

  std::string respond(const Observation& obs, const std::string& prompt) override {
    if (sabotage_) return "not a response";
    return inner_->respond(obs, prompt);
  }

 private:
  std::unique_ptr<Policy> inner_ = make_replay_policy();
  int episode_ = 0;
  bool sabotage_ = false;
};

}  // namespace

TEST_CASE("sequence NLL: one-hot targets score exactly zero") {
  std::vector<std::vector<double>> dists;
  std::vector<int> targets = {2, 0, 3};
  for (int t : targets) {
    std::vector<double> row(5, 0.0);
    row[t] = 1.0;
    dists.push_back(row);
  }
  const SequenceNllResult res = sequence_nll(targets, dists);
  CHECK(res.value == 0.0);
  CHECK_FALSE(res.zero_index.has_value());
}

TEST_CASE("sequence NLL: uniform distributions give the closed form") {
  std::vector<std::vector<double>> dists(7, std::vector<double>(10, 0.1));
  std::vector<int> targets = {0, 9, 4, 2, 7, 1, 5};
  const SequenceNllResult res = sequence_nll(targets, dists);
  CHECK(std::abs(res.value - 7.0 * std::log(10.0)) < 1e-4);
}

TEST_CASE("exp(-NLL) equals the brute-force probability product") {
  Rng rng(51);
  for (int rep = 0; rep < 100; ++rep) {
    const int len = 1 + static_cast<int>(rng.uniform_int(8));
    const int vocab = 2 + static_cast<int>(rng.uniform_int(9));
    std::vector<std::vector<double>> dists;
    std::vector<int> targets;
    double product = 1.0;
    for (int i = 0; i < len; ++i) {
      std::vector<double> row(vocab);
      double sum = 0.0;
      for (double& p : row) {
        p = rng.uniform(0.01, 1.0);
        sum += p;
      }
      for (double& p : row) p /= sum;
      const int target = static_cast<int>(rng.uniform_int(vocab));
      targets.push_back(target);
      product *= row[target];
      dists.push_back(std::move(row));
    }
    const SequenceNllResult res = sequence_nll(targets, dists);
    CHECK(std::abs(std::exp(-res.value) - product) <= 1e-12 * product);
  }
}

TEST_CASE("zero probability at a target is +infinity with the index") {
  std::vector<std::vector<double>> dists = {
      {0.5, 0.5}, {1.0, 0.0}, {0.0, 1.0}};
  std::vector<int> targets = {0, 1, 1};  // dists[1][1] == 0
  const SequenceNllResult res = sequence_nll(targets, dists);
  CHECK(std::isinf(res.value));
  REQUIRE(res.zero_index.has_value());
  CHECK(*res.zero_index == 1);
}

TEST_CASE("sequence NLL rejects malformed inputs") {
  std::vector<std::vector<double>> dists = {{0.5, 0.5}};
  CHECK_THROWS_AS(sequence_nll(std::vector<int>{0, 1}, dists), ValidationError);
  CHECK_THROWS_AS(sequence_nll(std::vector<int>{2}, dists), ValidationError);   // id range
  CHECK_THROWS_AS(sequence_nll(std::vector<int>{-1}, dists), ValidationError);
  std::vector<std::vector<double>> skewed = {{0.7, 0.7}};
  CHECK_THROWS_AS(sequence_nll(std::vector<int>{0}, skewed), ValidationError);  // sum
  std::vector<std::vector<double>> negative = {{1.2, -0.2}};
  CHECK_THROWS_AS(sequence_nll(std::vector<int>{0}, negative), ValidationError);
}

TEST_CASE("boosting the target's mass never increases the NLL") {
  Rng rng(52);
  for (int rep = 0; rep < 100; ++rep) {
    const int vocab = 3 + static_cast<int>(rng.uniform_int(6));
    std::vector<double> row(vocab);
    double sum = 0.0;
    for (double& p : row) {
      p = rng.uniform(0.05, 1.0);
      sum += p;
    }
    for (double& p : row) p /= sum;
    const int target = static_cast<int>(rng.uniform_int(vocab));
    const double before = sequence_nll(std::vector<int>{target}, {row}).value;

    // Move mass onto the target, renormalize the rest proportionally.
    std::vector<double> boosted = row;
    const double gain = rng.uniform(0.0, 1.0 - boosted[target]);
    const double rest = 1.0 - boosted[target];
    for (int i = 0; i < vocab; ++i) {
      if (i == target) continue;
      boosted[i] *= (rest - gain) / rest;
    }
    boosted[target] += gain;
    const double after = sequence_nll(std::vector<int>{target}, {boosted}).value;
    CHECK(after <= before + 1e-12);
  }
}

TEST_CASE("replay policy re-traces its own demonstration") {
  for (const TaskKind k :
       {TaskKind::reach, TaskKind::pick, TaskKind::stack, TaskKind::destack}) {
    const EvalReport report = evaluate(small_config(k), make_replay_policy);
    CAPTURE(to_string(k));
    CHECK(report.mean == 100.0);
    for (const auto& ep : report.episodes) {
      CHECK(ep.outcome == 100);
      CHECK(ep.reason == FailureReason::none);
    }
  }
}

TEST_CASE("replay holds up at the wide configuration") {
  EvalConfig cfg = small_config(TaskKind::stack, 2, 2);
  cfg.h = 16;
  cfg.n = 16;
  const EvalReport report = evaluate(cfg, make_replay_policy);
  CHECK(report.mean == 100.0);
}

TEST_CASE("zero policy never reaches anything") {
  const EvalReport report = evaluate(small_config(TaskKind::reach), make_zero_policy);
  CHECK(report.mean == 0.0);
  for (const auto& ep : report.episodes) {
    CHECK(ep.outcome == 0);
    CHECK(ep.reason == FailureReason::step_budget_exhausted);
  }
}

TEST_CASE("garbage responses fail soft with a recorded reason") {
  const EvalConfig cfg = small_config(TaskKind::reach, 2, 1);
  const EvalReport report =
      evaluate(cfg, [] { return std::make_unique<CannedPolicy>("garbage"); });
  CHECK(report.mean == 0.0);
  for (const auto& ep : report.episodes) {
    CHECK(ep.reason == FailureReason::malformed_response);
    CHECK(ep.steps == 0);
  }
}

TEST_CASE("report means are the arithmetic mean of outcomes") {
  // Six episodes per seed, alternately replayed and sabotaged: every seed
  // block mixes 0s and 100s, so the averaging paths are actually exercised.
  const EvalConfig cfg = small_config(TaskKind::reach, 6, 3);
  const EvalReport report =
      evaluate(cfg, [] { return std::make_unique<AlternatingPolicy>(); });
  REQUIRE(report.episodes.size() == 18);
  double sum = 0.0;
  for (const auto& ep : report.episodes) {
    CHECK((ep.outcome == 0 || ep.outcome == 100));
    sum += ep.outcome;
  }
  CHECK(report.mean == doctest::Approx(sum / report.episodes.size()).epsilon(1e-12));
  CHECK(report.mean == 50.0);

  for (const auto& [seed, mean] : report.per_seed) {
    double seed_sum = 0.0;
    int count = 0;
    for (const auto& ep : report.episodes) {
      if (ep.seed == seed) {
        seed_sum += ep.outcome;
        ++count;
      }
    }
    CHECK(count == 6);
    CHECK(mean == doctest::Approx(seed_sum / count).epsilon(1e-12));
    CHECK(mean == 50.0);
  }
}

TEST_CASE("evaluation is deterministic at any worker count") {
  EvalConfig cfg = small_config(TaskKind::pick, 4, 2);
  const EvalReport a = evaluate(cfg, make_replay_policy);
  cfg.jobs = 4;
  const EvalReport b = evaluate(cfg, make_replay_policy);
  CHECK(a.to_json().dump() == b.to_json().dump());
}

namespace {

std::string state_key(const ProprioState& st) {
  std::string key;
  for (double j : st.joints) key += format_fixed(j, 3) + ",";
  key += format_fixed(st.gripper, 3);
  return key;
}

}  // namespace

TEST_CASE("the prompt window slides over the last min(t, h) states") {
  EvalConfig cfg = small_config(TaskKind::reach, 1, 1);
  cfg.h = 5;
  Env env(cfg.task, mix_seed(1, 0), cfg.sim, cfg.mode);
  auto policy = make_replay_policy();
  EpisodeContext ctx;
  ctx.task = cfg.task;
  ctx.seed = mix_seed(1, 0);
  ctx.mode = cfg.mode;
  ctx.h = cfg.h;
  ctx.n = cfg.n;
  ctx.codec = cfg.codec;
  ctx.sim = cfg.sim;
  policy->begin_episode(ctx);
  const RolloutResult rr = rollout(env, *policy, cfg);
  REQUIRE(rr.outcome == 100);
  REQUIRE(rr.transcript.size() >= 6);  // enough steps to fill and slide the window

  for (const StepRecord& sr : rr.transcript) {
    const InstructionPrompt p = parse_prompt(sr.prompt, cfg.codec);
    REQUIRE(p.history.size() == 5);
    // The newest tuple is the state the query was issued from.
    CHECK(state_key(p.history.back()) == state_key(sr.state));
    std::set<std::string> distinct;
    for (const auto& st : p.history) distinct.insert(state_key(st));
    CHECK(distinct.size() <= static_cast<std::size_t>(std::min(sr.t, 5)));
  }

  // The first query has a single real state, padded across the window.
  const InstructionPrompt first = parse_prompt(rr.transcript.front().prompt, cfg.codec);
  std::set<std::string> tuples;
  for (const auto& st : first.history) tuples.insert(state_key(st));
  CHECK(tuples.size() == 1);

  // From t = h on, the window's oldest tuple is the state h-1 steps back,
  // which the transcript itself recorded at that query.
  for (std::size_t i = 4; i < rr.transcript.size(); ++i) {
    const InstructionPrompt p = parse_prompt(rr.transcript[i].prompt, cfg.codec);
    CHECK(state_key(p.history.front()) == state_key(rr.transcript[i - 4].state));
  }
}

TEST_CASE("policy factory specs") {
  CHECK(policy_factory_from_spec("replay") != nullptr);
  CHECK(policy_factory_from_spec("zero") != nullptr);
  CHECK(policy_factory_from_spec("subprocess:cat") != nullptr);
  CHECK_THROWS_AS(policy_factory_from_spec("oracle"), ValidationError);
  CHECK_THROWS_AS(policy_factory_from_spec("subprocess:"), ValidationError);
}

TEST_CASE("subprocess policy: echo produces malformed, not a crash") {
  // `cat` mirrors prompts back; prompts are not valid responses, so every
  // episode fails soft through the malformed-response channel.
  EvalConfig cfg = small_config(TaskKind::reach, 2, 1);
  const EvalReport report = evaluate(cfg, policy_factory_from_spec("subprocess:cat"));
  CHECK(report.mean == 0.0);
  for (const auto& ep : report.episodes) {
    CHECK(ep.reason == FailureReason::malformed_response);
  }
}

TEST_CASE("subprocess policy: a silent process times out as policy_error") {
  EvalConfig cfg = small_config(TaskKind::reach, 1, 1);
  cfg.response_timeout_s = 0.25;
  const EvalReport report =
      evaluate(cfg, policy_factory_from_spec("subprocess:sleep 30", 0.25));
  CHECK(report.mean == 0.0);
  REQUIRE(report.episodes.size() == 1);
  CHECK(report.episodes[0].reason == FailureReason::policy_error);
}

TEST_CASE("policy_serve speaks the line protocol") {
  EpisodeContext ctx;
  ctx.task = TaskKind::reach;
  ctx.seed = 4242;
  ctx.mode = velocity_mode();
  std::ostringstream feed;
  feed << "#EPISODE " << ctx.to_json().dump() << "\n";
  feed << "prompt line one\n";
  feed << "prompt line two\n";
  std::istringstream in(feed.str());
  std::ostringstream out;
  policy_serve("replay", in, out);

  std::istringstream lines(out.str());
  std::string line;
  int responses = 0;
  while (std::getline(lines, line)) {
    ++responses;
    const Response r = parse_response(line, 1, 4, CodecConfig{});
    CHECK(r.actions.size() == 1);
  }
  CHECK(responses == 2);
}

TEST_CASE("env applies actions and tracks success") {
  Env env(TaskKind::reach, 7, SimParams{}, velocity_mode());
  CHECK(env.state_log().size() == 1);
  CHECK_FALSE(env.succeeded());
  env.apply(Action{{0.0, 0.0, 0.0, 1.0}});
  CHECK(env.state_log().size() == 2);
  CHECK(env.scene().step_count == 1);
}

TEST_CASE("evaluate validates its config") {
  EvalConfig cfg = small_config(TaskKind::reach);
  cfg.episodes_per_task = 0;
  CHECK_THROWS_AS(evaluate(cfg, make_zero_policy), ValidationError);
  cfg = small_config(TaskKind::reach);
  cfg.seeds.clear();
  CHECK_THROWS_AS(evaluate(cfg, make_zero_policy), ValidationError);
  cfg = small_config(TaskKind::reach);
  cfg.max_steps = 0;
  CHECK_THROWS_AS(evaluate(cfg, make_zero_policy), ValidationError);
}

TEST_CASE("failure reasons have stable names") {
  CHECK(to_string(FailureReason::none) == "none");
  CHECK(to_string(FailureReason::malformed_response) == "malformed_response");
  CHECK(to_string(FailureReason::step_budget_exhausted) == "step_budget_exhausted");
  CHECK(to_string(FailureReason::policy_error) == "policy_error");
}
