#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>

#include <json.hpp>

#include "vact/codec.hpp"
#include "vact/sim.hpp"

namespace vact {

// Everything a policy may need to arm itself for one episode.
struct EpisodeContext {
  TaskKind task = TaskKind::reach;
  std::uint64_t seed = 0;  // per-episode sub-seed
  ControlMode mode;
  int h = 5;
  int n = 1;
  CodecConfig codec;
  SimParams sim;

  nlohmann::ordered_json to_json() const;
};

struct Observation {
  const SceneState* scene = nullptr;
  int step = 0;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual void begin_episode(const EpisodeContext&) {}
  // Response text for one query. Throws PolicyError on I/O trouble.
  virtual std::string respond(const Observation& obs, const std::string& prompt) = 0;
};

// Fresh policy per worker so rollouts can run in parallel.
using PolicyFactory = std::function<std::unique_ptr<Policy>()>;

struct EvalConfig {
  TaskKind task = TaskKind::reach;
  int h = 5;
  int n = 1;
  int episodes_per_task = 25;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int max_steps = 200;
  CodecConfig codec;
  ControlMode mode;
  SimParams sim;
  double response_timeout_s = 10.0;
  int jobs = 1;
};

enum class FailureReason { none, malformed_response, step_budget_exhausted, policy_error };
std::string to_string(FailureReason r);

// Closed-loop environment: deterministic scene for (task, seed) plus the
// proprioceptive log the prompt window reads from.
class Env {
 public:
  Env(TaskKind task, std::uint64_t seed, const SimParams& params, const ControlMode& mode);

  const SceneState& scene() const { return scene_; }
  const ControlMode& mode() const { return mode_; }
  const std::vector<ProprioState>& state_log() const { return state_log_; }
  void apply(const Action& a);
  bool succeeded() const { return success(scene_); }

 private:
  SceneState scene_;
  ControlMode mode_;
  SimParams params_;
  std::vector<ProprioState> state_log_;
};

struct StepRecord {
  int t = 0;  // timestep of the query
  std::string prompt;
  std::string response;
  ProprioState state;
  int executed = 0;  // actions applied from this response
};

struct RolloutResult {
  int outcome = 0;  // 0 or 100
  FailureReason reason = FailureReason::none;
  int steps = 0;
  std::vector<StepRecord> transcript;
};

// Query, parse, execute all n actions, repeat; 100 on the success predicate,
// 0 at max_steps. Malformed responses score 0 with the reason recorded.
RolloutResult rollout(Env& env, Policy& policy, const EvalConfig& cfg);

struct EpisodeOutcome {
  std::uint64_t seed = 0;
  int episode_index = 0;
  int outcome = 0;
  FailureReason reason = FailureReason::none;
  int steps = 0;
};

struct EvalReport {
  std::string task;
  double mean = 0.0;  // [0,100]
  std::vector<std::pair<std::uint64_t, double>> per_seed;
  std::vector<EpisodeOutcome> episodes;

  nlohmann::ordered_json to_json() const;
  std::string table() const;
};

// episodes_per_task rollouts per seed; sub-seed = mix_seed(seed, index).
// Deterministic at any worker count for deterministic policies.
EvalReport evaluate(const EvalConfig& cfg, const PolicyFactory& make_policy);

struct SequenceNllResult {
  double value = 0.0;
  std::optional<std::size_t> zero_index;  // first target with zero probability
};

// -sum_i log dists[i][target_ids[i]]. Distributions must be nonnegative and
// sum to 1 within 1e-9; zero probability at a target yields +infinity with
// the index reported. Throws ValidationError on shape problems.
SequenceNllResult sequence_nll(std::span<const int> target_ids,
                               const std::vector<std::vector<double>>& dists);

// Built-in policies. The replay oracle re-emits the scripted demonstration
// for the episode's (task, seed); zero emits all-zero actions.
std::unique_ptr<Policy> make_replay_policy();
std::unique_ptr<Policy> make_zero_policy();
// Line-protocol client: prompt out, response in, one line each. Episode
// boundaries are signaled with a "#EPISODE {json}" control line.
std::unique_ptr<Policy> make_subprocess_policy(const std::string& command,
                                               double timeout_s = 10.0);

// Factory from a CLI-style spec: "replay", "zero", or "subprocess:CMD".
PolicyFactory policy_factory_from_spec(const std::string& spec, double timeout_s = 10.0);

// Serve a built-in policy over stdin/stdout using the same line protocol;
// returns at EOF. This is how an external process can echo the oracle.
void policy_serve(const std::string& policy_spec, std::istream& in, std::ostream& out);

}  // namespace vact
