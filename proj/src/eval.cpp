#include "vact/eval.hpp"

#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <sstream>
#include <thread>

#include "vact/errors.hpp"
#include "vact/rng.hpp"

namespace vact {

std::string to_string(FailureReason r) {
  switch (r) {
    case FailureReason::none: return "none";
    case FailureReason::malformed_response: return "malformed_response";
    case FailureReason::step_budget_exhausted: return "step_budget_exhausted";
    case FailureReason::policy_error: return "policy_error";
  }
  return "unknown";
}

nlohmann::ordered_json EpisodeContext::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = to_string(task);
  j["seed"] = seed;
  j["mode"] = {{"actuation", to_string(mode.actuation)}, {"frame", to_string(mode.frame)}};
  j["h"] = h;
  j["n"] = n;
  j["codec"] = {{"decimals", codec.decimals},
                {"gripper_threshold", codec.gripper_threshold},
                {"include_trace", codec.include_trace},
                {"trace_coord_format", to_string(codec.trace_coord_format)},
                {"history_includes_gripper", codec.history_includes_gripper},
                {"image_width", codec.image_width},
                {"image_height", codec.image_height}};
  j["sim"] = {{"link_lengths", sim.link_lengths},
              {"initial_joints", sim.initial_joints},
              {"initial_gripper", sim.initial_gripper},
              {"dt", sim.dt},
              {"epsilon", sim.epsilon},
              {"lift_height", sim.lift_height},
              {"bbox_halfwidth_px", sim.bbox_halfwidth_px},
              {"plane_z", sim.plane_z}};
  return j;
}

namespace {

EpisodeContext context_from_json(const nlohmann::json& j) {
  EpisodeContext ctx;
  ctx.task = task_kind_from_string(j.at("task").get<std::string>());
  ctx.seed = j.at("seed").get<std::uint64_t>();
  ctx.mode = make_control_mode(actuation_from_string(j.at("mode").at("actuation")),
                               control_frame_from_string(j.at("mode").at("frame")));
  ctx.h = j.at("h").get<int>();
  ctx.n = j.at("n").get<int>();
  const auto& c = j.at("codec");
  ctx.codec.decimals = c.at("decimals").get<int>();
  ctx.codec.gripper_threshold = c.at("gripper_threshold").get<double>();
  ctx.codec.include_trace = c.at("include_trace").get<bool>();
  ctx.codec.trace_coord_format =
      trace_coord_format_from_string(c.at("trace_coord_format").get<std::string>());
  ctx.codec.history_includes_gripper = c.at("history_includes_gripper").get<bool>();
  ctx.codec.image_width = c.at("image_width").get<int>();
  ctx.codec.image_height = c.at("image_height").get<int>();
  const auto& s = j.at("sim");
  ctx.sim.link_lengths = s.at("link_lengths").get<std::vector<double>>();
  ctx.sim.initial_joints = s.at("initial_joints").get<std::vector<double>>();
  ctx.sim.initial_gripper = s.at("initial_gripper").get<double>();
  ctx.sim.dt = s.at("dt").get<double>();
  ctx.sim.epsilon = s.at("epsilon").get<double>();
  ctx.sim.lift_height = s.at("lift_height").get<double>();
  ctx.sim.bbox_halfwidth_px = s.at("bbox_halfwidth_px").get<int>();
  ctx.sim.plane_z = s.at("plane_z").get<double>();
  return ctx;
}

ProprioState proprio_of(const SceneState& s) {
  return ProprioState{s.arm.joints, s.arm.gripper};
}

}  // namespace

Env::Env(TaskKind task, std::uint64_t seed, const SimParams& params, const ControlMode& mode)
    : scene_(sample_scene(task, seed, params)), mode_(mode), params_(params) {
  state_log_.push_back(proprio_of(scene_));
}

void Env::apply(const Action& a) {
  scene_ = step(scene_, a, mode_, params_.dt);
  state_log_.push_back(proprio_of(scene_));
}

RolloutResult rollout(Env& env, Policy& policy, const EvalConfig& cfg) {
  if (cfg.h < 1 || cfg.n < 1) throw ValidationError("h and n must be >= 1");
  if (cfg.max_steps < 1) throw ValidationError("max_steps must be >= 1");

  const int arity = static_cast<int>(env.scene().arm.joints.size()) + 1;
  RolloutResult res;
  while (res.steps < cfg.max_steps) {
    const auto& log = env.state_log();
    InstructionPrompt p;
    p.robot = {"PlanarArm"};
    p.mode = env.mode();
    p.instruction = task_instruction(cfg.task);
    p.h = cfg.h;
    p.n = cfg.n;
    const std::size_t take = std::min<std::size_t>(log.size(), static_cast<std::size_t>(cfg.h));
    p.history.assign(log.end() - static_cast<std::ptrdiff_t>(take), log.end());

    StepRecord sr;
    sr.t = static_cast<int>(log.size());
    sr.state = log.back();
    sr.prompt = render_prompt(p, cfg.codec);

    const Observation obs{&env.scene(), sr.t};
    try {
      sr.response = policy.respond(obs, sr.prompt);
    } catch (const PolicyError&) {
      res.reason = FailureReason::policy_error;
      res.transcript.push_back(std::move(sr));
      return res;
    }

    Response r;
    try {
      r = parse_response(sr.response, cfg.n, arity, cfg.codec);
    } catch (const MalformedResponse&) {
      res.reason = FailureReason::malformed_response;
      res.transcript.push_back(std::move(sr));
      return res;
    }

    // All n actions execute before the next query; the success check runs
    // after every single one so a mid-chunk success ends the episode.
    for (const Action& a : r.actions) {
      try {
        env.apply(a);
      } catch (const SimError&) {
        res.reason = FailureReason::malformed_response;
        res.transcript.push_back(std::move(sr));
        return res;
      }
      ++res.steps;
      ++sr.executed;
      if (env.succeeded()) {
        res.outcome = 100;
        res.transcript.push_back(std::move(sr));
        return res;
      }
      if (res.steps >= cfg.max_steps) break;
    }
    res.transcript.push_back(std::move(sr));
  }
  res.reason = FailureReason::step_budget_exhausted;
  return res;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["task"] = task;
  j["mean"] = mean;
  j["per_seed"] = nlohmann::ordered_json::array();
  for (const auto& [seed, m] : per_seed) {
    j["per_seed"].push_back({{"seed", seed}, {"mean", m}});
  }
  j["episodes"] = nlohmann::ordered_json::array();
  for (const auto& e : episodes) {
    j["episodes"].push_back({{"seed", e.seed},
                             {"episode", e.episode_index},
                             {"outcome", e.outcome},
                             {"reason", to_string(e.reason)},
                             {"steps", e.steps}});
  }
  return j;
}

std::string EvalReport::table() const {
  std::ostringstream out;
  char buf[64];
  out << "task  " << task << "\n";
  for (const auto& [seed, m] : per_seed) {
    std::snprintf(buf, sizeof buf, "seed %llu  %.1f\n",
                  static_cast<unsigned long long>(seed), m);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "mean  %.1f\n", mean);
  out << buf;
  return out.str();
}

EvalReport evaluate(const EvalConfig& cfg, const PolicyFactory& make_policy) {
  if (cfg.episodes_per_task < 1) throw ValidationError("episodes_per_task must be >= 1");
  if (cfg.seeds.empty()) throw ValidationError("seeds must be non-empty");
  if (cfg.jobs < 1) throw ValidationError("jobs must be >= 1");

  struct Item {
    std::uint64_t seed;
    int index;
  };
  std::vector<Item> items;
  items.reserve(cfg.seeds.size() * static_cast<std::size_t>(cfg.episodes_per_task));
  for (std::uint64_t seed : cfg.seeds) {
    for (int i = 0; i < cfg.episodes_per_task; ++i) items.push_back({seed, i});
  }

  std::vector<EpisodeOutcome> outcomes(items.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};

  auto worker = [&] {
    try {
      std::unique_ptr<Policy> policy = make_policy();
      std::size_t i;
      while (!failed && (i = next.fetch_add(1)) < items.size()) {
        const Item& item = items[i];
        EpisodeOutcome& out = outcomes[i];
        out.seed = item.seed;
        out.episode_index = item.index;

        EpisodeContext ctx;
        ctx.task = cfg.task;
        ctx.seed = mix_seed(item.seed, static_cast<std::uint64_t>(item.index));
        ctx.mode = cfg.mode;
        ctx.h = cfg.h;
        ctx.n = cfg.n;
        ctx.codec = cfg.codec;
        ctx.sim = cfg.sim;

        try {
          Env env(cfg.task, ctx.seed, cfg.sim, cfg.mode);
          policy->begin_episode(ctx);
          const RolloutResult rr = rollout(env, *policy, cfg);
          out.outcome = rr.outcome;
          out.reason = rr.reason;
          out.steps = rr.steps;
        } catch (const PolicyError&) {
          out.outcome = 0;
          out.reason = FailureReason::policy_error;
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lk(err_mu);
      if (!first_error) first_error = std::current_exception();
      failed = true;
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), std::max<std::size_t>(items.size(), 1));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  EvalReport report;
  report.task = to_string(cfg.task);
  report.episodes = std::move(outcomes);
  double total = 0.0;
  for (std::uint64_t seed : cfg.seeds) {
    double seed_sum = 0.0;
    int seed_count = 0;
    for (const auto& e : report.episodes) {
      if (e.seed != seed) continue;
      seed_sum += e.outcome;
      ++seed_count;
    }
    report.per_seed.emplace_back(seed, seed_sum / seed_count);
    total += seed_sum;
  }
  report.mean = total / static_cast<double>(report.episodes.size());
  return report;
}

SequenceNllResult sequence_nll(std::span<const int> target_ids,
                               const std::vector<std::vector<double>>& dists) {
  if (target_ids.size() != dists.size()) {
    throw ValidationError("got " + std::to_string(target_ids.size()) + " target ids for " +
                          std::to_string(dists.size()) + " distributions");
  }
  SequenceNllResult res;
  double nll = 0.0;
  for (std::size_t i = 0; i < dists.size(); ++i) {
    const auto& d = dists[i];
    if (d.empty()) throw ValidationError("empty distribution at row " + std::to_string(i));
    double sum = 0.0;
    for (double p : d) {
      if (!std::isfinite(p) || p < 0.0) {
        throw ValidationError("bad probability at row " + std::to_string(i));
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ValidationError("distribution at row " + std::to_string(i) + " sums to " +
                            std::to_string(sum));
    }
    const int id = target_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= d.size()) {
      throw ValidationError("target id out of range at row " + std::to_string(i));
    }
    const double p = d[static_cast<std::size_t>(id)];
    if (p == 0.0 && !res.zero_index) res.zero_index = i;
    nll -= std::log(p);
  }
  res.value = nll;
  return res;
}

namespace {

class ReplayPolicy : public Policy {
 public:
  void begin_episode(const EpisodeContext& ctx) override {
    actions_.clear();
    trace_.clear();
    cursor_ = 0;
    n_ = ctx.n;
    codec_ = ctx.codec;
    const DemoResult demo = scripted_demo(ctx.task, ctx.seed, ctx.sim, ctx.mode, "replay");
    for (const Frame& f : demo.episode.frames) {
      if (f.action) actions_.push_back(*f.action);
    }
    if (codec_.include_trace) {
      trace_ = build_trace(demo.episode, 1, TraceSource{}).points;
    }
  }

  std::string respond(const Observation&, const std::string&) override {
    if (actions_.empty()) throw PolicyError("replay policy was never armed for an episode");
    Response r;
    r.include_trace = codec_.include_trace;
    const std::size_t at = cursor_;
    for (int k = 0; k < n_; ++k) {
      if (cursor_ < actions_.size()) {
        r.actions.push_back(actions_[cursor_++]);
      } else {
        // The recording ends on a hold action; repeating it pads any chunk.
        r.actions.push_back(actions_.back());
      }
    }
    if (codec_.include_trace) {
      VisualTrace tr;
      tr.start_t = 1;
      const std::size_t from = std::min(at, trace_.size() - 1);
      tr.points.assign(trace_.begin() + static_cast<std::ptrdiff_t>(from), trace_.end());
      r.trace = std::move(tr);
    }
    return encode_response(r, codec_);
  }

 private:
  std::vector<Action> actions_;
  std::vector<Point2> trace_;
  std::size_t cursor_ = 0;
  int n_ = 1;
  CodecConfig codec_;
};

class ZeroPolicy : public Policy {
 public:
  void begin_episode(const EpisodeContext& ctx) override {
    arity_ = ctx.sim.initial_joints.size() + 1;
    n_ = ctx.n;
    codec_ = ctx.codec;
  }

  std::string respond(const Observation&, const std::string&) override {
    Response r;
    r.include_trace = codec_.include_trace;
    for (int k = 0; k < n_; ++k) {
      r.actions.push_back(Action{std::vector<double>(arity_, 0.0)});
    }
    if (codec_.include_trace) {
      VisualTrace tr;
      tr.start_t = 1;
      tr.points.push_back({0.0, 0.0});
      r.trace = std::move(tr);
    }
    return encode_response(r, codec_);
  }

 private:
  std::size_t arity_ = 4;
  int n_ = 1;
  CodecConfig codec_;
};

// Line-protocol client over a forked shell command. One child serves many
// episodes; "#EPISODE {json}" announces each new one and expects no reply.
class SubprocessPolicy : public Policy {
 public:
  SubprocessPolicy(const std::string& command, double timeout_s)
      : timeout_ms_(static_cast<int>(timeout_s * 1000.0)) {
    // A dead child must surface as PolicyError, not SIGPIPE.
    std::signal(SIGPIPE, SIG_IGN);

    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) throw PolicyError("pipe: " + std::string(std::strerror(errno)));
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw PolicyError("pipe: " + std::string(std::strerror(errno)));
    }
    pid_ = fork();
    if (pid_ < 0) {
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      throw PolicyError("fork: " + std::string(std::strerror(errno)));
    }
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];

    // Liveness probe: a command that cannot start (shell prints "not found"
    // and exits) hangs up the pipe almost immediately. Failing here turns a
    // dead-on-arrival policy into a run-level error instead of 25 identical
    // per-episode failures.
    struct pollfd probe{out_fd_, POLLIN, 0};
    if (poll(&probe, 1, 50) > 0 && (probe.revents & (POLLHUP | POLLERR)) &&
        !(probe.revents & POLLIN)) {
      close(in_fd_);
      close(out_fd_);
      int status = 0;
      waitpid(pid_, &status, WNOHANG);
      throw PolicyError("policy process failed to start: " + command);
    }
  }

  ~SubprocessPolicy() override {
    if (in_fd_ >= 0) close(in_fd_);
    if (out_fd_ >= 0) close(out_fd_);
    if (pid_ > 0) {
      // EOF on stdin is the shutdown signal; escalate if it is ignored.
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (waitpid(pid_, &status, WNOHANG) != 0) return;
        usleep(40 * 1000);
      }
      kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
    }
  }

  void begin_episode(const EpisodeContext& ctx) override {
    send_line("#EPISODE " + ctx.to_json().dump());
  }

  std::string respond(const Observation&, const std::string& prompt) override {
    send_line(prompt);
    return read_line();
  }

 private:
  void send_line(const std::string& s) {
    std::string buf = s;
    buf += '\n';
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t w = write(in_fd_, buf.data() + off, buf.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw PolicyError("policy process closed its input: " +
                          std::string(std::strerror(errno)));
      }
      off += static_cast<std::size_t>(w);
    }
  }

  std::string read_line() {
    while (true) {
      const std::size_t nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      pollfd pfd{out_fd_, POLLIN, 0};
      const int pr = poll(&pfd, 1, timeout_ms_);
      if (pr == 0) throw PolicyError("policy response timed out");
      if (pr < 0) {
        if (errno == EINTR) continue;
        throw PolicyError("poll: " + std::string(std::strerror(errno)));
      }
      char chunk[4096];
      const ssize_t r = read(out_fd_, chunk, sizeof chunk);
      if (r == 0) throw PolicyError("policy process exited mid-conversation");
      if (r < 0) {
        if (errno == EINTR) continue;
        throw PolicyError("read: " + std::string(std::strerror(errno)));
      }
      buf_.append(chunk, static_cast<std::size_t>(r));
    }
  }

  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  int timeout_ms_ = 10000;
  std::string buf_;
};

}  // namespace

std::unique_ptr<Policy> make_replay_policy() { return std::make_unique<ReplayPolicy>(); }
std::unique_ptr<Policy> make_zero_policy() { return std::make_unique<ZeroPolicy>(); }
std::unique_ptr<Policy> make_subprocess_policy(const std::string& command, double timeout_s) {
  return std::make_unique<SubprocessPolicy>(command, timeout_s);
}

PolicyFactory policy_factory_from_spec(const std::string& spec, double timeout_s) {
  if (spec == "replay") return [] { return make_replay_policy(); };
  if (spec == "zero") return [] { return make_zero_policy(); };
  const std::string prefix = "subprocess:";
  if (spec.rfind(prefix, 0) == 0) {
    const std::string command = spec.substr(prefix.size());
    if (command.empty()) throw ValidationError("subprocess policy needs a command");
    return [command, timeout_s] { return make_subprocess_policy(command, timeout_s); };
  }
  throw ValidationError("unknown policy spec: " + spec +
                        " (expected replay, zero, or subprocess:CMD)");
}

void policy_serve(const std::string& policy_spec, std::istream& in, std::ostream& out) {
  const PolicyFactory factory = policy_factory_from_spec(policy_spec);
  const std::unique_ptr<Policy> policy = factory();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    static const std::string kEpisode = "#EPISODE ";
    if (line.rfind(kEpisode, 0) == 0) {
      EpisodeContext ctx;
      try {
        ctx = context_from_json(nlohmann::json::parse(line.substr(kEpisode.size())));
      } catch (const std::exception& ex) {
        throw PolicyError(std::string("bad #EPISODE line: ") + ex.what());
      }
      policy->begin_episode(ctx);
      continue;
    }
    const Observation obs{nullptr, 0};
    out << policy->respond(obs, line) << "\n" << std::flush;
  }
}

}  // namespace vact
