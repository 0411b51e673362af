#include "vact/codec.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <utility>

#include "vact/errors.hpp"

namespace vact {

std::string to_string(TraceCoordFormat f) {
  return f == TraceCoordFormat::pixel_int ? "pixel_int" : "normalized_3dp";
}

TraceCoordFormat trace_coord_format_from_string(const std::string& s) {
  if (s == "pixel_int") return TraceCoordFormat::pixel_int;
  if (s == "normalized_3dp") return TraceCoordFormat::normalized_3dp;
  throw ValidationError("unknown trace coord format: " + s);
}

double quantize(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::llround(v * scale) / scale;
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  // A value that rounds to zero must not keep a stray sign, or encode would
  // not be idempotent ("-0.000" reparses as 0).
  if (s[0] == '-' && s.find_first_not_of("0.", 1) == std::string::npos) {
    s.erase(0, 1);
  }
  return s;
}

namespace {

void check_codec_config(const CodecConfig& cfg) {
  if (cfg.decimals < 1 || cfg.decimals > 6) {
    throw ValidationError("decimals must be in 1..6");
  }
}

std::string render_state_tuple(const ProprioState& s, const CodecConfig& cfg) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.joints.size(); ++i) {
    if (i) out += ", ";
    out += format_fixed(s.joints[i], cfg.decimals);
  }
  if (cfg.history_includes_gripper) {
    if (!s.joints.empty()) out += ", ";
    out += format_fixed(s.gripper, cfg.decimals);
  }
  out += ")";
  return out;
}

std::string render_action_tuple(const Action& a, const CodecConfig& cfg) {
  if (a.values.empty()) throw ValidationError("cannot encode an empty action");
  std::string out;
  for (std::size_t i = 0; i + 1 < a.values.size(); ++i) {
    if (i) out += ", ";
    out += format_fixed(a.values[i], cfg.decimals);
  }
  if (a.values.size() > 1) out += ", ";
  out += a.values.back() >= cfg.gripper_threshold ? "1" : "0";
  return out;
}

std::string render_point(const Point2& p, const CodecConfig& cfg) {
  char buf[96];
  if (cfg.trace_coord_format == TraceCoordFormat::pixel_int) {
    long long x = std::llround(p.x);
    long long y = std::llround(p.y);
    if (x < 0) x = 0;
    if (y < 0) y = 0;
    std::snprintf(buf, sizeof buf, "(%lld, %lld)", x, y);
  } else {
    if (cfg.image_width <= 0 || cfg.image_height <= 0) {
      throw ValidationError("normalized trace coordinates need image_width/image_height");
    }
    std::snprintf(buf, sizeof buf, "(%.3f, %.3f)", p.x / cfg.image_width,
                  p.y / cfg.image_height);
  }
  return buf;
}

}  // namespace

std::string render_prompt(const InstructionPrompt& p, const CodecConfig& cfg) {
  check_codec_config(cfg);
  if (p.robot.name.empty()) throw ValidationError("prompt robot name is empty");
  if (p.history.empty()) throw ValidationError("prompt history is empty");
  if (p.h < 1) throw ValidationError("history window h must be >= 1");
  if (static_cast<int>(p.history.size()) > p.h) {
    throw ValidationError("history longer than window h");
  }
  if (p.n < 1) throw ValidationError("horizon n must be >= 1");

  // Short histories repeat the earliest state on the left so the rendered
  // window always holds exactly h tuples.
  const int pad = p.h - static_cast<int>(p.history.size());
  std::string s_text;
  for (int i = 0; i < p.h; ++i) {
    if (i) s_text += "; ";
    const ProprioState& st = i < pad ? p.history.front()
                                     : p.history[static_cast<std::size_t>(i - pad)];
    s_text += render_state_tuple(st, cfg);
  }

  std::ostringstream out;
  out << "You are a " << p.robot.name << " robot using " << p.mode.prose()
      << " control. The task is " << p.instruction << ", and the previous " << p.h
      << " steps are " << s_text
      << ". Can you predict the trajectory of the end-effector and the action of the next "
      << p.n << " steps?";
  return out.str();
}

std::string encode_response(const Response& r, const CodecConfig& cfg) {
  check_codec_config(cfg);
  if (r.actions.empty()) throw ValidationError("response has no actions");
  if (r.include_trace != r.trace.has_value()) {
    throw ValidationError("trace presence does not match include_trace");
  }

  std::string out = "ACTIONS: [";
  for (std::size_t i = 0; i < r.actions.size(); ++i) {
    if (i) out += "; ";
    out += render_action_tuple(r.actions[i], cfg);
  }
  out += "]";
  if (r.include_trace) {
    out += " TRACE: [";
    for (std::size_t i = 0; i < r.trace->points.size(); ++i) {
      if (i) out += ", ";
      out += render_point(r.trace->points[i], cfg);
    }
    out += "]";
  }
  return out;
}

namespace {

// Cursor over response text. Whitespace between tokens is insignificant;
// everything else is structural.
class Scanner {
 public:
  explicit Scanner(const std::string& text) : text_(text) {}

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool at_end() {
    skip_ws();
    return pos_ >= text_.size();
  }

  std::size_t pos() const { return pos_; }

  bool try_literal(const std::string& lit) {
    skip_ws();
    if (text_.compare(pos_, lit.size(), lit) != 0) return false;
    pos_ += lit.size();
    return true;
  }

  void expect(const std::string& lit, const std::string& what) {
    if (!try_literal(lit)) {
      throw MalformedResponse(pos_, "expected " + what);
    }
  }

  double number() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '+' ||
            text_[pos_] == '-' || text_[pos_] == '.' || text_[pos_] == 'e' ||
            text_[pos_] == 'E')) {
      ++pos_;
    }
    const std::string tok = text_.substr(start, pos_ - start);
    if (tok.empty()) throw MalformedResponse(start, "expected a number");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(v)) {
      throw MalformedResponse(start, "non-numeric token '" + tok + "'");
    }
    return v;
  }

 private:
  const std::string& text_;
  std::size_t pos_ = 0;
};

}  // namespace

Response parse_response(const std::string& text, int expected_n, int expected_arity,
                        const CodecConfig& cfg) {
  check_codec_config(cfg);
  if (expected_n < 1) throw ValidationError("expected_n must be >= 1");
  if (expected_arity < 0) throw ValidationError("expected_arity must be >= 0");

  Scanner sc(text);
  if (!sc.try_literal("ACTIONS")) {
    throw MalformedResponse(sc.pos(), "missing ACTIONS header");
  }
  sc.expect(":", "':' after ACTIONS");
  sc.expect("[", "'[' opening the action list");

  Response r;
  r.include_trace = cfg.include_trace;
  int arity = expected_arity;
  while (true) {
    const std::size_t action_pos = sc.pos();
    Action a;
    a.values.push_back(quantize(sc.number(), cfg.decimals));
    while (sc.try_literal(",")) {
      a.values.push_back(quantize(sc.number(), cfg.decimals));
    }
    if (arity == 0) {
      arity = static_cast<int>(a.values.size());
    } else if (static_cast<int>(a.values.size()) != arity) {
      throw MalformedResponse(action_pos,
                              "action arity " + std::to_string(a.values.size()) +
                                  ", expected " + std::to_string(arity));
    }
    if (a.values.back() < 0.0 || a.values.back() > 1.0) {
      throw MalformedResponse(action_pos, "gripper value outside [0, 1]");
    }
    r.actions.push_back(std::move(a));
    if (!sc.try_literal(";")) break;
  }
  sc.expect("]", "']' closing the action list");

  if (static_cast<int>(r.actions.size()) != expected_n) {
    throw MalformedResponse(sc.pos(), "got " + std::to_string(r.actions.size()) +
                                          " actions, expected " + std::to_string(expected_n));
  }

  const std::size_t trace_pos = sc.pos();
  const bool has_trace = sc.try_literal("TRACE");
  if (has_trace && !cfg.include_trace) {
    throw MalformedResponse(trace_pos, "trace present but include_trace is false");
  }
  if (!has_trace && cfg.include_trace) {
    throw MalformedResponse(trace_pos, "trace missing but include_trace is true");
  }
  if (has_trace) {
    sc.expect(":", "':' after TRACE");
    sc.expect("[", "'[' opening the trace");
    VisualTrace tr;
    tr.start_t = 1;
    while (true) {
      sc.expect("(", "'(' opening a trace point");
      Point2 p;
      p.x = sc.number();
      sc.expect(",", "',' between trace coordinates");
      p.y = sc.number();
      sc.expect(")", "')' closing a trace point");
      tr.points.push_back(p);
      if (!sc.try_literal(",")) break;
    }
    sc.expect("]", "']' closing the trace");
    r.trace = std::move(tr);
  }

  if (!sc.at_end()) {
    throw MalformedResponse(sc.pos(), "trailing text after the response");
  }
  return r;
}

namespace {

ProprioState parse_state_tuple(const std::string& tuple, const CodecConfig& cfg) {
  Scanner sc(tuple);
  sc.expect("(", "'(' opening a state tuple");
  std::vector<double> vals;
  vals.push_back(sc.number());
  while (sc.try_literal(",")) vals.push_back(sc.number());
  sc.expect(")", "')' closing a state tuple");
  if (!sc.at_end()) throw MalformedResponse(sc.pos(), "trailing text in state tuple");

  ProprioState st;
  if (cfg.history_includes_gripper) {
    if (vals.size() < 2) throw ValidationError("state tuple too short for gripper layout");
    st.gripper = vals.back();
    vals.pop_back();
  } else {
    st.gripper = 1.0;
  }
  st.joints = std::move(vals);
  return st;
}

int parse_positive_int(const std::string& digits, std::size_t at, const char* what) {
  if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) {
    throw MalformedResponse(at, std::string("prompt does not match template: bad ") + what);
  }
  const long v = std::strtol(digits.c_str(), nullptr, 10);
  if (v < 1 || v > 1000000) {
    throw MalformedResponse(at, std::string("prompt does not match template: ") + what +
                                    " out of range");
  }
  return static_cast<int>(v);
}

}  // namespace

InstructionPrompt parse_prompt(const std::string& text, const CodecConfig& cfg) {
  check_codec_config(cfg);
  static const std::string kPrefix = "You are a ";
  static const std::string kRobot = " robot using ";
  static const std::string kControl = " control. The task is ";
  static const std::string kPrevious = ", and the previous ";
  static const std::string kStepsAre = " steps are ";
  static const std::string kPredict =
      ". Can you predict the trajectory of the end-effector and the action of the next ";
  static const std::string kSuffix = " steps?";

  auto fail = [](std::size_t at, const std::string& why) {
    throw MalformedResponse(at, "prompt does not match template: " + why);
  };

  if (text.compare(0, kPrefix.size(), kPrefix) != 0) fail(0, "missing opening");
  const std::size_t robot_end = text.find(kRobot, kPrefix.size());
  if (robot_end == std::string::npos) fail(kPrefix.size(), "missing robot clause");

  InstructionPrompt p;
  p.robot.name = text.substr(kPrefix.size(), robot_end - kPrefix.size());
  if (p.robot.name.empty()) fail(kPrefix.size(), "empty robot name");

  // The mode slot holds one of a closed set of prose strings; trying each is
  // both the parse and the validation.
  static const std::pair<Actuation, ControlFrame> kModes[] = {
      {Actuation::joint_velocity, ControlFrame::delta},
      {Actuation::joint_position, ControlFrame::absolute},
      {Actuation::joint_position, ControlFrame::delta},
      {Actuation::end_effector_pose, ControlFrame::absolute},
      {Actuation::end_effector_pose, ControlFrame::delta},
  };
  std::size_t instr_begin = std::string::npos;
  bool mode_found = false;
  const std::size_t mode_begin = robot_end + kRobot.size();
  for (const auto& [act, fr] : kModes) {
    const ControlMode m = make_control_mode(act, fr);
    const std::string probe = m.prose() + kControl;
    if (text.compare(mode_begin, probe.size(), probe) == 0) {
      p.mode = m;
      instr_begin = mode_begin + probe.size();
      mode_found = true;
      break;
    }
  }
  if (!mode_found) fail(mode_begin, "unknown control mode");

  // The state window is letter-free, so the rightmost occurrences of the
  // template infixes are the genuine ones; decoys can only hide inside the
  // instruction, which sits to their left.
  if (text.size() < kSuffix.size() ||
      text.compare(text.size() - kSuffix.size(), kSuffix.size(), kSuffix) != 0) {
    fail(text.size(), "missing closing question");
  }
  const std::size_t predict_at = text.rfind(kPredict);
  if (predict_at == std::string::npos || predict_at < instr_begin) {
    fail(instr_begin, "missing horizon clause");
  }
  const std::size_t n_begin = predict_at + kPredict.size();
  const std::size_t n_end = text.size() - kSuffix.size();
  if (n_end < n_begin) fail(n_begin, "missing horizon");
  p.n = parse_positive_int(text.substr(n_begin, n_end - n_begin), n_begin, "horizon");

  const std::size_t prev_at = text.rfind(kPrevious, predict_at);
  if (prev_at == std::string::npos || prev_at < instr_begin) {
    fail(instr_begin, "missing history clause");
  }
  p.instruction = text.substr(instr_begin, prev_at - instr_begin);

  const std::size_t h_begin = prev_at + kPrevious.size();
  const std::size_t steps_at = text.find(kStepsAre, h_begin);
  if (steps_at == std::string::npos || steps_at > predict_at) {
    fail(h_begin, "missing history count");
  }
  p.h = parse_positive_int(text.substr(h_begin, steps_at - h_begin), h_begin, "history count");

  const std::size_t s_begin = steps_at + kStepsAre.size();
  const std::string s_text = text.substr(s_begin, predict_at - s_begin);
  std::size_t at = 0;
  while (true) {
    std::size_t sep = s_text.find("; ", at);
    const std::string tuple =
        sep == std::string::npos ? s_text.substr(at) : s_text.substr(at, sep - at);
    try {
      p.history.push_back(parse_state_tuple(tuple, cfg));
    } catch (const Error& ex) {
      fail(s_begin + at, std::string("bad state tuple: ") + ex.what());
    }
    if (sep == std::string::npos) break;
    at = sep + 2;
  }
  if (static_cast<int>(p.history.size()) != p.h) {
    fail(s_begin, "history length disagrees with window");
  }
  return p;
}

}  // namespace vact
