#pragma once

#include <optional>
#include <string>

#include "vact/domain.hpp"
#include "vact/trace.hpp"

namespace vact {

enum class TraceCoordFormat { pixel_int, normalized_3dp };

struct CodecConfig {
  int decimals = 3;                // fixed fractional digits for reals, 1..6
  double gripper_threshold = 0.5;  // emitted gripper binarizes at this cut
  bool include_trace = true;
  TraceCoordFormat trace_coord_format = TraceCoordFormat::pixel_int;
  bool history_includes_gripper = true;
  // Image size; only consulted by normalized_3dp coordinates.
  int image_width = 0;
  int image_height = 0;
};

// The filled template l_t.
struct InstructionPrompt {
  RobotType robot;
  ControlMode mode;
  std::string instruction;
  std::vector<ProprioState> history;  // oldest -> newest, last element is s_t
  int h = 1;                          // history window size
  int n = 1;                          // prediction horizon
};

// The unit exchanged with any policy: n actions plus the remaining trace.
struct Response {
  std::vector<Action> actions;
  std::optional<VisualTrace> trace;
  bool include_trace = true;
};

// "You are a {R} robot using {M} control. The task is {I}, and the previous
// {h} steps are {S}. Can you predict the trajectory of the end-effector and
// the action of the next {n} steps?"
// Histories shorter than h are left-padded by repeating the earliest state.
std::string render_prompt(const InstructionPrompt& p, const CodecConfig& cfg);

// Canonical wire text: "ACTIONS: [a1; a2; ...] TRACE: [(x1, y1), ...]".
// The TRACE section is omitted entirely when cfg.include_trace is false.
std::string encode_response(const Response& r, const CodecConfig& cfg);

// Inverse of encode_response. Arbitrary whitespace between tokens is fine;
// structure is strict. expected_arity 0 accepts any consistent arity.
// Throws MalformedResponse.
Response parse_response(const std::string& text, int expected_n, int expected_arity,
                        const CodecConfig& cfg);

// Recovers the template slots from a rendered prompt; used for record
// self-validation. Throws MalformedResponse when the text does not match.
InstructionPrompt parse_prompt(const std::string& text, const CodecConfig& cfg);

// Fixed-decimals formatting with negative zero normalized away.
std::string format_fixed(double v, int decimals);
// Value after a format/parse round trip at the given precision.
double quantize(double v, int decimals);

std::string to_string(TraceCoordFormat f);
TraceCoordFormat trace_coord_format_from_string(const std::string& s);

}  // namespace vact
