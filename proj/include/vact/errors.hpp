#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vact {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad data shape or value (episode files, configs, invariant breaches).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Filesystem and serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Trace construction failures (degenerate bbox, behind-camera, missing keypoints).
class TraceError : public Error {
 public:
  using Error::Error;
};

// Simulator failures (arity mismatch, infeasible placement, controller stall).
class SimError : public Error {
 public:
  using Error::Error;
};

// Policy I/O failures (subprocess died, timeout). Scored 0, never fatal in a rollout.
class PolicyError : public Error {
 public:
  using Error::Error;
};

// Response text that does not match the wire grammar. Carries the byte
// position of the offending token and a short reason tag.
class MalformedResponse : public Error {
 public:
  MalformedResponse(std::size_t position, std::string reason)
      : Error("malformed response at byte " + std::to_string(position) + ": " + reason),
        position_(position),
        reason_(std::move(reason)) {}

  std::size_t position() const { return position_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t position_;
  std::string reason_;
};

}  // namespace vact
