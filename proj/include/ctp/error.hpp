#pragma once

#include <stdexcept>
#include <string>

namespace ctp {

enum class Errc {
  degenerate_input,
  dimension_mismatch,
  out_of_range,
  unsupported,
  invalid_argument,
  non_finite,
  io,
  parse,
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::degenerate_input: return "degenerate input";
    case Errc::dimension_mismatch: return "dimension mismatch";
    case Errc::out_of_range: return "out of range";
    case Errc::unsupported: return "unsupported";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::non_finite: return "non-finite value";
    case Errc::io: return "i/o error";
    case Errc::parse: return "parse error";
  }
  return "error";
}

/// Library-wide exception. `code()` lets callers (the CLI in particular)
/// map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace ctp
