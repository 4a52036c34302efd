#pragma once

#include <stdexcept>
#include <string>

namespace scm {

enum class errc {
  invalid_argument,
  singular_design,
  empty_donor_pool,
  unknown_category,
  solver_failure,
  rank_failure,
  calibration_error,
  schema_error,
  io_error,
};

// Every failure the library reports carries one of the codes above so the
// CLI can map it onto a stable exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace scm
