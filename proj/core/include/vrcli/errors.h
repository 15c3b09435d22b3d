#pragma once

#include <stdexcept>
#include <string>

namespace vrcli {

// Contract violations on caller-supplied values (empty completion, bad config).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation whose result is mathematically undefined for the given input
// (constant Spearman input, P_e = 1 in Fleiss' kappa).
class UndefinedResult : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Failures talking to a language-model backend.
class BackendError : public std::runtime_error {
 public:
  BackendError(const std::string& what, bool retryable, int attempts)
      : std::runtime_error(what), retryable_(retryable), attempts_(attempts) {}

  bool retryable() const noexcept { return retryable_; }
  int attempts() const noexcept { return attempts_; }

 private:
  bool retryable_;
  int attempts_;
};

}  // namespace vrcli
