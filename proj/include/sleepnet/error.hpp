#pragma once

#include <stdexcept>
#include <string>

namespace sleepnet {

/// Broad failure category. The CLI maps these onto process exit codes.
enum class ErrorKind {
  Config = 1,     // usage or configuration problem
  Data = 2,       // malformed or inconsistent input data
  Numerical = 3,  // non-finite values during training/evaluation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& what) { return {ErrorKind::Config, what}; }
inline Error data_error(const std::string& what) { return {ErrorKind::Data, what}; }
inline Error numerical_error(const std::string& what) { return {ErrorKind::Numerical, what}; }

}  // namespace sleepnet
