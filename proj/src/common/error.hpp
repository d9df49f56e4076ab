#pragma once

#include <stdexcept>
#include <string>

namespace boxprompt {

enum class ErrorKind {
  InvalidArgument,
  Shape,
  Numeric,
  Io,
  Format,
  Config,
  State,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace boxprompt
