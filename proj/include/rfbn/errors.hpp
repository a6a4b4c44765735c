#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rfbn {

enum class ErrorKind {
  malformed_input,
  invalid_argument,
  io_error,
  not_found,
  conflict,
  bad_request,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Base of every exception the library throws on a contract violation.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define RFBN_DEFINE_ERROR(Name, kind_value)                                   \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& what) : Error(ErrorKind::kind_value, what) {} \
  };

RFBN_DEFINE_ERROR(MalformedInput, malformed_input)
RFBN_DEFINE_ERROR(InvalidArgument, invalid_argument)
RFBN_DEFINE_ERROR(IoError, io_error)
RFBN_DEFINE_ERROR(NotFound, not_found)
RFBN_DEFINE_ERROR(Conflict, conflict)
RFBN_DEFINE_ERROR(BadRequest, bad_request)

#undef RFBN_DEFINE_ERROR

// Thrown by the pipeline when one stage fails; carries the stage name and
// the category of the underlying error.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what, std::string category = "Internal")
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), category_(std::move(category)) {}
  const std::string& stage() const noexcept { return stage_; }
  const std::string& category() const noexcept { return category_; }

 private:
  std::string stage_;
  std::string category_;
};

}  // namespace rfbn
