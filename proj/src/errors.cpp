#include "rfbn/errors.hpp"

namespace rfbn {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::malformed_input: return "MalformedInput";
    case ErrorKind::invalid_argument: return "InvalidArgument";
    case ErrorKind::io_error: return "IoError";
    case ErrorKind::not_found: return "NotFound";
    case ErrorKind::conflict: return "Conflict";
    case ErrorKind::bad_request: return "BadRequest";
  }
  return "Error";
}

}  // namespace rfbn
