#ifndef NAM_ERRORS_HPP
#define NAM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace nam {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when an item pair shares no available view.
struct NoActiveViewError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        line_number(line) {}
  std::size_t line_number;
};

struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nam

#endif  // NAM_ERRORS_HPP
