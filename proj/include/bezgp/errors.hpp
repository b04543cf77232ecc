#pragma once

#include <stdexcept>
#include <string>

namespace bezgp {

// Error families. Each family maps to one distinct CLI exit code so scripts
// can dispatch on the kind of failure without parsing messages.
enum class ErrorFamily : int {
  usage = 2,    // invalid arguments, shapes, sizes, configuration
  numeric = 3,  // numerical failures (scale solve, factorization, gradients)
  io = 4,       // filesystem access
  parse = 5,    // malformed file contents
  domain = 6,   // points outside the model's domain box under strict policy
  verify = 7,   // self-check suite found a mismatch
};

class Error : public std::runtime_error {
 public:
  Error(ErrorFamily family, const std::string& what)
      : std::runtime_error(what), family_(family) {}
  ErrorFamily family() const noexcept { return family_; }
  int exit_code() const noexcept { return static_cast<int>(family_); }

 private:
  ErrorFamily family_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error(ErrorFamily::usage, w) {}
};

struct OrderOutOfRange : Error {
  OrderOutOfRange(int nu, int max_order)
      : Error(ErrorFamily::usage, "basis order " + std::to_string(nu) +
                                      " outside the supported range [1, " +
                                      std::to_string(max_order) + "]") {}
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& w) : Error(ErrorFamily::usage, w) {}
};

struct EmptyData : Error {
  explicit EmptyData(const std::string& w) : Error(ErrorFamily::usage, w) {}
};

struct LengthMismatch : Error {
  explicit LengthMismatch(const std::string& w) : Error(ErrorFamily::usage, w) {}
};

struct TooLarge : Error {
  explicit TooLarge(const std::string& w) : Error(ErrorFamily::usage, w) {}
};

struct InvalidDomain : Error {
  explicit InvalidDomain(const std::string& w) : Error(ErrorFamily::usage, w) {}
};

// The inverse-squared-Bernstein adjustment yields nonpositive variance scales
// beyond order 25, so orders above that limit are rejected up front.
struct NonPositiveScale : Error {
  explicit NonPositiveScale(int nu)
      : Error(ErrorFamily::numeric,
              "prior scale solve rejected for order " + std::to_string(nu) +
                  ": the inverse-squared-Bernstein adjustment is valid only up to "
                  "order 25 (nonpositive scale entries occur beyond that)") {}
  explicit NonPositiveScale(int nu, double entry)
      : Error(ErrorFamily::numeric,
              "prior scale solve for order " + std::to_string(nu) +
                  " produced a nonpositive entry (" + std::to_string(entry) +
                  "); the adjustment is valid only up to order 25") {}
};

struct SingularSystem : Error {
  explicit SingularSystem(const std::string& w) : Error(ErrorFamily::numeric, w) {}
};

struct NonFiniteGradient : Error {
  explicit NonFiniteGradient(const std::string& w) : Error(ErrorFamily::numeric, w) {}
};

struct NotPositiveDefinite : Error {
  explicit NotPositiveDefinite(const std::string& w) : Error(ErrorFamily::numeric, w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorFamily::io, w) {}
};

struct ParseError : Error {
  ParseError(const std::string& where, long row, long col, const std::string& w)
      : Error(ErrorFamily::parse, where + ":" + std::to_string(row) + ":" +
                                      std::to_string(col) + ": " + w),
        row(row),
        col(col) {}
  long row;  // 1-based data row (0 = header)
  long col;  // 1-based column
};

struct MissingColumn : Error {
  explicit MissingColumn(const std::string& w) : Error(ErrorFamily::parse, w) {}
};

struct SchemaMismatch : Error {
  explicit SchemaMismatch(const std::string& w) : Error(ErrorFamily::parse, w) {}
};

struct OutOfDomain : Error {
  explicit OutOfDomain(const std::string& w) : Error(ErrorFamily::domain, w) {}
};

}  // namespace bezgp
