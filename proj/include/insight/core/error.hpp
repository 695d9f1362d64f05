#pragma once

#include <stdexcept>
#include <string>

namespace insight {

/// Base of every error raised by the library. `category()` is a short stable
/// tag that the CLI maps onto an exit code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* category() const noexcept { return "error"; }
};

#define INSIGHT_DEFINE_ERROR(Name, tag)                             \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(what) {}         \
    const char* category() const noexcept override { return tag; }  \
  };

INSIGHT_DEFINE_ERROR(DimensionError, "dimension")
INSIGHT_DEFINE_ERROR(ContractError, "contract")
INSIGHT_DEFINE_ERROR(ConfigError, "config")
INSIGHT_DEFINE_ERROR(FormatError, "format")
INSIGHT_DEFINE_ERROR(IoError, "io")
INSIGHT_DEFINE_ERROR(NumericError, "numeric")
INSIGHT_DEFINE_ERROR(DegenerateDataError, "degenerate-data")
INSIGHT_DEFINE_ERROR(ExtractionError, "extraction")
INSIGHT_DEFINE_ERROR(UndefinedMetricError, "undefined-metric")
INSIGHT_DEFINE_ERROR(ArtifactError, "missing-artifact")

#undef INSIGHT_DEFINE_ERROR

/// HTTP failure; `status()` is 0 when no response arrived.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what, int status = 0) : Error(what), status_(status) {}
  const char* category() const noexcept override { return "transport"; }
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace insight
