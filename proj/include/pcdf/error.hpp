#pragma once

#include <stdexcept>
#include <string>

namespace pcdf {

// Every failure the library reports derives from Error so callers (CLI, HTTP
// service) can map it to an exit code or a machine-readable error code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* code() const noexcept { return "error"; }
};

#define PCDF_DEFINE_ERROR(Name, Code)                              \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(what) {}       \
    const char* code() const noexcept override { return Code; }   \
  };

PCDF_DEFINE_ERROR(IngestError, "ingest_error")
PCDF_DEFINE_ERROR(FormatError, "format_error")
PCDF_DEFINE_ERROR(ConfigError, "config_error")
PCDF_DEFINE_ERROR(TemplateError, "template_error")
PCDF_DEFINE_ERROR(ProtocolError, "protocol_error")
PCDF_DEFINE_ERROR(ValidationError, "validation_error")
PCDF_DEFINE_ERROR(IoError, "io_error")
PCDF_DEFINE_ERROR(StateError, "state_error")
PCDF_DEFINE_ERROR(NotFoundError, "not_found")

#undef PCDF_DEFINE_ERROR

// Remote call failed. `status` is the last HTTP status seen, 0 when the
// request never produced a response (connect failure, timeout).
class BackendError : public Error {
 public:
  BackendError(const std::string& what, int status, int attempts)
      : Error(what), status_(status), attempts_(attempts) {}
  const char* code() const noexcept override { return "backend_error"; }
  int status() const noexcept { return status_; }
  int attempts() const noexcept { return attempts_; }

 private:
  int status_;
  int attempts_;
};

}  // namespace pcdf
