#pragma once

#include <stdexcept>
#include <string>

namespace mds {

// Base for all library failures. `stage` names the pipeline stage that raised
// it so the CLI can map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string stage, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class RejectedRecord : public Error {
 public:
  explicit RejectedRecord(const std::string& what) : Error("trace", what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class NumericFailure : public Error {
 public:
  explicit NumericFailure(const std::string& what) : Error("numeric", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IngestError : public Error {
 public:
  explicit IngestError(const std::string& what) : Error("ingest", what) {}
};

}  // namespace mds
