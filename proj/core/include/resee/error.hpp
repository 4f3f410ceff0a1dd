#pragma once

#include <stdexcept>
#include <string>

namespace resee {

/// Base error. Every error carries the name of the module that raised it so
/// the command-line front end can print a module-qualified message.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

#define RESEE_DEFINE_ERROR(Name)     \
  class Name : public Error {        \
   public:                           \
    using Error::Error;              \
  }

RESEE_DEFINE_ERROR(SchemaError);
RESEE_DEFINE_ERROR(VersionError);
RESEE_DEFINE_ERROR(EmptyCorpusError);
RESEE_DEFINE_ERROR(InvariantError);
RESEE_DEFINE_ERROR(PoolError);
RESEE_DEFINE_ERROR(QueryError);
RESEE_DEFINE_ERROR(EmbeddingError);
RESEE_DEFINE_ERROR(ConsistencyError);
RESEE_DEFINE_ERROR(ExtractionError);
RESEE_DEFINE_ERROR(SearchError);
RESEE_DEFINE_ERROR(ShapeError);
RESEE_DEFINE_ERROR(NumericError);
RESEE_DEFINE_ERROR(UndefinedMetricError);
RESEE_DEFINE_ERROR(ConfigError);
RESEE_DEFINE_ERROR(IoError);

#undef RESEE_DEFINE_ERROR

}  // namespace resee
