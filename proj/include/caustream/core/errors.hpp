#pragma once

#include <stdexcept>
#include <string>

namespace caustream {

/// Coarse failure class; the CLI maps each onto a stable exit code.
enum class ErrorKind {
  kUsage,      // bad arguments, contract violations by the caller
  kData,       // schema, structural and loading problems
  kTraining,   // divergence, non-finite losses
  kNetwork,    // remote fetch failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define CAUSTREAM_DEFINE_ERROR(Name, Kind, prefix)                                  \
  class Name : public Error {                                                       \
   public:                                                                          \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, prefix + what) {} \
  };

CAUSTREAM_DEFINE_ERROR(ContractError, kUsage, std::string("contract: "))
CAUSTREAM_DEFINE_ERROR(ArgumentError, kUsage, std::string("argument: "))
CAUSTREAM_DEFINE_ERROR(ConfigError, kUsage, std::string("config: "))
CAUSTREAM_DEFINE_ERROR(SchemaError, kData, std::string("schema: "))
CAUSTREAM_DEFINE_ERROR(StructuralError, kData, std::string("structural: "))
CAUSTREAM_DEFINE_ERROR(AssumptionError, kData, std::string("assumption violated: "))
CAUSTREAM_DEFINE_ERROR(GenerationError, kData, std::string("generation: "))
CAUSTREAM_DEFINE_ERROR(LoadError, kData, std::string("load: "))
CAUSTREAM_DEFINE_ERROR(IntegrityError, kData, std::string("integrity: "))
CAUSTREAM_DEFINE_ERROR(InputError, kData, std::string("input: "))
CAUSTREAM_DEFINE_ERROR(NumericalError, kTraining, std::string("numerical: "))
CAUSTREAM_DEFINE_ERROR(ConditioningError, kTraining, std::string("conditioning: "))
CAUSTREAM_DEFINE_ERROR(TrainingError, kTraining, std::string("training: "))
CAUSTREAM_DEFINE_ERROR(UndefinedMetricError, kData, std::string("undefined metric: "))
CAUSTREAM_DEFINE_ERROR(NetworkError, kNetwork, std::string("network: "))

#undef CAUSTREAM_DEFINE_ERROR

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace caustream
