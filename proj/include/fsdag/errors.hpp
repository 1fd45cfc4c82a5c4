#pragma once

#include <stdexcept>
#include <string>

namespace fsdag {

// Root of every error thrown by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FSDAG_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

FSDAG_DEFINE_ERROR(DimensionError)
FSDAG_DEFINE_ERROR(RankError)
FSDAG_DEFINE_ERROR(ContractError)
FSDAG_DEFINE_ERROR(DomainError)
FSDAG_DEFINE_ERROR(SizeError)
FSDAG_DEFINE_ERROR(ParseError)
FSDAG_DEFINE_ERROR(ValidationError)
FSDAG_DEFINE_ERROR(LookupError)
FSDAG_DEFINE_ERROR(FormatError)
FSDAG_DEFINE_ERROR(DegenerateGraphError)
FSDAG_DEFINE_ERROR(CheckpointError)
FSDAG_DEFINE_ERROR(ConfigError)
FSDAG_DEFINE_ERROR(ArgumentError)
FSDAG_DEFINE_ERROR(GenerationError)

#undef FSDAG_DEFINE_ERROR

}  // namespace fsdag
