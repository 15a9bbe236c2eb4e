#pragma once

#include <stdexcept>
#include <string>

namespace resteer {

enum class Errc {
  MissingFile,
  ShapeMismatch,
  DuplicateQid,
  CorruptRecord,
  IoFailure,
  EmptyDataset,
  TooFewRows,
  DimMismatch,
  QidOrderMismatch,
  OptionCountMismatch,
  NonFiniteScore,
  IndexOutOfRange,
  BadWidth,
  LengthMismatch,
  EmptyTrainSet,
  DivergedLoss,
  DegenerateTargets,
  SingularSystem,
  ChecksumMismatch,
  UnsupportedVersion,
  NonFiniteInput,
  EmptyInput,
  MixedOptionCounts,
  NoBeneficialFeatures,
  TooFewQuestions,
  AllZeroSignal,
  DegenerateData,
  BadConfig,
  InvalidArgument,
};

const char* errc_name(Errc code) noexcept;

/// Every failure in the library surfaces as this exception; `code()` tells
/// callers (and the CLI exit path) which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace resteer
