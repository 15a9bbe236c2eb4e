#include "resteer/error.hpp"

namespace resteer {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DuplicateQid: return "DuplicateQid";
    case Errc::CorruptRecord: return "CorruptRecord";
    case Errc::IoFailure: return "IoFailure";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::TooFewRows: return "TooFewRows";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::QidOrderMismatch: return "QidOrderMismatch";
    case Errc::OptionCountMismatch: return "OptionCountMismatch";
    case Errc::NonFiniteScore: return "NonFiniteScore";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::BadWidth: return "BadWidth";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyTrainSet: return "EmptyTrainSet";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::DegenerateTargets: return "DegenerateTargets";
    case Errc::SingularSystem: return "SingularSystem";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::MixedOptionCounts: return "MixedOptionCounts";
    case Errc::NoBeneficialFeatures: return "NoBeneficialFeatures";
    case Errc::TooFewQuestions: return "TooFewQuestions";
    case Errc::AllZeroSignal: return "AllZeroSignal";
    case Errc::DegenerateData: return "DegenerateData";
    case Errc::BadConfig: return "BadConfig";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace resteer
