#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hgpmil {

enum class ErrorCode {
    EmptyBag,
    DimensionMismatch,
    NonFiniteValue,
    DuplicatePatchId,
    IoFailure,
    HeaderMismatch,
    BadMagic,
    UnsupportedVersion,
    TruncatedPayload,
    TrailingData,
    MissingPatchId,
    OutOfRangeScore,
    DuplicateRow,
    MalformedCsv,
    SingularSystem,
    DivergedLoss,
    KindMismatch,
    LengthMismatch,
    KTooLarge,
    BadClusterIndex,
    EmptyCluster,
    EmptyInput,
    SingleClassDataset,
    NoEvents,
    SingleClass,
    MissingClass,
    ClassTooSmall,
    EmptyCohort,
    EmptyGroup,
    InvalidConfig,
    InvalidArgument,
    ManifestError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so
// callers (and tests) can branch on the variant instead of the message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace hgpmil
