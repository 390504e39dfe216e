#ifndef MOST_ERROR_HPP
#define MOST_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace most
{

enum class ErrorCode
{
    // validation
    NonFiniteCoordinate,
    BadRotation,
    DuplicateTrackFrame,
    FrameCountMismatch,
    BadBoxSize,
    BadHeading,
    BadFrameIndex,
    BadFeatureMap,
    BadConfig,
    // geometry / pipeline
    DegenerateInput,
    DimensionMismatch,
    ShapeMismatch,
    BudgetMismatch,
    // io
    BadMagic,
    VersionUnsupported,
    ShapeHeaderMismatch,
    ManifestMissingEntry,
    IoFailure,
};

inline std::string_view to_string(ErrorCode code)
{
    switch (code)
    {
    case ErrorCode::NonFiniteCoordinate: return "NonFiniteCoordinate";
    case ErrorCode::BadRotation: return "BadRotation";
    case ErrorCode::DuplicateTrackFrame: return "DuplicateTrackFrame";
    case ErrorCode::FrameCountMismatch: return "FrameCountMismatch";
    case ErrorCode::BadBoxSize: return "BadBoxSize";
    case ErrorCode::BadHeading: return "BadHeading";
    case ErrorCode::BadFrameIndex: return "BadFrameIndex";
    case ErrorCode::BadFeatureMap: return "BadFeatureMap";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BudgetMismatch: return "BudgetMismatch";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::ShapeHeaderMismatch: return "ShapeHeaderMismatch";
    case ErrorCode::ManifestMissingEntry: return "ManifestMissingEntry";
    case ErrorCode::IoFailure: return "IoFailure";
    }
    return "Unknown";
}

/// Base for every exception thrown by the library.
class Error : public std::runtime_error
{
  public:
    Error(ErrorCode code, const std::string &message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

/// Filesystem failures (open, read, write). The CLI maps these to exit code 2.
class IoError : public Error
{
  public:
    using Error::Error;
};

struct Issue
{
    ErrorCode code;
    std::string message;
};

/// Carries every violation found, not just the first one.
class ValidationError : public Error
{
  public:
    explicit ValidationError(std::vector<Issue> issues)
        : Error(issues.empty() ? ErrorCode::BadConfig : issues.front().code, summarize(issues)),
          issues_(std::move(issues))
    {
    }

    const std::vector<Issue> &issues() const noexcept { return issues_; }

  private:
    static std::string summarize(const std::vector<Issue> &issues)
    {
        std::string out = std::to_string(issues.size()) + " violation(s)";
        for (const auto &issue : issues)
        {
            out += "\n  ";
            out += to_string(issue.code);
            out += ": ";
            out += issue.message;
        }
        return out;
    }

    std::vector<Issue> issues_;
};

} // namespace most

#endif // MOST_ERROR_HPP
