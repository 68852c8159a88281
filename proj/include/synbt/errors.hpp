#pragma once

#include <stdexcept>
#include <string>

namespace synbt {

// Thrown when tumor placement cannot satisfy the containment/overlap
// predicates within the configured rejection budget.
struct PlacementInfeasibleError : std::runtime_error {
    explicit PlacementInfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when ROI post-processing filters out every component.
struct EmptyRoiError : std::runtime_error {
    explicit EmptyRoiError(const std::string& msg) : std::runtime_error(msg) {}
};

// Surface distances are undefined when either mask is empty.
struct UndefinedDistanceError : std::runtime_error {
    explicit UndefinedDistanceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged (non-finite loss) or other numerical breakdown.
struct NumericalFailureError : std::runtime_error {
    explicit NumericalFailureError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pipeline stage was invoked before the artifact it consumes exists.
struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

// An operation was called in the wrong lifecycle order (e.g. stage-2
// finetuning without stage-1 models).
struct InvalidStateError : std::logic_error {
    explicit InvalidStateError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace synbt
