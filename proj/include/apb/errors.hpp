#pragma once

#include <stdexcept>
#include <string>

namespace apb {

/// Shape or contract violations: mismatched dimensions, empty batches,
/// bad indices. Indicates a caller bug, not a data problem.
struct StructuralError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Arithmetic failures: singular solves, non-finite losses, iteration caps.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Inputs on which the requested construction is mathematically undefined
/// (e.g. a zero pivot vector, which makes the rank-one normalization blow up).
struct DegenerateInputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Policy extraction failed: support spread over several state blocks, or
/// nonpositive block mass.
struct ExtractionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A requested construction has no solution (e.g. permutation search over
/// value vectors whose sorted multisets do not match).
struct NoSolutionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed external input: scenario files, configs, checkpoints.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace apb
