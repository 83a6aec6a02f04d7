#pragma once

#include <stdexcept>
#include <string>

namespace triq {

// All failures surface as typed exceptions; the CLI maps them to exit code 1
// (usage problems are handled separately and exit with 2).

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A query point lies outside the mapped extent (or its planar projection).
struct OutOfExtent : Error {
    using Error::Error;
};

// A gradient was routed to a vertex key that is not present in the store.
// The store is append-only during training, so this indicates a logic error.
struct UnknownVertex : Error {
    using Error::Error;
};

// Malformed input file (scans, poses, PLY, config, scene spec, checkpoint).
struct ParseError : Error {
    using Error::Error;
};

// A pose matrix is not a rigid transform (det(R) <= 0 or badly skewed).
struct NonRigid : Error {
    using Error::Error;
};

// Inconsistent or unusable configuration values.
struct InvalidConfig : Error {
    using Error::Error;
};

// A ray too short to carve free space or straddle the truncation band.
struct DegenerateRay : Error {
    using Error::Error;
};

// Training loss became NaN/inf; aborts with diagnostics in the message.
struct NonFiniteLoss : Error {
    using Error::Error;
};

}  // namespace triq
