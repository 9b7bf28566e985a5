#pragma once

#include <stdexcept>
#include <string>

namespace rankssm {

// Base class for all library errors. Subclasses map onto CLI exit codes:
// config/contract -> 1 (usage), data -> 2, numeric -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between tensors.
struct DimError : Error {
    using Error::Error;
};

// Invalid parameter value or configuration (bad rank, eps <= 0, unknown mode...).
struct ConfigError : Error {
    using Error::Error;
};

// Violated API precondition (non-scalar loss, empty tape, malformed input ids...).
struct ContractError : Error {
    using Error::Error;
};

// Missing or malformed external data (files, doc ids, parse failures).
struct DataError : Error {
    using Error::Error;
};

// Non-finite values or other numeric failures.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace rankssm
