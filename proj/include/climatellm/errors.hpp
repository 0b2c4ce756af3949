#pragma once

#include <stdexcept>
#include <string>

namespace climatellm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Precondition on input values violated (empty window, non-finite entry, ...).
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Operand shapes or variable counts disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Inverse transform produced a non-negligible imaginary residue.
class SymmetryViolation : public Error {
public:
    using Error::Error;
};

/// Dataset or checkpoint on disk fails checksum, version or size checks.
class CorruptData : public Error {
public:
    using Error::Error;
};

/// Configuration rejected (CFL violation, bad architecture sizes, ...).
class InvalidConfig : public Error {
public:
    using Error::Error;
};

/// Loss or gradient became non-finite during training.
class TrainingDivergence : public Error {
public:
    using Error::Error;
};

}  // namespace climatellm
