#pragma once

#include <stdexcept>
#include <string>

namespace femseg {

// Precondition / shape / invariant failures. Message carries the offending
// values so callers can log it verbatim.
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class GenerationError : public std::runtime_error {
public:
    explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when an augmentation would move an endpoint out of the volume.
// Callers redraw or drop the case explicitly.
class AugmentRejected : public std::runtime_error {
public:
    explicit AugmentRejected(const std::string& what) : std::runtime_error(what) {}
};

class FemurNotFound : public std::runtime_error {
public:
    explicit FemurNotFound(const std::string& what) : std::runtime_error(what) {}
};

class ArchitectureMismatch : public std::runtime_error {
public:
    explicit ArchitectureMismatch(const std::string& what) : std::runtime_error(what) {}
};

class TrainingDiverged : public std::runtime_error {
public:
    explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

#define FEMSEG_REQUIRE(cond, msg)                        \
    do {                                                 \
        if (!(cond)) throw ::femseg::ContractViolation(msg); \
    } while (0)

} // namespace femseg
