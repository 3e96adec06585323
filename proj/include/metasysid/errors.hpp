#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace metasysid {

// Shape mismatches, out-of-range indices and malformed numeric inputs use
// std::invalid_argument directly. The types below carry extra meaning.

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ContextOverflowError : public std::length_error {
   public:
    using std::length_error::length_error;
};

class IntegrityError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class UnsupportedVersionError : public std::runtime_error {
   public:
    UnsupportedVersionError(std::uint32_t found, std::uint32_t expected)
        : std::runtime_error("unsupported format version " + std::to_string(found) + " (expected " +
                             std::to_string(expected) + ")"),
          found_version(found) {}
    std::uint32_t found_version;
};

class SingularFitError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Thrown by the realization step when the Hankel matrix cannot support the requested order.
class RankError : public std::runtime_error {
   public:
    RankError(const std::string& what, int suggested)
        : std::runtime_error(what), suggested_order(suggested) {}
    int suggested_order;
};

class BatchGenerationError : public std::runtime_error {
   public:
    BatchGenerationError(const std::string& what, std::size_t slot_index)
        : std::runtime_error("slot " + std::to_string(slot_index) + ": " + what), slot(slot_index) {}
    std::size_t slot;
};

class TrainingDivergedError : public std::runtime_error {
   public:
    TrainingDivergedError(const std::string& what, std::string diagnostic)
        : std::runtime_error(what), diagnostic_checkpoint(std::move(diagnostic)) {}
    std::string diagnostic_checkpoint;
};

}  // namespace metasysid
