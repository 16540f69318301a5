#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace quantact {

// Shape or layout disagreement between operands.
class dimension_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Misuse of the autograd tape (backward without a recorded forward, double backward).
class tape_error : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Operation called on an object that is not ready for it (e.g. untrained head).
class state_error : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed binary input. Carries the byte offset at which parsing failed.
class format_error : public std::runtime_error {
public:
    format_error(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class report_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class divergence_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace quantact
