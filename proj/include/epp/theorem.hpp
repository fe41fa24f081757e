#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "epp/protocol.hpp"

namespace epp::theorem {

enum class Status : std::uint8_t { Pass, Fail, Unsupported };

std::string_view to_string(Status s);

struct ConditionResult {
    Status status = Status::Pass;
    double max_deviation = 0.0;
    /// "line N: STEP" citations for the steps that failed or could not be checked.
    std::vector<std::string> offending;
};

struct TheoremVerdict {
    std::string protocol;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    ConditionResult condition1;
    ConditionResult condition2;
    ConditionResult condition3;

    [[nodiscard]] bool pass() const {
        return condition1.status == Status::Pass && condition2.status == Status::Pass &&
               condition3.status == Status::Pass;
    }
};

inline constexpr std::size_t kDefaultTrials = 64;
inline constexpr double kTolerance = 1e-10;

/// Only bi-CNOTs and local W (x) W measurements act on the pairs.
ConditionResult check_condition1(const protocol::ProtocolSpec& spec);

/// Replacing each local measurement by its collective parity measurement
/// leaves, per announced parity class, the acceptance probability and the
/// kept pair's phi+ overlap unchanged. Checked on random dense states.
ConditionResult check_condition2(const protocol::ProtocolSpec& spec, std::size_t trials, std::uint64_t seed);

/// Every collective measurement implied by the script commutes with the dark
/// Bell measurement (identical unnormalized branches in either order).
ConditionResult check_condition3(const protocol::ProtocolSpec& spec, std::size_t trials, std::uint64_t seed);

TheoremVerdict check(const protocol::ProtocolSpec& spec, std::size_t trials = kDefaultTrials, std::uint64_t seed = 0);

/// Serialized as a single JSON object (schema epp-verdict/1).
std::string to_json(const TheoremVerdict& verdict);

}  // namespace epp::theorem
