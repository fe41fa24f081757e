#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace epp {

inline constexpr std::string_view kRoundsCsvSchema = "epp-rounds/1";
inline constexpr std::string_view kTrialCsvSchema = "epp-trials/1";
inline constexpr std::string_view kTrialJsonSchema = "epp-trial-report/1";
inline constexpr std::string_view kVerifyJsonSchema = "epp-verify/1";
inline constexpr std::string_view kVerdictJsonSchema = "epp-verdict/1";

/// Shortest round-trip decimal form; identical input gives identical text.
std::string format_double(double v);

/// 64-bit FNV-1a, used for transcript digests.
class Fnv1a {
public:
    void update(const void* data, std::size_t size);
    void update_u64(unsigned long long v);
    [[nodiscard]] unsigned long long value() const { return state_; }
    [[nodiscard]] std::string hex() const;

private:
    unsigned long long state_ = 0xcbf29ce484222325ULL;
};

}  // namespace epp
