#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace epp::mc {

/// A population of N pairs from which 3k are tested; delta is the population
/// error rate the test guards against, eps0 the margin.
struct SamplingQuery {
    std::size_t n = 0;
    std::size_t k = 0;
    double delta = 0.0;
    double eps0 = 0.0;

    /// Throws std::invalid_argument unless 0 < eps0 < delta < 1 and 3k < N.
    void validate() const;
};

/// exp[-eps0^2 N / (4 (delta - delta^2))]
double sampling_bound(const SamplingQuery& q);

struct SamplingReport {
    SamplingQuery query;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    std::size_t bad = 0;        // parity-1 pairs in the population, floor(delta N) + 1
    std::size_t threshold = 0;  // a sample passes with at most floor((delta - eps0) k) bad
    std::size_t hits = 0;       // samples that passed
    double empirical = 0.0;
    double sigma = 0.0;         // Monte-Carlo standard error at the bound
    double bound = 0.0;
    bool pass = false;          // empirical <= bound + 3 sigma
};

/// Draws `trials` samples of k pairs without replacement from the worst
/// admissible population and counts how often the sample looks clean.
/// Throws Unsupported when the bound is below 10 / trials (not resolvable).
SamplingReport verify_sampling_bound(const SamplingQuery& q, std::size_t trials, std::uint64_t seed);

/// Desk-scale grid used by `verify sampling --preset desk`.
std::vector<SamplingQuery> desk_preset();

/// One JSON object (schema epp-verify/1 entry).
std::string to_json(const SamplingReport& r);

}  // namespace epp::mc
