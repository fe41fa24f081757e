#include "epp/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "epp/mc_engine.hpp"
#include "epp/random.hpp"
#include "json.hpp"

namespace epp::mc {

namespace {

constexpr std::uint64_t kStreamSampling = 0x73616d70ULL;
constexpr std::size_t kChunk = 1 << 14;

// Sequential draws without replacement; stops once the sample is dirty.
std::size_t count_clean(const SamplingQuery& q, std::size_t bad, std::size_t threshold, std::size_t trials,
                        Philox rng) {
    std::size_t hits = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t remaining = q.n, bad_left = bad, seen = 0;
        for (std::size_t i = 0; i < q.k && seen <= threshold; ++i, --remaining) {
            if (rng.below(remaining) < bad_left) {
                --bad_left;
                ++seen;
            }
        }
        hits += seen <= threshold;
    }
    return hits;
}

}  // namespace

void SamplingQuery::validate() const {
    if (!(eps0 > 0 && eps0 < delta && delta < 1))
        throw std::invalid_argument("need 0 < eps0 < delta < 1");
    if (!(3 * k < n)) throw std::invalid_argument("need 3k < N");
}

double sampling_bound(const SamplingQuery& q) {
    q.validate();
    return std::exp(-q.eps0 * q.eps0 * static_cast<double>(q.n) / (4 * (q.delta - q.delta * q.delta)));
}

SamplingReport verify_sampling_bound(const SamplingQuery& q, std::size_t trials, std::uint64_t seed) {
    if (trials < 1) throw std::invalid_argument("trials must be at least 1");
    SamplingReport r;
    r.query = q;
    r.trials = trials;
    r.seed = seed;
    r.bound = sampling_bound(q);
    if (r.bound < 10.0 / static_cast<double>(trials))
        throw Unsupported("bound " + std::to_string(r.bound) + " is below 10/trials; raise trials");
    r.bad = std::min(q.n, static_cast<std::size_t>(std::floor(q.delta * static_cast<double>(q.n))) + 1);
    r.threshold = static_cast<std::size_t>(std::floor((q.delta - q.eps0) * static_cast<double>(q.k)));

    // fixed chunks on fixed sub-streams, so the count is independent of the thread count
    const std::size_t chunks = (trials + kChunk - 1) / kChunk;
    std::vector<std::size_t> hits(chunks, 0);
    const Philox root(seed, kStreamSampling);
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), chunks));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t c = w; c < chunks; c += workers) {
                const std::size_t count = std::min(kChunk, trials - c * kChunk);
                hits[c] = count_clean(q, r.bad, r.threshold, count, root.substream(c));
            }
        });
    for (auto& t : pool) t.join();
    for (const std::size_t h : hits) r.hits += h;

    const double n = static_cast<double>(trials);
    r.empirical = static_cast<double>(r.hits) / n;
    r.sigma = std::sqrt(r.bound * (1 - r.bound) / n);
    r.pass = r.empirical <= r.bound + 3 * r.sigma;
    return r;
}

std::vector<SamplingQuery> desk_preset() {
    return {{500, 100, 0.2, 0.1},   {200, 60, 0.3, 0.15},  {1000, 300, 0.1, 0.05}, {400, 100, 0.2, 0.1},
            {300, 90, 0.25, 0.1},   {600, 150, 0.15, 0.05}, {120, 39, 0.5, 0.3},   {1000, 333, 0.2, 0.05}};
}

std::string to_json(const SamplingReport& r) {
    nlohmann::ordered_json j;
    j["N"] = r.query.n;
    j["k"] = r.query.k;
    j["delta"] = r.query.delta;
    j["eps0"] = r.query.eps0;
    j["trials"] = r.trials;
    j["seed"] = r.seed;
    j["bad"] = r.bad;
    j["threshold"] = r.threshold;
    j["hits"] = r.hits;
    j["empirical"] = r.empirical;
    j["sigma"] = r.sigma;
    j["bound"] = r.bound;
    j["pass"] = r.pass;
    return j.dump();
}

}  // namespace epp::mc
