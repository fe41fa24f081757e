#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "epp/dense_oracle.hpp"
#include "epp/io.hpp"
#include "epp/mc_engine.hpp"
#include "epp/protocol.hpp"
#include "epp/rates.hpp"
#include "epp/sampling.hpp"
#include "epp/theorem.hpp"
#include "json.hpp"

#ifndef EPP_PROTOCOL_DIR
#define EPP_PROTOCOL_DIR "protocols"
#endif

namespace epp::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Carries an exit code out of a command.
struct Failure : std::runtime_error {
    Failure(int code, const std::string& what) : std::runtime_error(what), code(code) {}
    int code;
};

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string format = "csv";
    std::string out_path;
};

std::uint64_t seed_or_draw(const Globals& g, std::optional<std::uint64_t> fallback, std::ostream& err) {
    if (g.seed) return *g.seed;
    if (fallback) return *fallback;
    std::random_device rd;
    const std::uint64_t s = (std::uint64_t{rd()} << 32) | rd();
    err << "seed=" << s << '\n';
    return s;
}

void emit(const Globals& g, const std::string& text, std::ostream& out) {
    if (g.out_path.empty()) {
        out << text;
        return;
    }
    std::ofstream f(g.out_path, std::ios::binary);
    if (!f) throw Failure(kIoError, "cannot open '" + g.out_path + "' for writing");
    f << text;
    if (!f) throw Failure(kIoError, "write to '" + g.out_path + "' failed");
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure(kIoError, "cannot read '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Relative paths resolve against `base`, then the bundled protocol directory.
fs::path locate(const std::string& name, const fs::path& base) {
    const fs::path p(name);
    if (p.is_absolute()) return p;
    if (fs::exists(base / p)) return base / p;
    if (fs::exists(fs::path(EPP_PROTOCOL_DIR) / p)) return fs::path(EPP_PROTOCOL_DIR) / p;
    return base / p;
}

protocol::ProtocolSpec load_protocol(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return protocol::parse(text, path.stem().string());
    } catch (const protocol::ParseError& e) {
        throw Failure(kConfigError, path.string() + ":" + e.what());
    }
}

json rates_json(const Rates& r) { return {r[0], r[1], r[2], r[3]}; }

// --- recurse --------------------------------------------------------------

struct RecurseArgs {
    std::string rates;
    std::optional<std::size_t> rounds;
    double target = 1e-9;
    std::size_t max_rounds = 20;
};

std::string cmd_recurse(const RecurseArgs& a, const Globals& g, std::ostream& err) {
    Rates initial;
    try {
        initial = parse_rates(a.rates);
    } catch (const std::invalid_argument& e) {
        throw Failure(kConfigError, std::string("--rates: ") + e.what());
    }
    Schedule schedule;
    bool reached = true;
    if (a.rounds) {
        if (*a.rounds < 1) throw Failure(kConfigError, "--rounds must be at least 1");
        schedule = alternating_schedule(*a.rounds);
    } else {
        if (!(a.target > 0 && a.target < 1)) throw Failure(kConfigError, "--target must lie in (0, 1)");
        if (const auto found = find_schedule(initial, a.target, a.max_rounds)) {
            schedule = *found;
        } else {
            reached = false;
            for (std::size_t n = 0; n < a.max_rounds; ++n)
                schedule.push_back(n % 2 == 0 ? RoundKind::BitFlip : RoundKind::PhaseFlip);
            err << "target infidelity " << format_double(a.target) << " not reached within " << a.max_rounds
                << " sub-steps\n";
        }
    }
    const auto reports = schedule.empty() ? std::vector<RoundReport<double>>{} : iterate(initial, schedule);
    if (g.format == "json") {
        json j;
        j["schema"] = kRoundsCsvSchema;
        j["initial"] = rates_json(initial);
        j["target_reached"] = reached;
        j["rounds"] = json::array();
        for (const auto& r : reports)
            j["rounds"].push_back({{"round", r.round_index},
                                   {"kind", to_string(r.kind)},
                                   {"rates", rates_json(r.rates)},
                                   {"survival", r.survival},
                                   {"cumulative", r.cumulative},
                                   {"infidelity", r.infidelity}});
        return j.dump(2) + "\n";
    }
    std::ostringstream csv;
    write_rounds_csv(csv, reports);
    return csv.str();
}

// --- simulate -------------------------------------------------------------

struct SimConfig {
    fs::path protocol_file;
    mc::ChannelModel channel;
    mc::RunOptions options;
    std::optional<std::uint64_t> seed;
    std::size_t trials = 1;
};

template <typename T>
T field(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Failure(kConfigError, std::string("config '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw Failure(kConfigError, where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw Failure(kConfigError, "unknown key '" + key + "' in " + where);
    }
}

Rates rates_field(const json& j, const char* key) {
    const auto v = field<std::vector<double>>(j, key);
    if (v.size() != 4) throw Failure(kConfigError, std::string("config '") + key + "' needs four rates");
    const Rates r = make_rates(v[0], v[1], v[2], v[3]);
    if (!is_normalized(r)) throw Failure(kConfigError, std::string("config '") + key + "' is not normalized");
    return r;
}

mc::ChannelModel parse_channel(const json& c) {
    reject_unknown(c, {"kind", "params"}, "channel");
    const auto kind = field<std::string>(c, "kind");
    const json params = c.contains("params") ? c.at("params") : json::object();
    if (kind == "iid") {
        reject_unknown(params, {"rates"}, "channel params");
        return mc::ChannelModel::iid(rates_field(params, "rates"));
    }
    if (kind == "adversarial") {
        reject_unknown(params, {"rates"}, "channel params");
        return mc::ChannelModel::adversarial(rates_field(params, "rates"));
    }
    if (kind == "block") {
        reject_unknown(params, {"block_rates", "block_len"}, "channel params");
        std::vector<Rates> blocks;
        for (const auto& b : field<std::vector<std::vector<double>>>(params, "block_rates")) {
            if (b.size() != 4) throw Failure(kConfigError, "each block rate needs four entries");
            blocks.push_back(make_rates(b[0], b[1], b[2], b[3]));
        }
        const auto len = field<std::size_t>(params, "block_len");
        if (len < 1) throw Failure(kConfigError, "block_len must be at least 1");
        auto ch = mc::ChannelModel::blocks(std::move(blocks), len);
        try {
            ch.validate();
        } catch (const std::invalid_argument& e) {
            throw Failure(kConfigError, e.what());
        }
        return ch;
    }
    throw Failure(kConfigError, "channel kind must be iid, block or adversarial, got '" + kind + "'");
}

SimConfig parse_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw Failure(kConfigError, path.string() + ": " + e.what());
    }
    reject_unknown(j, {"protocol_file", "channel", "N", "k", "delta", "eps0", "rounds", "seed", "trials"}, "config");
    SimConfig c;
    c.protocol_file = locate(field<std::string>(j, "protocol_file"), path.parent_path());
    c.channel = parse_channel(j.at("channel"));
    for (const char* key : {"N", "k", "rounds"})
        if (j.contains(key)) c.options.overrides[key] = field<std::int64_t>(j, key);
    if (j.contains("delta")) {
        mc::Threshold t{field<double>(j, "delta"), {}};
        if (j.contains("eps0")) t.eps0 = field<double>(j, "eps0");
        try {
            t.validate();
        } catch (const std::invalid_argument& e) {
            throw Failure(kConfigError, e.what());
        }
        c.options.threshold = t;
    } else if (j.contains("eps0")) {
        throw Failure(kConfigError, "eps0 needs delta");
    }
    if (j.contains("seed")) c.seed = field<std::uint64_t>(j, "seed");
    if (j.contains("trials")) c.trials = field<std::size_t>(j, "trials");
    if (c.trials < 1) throw Failure(kConfigError, "trials must be at least 1");
    return c;
}

struct SimulateArgs {
    std::string config;
    std::optional<std::size_t> trials;
};

std::string cmd_simulate(const SimulateArgs& a, const Globals& g, std::ostream& err, int& code) {
    SimConfig c = parse_config(a.config);
    if (a.trials) c.trials = *a.trials;
    const auto spec = load_protocol(c.protocol_file);
    const std::uint64_t seed = seed_or_draw(g, c.seed, err);
    std::vector<mc::TrialReport> reports;
    reports.reserve(c.trials);
    try {
        for (std::size_t t = 0; t < c.trials; ++t) reports.push_back(mc::run_protocol(spec, c.channel, seed, t, c.options));
    } catch (const mc::Unsupported& e) {
        throw Failure(kUnsupported, e.what());
    } catch (const std::invalid_argument& e) {
        throw Failure(kConfigError, e.what());
    }
    const bool any = std::any_of(reports.begin(), reports.end(), [](const auto& r) { return r.accepted; });
    code = any ? kOk : kAllAborted;
    if (!any) err << "all " << reports.size() << " trials aborted\n";
    std::ostringstream text;
    if (g.format == "json") {
        for (const auto& r : reports) text << mc::to_json_line(r) << '\n';
    } else {
        mc::write_trials_csv(text, reports);
    }
    return text.str();
}

// --- verify ---------------------------------------------------------------

json verify_json(const std::string& suite, std::uint64_t seed, std::size_t trials) {
    json j;
    j["schema"] = kVerifyJsonSchema;
    j["suite"] = suite;
    j["seed"] = seed;
    j["trials"] = trials;
    return j;
}

json cmd_verify_oracle(std::size_t trials, std::uint64_t seed) {
    json j = verify_json("oracle", seed, trials);
    j["checks"] = json::array();
    bool pass = true;
    auto add = [&](const std::vector<VerifyReport>& reports) {
        for (const auto& r : reports) {
            j["checks"].push_back(
                {{"claim", r.claim}, {"trials", r.trials}, {"max_deviation", r.max_deviation}, {"pass", r.pass}});
            pass = pass && r.pass;
        }
    };
    add(verify_commutation(trials, seed));
    add(verify_step4prime(trials, seed));
    j["pass"] = pass;
    return j;
}

json cmd_verify_theorem(std::size_t trials, std::uint64_t seed) {
    using theorem::Status;
    struct Expectation {
        const char* fixture;
        std::array<Status, 3> conditions;
    };
    constexpr Status P = Status::Pass, F = Status::Fail;
    const std::vector<Expectation> table{
        {"protocol3", {P, P, P}},           {"protocol_pec3", {P, P, P}},        {"protocol1", {F, P, P}},
        {"protocol2", {F, P, P}},           {"neg_condition1_gate", {F, P, P}}, {"neg_condition1_bellread", {F, P, P}},
        {"neg_condition2", {P, F, P}},      {"neg_condition3", {P, P, F}},
    };
    json j = verify_json("theorem", seed, trials);
    j["fixtures"] = json::array();
    bool pass = true;
    for (const auto& e : table) {
        const auto spec = load_protocol(fs::path(EPP_PROTOCOL_DIR) / (std::string(e.fixture) + ".epp"));
        const auto v = theorem::check(spec, trials, seed);
        const std::array<Status, 3> got{v.condition1.status, v.condition2.status, v.condition3.status};
        const bool as_expected = got == e.conditions;
        pass = pass && as_expected;
        json expected = json::array();
        for (const Status s : e.conditions) expected.push_back(theorem::to_string(s));
        j["fixtures"].push_back({{"fixture", e.fixture},
                                 {"expected", expected},
                                 {"verdict", json::parse(theorem::to_json(v))},
                                 {"as_expected", as_expected}});
    }
    j["pass"] = pass;
    return j;
}

struct SamplingArgs {
    std::string preset;
    std::optional<std::size_t> n, k;
    std::optional<double> delta, eps0;
};

json cmd_verify_sampling(const SamplingArgs& a, std::size_t trials, std::uint64_t seed) {
    std::vector<mc::SamplingQuery> grid;
    if (!a.preset.empty()) {
        if (a.preset != "desk") throw Failure(kConfigError, "unknown preset '" + a.preset + "' (known: desk)");
        grid = mc::desk_preset();
    } else {
        if (!a.n || !a.k || !a.delta || !a.eps0)
            throw Failure(kConfigError, "sampling needs --preset desk or all of --N --k --delta --eps0");
        grid.push_back({*a.n, *a.k, *a.delta, *a.eps0});
    }
    json j = verify_json("sampling", seed, trials);
    j["points"] = json::array();
    bool pass = true;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        try {
            const auto r = mc::verify_sampling_bound(grid[i], trials, Philox::mix(seed + i));
            j["points"].push_back(json::parse(mc::to_json(r)));
            pass = pass && r.pass;
        } catch (const std::invalid_argument& e) {
            throw Failure(kConfigError, e.what());
        }
    }
    j["pass"] = pass;
    return j;
}

// --- bound / check --------------------------------------------------------

struct BoundArgs {
    std::size_t n = 0, k = 0;
    double delta = 0, eps0 = 0;
};

std::string cmd_bound(const BoundArgs& a, const Globals& g) {
    double b = 0;
    try {
        b = mc::sampling_bound({a.n, a.k, a.delta, a.eps0});
    } catch (const std::invalid_argument& e) {
        throw Failure(kConfigError, e.what());
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.5e", b);
    if (g.format == "json") {
        json j{{"N", a.n}, {"k", a.k}, {"delta", a.delta}, {"eps0", a.eps0}, {"bound", b}, {"text", buf}};
        return j.dump() + "\n";
    }
    return std::string(buf) + "\n";
}

std::string cmd_check(const std::string& file, std::size_t trials, std::uint64_t seed, int& code) {
    const auto spec = load_protocol(file);
    const auto v = theorem::check(spec, trials, seed);
    code = v.pass() ? kOk : kVerificationFailed;
    return theorem::to_json(v) + "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Entanglement purification: recursion tables, protocol runs and verification", "epp"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "RNG seed (drawn and printed when omitted)");
    app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--out", g.out_path, "Write output to this file instead of stdout");

    RecurseArgs recurse;
    auto* rec = app.add_subcommand("recurse", "Iterate the rate recursion");
    rec->add_option("--rates", recurse.rates, "Initial q_I,q_x,q_y,q_z")->required();
    auto* rounds_opt = rec->add_option("--rounds", recurse.rounds, "Full rounds (bit-flip then phase-flip)");
    rec->add_option("--target", recurse.target, "Target infidelity when --rounds is absent")->excludes(rounds_opt);
    rec->add_option("--max-rounds", recurse.max_rounds, "Sub-step limit for --target")->excludes(rounds_opt);

    SimulateArgs simulate;
    auto* sim = app.add_subcommand("simulate", "Run a protocol script on a channel model");
    sim->add_option("config", simulate.config, "Run config JSON")->required();
    sim->add_option("--trials", simulate.trials, "Override the config's trial count");

    std::string suite;
    std::optional<std::size_t> verify_trials;
    SamplingArgs sampling;
    auto* ver = app.add_subcommand("verify", "Run a verification suite");
    ver->add_option("suite", suite, "oracle | theorem | sampling")->required()->check(
        CLI::IsMember({"oracle", "theorem", "sampling"}));
    ver->add_option("--trials", verify_trials, "Random states or Monte-Carlo trials");
    ver->add_option("--preset", sampling.preset, "Sampling grid preset (desk)");
    ver->add_option("--N", sampling.n, "Population size");
    ver->add_option("--k", sampling.k, "Sample size per basis");
    ver->add_option("--delta", sampling.delta, "Population error rate");
    ver->add_option("--eps0", sampling.eps0, "Margin");

    BoundArgs bound;
    auto* bnd = app.add_subcommand("bound", "Evaluate the sampling bound");
    bnd->add_option("--N", bound.n, "Population size")->required();
    bnd->add_option("--k", bound.k, "Sample size per basis");
    bnd->add_option("--delta", bound.delta, "Population error rate")->required();
    bnd->add_option("--eps0", bound.eps0, "Margin")->required();

    std::string check_file;
    std::size_t check_trials = theorem::kDefaultTrials;
    auto* chk = app.add_subcommand("check", "Check a protocol script against the theorem conditions");
    chk->add_option("file", check_file, "Protocol script")->required();
    chk->add_option("--trials", check_trials, "Random states per condition");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kOk : kConfigError;
    }
    if (*seed_opt) g.seed = seed_value;

    try {
        int code = kOk;
        if (*rec) {
            emit(g, cmd_recurse(recurse, g, err), out);
        } else if (*sim) {
            emit(g, cmd_simulate(simulate, g, err, code), out);
        } else if (*ver) {
            const std::uint64_t seed = seed_or_draw(g, std::nullopt, err);
            json j;
            if (suite == "oracle") j = cmd_verify_oracle(verify_trials.value_or(200), seed);
            else if (suite == "theorem") j = cmd_verify_theorem(verify_trials.value_or(theorem::kDefaultTrials), seed);
            else j = cmd_verify_sampling(sampling, verify_trials.value_or(1000000), seed);
            emit(g, j.dump(2) + "\n", out);
            if (!j["pass"].get<bool>()) {
                err << "verify " << suite << ": FAILED\n";
                code = kVerificationFailed;
            }
        } else if (*bnd) {
            emit(g, cmd_bound(bound, g), out);
        } else if (*chk) {
            const std::uint64_t seed = seed_or_draw(g, std::nullopt, err);
            emit(g, cmd_check(check_file, check_trials, seed, code), out);
        }
        return code;
    } catch (const Failure& f) {
        err << "error: " << f.what() << '\n';
        return f.code;
    } catch (const mc::Unsupported& e) {
        err << "error: " << e.what() << '\n';
        return kUnsupported;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }
}

}  // namespace epp::cli
