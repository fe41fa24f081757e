#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "epp/bell.hpp"

namespace epp::protocol {

/// Which pairs a measurement acts on.
enum class Role : std::uint8_t {
    Destination,  // destinations of the most recent bi-CNOT grouping
    Test,         // the test group sampled for the same basis
    Trash,        // the trash can of the same basis
    Kept,         // every pair still alive (final key measurement)
};

enum class Grouping : std::uint8_t { Random, Sequential };

/// Integer literal or a reference to a PARAM.
struct Count {
    std::variant<std::int64_t, std::string> value;
    friend bool operator==(const Count&, const Count&) = default;
};

/// Pauli basis, or a basis tilted by `degrees` from Z toward X.
struct MeasurementBasis {
    bool tilted = false;
    Basis pauli = Basis::Z;
    double degrees = 0.0;
    friend bool operator==(const MeasurementBasis&, const MeasurementBasis&) = default;
};

struct Distribute {
    Count pairs;
    friend bool operator==(const Distribute&, const Distribute&) = default;
};
struct DarkBell {
    friend bool operator==(const DarkBell&, const DarkBell&) = default;
};
/// A Bell measurement whose outcome is read.
struct BellRead {
    friend bool operator==(const BellRead&, const BellRead&) = default;
};
struct TestSample {
    Basis basis = Basis::Z;
    Count count;
    friend bool operator==(const TestSample&, const TestSample&) = default;
};
struct BiCnot {
    CnotBasis basis = CnotBasis::Z;
    Grouping grouping = Grouping::Random;
    int group_size = 2;  // one control, group_size - 1 destinations
    friend bool operator==(const BiCnot&, const BiCnot&) = default;
};
struct MeasureCollective {
    Basis basis = Basis::Z;
    Role role = Role::Destination;
    friend bool operator==(const MeasureCollective&, const MeasureCollective&) = default;
};
struct MeasureLocal {
    MeasurementBasis basis;
    Role role = Role::Destination;
    friend bool operator==(const MeasureLocal&, const MeasureLocal&) = default;
};
/// Two-outcome collective measurement {|ab><ab|, 1 - |ab><ab|} on one pair.
struct MeasureProjector {
    unsigned alice = 0;
    unsigned bob = 0;
    Role role = Role::Destination;
    friend bool operator==(const MeasureProjector&, const MeasureProjector&) = default;
};
/// An arbitrary named gate on `arity` pairs.
struct Gate {
    std::string name;
    int arity = 1;
    friend bool operator==(const Gate&, const Gate&) = default;
};
struct KeepIf {
    enum class Source : std::uint8_t { Parity, Alice, Bob };
    Source source = Source::Parity;
    unsigned bit = 0;
    friend bool operator==(const KeepIf&, const KeepIf&) = default;
};
/// Empties the trash cans (hands them to the environment).
struct Discard {
    friend bool operator==(const Discard&, const Discard&) = default;
};

struct Step;

struct Repeat {
    Count times;
    std::vector<Step> body;
    friend bool operator==(const Repeat&, const Repeat&);
};

using StepKind = std::variant<Distribute, DarkBell, BellRead, TestSample, BiCnot, MeasureCollective, MeasureLocal,
                              MeasureProjector, Gate, KeepIf, Discard, Repeat>;

struct Step {
    StepKind kind;
    int line = 0;  // 1-based source line, 0 when built in code

    /// Structural equality; source positions are ignored.
    friend bool operator==(const Step& a, const Step& b) { return a.kind == b.kind; }
};

inline bool operator==(const Repeat& a, const Repeat& b) { return a.times == b.times && a.body == b.body; }

using ParamValue = std::variant<std::int64_t, double>;

struct ProtocolSpec {
    std::string name;
    std::map<std::string, ParamValue> parameters;
    std::vector<Step> steps;
    friend bool operator==(const ProtocolSpec&, const ProtocolSpec&) = default;
};

class ParseError : public std::runtime_error {
public:
    ParseError(int line, int column, const std::string& message, std::vector<std::string> expected = {});

    [[nodiscard]] int line() const { return line_; }
    [[nodiscard]] int column() const { return column_; }
    [[nodiscard]] const std::vector<std::string>& expected() const { return expected_; }

private:
    int line_;
    int column_;
    std::vector<std::string> expected_;
};

/// Parses the line-oriented `.epp` format:
///
///   PROTOCOL name
///   PARAM name = value
///   DISTRIBUTE count
///   DARKBELL
///   TEST X|Y|Z count
///   REPEAT count {
///   }
///   BICNOT Z|X [random|sequential] [GROUP n]
///   MEASURE LOCAL X|Y|Z|TILT degrees ON destination|test|trash|kept
///   MEASURE COLLECTIVE X|Y|Z ON role
///   MEASURE PROJECTOR ab ON role
///   MEASURE BELL READ
///   KEEPIF 0|1        KEEPIF ALICE|BOB 0|1
///   DISCARD
///   GATE name arity
///
/// Keywords are case-insensitive; `#` starts a comment. `count` is an integer
/// literal or a PARAM name. Throws ParseError.
ProtocolSpec parse(std::string_view source, std::string default_name = "protocol");

ProtocolSpec parse_file(const std::string& path);

/// Canonical text form; parse(pretty_print(s)) == s.
std::string pretty_print(const ProtocolSpec& spec);

/// One-line rendering of a step (without nested bodies).
std::string describe(const Step& step);

std::string_view to_string(Role role);

/// Resolves a count against the parameters, with `overrides` taking
/// precedence. Throws std::invalid_argument on unbound names or negative values.
std::int64_t resolve(const Count& count, const ProtocolSpec& spec,
                     const std::map<std::string, ParamValue>& overrides = {});

/// Numeric value of a parameter (override first); nullopt-like default when absent.
double param_or(const ProtocolSpec& spec, const std::string& name, double fallback,
                const std::map<std::string, ParamValue>& overrides = {});

}  // namespace epp::protocol
