#include "epp/protocol.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace epp;
using namespace epp::protocol;

namespace {

const std::string kDir = EPP_PROTOCOL_DIR;

std::vector<std::string> fixture_paths() {
    std::vector<std::string> out;
    for (const auto& entry : std::filesystem::directory_iterator(kDir))
        if (entry.path().extension() == ".epp") out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

ParseError parse_error(std::string_view source) {
    try {
        parse(source);
    } catch (const ParseError& e) {
        return e;
    }
    ADD_FAILURE() << "expected a parse error for:\n" << source;
    return ParseError(0, 0, "none");
}

}  // namespace

TEST(Parse, Protocol3HasFourPhases) {
    const ProtocolSpec spec = parse_file(kDir + "/protocol3.epp");
    EXPECT_EQ(spec.name, "protocol3");
    ASSERT_EQ(spec.steps.size(), 9U);
    // Distribution
    EXPECT_TRUE(std::holds_alternative<Distribute>(spec.steps[0].kind));
    // Three test groups, each measured locally
    for (std::size_t i = 1; i <= 3; ++i) {
        const auto& t = std::get<TestSample>(spec.steps[i].kind);
        EXPECT_EQ(t.basis, kAllBases[i - 1]);
        EXPECT_EQ(t.count, Count{std::string("k")});
        const auto& m = std::get<MeasureLocal>(spec.steps[i + 3].kind);
        EXPECT_EQ(m.role, Role::Test);
        EXPECT_EQ(m.basis.pauli, kAllBases[i - 1]);
    }
    // Alternating rejection in a repeat block
    const auto& r = std::get<Repeat>(spec.steps[7].kind);
    EXPECT_EQ(r.times, Count{std::string("rounds")});
    ASSERT_EQ(r.body.size(), 6U);
    EXPECT_EQ(std::get<BiCnot>(r.body[0].kind).basis, CnotBasis::Z);
    EXPECT_EQ(std::get<BiCnot>(r.body[3].kind).basis, CnotBasis::X);
    EXPECT_EQ(std::get<KeepIf>(r.body[2].kind), (KeepIf{KeepIf::Source::Parity, 0}));
    // Key measurement
    EXPECT_EQ(std::get<MeasureLocal>(spec.steps[8].kind).role, Role::Kept);
    EXPECT_EQ(resolve(Count{std::string("N")}, spec), 1000000);
    EXPECT_DOUBLE_EQ(param_or(spec, "delta", 0.0), 0.15);
}

TEST(Parse, EmptyFileHasNoSteps) {
    EXPECT_NE(std::string(parse_error("").what()).find("no steps"), std::string::npos);
    EXPECT_NE(std::string(parse_error("# only a comment\n\nPARAM N = 3\n").what()).find("no steps"), std::string::npos);
}

TEST(Parse, BellReadParses) {
    const ProtocolSpec spec = parse("DISTRIBUTE 4\nMEASURE BELL READ\n");
    ASSERT_EQ(spec.steps.size(), 2U);
    EXPECT_TRUE(std::holds_alternative<BellRead>(spec.steps[1].kind));
    EXPECT_EQ(spec.steps[1].line, 2);
}

TEST(Parse, UnboundParameterIsReportedAtItsUse) {
    const ParseError e = parse_error("PARAM N = 10\nDISTRIBUTE N\nTEST Z kk\n");
    EXPECT_EQ(e.line(), 3);
    EXPECT_EQ(e.column(), 8);
    EXPECT_NE(std::string(e.what()).find("unbound parameter 'kk'"), std::string::npos);
}

TEST(Parse, ParametersMayBeDeclaredAfterUse) {
    EXPECT_NO_THROW(parse("DISTRIBUTE N\nPARAM N = 10\n"));
}

TEST(Parse, UnknownStepKindListsAlternatives) {
    const ParseError e = parse_error("DISTRIBUTE 4\n  TELEPORT 3\n");
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(e.column(), 3);
    EXPECT_NE(std::string(e.what()).find("unknown step kind"), std::string::npos);
    EXPECT_NE(std::find(e.expected().begin(), e.expected().end(), "BICNOT"), e.expected().end());
}

TEST(Parse, SyntaxErrorsCarryPositionAndExpectedTokens) {
    {
        const ParseError e = parse_error("DISTRIBUTE 4\nMEASURE LOCAL Q ON test\n");
        EXPECT_EQ(e.line(), 2);
        EXPECT_EQ(e.column(), 15);
        EXPECT_EQ(e.expected(), (std::vector<std::string>{"X", "Y", "Z", "TILT"}));
    }
    {
        const ParseError e = parse_error("DISTRIBUTE 4\nMEASURE LOCAL Z ON nowhere\n");
        EXPECT_EQ(e.column(), 20);
        EXPECT_EQ(e.expected(), (std::vector<std::string>{"destination", "test", "trash", "kept"}));
    }
    {
        const ParseError e = parse_error("DISTRIBUTE 4\nBICNOT Y\n");
        EXPECT_EQ(e.column(), 8);
        EXPECT_EQ(e.expected(), (std::vector<std::string>{"Z", "X"}));
    }
}

TEST(Parse, MissingAndTrailingTokens) {
    EXPECT_EQ(parse_error("DISTRIBUTE\n").expected(), (std::vector<std::string>{"integer", "parameter name"}));
    EXPECT_EQ(parse_error("DISCARD now\n").expected(), (std::vector<std::string>{"end of line"}));
    EXPECT_EQ(parse_error("DISTRIBUTE -3\n").line(), 1);
    EXPECT_EQ(parse_error("PARAM x = abc\nDISTRIBUTE 1\n").column(), 11);
}

TEST(Parse, RepeatBlocksMustBeWellNested) {
    EXPECT_EQ(parse_error("DISTRIBUTE 4\nREPEAT 2 {\nBICNOT Z\n").expected(), (std::vector<std::string>{"}"}));
    EXPECT_EQ(parse_error("DISTRIBUTE 4\n}\n").line(), 2);
    const ProtocolSpec spec = parse("DISTRIBUTE 4\nREPEAT 2 {\n REPEAT 3 {\n  BICNOT X\n }\n DISCARD\n}\n");
    const auto& outer = std::get<Repeat>(spec.steps[1].kind);
    ASSERT_EQ(outer.body.size(), 2U);
    EXPECT_EQ(std::get<Repeat>(outer.body[0].kind).body.size(), 1U);
}

TEST(Parse, KeywordsAreCaseInsensitiveAndCommentsIgnored) {
    const ProtocolSpec a = parse("distribute 4   # four pairs\nbicnot x Sequential group 3\nkeepif bob 1\n");
    const ProtocolSpec b = parse("DISTRIBUTE 4\nBICNOT X sequential GROUP 3\nKEEPIF BOB 1\n");
    EXPECT_EQ(a, b);
    EXPECT_EQ(std::get<BiCnot>(a.steps[1].kind), (BiCnot{CnotBasis::X, Grouping::Sequential, 3}));
}

TEST(Parse, GroupSizeMustBeAtLeastTwo) {
    EXPECT_NE(std::string(parse_error("DISTRIBUTE 4\nBICNOT Z GROUP 1\n").what()).find("group size"), std::string::npos);
}

TEST(Parse, NonPauliSteps) {
    const ProtocolSpec spec =
        parse("DISTRIBUTE 4\nMEASURE LOCAL TILT 22.5 ON trash\nMEASURE PROJECTOR 01 ON destination\nGATE CCZ 3\n");
    EXPECT_EQ(std::get<MeasureLocal>(spec.steps[1].kind).basis, (MeasurementBasis{true, Basis::Z, 22.5}));
    EXPECT_EQ(std::get<MeasureProjector>(spec.steps[2].kind), (MeasureProjector{0, 1, Role::Destination}));
    EXPECT_EQ(std::get<Gate>(spec.steps[3].kind), (Gate{"CCZ", 3}));
}

TEST(RoundTrip, EveryFixture) {
    const auto paths = fixture_paths();
    ASSERT_GE(paths.size(), 8U);
    for (const auto& path : paths) {
        const ProtocolSpec spec = parse_file(path);
        const std::string text = pretty_print(spec);
        EXPECT_EQ(parse(text), spec) << path << "\n" << text;
        EXPECT_EQ(pretty_print(parse(text)), text) << path;
    }
}

TEST(RoundTrip, RealParametersStayReal) {
    const ProtocolSpec spec = parse("PARAM delta = 1\nPARAM eps = 2.0\nPARAM tiny = 1e-3\nDISTRIBUTE 1\n");
    EXPECT_TRUE(std::holds_alternative<std::int64_t>(spec.parameters.at("delta")));
    EXPECT_TRUE(std::holds_alternative<double>(spec.parameters.at("eps")));
    EXPECT_EQ(parse(pretty_print(spec)), spec);
}

TEST(Resolve, OverridesTakePrecedenceAndValidate) {
    const ProtocolSpec spec = parse("PARAM N = 10\nPARAM half = 0.5\nDISTRIBUTE N\n");
    EXPECT_EQ(resolve(Count{std::string("N")}, spec), 10);
    EXPECT_EQ(resolve(Count{std::string("N")}, spec, {{"N", std::int64_t{99}}}), 99);
    EXPECT_EQ(resolve(Count{std::int64_t{7}}, spec), 7);
    EXPECT_THROW(resolve(Count{std::string("half")}, spec), std::invalid_argument);
    EXPECT_THROW(resolve(Count{std::string("missing")}, spec), std::invalid_argument);
    EXPECT_THROW(resolve(Count{std::string("N")}, spec, {{"N", std::int64_t{-1}}}), std::invalid_argument);
    EXPECT_DOUBLE_EQ(param_or(spec, "half", 1.0), 0.5);
    EXPECT_DOUBLE_EQ(param_or(spec, "absent", 1.0), 1.0);
}

TEST(Describe, RendersCanonicalForms) {
    const ProtocolSpec spec = parse("DISTRIBUTE 4\nbicnot z\nmeasure collective y on test\nkeepif alice 0\n");
    EXPECT_EQ(describe(spec.steps[1]), "BICNOT Z random");
    EXPECT_EQ(describe(spec.steps[2]), "MEASURE COLLECTIVE Y ON test");
    EXPECT_EQ(describe(spec.steps[3]), "KEEPIF ALICE 0");
}
