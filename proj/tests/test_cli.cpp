#include "cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using epp::cli::run;

const std::string kDir = EPP_PROTOCOL_DIR;

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

class TempDir {
public:
    TempDir() : path_(fs::temp_directory_path() / ("epp_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                                    "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    [[nodiscard]] std::string file(const std::string& name, const std::string& body) const {
        const fs::path p = path_ / name;
        std::ofstream(p) << body;
        return p.string();
    }
    [[nodiscard]] const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string config(const std::string& protocol, const std::string& rates, const std::string& extra = "") {
    return R"({"protocol_file": ")" + kDir + "/" + protocol + R"(", "channel": {"kind": "iid", "params": {"rates": [)" +
           rates + R"(]}}, "N": 20000, "k": 200, "delta": 0.15, "rounds": 2, "trials": 5)" + extra + "}";
}

}  // namespace

TEST(Recurse, FourRoundsGiveEightRows) {
    const auto r = invoke({"recurse", "--rates", "0.85,0.05,0.05,0.05", "--rounds", "4"});
    EXPECT_EQ(r.code, 0);
    const auto l = lines(r.out);
    ASSERT_EQ(l.size(), 10U);
    EXPECT_EQ(l[0], "# schema=epp-rounds/1");
    EXPECT_EQ(l[1], "round,q_I,q_x,q_y,q_z,survival,cumulative,infidelity");
    EXPECT_EQ(l[2].substr(0, 2), "1,");
    EXPECT_EQ(l[9].substr(0, 2), "8,");
}

TEST(Recurse, PerfectRatesHaveZeroInfidelity) {
    const auto r = invoke({"recurse", "--rates", "1,0,0,0", "--rounds", "1"});
    EXPECT_EQ(r.code, 0);
    const auto l = lines(r.out);
    ASSERT_EQ(l.size(), 4U);
    for (std::size_t i = 2; i < l.size(); ++i) EXPECT_EQ(l[i].substr(l[i].rfind(',') + 1), "0");
}

TEST(Recurse, NonConvergentInputIsReportedNotAnError) {
    const auto r = invoke({"--format", "json", "recurse", "--rates", "0.3,0.3,0.3,0.1", "--max-rounds", "6"});
    EXPECT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_FALSE(j["target_reached"].get<bool>());
    EXPECT_EQ(j["rounds"].size(), 6U);
    EXPECT_NE(r.err.find("not reached"), std::string::npos);
}

TEST(Recurse, TargetPicksShortestSchedule) {
    const auto j = nlohmann::json::parse(
        invoke({"--format", "json", "recurse", "--rates", "0.85,0.05,0.05,0.05", "--target", "1e-9"}).out);
    EXPECT_TRUE(j["target_reached"].get<bool>());
    EXPECT_EQ(j["rounds"].size(), 8U);
}

TEST(Recurse, InvalidRatesExitTwo) {
    EXPECT_EQ(invoke({"recurse", "--rates", "0.5,0.5,0.5,0.5"}).code, 2);
    EXPECT_EQ(invoke({"recurse", "--rates", "a,b"}).code, 2);
    EXPECT_EQ(invoke({"recurse"}).code, 2);
}

TEST(Bound, ScientificNotationSixFigures) {
    EXPECT_EQ(invoke({"bound", "--N", "10000", "--delta", "0.1", "--eps0", "0.05"}).out, "6.92885e-31\n");
    EXPECT_EQ(invoke({"bound", "--N", "1000", "--delta", "0.5", "--eps0", "0.1"}).out, "4.53999e-05\n");
}

TEST(Bound, DomainViolationExitsTwo) {
    EXPECT_EQ(invoke({"bound", "--N", "1000", "--delta", "0.5", "--eps0", "0"}).code, 2);
    EXPECT_EQ(invoke({"bound", "--N", "100", "--k", "40", "--delta", "0.5", "--eps0", "0.1"}).code, 2);
}

TEST(Simulate, PerfectChannelAcceptsEveryTrial) {
    TempDir dir;
    const auto cfg = dir.file("perfect.json", config("protocol3.epp", "1, 0, 0, 0", R"(, "seed": 4, "trials": 10)"));
    const auto r = invoke({"--format", "json", "simulate", cfg});
    EXPECT_EQ(r.code, 0) << r.err;
    const auto l = lines(r.out);
    ASSERT_EQ(l.size(), 10U);
    for (const auto& line : l) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j["accepted"].get<bool>());
        EXPECT_EQ(j["key"]["alice"], j["key"]["bob"]);
    }
}

TEST(Simulate, AllAbortedExitsThree) {
    TempDir dir;
    const auto cfg = dir.file("bad.json", config("protocol3.epp", "0.7, 0.1, 0.1, 0.1", R"(, "seed": 1)"));
    const auto r = invoke({"simulate", cfg});
    EXPECT_EQ(r.code, 3);
    EXPECT_EQ(lines(r.out).size(), 2U + 5U);
}

TEST(Simulate, CollectiveStepsExitFourNamingThem) {
    TempDir dir;
    const auto cfg = dir.file("p1.json", config("protocol1.epp", "0.85, 0.05, 0.05, 0.05", R"(, "seed": 1)"));
    const auto r = invoke({"simulate", cfg});
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.err.find("MEASURE COLLECTIVE"), std::string::npos);
}

TEST(Simulate, ConfigErrorsExitTwo) {
    TempDir dir;
    EXPECT_EQ(invoke({"simulate", dir.file("a.json", config("protocol3.epp", "1,0,0,0", R"(, "colour": 1)"))}).code, 2);
    EXPECT_EQ(invoke({"simulate", dir.file("b.json", "{not json")}).code, 2);
    EXPECT_EQ(invoke({"simulate", dir.file("c.json", config("protocol3.epp", "0.5,0,0,0"))}).code, 2);
    const std::string bad_kind = R"({"protocol_file": "protocol3.epp", "channel": {"kind": "weird"}})";
    EXPECT_EQ(invoke({"simulate", dir.file("d.json", bad_kind)}).code, 2);
    EXPECT_EQ(invoke({"simulate", dir.file("e.json", config("protocol3.epp", "1,0,0,0", R"(, "delta": 2)"))}).code, 2);
}

TEST(Simulate, MissingFilesExitOne) {
    TempDir dir;
    EXPECT_EQ(invoke({"simulate", (dir.path() / "absent.json").string()}).code, 1);
    EXPECT_EQ(invoke({"simulate", dir.file("f.json", config("nowhere.epp", "1,0,0,0"))}).code, 1);
}

TEST(Simulate, OmittedSeedIsDrawnAndPrinted) {
    TempDir dir;
    const auto r = invoke({"simulate", dir.file("s.json", config("protocol3.epp", "1,0,0,0"))});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.err.rfind("seed=", 0), 0U);
}

TEST(Simulate, ByteIdenticalGivenSeed) {
    TempDir dir;
    const auto cfg = dir.file("n.json", config("protocol3.epp", "0.85, 0.05, 0.05, 0.05"));
    for (const char* format : {"csv", "json"}) {
        const auto a = invoke({"--seed", "17", "--format", format, "simulate", cfg});
        const auto b = invoke({"--seed", "17", "--format", format, "simulate", cfg});
        EXPECT_EQ(a.code, 0);
        EXPECT_EQ(a.out, b.out);
        EXPECT_NE(a.out, invoke({"--seed", "18", "--format", format, "simulate", cfg}).out);
    }
}

TEST(Simulate, BlockAndAdversarialChannels) {
    TempDir dir;
    const std::string block =
        R"({"protocol_file": "protocol3.epp", "channel": {"kind": "block", "params": {"block_rates": [[1,0,0,0],[0.8,0.1,0,0.1]], "block_len": 64}}, "N": 20000, "k": 200, "seed": 2})";
    EXPECT_EQ(invoke({"simulate", dir.file("b.json", block)}).code, 0);
    const std::string adv =
        R"({"protocol_file": "protocol3.epp", "channel": {"kind": "adversarial", "params": {"rates": [0.85,0.05,0.05,0.05]}}, "N": 20000, "k": 200, "seed": 2})";
    EXPECT_EQ(invoke({"simulate", dir.file("a.json", adv)}).code, 0);
}

TEST(Simulate, OutFileIsWritten) {
    TempDir dir;
    const auto cfg = dir.file("o.json", config("protocol3.epp", "1,0,0,0", R"(, "seed": 1)"));
    const auto out = (dir.path() / "trials.csv").string();
    const auto r = invoke({"--out", out, "simulate", cfg});
    EXPECT_EQ(r.code, 0);
    EXPECT_TRUE(r.out.empty());
    std::ifstream in(out);
    std::string first;
    std::getline(in, first);
    EXPECT_EQ(first, "# schema=epp-trials/1");
    EXPECT_EQ(invoke({"--out", (dir.path() / "no" / "dir.csv").string(), "simulate", cfg}).code, 1);
}

TEST(Check, VerdictJsonAndExitCodes) {
    const auto pass = invoke({"--seed", "1", "check", kDir + "/protocol3.epp", "--trials", "8"});
    EXPECT_EQ(pass.code, 0);
    EXPECT_TRUE(nlohmann::json::parse(pass.out)["pass"].get<bool>());
    const auto fail = invoke({"--seed", "1", "check", kDir + "/protocol1.epp", "--trials", "8"});
    EXPECT_EQ(fail.code, 5);
    EXPECT_EQ(nlohmann::json::parse(fail.out)["condition1"]["status"], "fail");
}

TEST(Check, ParseErrorCarriesPosition) {
    TempDir dir;
    const auto r = invoke({"check", dir.file("bad.epp", "DISTRIBUTE 4\nTELEPORT 2\n")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("bad.epp:2:1"), std::string::npos) << r.err;
}

TEST(Verify, TheoremSuiteMatchesExpectations) {
    const auto r = invoke({"--seed", "2", "verify", "theorem", "--trials", "8"});
    EXPECT_EQ(r.code, 0) << r.out;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["schema"], "epp-verify/1");
    EXPECT_EQ(j["fixtures"].size(), 8U);
}

TEST(Verify, OracleSuitePasses) {
    const auto r = invoke({"--seed", "7", "verify", "oracle", "--trials", "20"});
    EXPECT_EQ(r.code, 0);
    for (const auto& c : nlohmann::json::parse(r.out)["checks"]) EXPECT_LT(c["max_deviation"].get<double>(), 1e-10);
}

TEST(Verify, SamplingSinglePoint) {
    const auto r = invoke({"--seed", "3", "verify", "sampling", "--N", "300", "--k", "90", "--delta", "0.25", "--eps0",
                           "0.1", "--trials", "20000"});
    EXPECT_EQ(r.code, 0) << r.out;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["points"].size(), 1U);
    EXPECT_EQ(invoke({"verify", "sampling", "--preset", "nope"}).code, 2);
    EXPECT_EQ(invoke({"--seed", "1", "verify", "sampling", "--N", "10000", "--k", "100", "--delta", "0.1", "--eps0",
                      "0.05", "--trials", "100"})
                  .code,
              4);
}

TEST(Verify, UnknownSuiteExitsTwo) { EXPECT_EQ(invoke({"verify", "everything"}).code, 2); }
