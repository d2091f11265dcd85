#include <gtest/gtest.h>

#include <sstream>

#include "cec/cli.hpp"
#include "test_support.hpp"

using namespace cec;
using namespace cec::test;

namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "cec");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string sample(const std::string& rel) { return std::string(CEC_SOURCE_DIR) + "/samples/" + rel; }

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);)
        if (!l.empty()) out.push_back(l);
    return out;
}

}  // namespace

TEST(Cli, VerifyPrintsOneVerdictPerEntity) {
    const auto r = cli({"verify", "--doc", sample("doc.json"), "--backend", sample("backend.mock.json"), "--mode",
                        "comp", "--evidence-root", sample("evidence")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const auto doc = load_document_file(sample("doc.json"));
    const auto out = lines(r.out);
    ASSERT_EQ(out.size(), doc.entities.size());
    for (const auto& l : out) {
        const auto v = verdict_from_json(json::parse(l));
        EXPECT_EQ(v.doc_id, doc.doc_id);
        EXPECT_EQ(v.mode, v.fallback ? Mode::no_evidence : Mode::comp);
    }
}

TEST(Cli, MissingDatasetIsAnInputError) {
    TempDir dir;
    const auto r = cli({"evaluate", "--dataset", (dir / "nope.jsonl").string(), "--mode", "w/o", "--backend",
                        sample("backend.mock.json")});
    EXPECT_EQ(r.code, kExitInput);
    EXPECT_NE(r.err.find("dataset not found"), std::string::npos);
    EXPECT_NE(r.err.find("--dataset"), std::string::npos);  // usage follows
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(cli({}).code, kExitInput);
    EXPECT_EQ(cli({"evaluate", "--no-such-flag"}).code, kExitInput);
    EXPECT_EQ(cli({"verify", "--doc", sample("doc.json")}).code, kExitInput);
    EXPECT_EQ(cli({"tamper-gen", "--dataset", sample("dataset.jsonl"), "--pool", sample("pool.jsonl"), "--strategy",
                   "gcd:9:1", "--seed", "1"})
                  .code,
              kExitInput);
}

TEST(Cli, RuntimeFailureExitsTwo) {
    TempDir dir;
    write_text(dir / "fixtures.json", "{}");  // no response for anything
    write_text(dir / "backend.json",
               json{{"kind", "mock"}, {"model_id", "m"}, {"mock_fixtures", "fixtures.json"}}.dump());
    const auto r = cli({"evaluate", "--dataset", sample("dataset.jsonl"), "--mode", "w/o", "--backend",
                        (dir / "backend.json").string(), "--output-dir", (dir / "out").string()});
    EXPECT_EQ(r.code, kExitRuntime) << r.err;
}

TEST(Cli, EvaluateWritesReport) {
    TempDir dir;
    const auto r = cli({"evaluate", "--config", sample("run.json"), "--output-dir", (dir / "out").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const json report = json::parse(read_text(dir / "out" / "report.json"));
    EXPECT_EQ(report["rows"].size(), 3u);
    for (const auto& row : report["rows"])
        EXPECT_LE(row["urr"].get<double>(), 1.0);
    EXPECT_FALSE(lines(r.out).empty());
}

TEST(Cli, DocverifyIsReproducible) {
    TempDir dir;
    auto run = [&](const std::string& out) {
        return cli({"docverify", "--config", sample("run.json"), "--mode", "comp", "--strategy", "gcd:25:200",
                    "--seed", "7", "--pool", sample("pool.jsonl"), "--output-dir", (dir / out).string()});
    };
    const auto a = run("a"), b = run("b");
    ASSERT_EQ(a.code, kExitOk) << a.err;
    ASSERT_EQ(b.code, kExitOk) << b.err;
    const auto ra = read_text(dir / "a" / "report.json");
    EXPECT_EQ(ra, read_text(dir / "b" / "report.json"));
    const json j = json::parse(ra);
    ASSERT_EQ(j["docverify"].size(), 1u);
    EXPECT_EQ(j["docverify"][0]["strategy"], "gcd:25:200");
    EXPECT_TRUE(j["rows"].empty());
}

TEST(Cli, TamperGenWritesNextToOutput) {
    TempDir dir;
    const auto target = dir / "t.jsonl";
    const auto r = cli({"tamper-gen", "--dataset", sample("dataset.jsonl"), "--pool", sample("pool.jsonl"),
                        "--strategy", "gcd:25:200", "--seed", "7", "--output", target.string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    for (const auto& set : load_tampered_sets(target))
        for (const auto& p : set.pairs) {
            const double d = great_circle_distance(*p.original.geo, *p.tampered.geo);
            EXPECT_GE(d, 25.0);
            EXPECT_LT(d, 200.0);
        }
}

TEST(Cli, ComposeReportsLayout) {
    TempDir dir;
    write_png(dir / "news.png", patterned(60, 40, {0, 0, 0}));
    write_png(dir / "ev.png", patterned(30, 20, {9, 9, 9}));
    const auto r = cli({"compose", "--news", (dir / "news.png").string(), "--evidence", (dir / "ev.png").string(),
                        "--output", (dir / "c.png").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const auto c = load_image(dir / "c.png");
    EXPECT_EQ(c.width, 70);
    EXPECT_EQ(c.height, 100);
    EXPECT_NE(r.out.find("vertical"), std::string::npos);
}
