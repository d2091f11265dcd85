#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "test_support.hpp"

using namespace cec;
using namespace cec::test;

namespace {

Verdict verdict(std::string doc, std::string entity, Decision d) {
    Verdict v;
    v.doc_id = std::move(doc);
    v.entity_id = std::move(entity);
    v.decision = d;
    return v;
}

// The mock answers by looking up the entity name in the prompt:
// names are "<tag>-<percent>" where tag "unk" answers free text and "err" fails.
MockBackend::Responder name_responder() {
    return [](const InferenceRequest& req, const std::string&) {
        if (req.prompt.find("unk-") != std::string::npos) return MockResponse::text_only("hard to tell");
        if (req.prompt.find("err-") != std::string::npos) throw BackendError(500, "boom");
        const auto dash = req.prompt.find("-");
        const int pct = std::stoi(req.prompt.substr(dash + 1, 2));
        return MockResponse::with_p_yes(pct / 100.0);
    };
}

struct Bench {
    TempDir dir;
    MockBackend backend{{"mock-vlm", false, true}, name_responder()};
    PromptCatalog catalog = PromptCatalog::shipped_default();

    // Each inner vector is one document; pairs are (entity name, gold label).
    RunConfig write(const std::vector<std::vector<std::pair<std::string, std::optional<bool>>>>& docs) {
        write_png(dir / "img.png", patterned(12, 10, {40, 50, 60}));
        std::string text;
        int next = 0;
        for (std::size_t d = 0; d < docs.size(); ++d) {
            Document doc{"d" + std::to_string(d), "", "img.png", "en", {}};
            for (const auto& [name, label] : docs[d])
                doc.entities.push_back({person("P" + std::to_string(next++), name), label});
            text += document_to_json(doc).dump() + "\n";
        }
        write_text(dir / "bench.jsonl", text);
        RunConfig c;
        c.dataset_path = dir / "bench.jsonl";
        c.parallelism = 3;
        return c;
    }
};

}  // namespace

TEST(Metrics, TenEntityExample) {
    std::vector<Verdict> vs;
    GoldLabels gold;
    const Decision decisions[] = {Decision::yes, Decision::yes, Decision::no,      Decision::no, Decision::yes,
                                  Decision::no,  Decision::yes, Decision::no,      Decision::unknown,
                                  Decision::unknown};
    const bool labels[] = {true, true, false, false, true, false, false, true, true, false};
    for (int i = 0; i < 10; ++i) {
        vs.push_back(verdict("d", "e" + std::to_string(i), decisions[i]));
        gold[{"d", "e" + std::to_string(i)}] = labels[i];
    }
    const Counts c = tally(vs, gold);
    EXPECT_EQ(c, (Counts{6, 2, 2, 10}));
    EXPECT_DOUBLE_EQ(accuracy(c), 0.75);
    EXPECT_DOUBLE_EQ(accuracy(c, {true}), 0.6);
    EXPECT_DOUBLE_EQ(urr(c), 0.2);
    EXPECT_DOUBLE_EQ(urr(vs), 0.2);
    EXPECT_DOUBLE_EQ(accuracy(vs, gold), 0.75);
}

TEST(Metrics, EdgeCases) {
    EXPECT_EQ(accuracy(Counts{}), 0.0);
    EXPECT_EQ(urr(Counts{}), 0.0);
    EXPECT_EQ(accuracy(Counts{0, 0, 3, 3}), 0.0);
    GoldLabels gold{{{"d", "a"}, std::nullopt}};
    const std::vector<Verdict> vs{verdict("d", "a", Decision::yes)};
    EXPECT_THROW(tally(vs, gold), MissingGold);
    EXPECT_THROW(tally(std::vector{verdict("d", "zz", Decision::no)}, gold), MissingGold);
    // Unknown verdicts never need a label.
    EXPECT_EQ(tally(std::vector{verdict("d", "zz", Decision::unknown)}, gold), (Counts{0, 0, 1, 1}));
}

TEST(Metrics, ReorderInvariant) {
    std::mt19937_64 rng(9);
    std::vector<Verdict> vs;
    GoldLabels gold;
    for (int i = 0; i < 50; ++i) {
        const auto d = static_cast<Decision>(rng() % 3);
        vs.push_back(verdict("d", std::to_string(i), d));
        gold[{"d", std::to_string(i)}] = rng() % 2 == 0;
    }
    const Counts base = tally(vs, gold);
    for (int k = 0; k < 20; ++k) {
        std::shuffle(vs.begin(), vs.end(), rng);
        EXPECT_EQ(tally(vs, gold), base);
    }
    EXPECT_LE(accuracy(base, {true}) + urr(base), 1.0 + 1e-12);
}

TEST(DocVerify, StrictInequality) {
    const std::vector<EntityScore> orig{{"a", 0.4}, {"b", 0.8}};
    EXPECT_TRUE(verify_document(orig, std::vector<EntityScore>{{"x", 0.79}}));
    EXPECT_FALSE(verify_document(orig, std::vector<EntityScore>{{"x", 0.8}}));  // ties count against
    EXPECT_FALSE(verify_document(orig, std::vector<EntityScore>{{"x", 0.1}, {"y", 0.9}}));
    EXPECT_THROW(verify_document({}, orig), EmptyInput);
    EXPECT_THROW(verify_document(orig, {}), EmptyInput);
}

TEST(DocVerify, InvariantUnderMonotoneTransform) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 300; ++i) {
        std::vector<EntityScore> a(1 + rng() % 4), b(1 + rng() % 4);
        for (auto& s : a) s.cms = u(rng);
        for (auto& s : b) s.cms = u(rng);
        const bool base = verify_document(a, b);
        auto cube = [](std::vector<EntityScore> v) {
            for (auto& s : v) s.cms = s.cms * s.cms * s.cms;
            return v;
        };
        EXPECT_EQ(verify_document(cube(a), cube(b)), base);
        std::reverse(a.begin(), a.end());
        EXPECT_EQ(verify_document(a, b), base);
    }
}

TEST(RunConfigTest, FromJsonResolvesRelativePaths) {
    const json j{{"dataset_path", "data/x.jsonl"},
                 {"mode", "comp"},
                 {"evidence_root", "/abs/ev"},
                 {"entity_types", {"person"}},
                 {"docverify", {{"strategy", "gcd:25:200"}, {"seed", 3}, {"pool", "pool.jsonl"}}}};
    const auto c = RunConfig::from_json(j, "/base");
    EXPECT_EQ(c.dataset_path, fs::path("/base/data/x.jsonl"));
    EXPECT_EQ(c.evidence_root, fs::path("/abs/ev"));
    EXPECT_EQ(c.mode, Mode::comp);
    EXPECT_EQ(c.entity_types, std::vector{EntityKind::person});
    ASSERT_TRUE(c.docverify);
    EXPECT_EQ(c.docverify->strategy, TamperingStrategy::gcd_band(25, 200));
    EXPECT_EQ(c.docverify->pool_path, fs::path("/base/pool.jsonl"));
    EXPECT_EQ(c.effective_dataset_name(), "x");
    EXPECT_THROW(RunConfig::from_json(json{{"mode", "sideways"}}), ConfigError);
    EXPECT_THROW(RunConfig::from_json(json{{"n_evidence", "many"}}), ConfigError);
}

TEST(RunConfigTest, ValidateRejectsBadConfigs) {
    TempDir dir;
    write_text(dir / "d.jsonl", "");
    RunConfig ok;
    ok.dataset_path = dir / "d.jsonl";
    EXPECT_NO_THROW(ok.validate());
    auto bad = [&](auto mutate) {
        RunConfig c = ok;
        mutate(c);
        EXPECT_THROW(c.validate(), ConfigError);
    };
    bad([](RunConfig& c) { c.dataset_path.clear(); });
    bad([&](RunConfig& c) { c.dataset_path = dir / "missing.jsonl"; });
    bad([](RunConfig& c) { c.mode = Mode::comp; });
    bad([](RunConfig& c) { c.n_evidence = 0; });
    bad([](RunConfig& c) { c.parallelism = 0; });
    bad([](RunConfig& c) { c.entity_types.clear(); });
    bad([](RunConfig& c) { c.max_error_fraction = 1.5; });
    bad([](RunConfig& c) { c.docverify = DocVerifyConfig{}; });
    bad([&](RunConfig& c) { c.docverify = DocVerifyConfig{{}, 0, dir / "nope.jsonl", {}}; });
}

TEST(Benchmark, TenEntityFixtureEndToEnd) {
    Bench b;
    auto config = b.write({{{"yes-90", true}, {"yes-80", true}, {"no-10", false}},
                           {{"no-20", false}, {"yes-70", true}, {"no-30", false}},
                           {{"yes-60", false}, {"no-40", true}, {"unk-1", true}, {"unk-2", false}},
                           {{"skip-99", std::nullopt}}});
    const auto result = run_benchmark(config, b.backend, b.catalog);
    ASSERT_EQ(result.report.rows.size(), 1u);
    const auto& row = result.report.rows[0];
    EXPECT_EQ(row.entity_type, "person");
    EXPECT_EQ(row.dataset, "bench");
    EXPECT_EQ(row.model, "mock-vlm");
    EXPECT_EQ(row.counts, (Counts{6, 2, 2, 10}));
    EXPECT_DOUBLE_EQ(row.accuracy, 0.75);
    EXPECT_DOUBLE_EQ(row.urr, 0.2);
    EXPECT_EQ(result.report.evaluated_entities, 10);
    EXPECT_EQ(result.verdicts.size(), 10u);
    EXPECT_TRUE(std::is_sorted(result.verdicts.begin(), result.verdicts.end(), [](const Verdict& x, const Verdict& y) {
        return x.doc_id < y.doc_id;
    }));

    config.unknown_as_incorrect = true;
    EXPECT_DOUBLE_EQ(run_benchmark(config, b.backend, b.catalog).report.rows[0].accuracy, 0.6);
}

TEST(Benchmark, ReportIsDeterministic) {
    Bench b;
    auto config = b.write({{{"yes-90", true}, {"no-10", false}}, {{"unk-3", true}}, {{"yes-55", false}}});
    TempDir out1, out2;
    config.parallelism = 1;
    write_report(run_benchmark(config, b.backend, b.catalog), out1.path());
    config.parallelism = 4;
    write_report(run_benchmark(config, b.backend, b.catalog), out2.path());
    EXPECT_EQ(read_text(out1 / "report.json"), read_text(out2 / "report.json"));
    EXPECT_EQ(read_text(out1 / "verdicts.jsonl"), read_text(out2 / "verdicts.jsonl"));
    const json j = json::parse(read_text(out1 / "report.json"));
    EXPECT_EQ(j["rows"][0]["accuracy"], 0.6667);
    EXPECT_NE(read_text(out1 / "report.txt").find("person"), std::string::npos);
}

TEST(Benchmark, ErrorBudget) {
    Bench b;
    auto config = b.write({{{"yes-90", true}, {"err-1", true}, {"no-10", false}, {"yes-80", true}}});
    config.max_error_fraction = 0.1;
    EXPECT_THROW(run_benchmark(config, b.backend, b.catalog), RunFailed);
    config.max_error_fraction = 0.25;
    const auto result = run_benchmark(config, b.backend, b.catalog);
    EXPECT_EQ(result.report.failed_jobs, 1);
    EXPECT_EQ(result.report.rows[0].errors, 1);
    EXPECT_EQ(result.report.rows[0].counts.total, 3);
}

TEST(Benchmark, SeriesNeedsMultiImageBackend) {
    Bench b;
    auto config = b.write({{{"yes-90", true}}});
    config.mode = Mode::series;
    config.evidence_root = b.dir.path();
    EXPECT_THROW(run_benchmark(config, b.backend, b.catalog), ConfigError);
}

TEST(Benchmark, DocumentVerification) {
    Bench b;
    auto config = b.write({{{"yes-90", true}, {"no-20", false}},   // max 0.9 beats 0.5 -> correct
                           {{"no-30", true}},                      // 0.3 vs 0.5 -> incorrect
                           {{"yes-50", true}}});                   // tie at 0.5 -> incorrect
    // Every tampered replacement answers 0.5.
    std::string pool;
    for (int i = 0; i < 3; ++i) pool += entity_to_json(person("T" + std::to_string(i), "mid-50")).dump() + "\n";
    write_text(b.dir / "pool.jsonl", pool);
    config.docverify = DocVerifyConfig{TamperingStrategy{}, 11, b.dir / "pool.jsonl", {}};
    config.entity_types = {EntityKind::person};
    const auto result = run_benchmark(config, b.backend, b.catalog);
    ASSERT_EQ(result.report.docverify.size(), 1u);
    const auto& row = result.report.docverify[0];
    EXPECT_EQ(row.documents, 3);
    EXPECT_EQ(row.correct, 1);
    EXPECT_NEAR(row.accuracy, 1.0 / 3.0, 1e-12);
    EXPECT_EQ(row.strategy, "random");

    config.docverify->strategy = TamperingStrategy::parse("event:same_class");
    const auto events = run_benchmark(config, b.backend, b.catalog);
    EXPECT_EQ(events.report.docverify[0].skipped, 3);
    EXPECT_EQ(events.report.docverify[0].documents, 0);
}
