#pragma once

// Accuracy / URR over verdicts, the document-verification rule, and the
// benchmark runner that turns a run config into report.json + report.txt.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cec/dataset.hpp"
#include "cec/http.hpp"
#include "cec/log.hpp"
#include "cec/parallel.hpp"
#include "cec/prompt.hpp"
#include "cec/verifier.hpp"

namespace cec {

// ---------------------------------------------------------------------------
// Metrics

using GoldKey = std::pair<std::string, std::string>;  // (doc_id, entity_id)
using GoldLabels = std::map<GoldKey, std::optional<bool>>;

inline GoldLabels gold_from_documents(std::span<const Document> docs) {
    GoldLabels gold;
    for (const auto& d : docs)
        for (const auto& m : d.entities) gold[{d.doc_id, m.entity.entity_id}] = m.visible;
    return gold;
}

struct Counts {
    int correct = 0;
    int incorrect = 0;
    int unknown = 0;
    int total = 0;

    Counts& operator+=(const Counts& o) {
        correct += o.correct;
        incorrect += o.incorrect;
        unknown += o.unknown;
        total += o.total;
        return *this;
    }
    bool operator==(const Counts&) const = default;
};

struct MetricOptions {
    // Default: unknown answers leave the accuracy denominator and show up in URR.
    bool unknown_as_incorrect = false;
};

inline Counts tally(std::span<const Verdict> verdicts, const GoldLabels& gold) {
    Counts c;
    for (const auto& v : verdicts) {
        ++c.total;
        if (v.decision == Decision::unknown) {
            ++c.unknown;
            continue;
        }
        auto it = gold.find({v.doc_id, v.entity_id});
        if (it == gold.end() || !it->second)
            throw MissingGold("no ground-truth label for " + v.doc_id + "/" + v.entity_id);
        const bool said_yes = v.decision == Decision::yes;
        if (said_yes == *it->second)
            ++c.correct;
        else
            ++c.incorrect;
    }
    return c;
}

inline double accuracy(const Counts& c, const MetricOptions& opts = {}) {
    const int denom = opts.unknown_as_incorrect ? c.total : c.correct + c.incorrect;
    return denom > 0 ? static_cast<double>(c.correct) / denom : 0.0;
}

inline double accuracy(std::span<const Verdict> verdicts, const GoldLabels& gold, const MetricOptions& opts = {}) {
    return accuracy(tally(verdicts, gold), opts);
}

inline double urr(const Counts& c) { return c.total > 0 ? static_cast<double>(c.unknown) / c.total : 0.0; }

inline double urr(std::span<const Verdict> verdicts) {
    int unknown = 0;
    for (const auto& v : verdicts)
        if (v.decision == Decision::unknown) ++unknown;
    return verdicts.empty() ? 0.0 : static_cast<double>(unknown) / static_cast<double>(verdicts.size());
}

struct EntityScore {
    std::string entity_id;
    double cms = 0.0;
};

// Correct iff the highest CMS over both sets belongs to an original entity.
// A tie between an original and a tampered entity counts as incorrect.
inline bool verify_document(std::span<const EntityScore> original, std::span<const EntityScore> tampered) {
    if (original.empty() || tampered.empty()) throw EmptyInput("document verification needs both entity sets");
    auto max_cms = [](std::span<const EntityScore> s) {
        return std::max_element(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.cms < b.cms; })->cms;
    };
    return max_cms(original) > max_cms(tampered);
}

// ---------------------------------------------------------------------------
// Run configuration

struct DocVerifyConfig {
    TamperingStrategy strategy;
    std::uint64_t seed = 0;
    std::filesystem::path pool_path;      // generate tampered sets from this pool...
    std::filesystem::path tampered_path;  // ...or load published ones
};

struct RunConfig {
    std::filesystem::path dataset_path;
    std::string dataset_name;  // defaults to the dataset file stem
    std::filesystem::path evidence_root;
    std::filesystem::path backend_config;
    std::filesystem::path template_config;
    std::filesystem::path output_dir;
    Mode mode = Mode::no_evidence;
    int n_evidence = 20;
    std::vector<EntityKind> entity_types{EntityKind::person, EntityKind::location, EntityKind::event};
    std::optional<DocVerifyConfig> docverify;
    int parallelism = 4;
    bool unknown_as_incorrect = false;
    double max_error_fraction = 0.1;
    bool check_images = true;
    bool evaluate_entities = true;  // docverify-only runs skip the per-entity table

    // {dataset_path, evidence_root, backend_config, mode, n_evidence, template_config,
    //  entity_types[], docverify: {strategy, seed, pool?, tampered?} | null, output_dir}
    static RunConfig from_json(const json& j, const std::filesystem::path& base_dir = {}) {
        RunConfig c;
        auto path_field = [&](const char* key) -> std::filesystem::path {
            if (!j.contains(key) || j.at(key).is_null()) return {};
            std::filesystem::path p = j.at(key).get<std::string>();
            return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        };
        try {
            c.dataset_path = path_field("dataset_path");
            c.dataset_name = j.value("dataset_name", std::string{});
            c.evidence_root = path_field("evidence_root");
            c.backend_config = path_field("backend_config");
            c.template_config = path_field("template_config");
            c.output_dir = path_field("output_dir");
            if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
            c.n_evidence = j.value("n_evidence", 20);
            if (j.contains("entity_types")) {
                c.entity_types.clear();
                for (const auto& t : j.at("entity_types")) c.entity_types.push_back(parse_entity_kind(t.get<std::string>()));
            }
            if (j.contains("docverify") && !j.at("docverify").is_null()) {
                const auto& dv = j.at("docverify");
                DocVerifyConfig d;
                d.strategy = TamperingStrategy::parse(dv.at("strategy").get<std::string>());
                d.seed = dv.value("seed", std::uint64_t{0});
                if (dv.contains("pool")) {
                    std::filesystem::path p = dv.at("pool").get<std::string>();
                    d.pool_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
                }
                if (dv.contains("tampered")) {
                    std::filesystem::path p = dv.at("tampered").get<std::string>();
                    d.tampered_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
                }
                c.docverify = std::move(d);
            }
            c.parallelism = j.value("parallelism", 4);
            c.unknown_as_incorrect = j.value("unknown_as_incorrect", false);
            c.max_error_fraction = j.value("max_error_fraction", 0.1);
            c.check_images = j.value("check_images", true);
            c.evaluate_entities = j.value("evaluate_entities", true);
        } catch (const json::exception& ex) {
            throw ConfigError(std::string("run config: ") + ex.what());
        } catch (const ParseError& ex) {
            throw ConfigError(std::string("run config: ") + ex.what());
        }
        return c;
    }

    void validate() const {
        if (dataset_path.empty()) throw ConfigError("run config: dataset_path is required");
        if (!std::filesystem::exists(dataset_path)) throw ConfigError("dataset not found: " + dataset_path.string());
        if (mode != Mode::no_evidence && evidence_root.empty())
            throw ConfigError("run config: mode " + std::string(to_string(mode)) + " needs evidence_root");
        if (n_evidence < 1) throw ConfigError("run config: n_evidence must be >= 1");
        if (parallelism < 1) throw ConfigError("run config: parallelism must be >= 1");
        if (entity_types.empty()) throw ConfigError("run config: entity_types is empty");
        if (max_error_fraction < 0.0 || max_error_fraction > 1.0)
            throw ConfigError("run config: max_error_fraction must be in [0,1]");
        if (docverify) {
            if (docverify->pool_path.empty() && docverify->tampered_path.empty())
                throw ConfigError("docverify needs a candidate pool or a tampered-set file");
            for (const auto& p : {docverify->pool_path, docverify->tampered_path})
                if (!p.empty() && !std::filesystem::exists(p)) throw ConfigError("file not found: " + p.string());
        }
    }

    std::string effective_dataset_name() const {
        return dataset_name.empty() ? dataset_path.stem().string() : dataset_name;
    }
};

// ---------------------------------------------------------------------------
// Reports

inline double round4(double x) { return std::round(x * 1e4) / 1e4; }

inline std::string fixed4(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", round4(x));
    return buf;
}

struct ReportRow {
    std::string dataset;
    std::string entity_type;  // person | location | event, or location/<resolution>
    std::string mode;
    std::string model;
    Counts counts;
    double accuracy = 0.0;
    double urr = 0.0;
    int fallbacks = 0;
    int dropped_votes = 0;
    int errors = 0;
};

struct DocVerifyRow {
    std::string dataset;
    std::string entity_type;
    std::string strategy;
    std::string mode;
    std::string model;
    int documents = 0;   // documents with a verdict
    int correct = 0;
    int skipped = 0;     // no entity of the type
    int ineligible = 0;  // no replacement satisfied the strategy
    int errors = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    std::vector<ReportRow> rows;             // one per entity type
    std::vector<ReportRow> resolution_rows;  // locations split by spatial resolution
    std::vector<DocVerifyRow> docverify;
    bool unknown_as_incorrect = false;
    int evaluated_entities = 0;
    int failed_jobs = 0;

    json to_json() const {
        json dj = json::array();
        for (const auto& d : docverify) {
            dj.push_back({{"dataset", d.dataset},
                          {"entity_type", d.entity_type},
                          {"strategy", d.strategy},
                          {"mode", d.mode},
                          {"model", d.model},
                          {"accuracy", round4(d.accuracy)},
                          {"correct", d.correct},
                          {"documents", d.documents},
                          {"skipped", d.skipped},
                          {"ineligible", d.ineligible},
                          {"errors", d.errors}});
        }
        return json{{"rows", rows_json(rows)},
                    {"resolution_rows", rows_json(resolution_rows)},
                    {"docverify", std::move(dj)},
                    {"unknown_as_incorrect", unknown_as_incorrect},
                    {"evaluated_entities", evaluated_entities},
                    {"failed_jobs", failed_jobs}};
    }

    std::string to_text() const {
        std::string out;
        char line[256];
        if (!rows.empty()) {
            std::snprintf(line, sizeof line, "%-18s %-14s %-7s %-18s %7s %7s %7s %7s %7s %7s %8s %7s\n", "dataset",
                          "model", "ICS", "entity_type", "ACC", "URR", "correct", "wrong", "unknown", "total",
                          "fallback", "errors");
            out += line;
            for (const auto* group : {&rows, &resolution_rows}) {
                for (const auto& r : *group) {
                    std::snprintf(line, sizeof line, "%-18s %-14s %-7s %-18s %7s %7s %7d %7d %7d %7d %8d %7d\n",
                                  r.dataset.c_str(), r.model.c_str(), ics_label(r.mode).c_str(),
                                  r.entity_type.c_str(), fixed4(r.accuracy).c_str(), fixed4(r.urr).c_str(),
                                  r.counts.correct, r.counts.incorrect, r.counts.unknown, r.counts.total, r.fallbacks,
                                  r.errors);
                    out += line;
                }
            }
        }
        if (!docverify.empty()) {
            if (!out.empty()) out += "\n";
            std::snprintf(line, sizeof line, "%-18s %-14s %-7s %-10s %-28s %7s %7s %9s %7s %10s %7s\n", "dataset",
                          "model", "ICS", "ET", "MS", "ACC", "correct", "documents", "skipped", "ineligible",
                          "errors");
            out += line;
            for (const auto& d : docverify) {
                std::snprintf(line, sizeof line, "%-18s %-14s %-7s %-10s %-28s %7s %7d %9d %7d %10d %7d\n",
                              d.dataset.c_str(), d.model.c_str(), ics_label(d.mode).c_str(), d.entity_type.c_str(),
                              d.strategy.c_str(), fixed4(d.accuracy).c_str(), d.correct, d.documents, d.skipped,
                              d.ineligible, d.errors);
                out += line;
            }
        }
        return out;
    }

private:
    static json rows_json(const std::vector<ReportRow>& rows) {
        json out = json::array();
        for (const auto& r : rows)
            out.push_back({{"dataset", r.dataset},
                           {"entity_type", r.entity_type},
                           {"mode", r.mode},
                           {"model", r.model},
                           {"accuracy", round4(r.accuracy)},
                           {"urr", round4(r.urr)},
                           {"correct", r.counts.correct},
                           {"incorrect", r.counts.incorrect},
                           {"unknown", r.counts.unknown},
                           {"total", r.counts.total},
                           {"fallbacks", r.fallbacks},
                           {"dropped_votes", r.dropped_votes},
                           {"errors", r.errors}});
        return out;
    }

    static std::string ics_label(const std::string& mode) { return mode == "no_evidence" ? "w/o" : mode; }
};

struct BenchmarkResult {
    EvalReport report;
    std::vector<Verdict> verdicts;  // dataset order
};

inline void write_report(const BenchmarkResult& result, const std::filesystem::path& output_dir) {
    std::filesystem::create_directories(output_dir);
    {
        std::ofstream out(output_dir / "report.json", std::ios::trunc);
        out << result.report.to_json().dump(2) << "\n";
    }
    {
        std::ofstream out(output_dir / "report.txt", std::ios::trunc);
        out << result.report.to_text();
    }
    std::ofstream out(output_dir / "verdicts.jsonl", std::ios::trunc);
    for (const auto& v : result.verdicts) out << verdict_to_json(v).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Runner

namespace detail {

inline std::string row_label(const EntityType& t) {
    std::string s(to_string(t.kind));
    if (t.resolution) s += "/" + std::string(to_string(*t.resolution));
    return s;
}

inline int row_order(const EntityType& t) {
    return static_cast<int>(t.kind) * 10 + (t.resolution ? 1 + static_cast<int>(*t.resolution) : 0);
}

}  // namespace detail

inline BenchmarkResult run_benchmark(const RunConfig& config, const Backend& backend, const PromptCatalog& catalog) {
    config.validate();
    if (config.mode == Mode::series && !backend.descriptor().multi_image)
        throw ConfigError("series mode needs a multi-image backend; '" + backend.descriptor().model_id +
                          "' takes a single image");

    const Dataset ds = load_documents(config.dataset_path, {config.check_images});
    const auto wanted = [&](EntityKind k) {
        return std::find(config.entity_types.begin(), config.entity_types.end(), k) != config.entity_types.end();
    };

    VerifierOptions vopts;
    vopts.evidence_root = config.evidence_root;
    Verifier verifier(backend, catalog, vopts);

    // One slot per annotated mention of a wanted type, grouped per document so
    // each news image is decoded once.
    struct Slot {
        std::size_t doc;
        std::size_t mention;
        std::optional<Verdict> verdict;
        std::string error;
    };
    std::vector<std::vector<Slot>> per_doc(ds.documents.size());
    std::size_t job_count = 0;
    for (std::size_t d = 0; d < ds.documents.size(); ++d) {
        const auto& doc = ds.documents[d];
        for (std::size_t m = 0; m < doc.entities.size(); ++m) {
            const auto& mention = doc.entities[m];
            if (!config.evaluate_entities || !wanted(mention.entity.type.kind) || !mention.visible) continue;
            per_doc[d].push_back({d, m, std::nullopt, {}});
            ++job_count;
        }
    }
    logger()->info("evaluating {} entities from {} documents ({} mode, model {})", job_count, ds.documents.size(),
                   to_string(config.mode), backend.descriptor().model_id);

    std::atomic<std::size_t> done{0};
    parallel_for(per_doc.size(), config.parallelism, [&](std::size_t d) {
        if (per_doc[d].empty()) return;
        const auto& doc = ds.documents[d];
        std::optional<Raster> news;
        try {
            news = load_image(ds.image_path(doc));
        } catch (const DecodeError& ex) {
            for (auto& slot : per_doc[d]) slot.error = ex.what();
            return;
        }
        for (auto& slot : per_doc[d]) {
            const auto& entity = doc.entities[slot.mention].entity;
            try {
                slot.verdict = verifier.verify({doc, entity, *news, config.mode, config.n_evidence});
            } catch (const InputError&) {
                throw;
            } catch (const Error& ex) {
                slot.error = ex.what();
                logger()->warn("{}/{}: {}", doc.doc_id, entity.entity_id, ex.what());
            }
            const auto n = ++done;
            if (n % 100 == 0) logger()->info("{}/{} entities done", n, job_count);
        }
    });

    BenchmarkResult result;
    result.report.unknown_as_incorrect = config.unknown_as_incorrect;
    const GoldLabels gold = gold_from_documents(ds.documents);
    const MetricOptions mopts{config.unknown_as_incorrect};
    const std::string dataset_name = config.effective_dataset_name();

    struct Group {
        EntityType type;
        std::vector<Verdict> verdicts;
        int errors = 0;
    };
    std::map<int, Group> by_kind, by_resolution;
    int failed = 0;
    for (const auto& slots : per_doc) {
        for (const auto& slot : slots) {
            const auto& type = ds.documents[slot.doc].entities[slot.mention].entity.type;
            const EntityType kind_only{type.kind, std::nullopt};
            std::vector<Group*> targets{&by_kind[detail::row_order(kind_only)]};
            targets.back()->type = kind_only;
            if (type.resolution) {
                targets.push_back(&by_resolution[detail::row_order(type)]);
                targets.back()->type = type;
            }
            if (slot.verdict)
                result.verdicts.push_back(*slot.verdict);
            else
                ++failed;
            for (Group* g : targets) {
                if (slot.verdict)
                    g->verdicts.push_back(*slot.verdict);
                else
                    ++g->errors;
            }
        }
    }
    auto make_row = [&](const Group& g) {
        ReportRow row;
        row.dataset = dataset_name;
        row.entity_type = detail::row_label(g.type);
        row.mode = std::string(to_string(config.mode));
        row.model = backend.descriptor().model_id;
        row.counts = tally(g.verdicts, gold);
        row.accuracy = accuracy(row.counts, mopts);
        row.urr = urr(row.counts);
        row.errors = g.errors;
        for (const auto& v : g.verdicts) {
            row.fallbacks += v.fallback ? 1 : 0;
            row.dropped_votes += v.dropped;
        }
        return row;
    };
    for (const auto& [order, g] : by_kind) {
        result.report.rows.push_back(make_row(g));
        result.report.evaluated_entities += result.report.rows.back().counts.total;
    }
    for (const auto& [order, g] : by_resolution) result.report.resolution_rows.push_back(make_row(g));
    result.report.failed_jobs = failed;
    if (job_count > 0 && static_cast<double>(failed) / static_cast<double>(job_count) > config.max_error_fraction)
        throw RunFailed(std::to_string(failed) + " of " + std::to_string(job_count) +
                        " verification jobs failed (budget " + fixed4(config.max_error_fraction) + ")");

    if (!config.docverify) return result;

    // Document verification: original vs. one tampered entity set per document.
    const auto& dv = *config.docverify;
    std::vector<EntityKind> targets;
    if (auto k = dv.strategy.target_kind())
        targets.push_back(*k);
    else
        targets = config.entity_types;

    std::map<GoldKey, double> cms_cache;
    for (const auto& v : result.verdicts) cms_cache[{v.doc_id, v.entity_id}] = v.cms;

    std::map<std::pair<std::string, EntityKind>, TamperedSet> published;
    if (!dv.tampered_path.empty())
        for (auto& s : load_tampered_sets(dv.tampered_path)) published[{s.doc_id, s.kind}] = std::move(s);
    CandidatePools pools;
    if (dv.tampered_path.empty()) pools = load_candidate_pools(dv.pool_path);

    for (const EntityKind target : targets) {
        DocVerifyRow row;
        row.dataset = dataset_name;
        row.entity_type = std::string(to_string(target));
        row.strategy = dv.strategy.to_string();
        row.mode = std::string(to_string(config.mode));
        row.model = backend.descriptor().model_id;

        enum class Outcome { skipped, ineligible, error, correct, incorrect };
        std::vector<Outcome> outcomes(ds.documents.size(), Outcome::skipped);
        parallel_for(ds.documents.size(), config.parallelism, [&](std::size_t d) {
            const auto& doc = ds.documents[d];
            TamperedSet set;
            if (!dv.tampered_path.empty()) {
                auto it = published.find({doc.doc_id, target});
                if (it == published.end()) return;
                set = it->second;
            } else {
                try {
                    set = build_tampered_document_set(doc, pools, dv.strategy, target, dv.seed);
                } catch (const NoEligibleCandidate& ex) {
                    logger()->warn("{}", ex.what());
                    outcomes[d] = Outcome::ineligible;
                    return;
                }
            }
            if (set.skipped || set.pairs.empty()) return;
            try {
                const Raster news = load_image(ds.image_path(doc));
                auto score = [&](const Entity& e, bool cached) {
                    if (cached)
                        if (auto it = cms_cache.find({doc.doc_id, e.entity_id}); it != cms_cache.end())
                            return EntityScore{e.entity_id, it->second};
                    return EntityScore{e.entity_id,
                                       verifier.verify({doc, e, news, config.mode, config.n_evidence}).cms};
                };
                std::vector<EntityScore> originals, tampered;
                for (const auto& p : set.pairs) {
                    originals.push_back(score(p.original, true));
                    tampered.push_back(score(p.tampered, false));
                }
                outcomes[d] = verify_document(originals, tampered) ? Outcome::correct : Outcome::incorrect;
            } catch (const InputError&) {
                throw;
            } catch (const Error& ex) {
                logger()->warn("docverify {}: {}", doc.doc_id, ex.what());
                outcomes[d] = Outcome::error;
            }
        });
        for (auto o : outcomes) {
            switch (o) {
                case Outcome::skipped: ++row.skipped; break;
                case Outcome::ineligible: ++row.ineligible; break;
                case Outcome::error: ++row.errors; break;
                case Outcome::correct: ++row.correct; ++row.documents; break;
                case Outcome::incorrect: ++row.documents; break;
            }
        }
        row.accuracy = row.documents > 0 ? static_cast<double>(row.correct) / row.documents : 0.0;
        result.report.docverify.push_back(std::move(row));
    }
    return result;
}

}  // namespace cec
