#pragma once

// The `cec` command line. Lives in a header so tests can drive it in-process;
// tools/cec.cpp is a thin main().

#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cec/compose.hpp"
#include "cec/dataset.hpp"
#include "cec/evaluation.hpp"
#include "cec/evidence.hpp"
#include "cec/http.hpp"
#include "cec/log.hpp"
#include "cec/prompt.hpp"
#include "cec/verifier.hpp"

namespace cec {

enum ExitCode : int { kExitOk = 0, kExitInput = 1, kExitRuntime = 2 };

namespace cli_detail {

struct CommonFlags {
    std::string dataset;
    std::string evidence_root;
    std::string backend;
    std::string mode;
    std::optional<int> n_evidence;
    std::string template_config;
    std::vector<std::string> entity_types;
    std::string output_dir;
    std::optional<int> parallelism;
    std::optional<std::uint64_t> seed;
    bool unknown_as_incorrect = false;
    std::string config;
    std::string strategy;
    std::string pool;
    std::string tampered;
};

inline json read_json_file(const std::filesystem::path& p, const char* what) {
    std::ifstream in(p);
    if (!in) throw ConfigError(std::string("cannot open ") + what + " " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& ex) {
        throw ConfigError(std::string(what) + " " + p.string() + ": " + ex.what());
    }
}

inline PromptCatalog load_catalog(const std::filesystem::path& p) {
    return p.empty() ? PromptCatalog::shipped_default() : PromptCatalog::from_file(p);
}

inline std::vector<EntityKind> parse_kinds(const std::vector<std::string>& names) {
    std::vector<EntityKind> out;
    for (const auto& n : names) {
        // Accept comma-separated lists as well as repeated flags.
        std::stringstream ss(n);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) out.push_back(parse_entity_kind(part));
    }
    return out;
}

// Run config from --config (if any) with explicit flags layered on top.
inline RunConfig build_run_config(const CommonFlags& f) {
    RunConfig c;
    if (!f.config.empty()) c = RunConfig::from_json(read_json_file(f.config, "run config"),
                                                    std::filesystem::path(f.config).parent_path());
    if (!f.dataset.empty()) c.dataset_path = f.dataset;
    if (!f.evidence_root.empty()) c.evidence_root = f.evidence_root;
    if (!f.backend.empty()) c.backend_config = f.backend;
    if (!f.mode.empty()) c.mode = parse_mode(f.mode);
    if (f.n_evidence) c.n_evidence = *f.n_evidence;
    if (!f.template_config.empty()) c.template_config = f.template_config;
    if (!f.entity_types.empty()) c.entity_types = parse_kinds(f.entity_types);
    if (!f.output_dir.empty()) c.output_dir = f.output_dir;
    if (f.parallelism) c.parallelism = *f.parallelism;
    if (f.unknown_as_incorrect) c.unknown_as_incorrect = true;
    if (!f.strategy.empty() || !f.pool.empty() || !f.tampered.empty() || f.seed) {
        DocVerifyConfig dv = c.docverify.value_or(DocVerifyConfig{});
        if (!f.strategy.empty()) dv.strategy = TamperingStrategy::parse(f.strategy);
        if (f.seed) dv.seed = *f.seed;
        if (!f.pool.empty()) dv.pool_path = f.pool;
        if (!f.tampered.empty()) dv.tampered_path = f.tampered;
        c.docverify = dv;
    }
    return c;
}

inline void emit_report_lines(const EvalReport& report, std::ostream& out) {
    const json j = report.to_json();
    for (const auto& row : j.at("rows")) out << json{{"kind", "entity_row"}, {"row", row}}.dump() << "\n";
    for (const auto& row : j.at("docverify")) out << json{{"kind", "docverify_row"}, {"row", row}}.dump() << "\n";
}

inline int run_evaluation(const CommonFlags& f, bool docverify_only, std::ostream& out) {
    RunConfig config = build_run_config(f);
    if (docverify_only) {
        if (f.mode.empty()) throw ConfigError("docverify needs an explicit --mode");
        if (!config.docverify) throw ConfigError("docverify needs --strategy and --pool or --tampered");
        config.evaluate_entities = false;
    } else {
        config.docverify.reset();
    }
    config.validate();
    if (config.backend_config.empty()) throw ConfigError("a backend config is required (--backend)");
    const BackendConfig bc = BackendConfig::from_file(config.backend_config);
    const auto catalog = load_catalog(config.template_config);
    const auto backend = make_backend(bc);
    const BenchmarkResult result = run_benchmark(config, *backend, catalog);
    if (!config.output_dir.empty()) write_report(result, config.output_dir);
    emit_report_lines(result.report, out);
    return kExitOk;
}

}  // namespace cli_detail

// Parses argv and runs one subcommand. JSON Lines go to `out`, diagnostics to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace cli_detail;
    CLI::App app{"Cross-modal entity consistency verification with vision-language models", "cec"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Progress logging on stderr");

    CommonFlags f;
    auto add_mode = [&](CLI::App* sub, bool required) {
        auto* opt = sub->add_option("--mode", f.mode, "w/o | comp | series");
        if (required) opt->required();
    };
    auto add_run_flags = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "Run config JSON");
        sub->add_option("--dataset", f.dataset, "Dataset JSON Lines file");
        sub->add_option("--evidence-root", f.evidence_root, "Evidence store root");
        sub->add_option("--backend", f.backend, "Backend config JSON");
        sub->add_option("--n-evidence", f.n_evidence, "Evidence images per entity (default 20)");
        sub->add_option("--template-config", f.template_config, "Template overrides JSON");
        sub->add_option("--entity-types", f.entity_types, "person, location, event");
        sub->add_option("--output-dir", f.output_dir, "Directory for report.json, report.txt, verdicts.jsonl");
        sub->add_option("--parallelism", f.parallelism, "Concurrent documents (default 4)");
        sub->add_flag("--unknown-as-incorrect", f.unknown_as_incorrect, "Count unknown answers as wrong");
    };

    // verify
    auto* verify = app.add_subcommand("verify", "Verify the entities of a single document");
    std::string doc_path;
    verify->add_option("--doc", doc_path, "Document JSON")->required();
    verify->add_option("--backend", f.backend, "Backend config JSON")->required();
    verify->add_option("--evidence-root", f.evidence_root, "Evidence store root");
    verify->add_option("--n-evidence", f.n_evidence, "Evidence images per entity (default 20)");
    verify->add_option("--template-config", f.template_config, "Template overrides JSON");
    verify->add_option("--entity-types", f.entity_types, "person, location, event");
    add_mode(verify, true);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a dataset and write a report");
    add_run_flags(evaluate);
    add_mode(evaluate, false);

    // docverify
    auto* docverify = app.add_subcommand("docverify", "Document verification against tampered entity sets");
    add_run_flags(docverify);
    add_mode(docverify, false);
    docverify->add_option("--strategy", f.strategy, "random | person:same_country | ... | gcd:<min>:<max>");
    docverify->add_option("--seed", f.seed, "Tampering seed");
    docverify->add_option("--pool", f.pool, "Candidate pool JSON Lines");
    docverify->add_option("--tampered", f.tampered, "Pre-built tampered sets JSON Lines");

    // tamper-gen
    auto* tamper = app.add_subcommand("tamper-gen", "Write tampered entity sets next to the dataset");
    std::string tamper_output;
    tamper->add_option("--dataset", f.dataset, "Dataset JSON Lines file")->required();
    tamper->add_option("--pool", f.pool, "Candidate pool JSON Lines")->required();
    tamper->add_option("--strategy", f.strategy, "Tampering strategy")->required();
    tamper->add_option("--seed", f.seed, "Seed")->required();
    tamper->add_option("--entity-types", f.entity_types, "Target type(s) for the random strategy");
    tamper->add_option("--output", tamper_output, "Output path (default: next to the dataset)");

    // compose
    auto* comp = app.add_subcommand("compose", "Write the news/evidence composite as PNG");
    std::string news_path, evidence_path, composite_path;
    int thickness = BorderSpec{}.thickness_px;
    comp->add_option("--news", news_path, "News image")->required();
    comp->add_option("--evidence", evidence_path, "Evidence image")->required();
    comp->add_option("--output", composite_path, "Output PNG")->required();
    comp->add_option("--border", thickness, "Border thickness in pixels");

    // fetch-evidence
    auto* fetch = app.add_subcommand("fetch-evidence", "Populate the evidence store from a search endpoint");
    std::string entity_id, query, source = "google", fetch_config;
    int limit = 20;
    fetch->add_option("--evidence-root", f.evidence_root, "Evidence store root")->required();
    fetch->add_option("--config", fetch_config, "Search endpoint config JSON")->required();
    fetch->add_option("--entity-id", entity_id, "Entity id")->required();
    fetch->add_option("--query", query, "Search query")->required();
    fetch->add_option("--source", source, "google | bing | wikidata | other");
    fetch->add_option("--limit", limit, "Maximum images");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n\n" << app.help();
        return kExitInput;
    }
    logger()->set_level(verbose ? spdlog::level::info : spdlog::level::warn);

    try {
        if (*verify) {
            const Mode mode = parse_mode(f.mode);
            const Document doc = load_document_file(doc_path);
            const BackendConfig bc = BackendConfig::from_file(f.backend);
            if (mode == Mode::series && !bc.multi_image)
                throw ConfigError("series mode needs a multi-image backend; '" + bc.model_id +
                                  "' takes a single image");
            if (mode != Mode::no_evidence && f.evidence_root.empty())
                throw ConfigError("mode " + f.mode + " needs --evidence-root");
            const auto kinds = parse_kinds(f.entity_types);
            const auto catalog = load_catalog(f.template_config);
            const auto backend = make_backend(bc);
            const Raster news = load_image(std::filesystem::path(doc_path).parent_path() / doc.image_path);
            VerifierOptions vopts;
            vopts.evidence_root = f.evidence_root;
            const Verifier verifier(*backend, catalog, vopts);
            for (const auto& m : doc.entities) {
                if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), m.entity.type.kind) == kinds.end())
                    continue;
                const Verdict v = verifier.verify({doc, m.entity, news, mode, f.n_evidence.value_or(20)});
                out << verdict_to_json(v).dump() << "\n";
            }
        } else if (*evaluate) {
            return run_evaluation(f, false, out);
        } else if (*docverify) {
            return run_evaluation(f, true, out);
        } else if (*tamper) {
            const auto strategy = TamperingStrategy::parse(f.strategy);
            std::vector<EntityKind> targets;
            if (auto k = strategy.target_kind())
                targets.push_back(*k);
            else
                targets = parse_kinds(f.entity_types);
            if (targets.empty()) throw ConfigError("the random strategy needs --entity-types");
            if (!tamper_output.empty() && targets.size() > 1)
                throw ConfigError("--output takes a single entity type");
            const Dataset ds = load_documents(f.dataset, {false});
            const CandidatePools pools = load_candidate_pools(f.pool);
            for (const EntityKind target : targets) {
                const auto path = tamper_output.empty()
                                      ? default_tampered_path(f.dataset, strategy, target, *f.seed)
                                      : std::filesystem::path(tamper_output);
                std::ostringstream buf;
                int written = 0, skipped = 0, ineligible = 0;
                for (const auto& doc : ds.documents) {
                    try {
                        const auto set = build_tampered_document_set(doc, pools, strategy, target, *f.seed);
                        if (set.skipped) {
                            ++skipped;
                            continue;
                        }
                        buf << tampered_set_to_json(set).dump() << "\n";
                        ++written;
                    } catch (const NoEligibleCandidate& ex) {
                        logger()->warn("{}", ex.what());
                        ++ineligible;
                    }
                }
                detail::write_file_atomic(path, buf.str());
                out << json{{"path", path.string()},
                            {"entity_type", std::string(to_string(target))},
                            {"strategy", strategy.to_string()},
                            {"seed", *f.seed},
                            {"documents", written},
                            {"skipped", skipped},
                            {"ineligible", ineligible}}
                           .dump()
                    << "\n";
            }
        } else if (*comp) {
            BorderSpec spec;
            spec.thickness_px = thickness;
            spec.validate();
            const auto composite = compose(load_image(news_path), load_image(evidence_path), spec);
            save_png(composite.pixels, composite_path);
            out << json{{"path", composite_path},
                        {"orientation", std::string(to_string(composite.orientation))},
                        {"width", composite.pixels.width},
                        {"height", composite.pixels.height}}
                       .dump()
                << "\n";
        } else if (*fetch) {
            const auto config = FetcherConfig::from_json(read_json_file(fetch_config, "fetcher config"));
            EvidenceFetcher fetcher(f.evidence_root, config, std::make_shared<HttplibTransport>());
            for (const auto& item : fetcher.fetch(entity_id, query, parse_evidence_source(source), limit))
                out << json{{"entity_id", entity_id},
                            {"file", item.file},
                            {"source", std::string(to_string(item.source))},
                            {"rank", item.rank}}
                           .dump()
                    << "\n";
        }
    } catch (const InputError& ex) {
        err << "error: " << ex.what() << "\n";
        if (const auto* ve = dynamic_cast<const ValidationError*>(&ex))
            for (const auto& issue : ve->issues()) err << "  " << issue << "\n";
        if (dynamic_cast<const ConfigError*>(&ex))
            for (const auto* sub : app.get_subcommands()) err << "\n" << sub->help();
        return kExitInput;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace cec
