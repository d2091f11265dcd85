#pragma once

// Per-entity verification in the three modes and the vote aggregation rules.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <span>
#include <vector>

#include "cec/backend.hpp"
#include "cec/compose.hpp"
#include "cec/core.hpp"
#include "cec/evidence.hpp"
#include "cec/log.hpp"
#include "cec/parallel.hpp"
#include "cec/prompt.hpp"

namespace cec {

// A vote with p_yes exactly 0.5 is cast for "no".
inline Decision vote_decision(const ClassProbs& p) { return p.p_yes > 0.5 ? Decision::yes : Decision::no; }

// Class means closer than this are treated as equal (then "yes" wins).
inline constexpr double kMeanTieTolerance = 1e-12;

namespace detail {

// Sum in ascending order so the result depends only on the multiset.
inline double sorted_mean(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace detail

// Majority of argmax votes. On equal counts the class whose votes have the
// higher mean winning-class probability wins; equal means go to "yes".
inline Decision majority_vote(std::span<const ClassProbs> votes) {
    if (votes.empty()) throw EmptyVotes();
    std::vector<double> yes_probs, no_probs;
    for (const auto& v : votes) {
        if (vote_decision(v) == Decision::yes)
            yes_probs.push_back(v.p_yes);
        else
            no_probs.push_back(v.p_no);
    }
    if (yes_probs.size() != no_probs.size()) return yes_probs.size() > no_probs.size() ? Decision::yes : Decision::no;
    const double mean_yes = detail::sorted_mean(yes_probs);
    const double mean_no = detail::sorted_mean(no_probs);
    if (std::abs(mean_yes - mean_no) <= kMeanTieTolerance) return Decision::yes;
    return mean_yes > mean_no ? Decision::yes : Decision::no;
}

// Mean p_yes over votes; a single vote's CMS is its own p_yes.
inline double entity_cms(std::span<const ClassProbs> votes) {
    if (votes.empty()) throw EmptyVotes();
    std::vector<double> ps;
    ps.reserve(votes.size());
    for (const auto& v : votes) ps.push_back(v.p_yes);
    return detail::sorted_mean(std::move(ps));
}

struct VerificationJob {
    const Document& document;
    const Entity& entity;
    const Raster& news_image;
    Mode mode = Mode::no_evidence;
    int n_evidence = 20;
};

struct VerifierOptions {
    std::filesystem::path evidence_root;
    BorderSpec border;
    QueryOptions query;
    int evidence_workers = 1;  // concurrent evidence queries per entity
};

class Verifier {
public:
    Verifier(const Backend& backend, const PromptCatalog& catalog, VerifierOptions options = {})
        : backend_(backend), catalog_(catalog), options_(std::move(options)) {
        options_.border.validate();
    }

    const Backend& backend() const { return backend_; }
    const VerifierOptions& options() const { return options_; }

    Verdict verify(const VerificationJob& job) const {
        return job.mode == Mode::no_evidence ? verify_without_evidence(job) : verify_with_evidence(job);
    }

    Verdict verify_without_evidence(const VerificationJob& job) const {
        const auto& tmpl = catalog_.select(backend_.descriptor().model_id, job.entity.type, Mode::no_evidence);
        Verdict v = blank_verdict(job, Mode::no_evidence, tmpl.template_id);
        const auto result = classify(backend_, render_question(tmpl, job.entity), {job.news_image}, options_.query);
        if (const auto* probs = std::get_if<ClassProbs>(&result)) {
            v.votes.push_back({std::nullopt, *probs});
            v.decision = vote_decision(*probs);
            v.cms = probs->p_yes;
            v.cms_defined = true;
        } else {
            v.unknown_votes.push_back({std::nullopt, std::get<UnknownAnswer>(result).text});
            v.decision = Decision::unknown;
            v.cms = 0.5;
            v.cms_defined = false;
        }
        return v;
    }

    Verdict verify_with_evidence(const VerificationJob& job) const {
        if (job.mode == Mode::no_evidence) throw std::invalid_argument("verify_with_evidence needs comp or series mode");
        if (options_.evidence_root.empty()) throw ConfigError("evidence modes need an evidence root");
        if (job.mode == Mode::series && !backend_.descriptor().multi_image)
            throw CapabilityError("series mode needs a multi-image backend; '" + backend_.descriptor().model_id +
                                  "' takes a single image");
        if (job.n_evidence < 1) throw ConfigError("n_evidence must be >= 1");

        std::vector<EvidenceItem> items;
        try {
            items = select_evidence(load_manifest(options_.evidence_root, job.entity.entity_id), job.n_evidence);
        } catch (const ManifestNotFound&) {
        }
        if (items.empty()) {
            logger()->info("entity {}: no evidence available, falling back to no-evidence mode", job.entity.entity_id);
            Verdict v = verify_without_evidence(job);
            v.fallback = true;
            return v;
        }

        const auto& tmpl = catalog_.select(backend_.descriptor().model_id, job.entity.type, job.mode);
        const std::string prompt = render_evidence_question(tmpl, job.entity, job.mode, options_.border);

        struct Slot {
            std::optional<Classification> result;
        };
        std::vector<Slot> slots(items.size());
        parallel_for(items.size(), options_.evidence_workers, [&](std::size_t i) {
            try {
                const Raster evidence = load_image(items[i].path);
                if (job.mode == Mode::comp) {
                    auto composite = compose(job.news_image, evidence, options_.border);
                    slots[i].result = classify(backend_, prompt, {std::move(composite.pixels)}, options_.query);
                } else {
                    slots[i].result = classify(backend_, prompt, {job.news_image, evidence}, options_.query);
                }
            } catch (const Error& ex) {
                logger()->warn("entity {}: evidence {} dropped: {}", job.entity.entity_id, items[i].file, ex.what());
            }
        });

        Verdict v = blank_verdict(job, job.mode, tmpl.template_id);
        std::vector<ClassProbs> probs;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const std::string ref = encode_entity_dir(job.entity.entity_id) + "/" + items[i].file;
            if (!slots[i].result) {
                ++v.dropped;
            } else if (const auto* p = std::get_if<ClassProbs>(&*slots[i].result)) {
                v.votes.push_back({ref, *p});
                probs.push_back(*p);
            } else {
                v.unknown_votes.push_back({ref, std::get<UnknownAnswer>(*slots[i].result).text});
            }
        }
        if (!probs.empty()) {
            v.decision = majority_vote(probs);
            v.cms = entity_cms(probs);
            v.cms_defined = true;
        } else if (!v.unknown_votes.empty()) {
            v.decision = Decision::unknown;
            v.cms = 0.5;
            v.cms_defined = false;
        } else {
            throw AllQueriesFailed("all " + std::to_string(items.size()) + " evidence queries failed for entity " +
                                   job.entity.entity_id);
        }
        return v;
    }

private:
    Verdict blank_verdict(const VerificationJob& job, Mode mode, const std::string& template_id) const {
        Verdict v;
        v.doc_id = job.document.doc_id;
        v.entity_id = job.entity.entity_id;
        v.mode = mode;
        v.template_id = template_id;
        v.model_id = backend_.descriptor().model_id;
        return v;
    }

    const Backend& backend_;
    const PromptCatalog& catalog_;
    VerifierOptions options_;
};

}  // namespace cec
