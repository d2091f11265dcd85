#pragma once

// Domain types shared by every module: entities, documents, per-query class
// probabilities and per-entity verdicts, plus their JSON wire formats.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cec/error.hpp"

namespace cec {

using json = nlohmann::json;

enum class EntityKind { person, location, event };
enum class SpatialResolution { city, country, continent };

inline constexpr std::string_view to_string(EntityKind k) {
    switch (k) {
        case EntityKind::person: return "person";
        case EntityKind::location: return "location";
        case EntityKind::event: return "event";
    }
    return "?";
}

inline constexpr std::string_view to_string(SpatialResolution r) {
    switch (r) {
        case SpatialResolution::city: return "city";
        case SpatialResolution::country: return "country";
        case SpatialResolution::continent: return "continent";
    }
    return "?";
}

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Accepts singular and plural spellings ("persons", "LOC" is not accepted).
inline EntityKind parse_entity_kind(std::string_view s) {
    const auto v = ascii_lower(s);
    if (v == "person" || v == "persons") return EntityKind::person;
    if (v == "location" || v == "locations") return EntityKind::location;
    if (v == "event" || v == "events") return EntityKind::event;
    throw ParseError("unknown entity type '" + std::string(s) + "'");
}

inline SpatialResolution parse_spatial_resolution(std::string_view s) {
    const auto v = ascii_lower(s);
    if (v == "city") return SpatialResolution::city;
    if (v == "country") return SpatialResolution::country;
    if (v == "continent") return SpatialResolution::continent;
    throw ParseError("unknown spatial resolution '" + std::string(s) + "'");
}

struct EntityType {
    EntityKind kind = EntityKind::person;
    // Only meaningful for locations (MMG-style city/country/continent splits).
    std::optional<SpatialResolution> resolution;

    bool operator==(const EntityType&) const = default;
};

struct GeoPoint {
    double lat = 0.0;  // degrees, [-90, 90]
    double lon = 0.0;  // degrees, [-180, 180]

    bool in_bounds() const { return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0; }
    bool operator==(const GeoPoint&) const = default;
};

struct Entity {
    std::string entity_id;
    std::string name;
    EntityType type;
    std::optional<std::string> kb_id;
    std::optional<GeoPoint> geo;
    std::map<std::string, std::string> meta;

    std::optional<std::string> meta_value(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) return std::nullopt;
        return it->second;
    }
    bool operator==(const Entity&) const = default;
};

// An entity as it occurs in one document, with its tri-state ground truth:
// true/false when annotated, nullopt when the annotation is missing.
struct EntityMention {
    Entity entity;
    std::optional<bool> visible;

    bool operator==(const EntityMention&) const = default;
};

struct Document {
    std::string doc_id;
    std::string text;
    std::string image_path;  // relative to the dataset file's directory
    std::string language;    // BCP-47
    std::vector<EntityMention> entities;

    bool operator==(const Document&) const = default;
};

enum class ProbSource { constrained, freeform_parsed };

inline constexpr std::string_view to_string(ProbSource s) {
    return s == ProbSource::constrained ? "constrained" : "freeform_parsed";
}

// Normalized probability mass over the {yes, no} answer classes.
struct ClassProbs {
    double p_yes = 0.0;
    double p_no = 1.0;
    ProbSource source = ProbSource::constrained;

    static ClassProbs from_yes(double p_yes, ProbSource source) {
        if (!(p_yes >= 0.0 && p_yes <= 1.0)) throw std::invalid_argument("p_yes outside [0,1]");
        return ClassProbs{p_yes, 1.0 - p_yes, source};
    }
    bool operator==(const ClassProbs&) const = default;
};

enum class Decision { yes, no, unknown };
enum class Mode { no_evidence, comp, series };

inline constexpr std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::yes: return "yes";
        case Decision::no: return "no";
        case Decision::unknown: return "unknown";
    }
    return "?";
}

inline constexpr std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::no_evidence: return "no_evidence";
        case Mode::comp: return "comp";
        case Mode::series: return "series";
    }
    return "?";
}

// "w/o" is the short label used on the command line and in report tables.
inline Mode parse_mode(std::string_view s) {
    const auto v = ascii_lower(s);
    if (v == "no_evidence" || v == "w/o" || v == "wo") return Mode::no_evidence;
    if (v == "comp") return Mode::comp;
    if (v == "series") return Mode::series;
    throw ParseError("unknown mode '" + std::string(s) + "' (expected w/o, comp or series)");
}

inline Decision parse_decision(std::string_view s) {
    if (s == "yes") return Decision::yes;
    if (s == "no") return Decision::no;
    if (s == "unknown") return Decision::unknown;
    throw ParseError("unknown decision '" + std::string(s) + "'");
}

struct Vote {
    std::optional<std::string> evidence_ref;
    ClassProbs probs;

    bool operator==(const Vote&) const = default;
};

// An answer that could not be mapped to yes/no (counted toward URR).
struct UnknownVote {
    std::optional<std::string> evidence_ref;
    std::string text;

    bool operator==(const UnknownVote&) const = default;
};

struct Verdict {
    std::string doc_id;
    std::string entity_id;
    Mode mode = Mode::no_evidence;
    Decision decision = Decision::unknown;
    double cms = 0.5;
    bool cms_defined = false;  // false when every answer was unknown (cms then reads 0.5)
    std::vector<Vote> votes;
    std::vector<UnknownVote> unknown_votes;
    int dropped = 0;        // per-evidence queries that failed
    bool fallback = false;  // evidence mode requested but no evidence loaded
    std::string template_id;
    std::string model_id;

    bool operator==(const Verdict&) const = default;
};

// ---------------------------------------------------------------------------
// Validation

enum class IssueKind { EmptyDocId, EmptyEntityId, DuplicateEntityId, GeoOutOfBounds, ResolutionOnNonLocation };

struct ValidationIssue {
    IssueKind kind;
    std::string subject;  // entity_id or doc_id the issue refers to

    bool operator==(const ValidationIssue&) const = default;
};

inline std::string describe(const ValidationIssue& issue) {
    switch (issue.kind) {
        case IssueKind::EmptyDocId: return "document has an empty doc_id";
        case IssueKind::EmptyEntityId: return "entity with empty entity_id";
        case IssueKind::DuplicateEntityId: return "DuplicateEntityId(" + issue.subject + ")";
        case IssueKind::GeoOutOfBounds: return "GeoOutOfBounds(" + issue.subject + ")";
        case IssueKind::ResolutionOnNonLocation: return "spatial_resolution on non-location entity " + issue.subject;
    }
    return "unknown issue";
}

// Structural checks only. Image decodability is checked by the dataset loader,
// which knows the base directory.
inline std::vector<ValidationIssue> validate_document(const Document& doc) {
    std::vector<ValidationIssue> issues;
    if (doc.doc_id.empty()) issues.push_back({IssueKind::EmptyDocId, doc.doc_id});
    std::set<std::string> seen;
    std::set<std::string> reported;
    for (const auto& m : doc.entities) {
        const auto& e = m.entity;
        if (e.entity_id.empty()) issues.push_back({IssueKind::EmptyEntityId, e.name});
        if (!seen.insert(e.entity_id).second && reported.insert(e.entity_id).second)
            issues.push_back({IssueKind::DuplicateEntityId, e.entity_id});
        if (e.geo && !e.geo->in_bounds()) issues.push_back({IssueKind::GeoOutOfBounds, e.entity_id});
        if (e.type.resolution && e.type.kind != EntityKind::location)
            issues.push_back({IssueKind::ResolutionOnNonLocation, e.entity_id});
    }
    return issues;
}

// ---------------------------------------------------------------------------
// JSON (field names are a file-format contract)

inline json entity_to_json(const Entity& e) {
    json j;
    j["entity_id"] = e.entity_id;
    j["name"] = e.name;
    j["type"] = std::string(to_string(e.type.kind));
    if (e.type.resolution) j["spatial_resolution"] = std::string(to_string(*e.type.resolution));
    if (e.kb_id) j["kb_id"] = *e.kb_id;
    if (e.geo) j["geo"] = {{"lat", e.geo->lat}, {"lon", e.geo->lon}};
    if (!e.meta.empty()) j["meta"] = e.meta;
    return j;
}

inline Entity entity_from_json(const json& j) {
    if (!j.is_object()) throw ParseError("entity must be a JSON object");
    Entity e;
    try {
        e.entity_id = j.at("entity_id").get<std::string>();
        e.name = j.at("name").get<std::string>();
        e.type.kind = parse_entity_kind(j.at("type").get<std::string>());
        if (auto it = j.find("spatial_resolution"); it != j.end() && !it->is_null())
            e.type.resolution = parse_spatial_resolution(it->get<std::string>());
        if (auto it = j.find("kb_id"); it != j.end() && !it->is_null()) e.kb_id = it->get<std::string>();
        if (auto it = j.find("geo"); it != j.end() && !it->is_null())
            e.geo = GeoPoint{it->at("lat").get<double>(), it->at("lon").get<double>()};
        if (auto it = j.find("meta"); it != j.end() && !it->is_null())
            e.meta = it->get<std::map<std::string, std::string>>();
    } catch (const json::exception& ex) {
        throw ParseError(std::string("bad entity record: ") + ex.what());
    }
    return e;
}

inline json document_to_json(const Document& d) {
    json ents = json::array();
    for (const auto& m : d.entities) {
        json e = entity_to_json(m.entity);
        if (m.visible) e["visible"] = *m.visible;
        ents.push_back(std::move(e));
    }
    return json{{"doc_id", d.doc_id}, {"text", d.text}, {"image_path", d.image_path},
                {"language", d.language}, {"entities", std::move(ents)}};
}

inline Document document_from_json(const json& j) {
    if (!j.is_object()) throw ParseError("document must be a JSON object");
    Document d;
    try {
        d.doc_id = j.at("doc_id").get<std::string>();
        d.text = j.value("text", std::string{});
        d.image_path = j.at("image_path").get<std::string>();
        d.language = j.value("language", std::string{});
        for (const auto& ej : j.at("entities")) {
            EntityMention m{entity_from_json(ej), std::nullopt};
            if (auto it = ej.find("visible"); it != ej.end() && !it->is_null()) m.visible = it->get<bool>();
            d.entities.push_back(std::move(m));
        }
    } catch (const json::exception& ex) {
        throw ParseError(std::string("bad document record: ") + ex.what());
    }
    return d;
}

inline json verdict_to_json(const Verdict& v) {
    json votes = json::array();
    for (const auto& vote : v.votes) {
        json vj{{"p_yes", vote.probs.p_yes}, {"source", std::string(to_string(vote.probs.source))}};
        vj["evidence"] = vote.evidence_ref ? json(*vote.evidence_ref) : json(nullptr);
        votes.push_back(std::move(vj));
    }
    json unknown = json::array();
    for (const auto& u : v.unknown_votes) {
        unknown.push_back({{"evidence", u.evidence_ref ? json(*u.evidence_ref) : json(nullptr)}, {"text", u.text}});
    }
    return json{{"doc_id", v.doc_id},
                {"entity_id", v.entity_id},
                {"mode", std::string(to_string(v.mode))},
                {"decision", std::string(to_string(v.decision))},
                {"cms", v.cms},
                {"cms_defined", v.cms_defined},
                {"votes", std::move(votes)},
                {"unknown_votes", std::move(unknown)},
                {"dropped", v.dropped},
                {"fallback", v.fallback},
                {"template_id", v.template_id},
                {"model_id", v.model_id}};
}

inline Verdict verdict_from_json(const json& j) {
    Verdict v;
    try {
        v.doc_id = j.at("doc_id").get<std::string>();
        v.entity_id = j.at("entity_id").get<std::string>();
        v.mode = parse_mode(j.at("mode").get<std::string>());
        v.decision = parse_decision(j.at("decision").get<std::string>());
        v.cms = j.at("cms").get<double>();
        v.cms_defined = j.value("cms_defined", v.decision != Decision::unknown);
        for (const auto& vj : j.at("votes")) {
            Vote vote;
            if (!vj.at("evidence").is_null()) vote.evidence_ref = vj.at("evidence").get<std::string>();
            const auto src = vj.at("source").get<std::string>();
            vote.probs = ClassProbs::from_yes(vj.at("p_yes").get<double>(),
                                              src == "constrained" ? ProbSource::constrained
                                                                   : ProbSource::freeform_parsed);
            v.votes.push_back(std::move(vote));
        }
        if (auto it = j.find("unknown_votes"); it != j.end()) {
            for (const auto& uj : *it) {
                UnknownVote u;
                if (!uj.at("evidence").is_null()) u.evidence_ref = uj.at("evidence").get<std::string>();
                u.text = uj.at("text").get<std::string>();
                v.unknown_votes.push_back(std::move(u));
            }
        }
        v.dropped = j.value("dropped", 0);
        v.fallback = j.value("fallback", false);
        v.template_id = j.value("template_id", std::string{});
        v.model_id = j.value("model_id", std::string{});
    } catch (const json::exception& ex) {
        throw ParseError(std::string("bad verdict record: ") + ex.what());
    }
    return v;
}

}  // namespace cec
