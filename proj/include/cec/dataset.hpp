#pragma once

// Entity-verification datasets (JSON Lines of Document records), their
// summary statistics, great-circle distances and tampered entity sets for
// the document-verification protocol.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cec/core.hpp"
#include "cec/raster.hpp"

namespace cec {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Statistics

struct StatsRow {
    int documents = 0;         // D: documents with >= 1 mention of the type
    int entities = 0;          // E: distinct entity ids of the type
    int visible_entities = 0;  // E_vis: distinct ids with >= 1 visible mention

    bool operator==(const StatsRow&) const = default;
};

struct DatasetStats {
    std::map<EntityKind, StatsRow> by_kind;
    std::map<SpatialResolution, StatsRow> by_resolution;  // locations carrying a resolution
    StatsRow all;

    bool operator==(const DatasetStats&) const = default;
};

inline DatasetStats compute_stats(std::span<const Document> docs) {
    struct Acc {
        std::set<std::string> docs, ids, visible;
        StatsRow row() const {
            return {static_cast<int>(docs.size()), static_cast<int>(ids.size()), static_cast<int>(visible.size())};
        }
    };
    std::map<EntityKind, Acc> kinds;
    std::map<SpatialResolution, Acc> resolutions;
    Acc all;
    for (const auto& d : docs) {
        for (const auto& m : d.entities) {
            // Ids are namespaced by kind so "All" sums the per-kind rows.
            const std::string key = std::string(to_string(m.entity.type.kind)) + ":" + m.entity.entity_id;
            std::vector<Acc*> targets{&kinds[m.entity.type.kind], &all};
            if (m.entity.type.resolution) {
                targets.push_back(&resolutions[*m.entity.type.resolution]);
            }
            for (Acc* a : targets) {
                a->docs.insert(d.doc_id);
                a->ids.insert(key);
                if (m.visible.value_or(false)) a->visible.insert(key);
            }
        }
    }
    DatasetStats s;
    for (const auto& [k, a] : kinds) s.by_kind[k] = a.row();
    for (const auto& [r, a] : resolutions) s.by_resolution[r] = a.row();
    s.all = all.row();
    return s;
}

// ---------------------------------------------------------------------------
// Loading

struct Dataset {
    fs::path path;
    fs::path base_dir;  // image paths resolve against this
    std::vector<Document> documents;
    DatasetStats stats;

    fs::path image_path(const Document& d) const { return base_dir / d.image_path; }
};

struct LoadOptions {
    bool check_images = true;
};

inline Dataset load_documents(const fs::path& path, const LoadOptions& opts = {}) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open dataset " + path.string());
    Dataset ds;
    ds.path = path;
    ds.base_dir = path.parent_path();

    std::vector<std::string> issues;
    std::map<std::string, EntityKind> kind_by_id;
    std::set<std::string> doc_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Document doc;
        try {
            doc = document_from_json(json::parse(line));
        } catch (const json::parse_error& ex) {
            throw ParseError(ex.what(), line_no);
        } catch (const ParseError& ex) {
            throw ParseError(ex.what(), line_no);
        }
        const std::string where = "line " + std::to_string(line_no) + " (" + doc.doc_id + "): ";
        for (const auto& issue : validate_document(doc)) issues.push_back(where + describe(issue));
        if (!doc_ids.insert(doc.doc_id).second) issues.push_back(where + "duplicate doc_id");
        for (const auto& m : doc.entities) {
            auto [it, inserted] = kind_by_id.try_emplace(m.entity.entity_id, m.entity.type.kind);
            if (!inserted && it->second != m.entity.type.kind)
                issues.push_back(where + "entity_id " + m.entity.entity_id + " used with two entity types");
        }
        if (opts.check_images) {
            try {
                load_image(ds.base_dir / doc.image_path);
            } catch (const DecodeError& ex) {
                issues.push_back(where + "image not decodable: " + ex.what());
            }
        }
        ds.documents.push_back(std::move(doc));
    }
    if (!issues.empty()) throw ValidationError(std::move(issues));
    ds.stats = compute_stats(ds.documents);
    return ds;
}

inline Document load_document_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open document " + path.string());
    Document doc;
    try {
        doc = document_from_json(json::parse(in));
    } catch (const json::parse_error& ex) {
        throw ParseError(path.string() + ": " + ex.what());
    }
    std::vector<std::string> issues;
    for (const auto& issue : validate_document(doc)) issues.push_back(describe(issue));
    if (!issues.empty()) throw ValidationError(std::move(issues));
    return doc;
}

// ---------------------------------------------------------------------------
// Great-circle distance

inline constexpr double kEarthRadiusKm = 6371.0088;  // mean Earth radius

inline double great_circle_distance(GeoPoint a, GeoPoint b) {
    constexpr double rad = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * rad;
    const double dlon = (b.lon - a.lon) * rad;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::clamp(h, 0.0, 1.0)));
}

// ---------------------------------------------------------------------------
// Tampering

struct CandidatePool {
    EntityKind kind = EntityKind::person;
    std::vector<Entity> candidates;
};

using CandidatePools = std::map<EntityKind, CandidatePool>;

inline CandidatePools load_candidate_pools(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open candidate pool " + path.string());
    CandidatePools pools;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Entity e;
        try {
            e = entity_from_json(json::parse(line));
        } catch (const json::parse_error& ex) {
            throw ParseError(ex.what(), line_no);
        } catch (const ParseError& ex) {
            throw ParseError(ex.what(), line_no);
        }
        if (e.geo && !e.geo->in_bounds()) throw ParseError("geo out of bounds for " + e.entity_id, line_no);
        auto& pool = pools[e.type.kind];
        pool.kind = e.type.kind;
        pool.candidates.push_back(std::move(e));
    }
    return pools;
}

struct TamperingStrategy {
    enum class Kind {
        random,
        person_same_country,
        person_same_gender,
        person_same_country_gender,
        location_gcd_band,
        event_same_class,
    };

    Kind kind = Kind::random;
    double min_km = 0.0;  // location_gcd_band: half-open [min_km, max_km)
    double max_km = 0.0;

    static TamperingStrategy gcd_band(double min_km, double max_km) {
        if (!(min_km >= 0.0 && min_km < max_km)) throw ParseError("GCD band needs 0 <= min < max");
        return {Kind::location_gcd_band, min_km, max_km};
    }

    // random | person:same_country | person:same_gender | person:same_country_gender
    // | gcd:<min>:<max> | event:same_class
    static TamperingStrategy parse(std::string_view s) {
        const auto v = ascii_lower(s);
        if (v == "random") return {Kind::random};
        if (v == "person:same_country") return {Kind::person_same_country};
        if (v == "person:same_gender") return {Kind::person_same_gender};
        if (v == "person:same_country_gender") return {Kind::person_same_country_gender};
        if (v == "event:same_class") return {Kind::event_same_class};
        if (v.starts_with("gcd:")) {
            const auto rest = v.substr(4);
            const auto colon = rest.find(':');
            if (colon == std::string::npos) throw ParseError("expected gcd:<min>:<max>, got '" + std::string(s) + "'");
            try {
                std::size_t used_a = 0, used_b = 0;
                const double lo = std::stod(rest.substr(0, colon), &used_a);
                const double hi = std::stod(rest.substr(colon + 1), &used_b);
                if (used_a != colon || used_b != rest.size() - colon - 1) throw std::invalid_argument("trailing");
                return gcd_band(lo, hi);
            } catch (const std::logic_error&) {
                throw ParseError("expected gcd:<min>:<max>, got '" + std::string(s) + "'");
            }
        }
        throw ParseError("unknown tampering strategy '" + std::string(s) + "'");
    }

    std::string to_string() const {
        switch (kind) {
            case Kind::random: return "random";
            case Kind::person_same_country: return "person:same_country";
            case Kind::person_same_gender: return "person:same_gender";
            case Kind::person_same_country_gender: return "person:same_country_gender";
            case Kind::event_same_class: return "event:same_class";
            case Kind::location_gcd_band: return "gcd:" + format_km(min_km) + ":" + format_km(max_km);
        }
        return "?";
    }

    // Entity type the strategy applies to; random applies to any.
    std::optional<EntityKind> target_kind() const {
        switch (kind) {
            case Kind::random: return std::nullopt;
            case Kind::person_same_country:
            case Kind::person_same_gender:
            case Kind::person_same_country_gender: return EntityKind::person;
            case Kind::location_gcd_band: return EntityKind::location;
            case Kind::event_same_class: return EntityKind::event;
        }
        return std::nullopt;
    }

    bool accepts(const Entity& original, const Entity& candidate) const {
        if (candidate.entity_id == original.entity_id) return false;
        if (candidate.type.kind != original.type.kind) return false;
        auto same_meta = [&](const char* key) {
            const auto a = original.meta_value(key), b = candidate.meta_value(key);
            return a && b && *a == *b;
        };
        switch (kind) {
            case Kind::random: return true;
            case Kind::person_same_country: return same_meta("country");
            case Kind::person_same_gender: return same_meta("gender");
            case Kind::person_same_country_gender: return same_meta("country") && same_meta("gender");
            case Kind::event_same_class: return same_meta("parent_class");
            case Kind::location_gcd_band: {
                if (!original.geo || !candidate.geo) return false;
                const double d = great_circle_distance(*original.geo, *candidate.geo);
                return d >= min_km && d < max_km;
            }
        }
        return false;
    }

    bool operator==(const TamperingStrategy&) const = default;

private:
    static std::string format_km(double km) {
        if (km == std::floor(km) && std::abs(km) < 1e15) return std::to_string(static_cast<long long>(km));
        std::ostringstream os;
        os << km;
        return os.str();
    }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Unbiased index in [0, n); std::uniform_int_distribution is not portable
// across standard libraries, this is.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

}  // namespace detail

inline Entity tamper_entity(const Entity& original, const CandidatePool& pool, const TamperingStrategy& strategy,
                            std::uint64_t seed) {
    if (pool.candidates.empty()) throw NoEligibleCandidate("empty candidate pool");
    if (pool.kind != original.type.kind) throw std::invalid_argument("candidate pool type differs from entity type");
    if (auto k = strategy.target_kind(); k && *k != original.type.kind)
        throw std::invalid_argument("strategy " + strategy.to_string() + " does not apply to " +
                                    std::string(to_string(original.type.kind)) + " entities");
    std::vector<const Entity*> eligible;
    for (const auto& c : pool.candidates)
        if (strategy.accepts(original, c)) eligible.push_back(&c);
    if (eligible.empty())
        throw NoEligibleCandidate("no candidate satisfies " + strategy.to_string() + " for " + original.entity_id);
    std::mt19937_64 rng(seed);
    return *eligible[detail::uniform_index(rng, eligible.size())];
}

struct TamperedPair {
    Entity original;
    Entity tampered;

    bool operator==(const TamperedPair&) const = default;
};

struct TamperedSet {
    std::string doc_id;
    EntityKind kind = EntityKind::person;
    std::string strategy;
    std::uint64_t seed = 0;
    std::vector<TamperedPair> pairs;
    bool skipped = false;  // the document has no entity of the target type

    bool operator==(const TamperedSet&) const = default;
};

// Seed for one entity slot, independent of processing order.
inline std::uint64_t entity_seed(std::uint64_t seed, std::string_view doc_id, std::size_t index) {
    return detail::splitmix64(detail::splitmix64(seed ^ detail::fnv1a64(doc_id)) + index);
}

inline TamperedSet build_tampered_document_set(const Document& doc, const CandidatePools& pools,
                                               const TamperingStrategy& strategy, EntityKind target,
                                               std::uint64_t seed) {
    if (auto k = strategy.target_kind(); k && *k != target)
        throw std::invalid_argument("strategy " + strategy.to_string() + " cannot tamper " +
                                    std::string(to_string(target)) + " entities");
    TamperedSet out{doc.doc_id, target, strategy.to_string(), seed, {}, false};
    std::vector<std::string> failures;
    std::size_t index = 0;
    for (const auto& m : doc.entities) {
        if (m.entity.type.kind != target) continue;
        auto pool_it = pools.find(target);
        try {
            if (pool_it == pools.end()) throw NoEligibleCandidate("no candidate pool for " + std::string(to_string(target)));
            out.pairs.push_back(
                {m.entity, tamper_entity(m.entity, pool_it->second, strategy, entity_seed(seed, doc.doc_id, index))});
        } catch (const NoEligibleCandidate& ex) {
            failures.push_back(m.entity.entity_id + ": " + ex.what());
        }
        ++index;
    }
    if (!failures.empty()) {
        std::string msg = "document " + doc.doc_id + ": no eligible replacement for";
        for (const auto& f : failures) msg += "\n  " + f;
        throw NoEligibleCandidate(msg);
    }
    out.skipped = out.pairs.empty();
    return out;
}

inline json tampered_set_to_json(const TamperedSet& s) {
    json pairs = json::array();
    for (const auto& p : s.pairs)
        pairs.push_back({{"original", entity_to_json(p.original)}, {"tampered", entity_to_json(p.tampered)}});
    return json{{"doc_id", s.doc_id},      {"entity_type", std::string(to_string(s.kind))},
                {"strategy", s.strategy}, {"seed", s.seed},
                {"skipped", s.skipped},   {"pairs", std::move(pairs)}};
}

inline TamperedSet tampered_set_from_json(const json& j) {
    TamperedSet s;
    try {
        s.doc_id = j.at("doc_id").get<std::string>();
        s.kind = parse_entity_kind(j.at("entity_type").get<std::string>());
        s.strategy = j.value("strategy", std::string{});
        s.seed = j.value("seed", std::uint64_t{0});
        s.skipped = j.value("skipped", false);
        for (const auto& p : j.at("pairs"))
            s.pairs.push_back({entity_from_json(p.at("original")), entity_from_json(p.at("tampered"))});
    } catch (const json::exception& ex) {
        throw ParseError(std::string("bad tampered set record: ") + ex.what());
    }
    return s;
}

inline std::vector<TamperedSet> load_tampered_sets(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open tampered sets " + path.string());
    std::vector<TamperedSet> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(tampered_set_from_json(json::parse(line)));
        } catch (const json::parse_error& ex) {
            throw ParseError(ex.what(), line_no);
        } catch (const ParseError& ex) {
            throw ParseError(ex.what(), line_no);
        }
    }
    return out;
}

inline fs::path default_tampered_path(const fs::path& dataset_path, const TamperingStrategy& strategy,
                                      EntityKind kind, std::uint64_t seed) {
    std::string slug = strategy.to_string();
    for (auto& c : slug)
        if (c == ':') c = '_';
    return dataset_path.parent_path() / (dataset_path.stem().string() + ".tampered." +
                                         std::string(to_string(kind)) + "." + slug + ".seed" +
                                         std::to_string(seed) + ".jsonl");
}

}  // namespace cec
