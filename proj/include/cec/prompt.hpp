#pragma once

// Question templates, the per-model template configuration, and rendering.
//
// Placeholders: <type> (lowercase entity type), <name> (entity display name,
// exactly once), and for evidence modes <news_ref> / <evidence_ref>, which are
// replaced by "the image with the red border" (comp) or "the first image"
// (series) style references.

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "cec/compose.hpp"
#include "cec/core.hpp"

namespace cec {

struct QuestionTemplate {
    std::string template_id;
    std::string pattern;
    std::set<Mode> applicable_modes{Mode::no_evidence};
    std::string answer_instruction;  // appended after a single space when non-empty

    bool operator==(const QuestionTemplate&) const = default;
};

namespace detail {

inline constexpr std::array<std::string_view, 4> kPlaceholders{"<type>", "<name>", "<news_ref>", "<evidence_ref>"};

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + needle.size()))
        ++n;
    return n;
}

// Single left-to-right pass so substituted values are never rescanned.
inline std::string substitute(std::string_view pattern, const std::map<std::string_view, std::string>& values) {
    std::string out;
    std::size_t i = 0;
    while (i < pattern.size()) {
        bool matched = false;
        if (pattern[i] == '<') {
            for (auto ph : kPlaceholders) {
                if (pattern.substr(i, ph.size()) == ph) {
                    auto it = values.find(ph);
                    if (it == values.end()) break;
                    out += it->second;
                    i += ph.size();
                    matched = true;
                    break;
                }
            }
        }
        if (!matched) out += pattern[i++];
    }
    return out;
}

inline std::string append_instruction(std::string question, const QuestionTemplate& t) {
    if (!t.answer_instruction.empty()) {
        question += ' ';
        question += t.answer_instruction;
    }
    return question;
}

inline std::string color_name(Rgb c) {
    static const std::array<std::pair<Rgb, std::string_view>, 10> named{{
        {{255, 0, 0}, "red"},       {{0, 255, 0}, "green"},    {{0, 0, 255}, "blue"},
        {{255, 255, 0}, "yellow"},  {{0, 255, 255}, "cyan"},   {{255, 0, 255}, "magenta"},
        {{0, 0, 0}, "black"},       {{255, 255, 255}, "white"}, {{255, 165, 0}, "orange"},
        {{128, 0, 128}, "purple"},
    }};
    for (const auto& [rgb, name] : named)
        if (rgb == c) return std::string(name);
    return "rgb(" + std::to_string(c.r) + ", " + std::to_string(c.g) + ", " + std::to_string(c.b) + ")";
}

}  // namespace detail

inline void validate_template(const QuestionTemplate& t) {
    const auto names = detail::count_occurrences(t.pattern, "<name>");
    if (names == 0) throw MissingPlaceholder("template '" + t.template_id + "' lacks the <name> placeholder");
    if (names > 1) throw TemplateError("template '" + t.template_id + "' uses <name> more than once");
    if (t.applicable_modes.empty()) throw TemplateError("template '" + t.template_id + "' has no applicable modes");
    const bool has_refs = t.pattern.find("<news_ref>") != std::string::npos ||
                          t.pattern.find("<evidence_ref>") != std::string::npos;
    if (has_refs && t.applicable_modes.contains(Mode::no_evidence))
        throw TemplateError("template '" + t.template_id + "' references evidence images but allows no_evidence");
}

inline std::string render_question(const QuestionTemplate& t, const Entity& entity) {
    validate_template(t);
    if (t.pattern.find("<news_ref>") != std::string::npos || t.pattern.find("<evidence_ref>") != std::string::npos)
        throw ModeNotApplicable("template '" + t.template_id + "' needs evidence images");
    return detail::append_instruction(
        detail::substitute(t.pattern, {{"<type>", std::string(to_string(entity.type.kind))}, {"<name>", entity.name}}),
        t);
}

inline std::string render_evidence_question(const QuestionTemplate& t, const Entity& entity, Mode mode,
                                            const std::optional<BorderSpec>& border = std::nullopt) {
    validate_template(t);
    if (mode == Mode::no_evidence || !t.applicable_modes.contains(mode))
        throw ModeNotApplicable("template '" + t.template_id + "' does not apply to mode " + std::string(to_string(mode)));
    std::string news_ref, evidence_ref;
    if (mode == Mode::comp) {
        const BorderSpec spec = border.value_or(BorderSpec{});
        news_ref = "the image with the " + detail::color_name(spec.news_color) + " border";
        evidence_ref = "the image with the " + detail::color_name(spec.evidence_color) + " border";
    } else {
        news_ref = "the first image";
        evidence_ref = "the second image";
    }
    return detail::append_instruction(detail::substitute(t.pattern, {{"<type>", std::string(to_string(entity.type.kind))},
                                                                     {"<name>", entity.name},
                                                                     {"<news_ref>", news_ref},
                                                                     {"<evidence_ref>", evidence_ref}}),
                                      t);
}

// ---------------------------------------------------------------------------
// Registry and configuration

class TemplateRegistry {
public:
    void add(QuestionTemplate t) {
        validate_template(t);
        auto id = t.template_id;
        templates_.insert_or_assign(std::move(id), std::move(t));
    }
    bool contains(const std::string& id) const { return templates_.contains(id); }
    const QuestionTemplate& at(const std::string& id) const {
        auto it = templates_.find(id);
        if (it == templates_.end()) throw UnknownTemplateId("unknown template id '" + id + "'");
        return it->second;
    }
    const std::map<std::string, QuestionTemplate>& all() const { return templates_; }

    // {template_id: {pattern, applicable_modes: [...], answer_instruction?}}
    static TemplateRegistry from_json(const json& j) {
        TemplateRegistry reg;
        reg.merge_json(j);
        return reg;
    }
    void merge_json(const json& j) {
        if (!j.is_object()) throw ConfigError("template registry must be a JSON object");
        for (const auto& [id, tj] : j.items()) {
            QuestionTemplate t;
            t.template_id = id;
            try {
                t.pattern = tj.at("pattern").get<std::string>();
                t.applicable_modes.clear();
                for (const auto& m : tj.at("applicable_modes")) t.applicable_modes.insert(parse_mode(m.get<std::string>()));
                t.answer_instruction = tj.value("answer_instruction", std::string{});
            } catch (const json::exception& ex) {
                throw ConfigError("template '" + id + "': " + ex.what());
            }
            add(std::move(t));
        }
    }

private:
    std::map<std::string, QuestionTemplate> templates_;
};

struct TemplateKey {
    std::string model_id;  // lowercase
    EntityKind kind;
    Mode mode;

    auto operator<=>(const TemplateKey&) const = default;
};

struct TemplateConfig {
    std::map<TemplateKey, std::string> entries;
    std::string default_template_id;
    // Per-mode fallbacks consulted before default_template_id, so an unknown
    // model in an evidence mode still gets an evidence-capable template.
    std::map<Mode, std::string> mode_defaults;

    // {default_template_id, mode_defaults?: {mode: id}, entries: [{model_id, entity_type, mode, template_id}]}
    void merge_json(const json& j) {
        if (!j.is_object()) throw ConfigError("template config must be a JSON object");
        try {
            if (j.contains("default_template_id")) default_template_id = j.at("default_template_id").get<std::string>();
            if (j.contains("mode_defaults"))
                for (const auto& [m, id] : j.at("mode_defaults").items()) mode_defaults[parse_mode(m)] = id.get<std::string>();
            if (j.contains("entries"))
                for (const auto& e : j.at("entries")) {
                    TemplateKey key{ascii_lower(e.at("model_id").get<std::string>()),
                                    parse_entity_kind(e.at("entity_type").get<std::string>()),
                                    parse_mode(e.at("mode").get<std::string>())};
                    entries[key] = e.at("template_id").get<std::string>();
                }
        } catch (const json::exception& ex) {
            throw ConfigError(std::string("template config: ") + ex.what());
        } catch (const ParseError& ex) {
            throw ConfigError(std::string("template config: ") + ex.what());
        }
    }
};

// Shipped registry: the four no-evidence question templates evaluated on
// TamperedNews-Ent plus one fixed wording per evidence mode family.
inline constexpr std::string_view kDefaultRegistryJson = R"({
  "visibility": {
    "pattern": "Is <type> <name> shown in the image?",
    "applicable_modes": ["no_evidence"]
  },
  "visibility_yn": {
    "pattern": "Is <type> <name> shown in the image?",
    "applicable_modes": ["no_evidence"],
    "answer_instruction": "Answer with yes or no."
  },
  "consistency": {
    "pattern": "Is the content of the image consistent with the <type> <name>?",
    "applicable_modes": ["no_evidence"]
  },
  "any_consistency": {
    "pattern": "Is any <type> from the image consistent with <name>?",
    "applicable_modes": ["no_evidence"]
  },
  "evidence_visibility": {
    "pattern": "Is the <type> <name> shown in <evidence_ref> also shown in <news_ref>?",
    "applicable_modes": ["comp", "series"],
    "answer_instruction": "Answer with yes or no."
  },
  "evidence_consistency": {
    "pattern": "Is the content of <news_ref> consistent with the <type> <name> shown in <evidence_ref>?",
    "applicable_modes": ["comp", "series"],
    "answer_instruction": "Answer with yes or no."
  }
})";

// Best no-evidence template per model and entity type (accuracy on
// TamperedNews-Ent); evidence modes use visibility wording for persons and
// events and consistency wording for locations.
inline constexpr std::string_view kDefaultConfigJson = R"({
  "default_template_id": "visibility_yn",
  "mode_defaults": {"comp": "evidence_visibility", "series": "evidence_visibility"},
  "entries": [
    {"model_id": "blip-2", "entity_type": "person", "mode": "no_evidence", "template_id": "any_consistency"},
    {"model_id": "blip-2", "entity_type": "location", "mode": "no_evidence", "template_id": "any_consistency"},
    {"model_id": "blip-2", "entity_type": "event", "mode": "no_evidence", "template_id": "consistency"},
    {"model_id": "instructblip", "entity_type": "person", "mode": "no_evidence", "template_id": "visibility"},
    {"model_id": "instructblip", "entity_type": "location", "mode": "no_evidence", "template_id": "visibility"},
    {"model_id": "instructblip", "entity_type": "event", "mode": "no_evidence", "template_id": "consistency"},
    {"model_id": "llava-1.5", "entity_type": "person", "mode": "no_evidence", "template_id": "visibility_yn"},
    {"model_id": "llava-1.5", "entity_type": "location", "mode": "no_evidence", "template_id": "visibility_yn"},
    {"model_id": "llava-1.5", "entity_type": "event", "mode": "no_evidence", "template_id": "consistency"},
    {"model_id": "instructblip", "entity_type": "person", "mode": "comp", "template_id": "evidence_visibility"},
    {"model_id": "instructblip", "entity_type": "location", "mode": "comp", "template_id": "evidence_consistency"},
    {"model_id": "instructblip", "entity_type": "event", "mode": "comp", "template_id": "evidence_visibility"},
    {"model_id": "llava-1.5", "entity_type": "person", "mode": "comp", "template_id": "evidence_visibility"},
    {"model_id": "llava-1.5", "entity_type": "location", "mode": "comp", "template_id": "evidence_consistency"},
    {"model_id": "llava-1.5", "entity_type": "event", "mode": "comp", "template_id": "evidence_visibility"},
    {"model_id": "mantis", "entity_type": "person", "mode": "series", "template_id": "evidence_visibility"},
    {"model_id": "mantis", "entity_type": "location", "mode": "series", "template_id": "evidence_consistency"},
    {"model_id": "mantis", "entity_type": "event", "mode": "series", "template_id": "evidence_visibility"},
    {"model_id": "deepseek", "entity_type": "person", "mode": "series", "template_id": "evidence_visibility"},
    {"model_id": "deepseek", "entity_type": "location", "mode": "series", "template_id": "evidence_consistency"},
    {"model_id": "deepseek", "entity_type": "event", "mode": "series", "template_id": "evidence_visibility"}
  ]
})";

// Registry plus configuration; read-only after construction.
class PromptCatalog {
public:
    PromptCatalog(TemplateRegistry registry, TemplateConfig config)
        : registry_(std::move(registry)), config_(std::move(config)) {
        validate();
    }

    static PromptCatalog shipped_default() {
        TemplateRegistry reg = TemplateRegistry::from_json(json::parse(kDefaultRegistryJson));
        TemplateConfig cfg;
        cfg.merge_json(json::parse(kDefaultConfigJson));
        return PromptCatalog(std::move(reg), std::move(cfg));
    }

    // Overrides on top of the shipped default. The file may carry a
    // "templates" object (registry entries) next to the config keys.
    static PromptCatalog with_overrides(const json& overrides) {
        TemplateRegistry reg = TemplateRegistry::from_json(json::parse(kDefaultRegistryJson));
        TemplateConfig cfg;
        cfg.merge_json(json::parse(kDefaultConfigJson));
        if (overrides.contains("templates")) reg.merge_json(overrides.at("templates"));
        cfg.merge_json(overrides);
        return PromptCatalog(std::move(reg), std::move(cfg));
    }

    static PromptCatalog from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open template config " + path.string());
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& ex) {
            throw ConfigError("template config " + path.string() + ": " + ex.what());
        }
        return with_overrides(j);
    }

    const TemplateRegistry& registry() const { return registry_; }
    const TemplateConfig& config() const { return config_; }

    const QuestionTemplate& select(std::string_view model_id, const EntityType& etype, Mode mode) const {
        const TemplateKey key{ascii_lower(model_id), etype.kind, mode};
        if (auto it = config_.entries.find(key); it != config_.entries.end()) return registry_.at(it->second);
        if (auto it = config_.mode_defaults.find(mode); it != config_.mode_defaults.end())
            return registry_.at(it->second);
        return registry_.at(config_.default_template_id);
    }

private:
    void validate() const {
        if (config_.default_template_id.empty()) throw ConfigError("template config lacks default_template_id");
        registry_.at(config_.default_template_id);
        for (const auto& [mode, id] : config_.mode_defaults) registry_.at(id);
        for (const auto& [key, id] : config_.entries) {
            const auto& t = registry_.at(id);
            if (!t.applicable_modes.contains(key.mode))
                throw ConfigError("template '" + id + "' configured for " + key.model_id + "/" +
                                  std::string(to_string(key.mode)) + " but does not apply to that mode");
        }
    }

    TemplateRegistry registry_;
    TemplateConfig config_;
};

inline const QuestionTemplate& select_template(const PromptCatalog& catalog, std::string_view model_id,
                                               const EntityType& etype, Mode mode) {
    return catalog.select(model_id, etype, mode);
}

// Question for any mode: plain rendering without evidence, image references otherwise.
inline std::string render_for_mode(const QuestionTemplate& t, const Entity& entity, Mode mode,
                                   const std::optional<BorderSpec>& border = std::nullopt) {
    return mode == Mode::no_evidence ? render_question(t, entity) : render_evidence_question(t, entity, mode, border);
}

}  // namespace cec
