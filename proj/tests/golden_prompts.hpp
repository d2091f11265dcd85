#pragma once

// Renders every (template, entity type, mode) cell of the shipped catalog in a
// fixed order. Shared by the unit and acceptance suites.

#include <string>
#include <vector>

#include "cec/prompt.hpp"

namespace cec::test {

inline std::vector<Entity> golden_entities() {
    Entity p{"Q567", "Angela Merkel", {EntityKind::person, std::nullopt}, {}, {}, {}};
    Entity l{"Q130206", "London Bridge", {EntityKind::location, std::nullopt}, {}, {}, {}};
    Entity e{"Q170645", "2018 FIFA World Cup", {EntityKind::event, std::nullopt}, {}, {}, {}};
    return {p, l, e};
}

// One line per cell: template_id <TAB> type <TAB> mode <TAB> question
inline std::string render_golden_table(const PromptCatalog& catalog) {
    std::string out;
    for (const auto& [id, t] : catalog.registry().all())
        for (const auto& entity : golden_entities())
            for (Mode mode : {Mode::no_evidence, Mode::comp, Mode::series}) {
                if (!t.applicable_modes.contains(mode)) continue;
                out += id + "\t" + std::string(to_string(entity.type.kind)) + "\t" + std::string(to_string(mode)) +
                       "\t" + render_for_mode(t, entity, mode) + "\n";
            }
    return out;
}

}  // namespace cec::test
