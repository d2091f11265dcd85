#pragma once

// Evidence images on disk: root/<percent-encoded entity_id>/manifest.json plus
// image files, and a fetcher that fills the store from image-search endpoints.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "cec/backend.hpp"
#include "cec/http.hpp"
#include "cec/log.hpp"
#include "cec/raster.hpp"

namespace cec {

namespace fs = std::filesystem;

enum class EvidenceSource { google, bing, wikidata, other };

inline constexpr std::string_view to_string(EvidenceSource s) {
    switch (s) {
        case EvidenceSource::google: return "google";
        case EvidenceSource::bing: return "bing";
        case EvidenceSource::wikidata: return "wikidata";
        case EvidenceSource::other: return "other";
    }
    return "other";
}

inline EvidenceSource parse_evidence_source(std::string_view s) {
    const auto v = ascii_lower(s);
    if (v == "google") return EvidenceSource::google;
    if (v == "bing") return EvidenceSource::bing;
    if (v == "wikidata") return EvidenceSource::wikidata;
    if (v == "other") return EvidenceSource::other;
    throw ParseError("unknown evidence source '" + std::string(s) + "'");
}

struct EvidenceItem {
    fs::path path;  // absolute or relative to the process cwd
    std::string file;  // name as listed in the manifest
    EvidenceSource source = EvidenceSource::other;
    int rank = 0;

    bool operator==(const EvidenceItem&) const = default;
};

struct EvidenceSet {
    std::string entity_id;
    std::vector<EvidenceItem> items;  // manifest order
    int removed = 0;                  // broken items skipped at load time
};

// Unreserved characters are kept; everything else (including '.') becomes %XX,
// so ids like "." or "a/b" map to safe directory names.
inline std::string encode_entity_dir(std::string_view entity_id) {
    static constexpr char hex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : entity_id) {
        if (std::isalnum(c) || c == '-' || c == '_') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 0xF];
        }
    }
    return out;
}

inline fs::path entity_dir(const fs::path& root, std::string_view entity_id) {
    return root / encode_entity_dir(entity_id);
}

inline json read_manifest_json(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ManifestNotFound("no manifest at " + manifest_path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& ex) {
        throw ManifestParseError(manifest_path.string() + ": " + ex.what());
    }
}

inline EvidenceSet load_manifest(const fs::path& root, std::string_view entity_id, bool check_decodable = true) {
    const fs::path dir = entity_dir(root, entity_id);
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw ManifestNotFound("no manifest for entity '" + std::string(entity_id) + "' under " + dir.string());
    const json j = read_manifest_json(manifest_path);

    EvidenceSet set;
    set.entity_id = std::string(entity_id);
    try {
        if (j.contains("entity_id") && j.at("entity_id").get<std::string>() != entity_id)
            throw ManifestParseError(manifest_path.string() + ": entity_id mismatch");
        for (const auto& ij : j.at("items")) {
            EvidenceItem item;
            item.file = ij.at("file").get<std::string>();
            item.path = dir / item.file;
            item.source = parse_evidence_source(ij.value("source", std::string("other")));
            item.rank = ij.value("rank", 0);
            if (item.rank < 0) throw ManifestParseError(manifest_path.string() + ": negative rank");
            bool ok = fs::is_regular_file(item.path);
            if (ok && check_decodable) {
                try {
                    load_image(item.path);
                } catch (const DecodeError&) {
                    ok = false;
                }
            }
            if (!ok) {
                ++set.removed;
                continue;
            }
            set.items.push_back(std::move(item));
        }
    } catch (const json::exception& ex) {
        throw ManifestParseError(manifest_path.string() + ": " + ex.what());
    } catch (const ParseError& ex) {
        throw ManifestParseError(manifest_path.string() + ": " + ex.what());
    }
    if (set.removed > 0) logger()->warn("entity {}: skipped {} broken evidence item(s)", entity_id, set.removed);
    return set;
}

// First min(n, |items|) items in manifest order.
inline std::vector<EvidenceItem> select_evidence(const EvidenceSet& set, int n) {
    if (n < 1) throw std::invalid_argument("n_evidence must be >= 1");
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(n), set.items.size());
    return {set.items.begin(), set.items.begin() + static_cast<std::ptrdiff_t>(count)};
}

// ---------------------------------------------------------------------------
// Fetching

struct SearchEndpoint {
    std::string endpoint_url;
    std::string api_key_env_var;
};

struct FetcherConfig {
    std::map<EvidenceSource, SearchEndpoint> endpoints;
    double timeout_s = 30.0;

    // {"timeout_s": 30, "sources": {"google": {"endpoint_url", "api_key_env_var"}, ...}}
    static FetcherConfig from_json(const json& j) {
        FetcherConfig c;
        try {
            c.timeout_s = j.value("timeout_s", 30.0);
            for (const auto& [name, ep] : j.at("sources").items()) {
                SearchEndpoint e{ep.at("endpoint_url").get<std::string>(), ep.value("api_key_env_var", std::string{})};
                split_url(e.endpoint_url);
                c.endpoints[parse_evidence_source(name)] = std::move(e);
            }
        } catch (const json::exception& ex) {
            throw ConfigError(std::string("fetcher config: ") + ex.what());
        } catch (const ParseError& ex) {
            throw ConfigError(std::string("fetcher config: ") + ex.what());
        }
        return c;
    }
};

namespace detail {

inline std::string url_encode(std::string_view s) {
    static constexpr char hex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 0xF];
        }
    }
    return out;
}

inline std::string image_extension(std::span<const std::uint8_t> b) {
    auto starts = [&](std::initializer_list<std::uint8_t> sig) {
        return b.size() >= sig.size() && std::equal(sig.begin(), sig.end(), b.begin());
    };
    if (starts({0x89, 'P', 'N', 'G'})) return ".png";
    if (starts({0xFF, 0xD8, 0xFF})) return ".jpg";
    if (starts({'G', 'I', 'F', '8'})) return ".gif";
    if (b.size() >= 12 && std::equal(b.begin() + 8, b.begin() + 12, "WEBP")) return ".webp";
    if (starts({'B', 'M'})) return ".bmp";
    return ".img";
}

inline void write_file_atomic(const fs::path& path, std::string_view data) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
    }
    fs::rename(tmp, path);
}

}  // namespace detail

class EvidenceFetcher {
public:
    EvidenceFetcher(fs::path root, FetcherConfig config, std::shared_ptr<HttpTransport> transport)
        : root_(std::move(root)), config_(std::move(config)), transport_(std::move(transport)) {}

    // Queries the search endpoint for `source`, downloads up to `limit` images,
    // drops byte-identical duplicates (also against files already stored) and
    // appends new items to the entity's manifest, ranked by search position.
    // Returns the manifest items backing this query's results.
    std::vector<EvidenceItem> fetch(const std::string& entity_id, const std::string& query, EvidenceSource source,
                                    int limit) {
        if (limit < 1) throw std::invalid_argument("limit must be >= 1");
        auto ep_it = config_.endpoints.find(source);
        if (ep_it == config_.endpoints.end())
            throw ConfigError("no search endpoint configured for source " + std::string(to_string(source)));
        const SearchEndpoint& ep = ep_it->second;
        HttpHeaders headers;
        if (!ep.api_key_env_var.empty()) {
            const char* key = std::getenv(ep.api_key_env_var.c_str());
            if (!key) throw ConfigError("environment variable " + ep.api_key_env_var + " is not set");
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        const std::string sep = ep.endpoint_url.find('?') == std::string::npos ? "?" : "&";
        const std::string url = ep.endpoint_url + sep + "q=" + detail::url_encode(query) +
                                "&num=" + std::to_string(limit);
        const HttpResponse res = transport_->get(url, headers, config_.timeout_s);
        if (res.status == 429) throw QuotaExceeded("search quota exceeded for " + std::string(to_string(source)));
        if (res.status >= 400) throw TransportError("search request failed with HTTP " + std::to_string(res.status));
        const auto urls = parse_search_results(res.body);
        if (urls.empty()) throw NoResults("no image results for '" + query + "'");

        std::lock_guard lock(entity_mutex(entity_id));
        const fs::path dir = entity_dir(root_, entity_id);
        fs::create_directories(dir);
        json manifest = load_or_init_manifest(dir, entity_id);
        std::map<std::string, std::string> file_by_hash = existing_hashes(dir, manifest);

        std::vector<EvidenceItem> out;
        std::set<std::string> returned;
        bool changed = false;
        const auto n = std::min<std::size_t>(urls.size(), static_cast<std::size_t>(limit));
        for (std::size_t rank = 0; rank < n; ++rank) {
            HttpResponse img;
            try {
                img = transport_->get(urls[rank], {}, config_.timeout_s);
            } catch (const TransportError& ex) {
                logger()->warn("evidence download failed: {}", ex.what());
                continue;
            }
            if (img.status >= 400) {
                logger()->warn("evidence download {} returned HTTP {}", urls[rank], img.status);
                continue;
            }
            const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(img.body.data()),
                                                      img.body.size());
            try {
                decode_image(bytes);
            } catch (const DecodeError&) {
                logger()->warn("evidence download {} is not a decodable image", urls[rank]);
                continue;
            }
            const std::string hash = sha256_hex(bytes);
            std::string file;
            if (auto it = file_by_hash.find(hash); it != file_by_hash.end()) {
                file = it->second;
            } else {
                char prefix[64];
                std::snprintf(prefix, sizeof prefix, "%s_%03zu_", std::string(to_string(source)).c_str(), rank);
                file = prefix + hash.substr(0, 12) + detail::image_extension(bytes);
                detail::write_file_atomic(dir / file, img.body);
                manifest["items"].push_back(
                    {{"file", file}, {"source", std::string(to_string(source))}, {"rank", static_cast<int>(rank)}});
                file_by_hash.emplace(hash, file);
                changed = true;
            }
            if (returned.insert(file).second) out.push_back(item_for(dir, manifest, file));
        }
        if (changed) detail::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
        return out;
    }

    static std::vector<std::string> parse_search_results(const std::string& body) {
        std::vector<std::string> urls;
        try {
            const json j = json::parse(body);
            if (j.contains("results"))
                for (const auto& r : j.at("results")) urls.push_back(r.at("url").get<std::string>());
            else if (j.contains("items"))
                for (const auto& r : j.at("items")) urls.push_back(r.at("link").get<std::string>());
        } catch (const json::exception& ex) {
            throw TransportError(std::string("malformed search response: ") + ex.what());
        }
        return urls;
    }

private:
    std::mutex& entity_mutex(const std::string& entity_id) {
        std::lock_guard lock(registry_mutex_);
        auto& m = entity_mutexes_[entity_id];
        if (!m) m = std::make_unique<std::mutex>();
        return *m;
    }

    static json load_or_init_manifest(const fs::path& dir, const std::string& entity_id) {
        if (!fs::exists(dir / "manifest.json")) return json{{"entity_id", entity_id}, {"items", json::array()}};
        json m = read_manifest_json(dir / "manifest.json");
        if (!m.contains("items")) m["items"] = json::array();
        return m;
    }

    static std::map<std::string, std::string> existing_hashes(const fs::path& dir, const json& manifest) {
        std::map<std::string, std::string> out;
        for (const auto& item : manifest.at("items")) {
            const auto file = item.at("file").get<std::string>();
            if (!fs::is_regular_file(dir / file)) continue;
            out.emplace(sha256_hex(read_file_bytes(dir / file)), file);
        }
        return out;
    }

    static EvidenceItem item_for(const fs::path& dir, const json& manifest, const std::string& file) {
        for (const auto& item : manifest.at("items")) {
            if (item.at("file").get<std::string>() == file)
                return {dir / file, file, parse_evidence_source(item.value("source", std::string("other"))),
                        item.value("rank", 0)};
        }
        return {dir / file, file, EvidenceSource::other, 0};
    }

    fs::path root_;
    FetcherConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    std::mutex registry_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> entity_mutexes_;
};

}  // namespace cec
