#pragma once

// Model backends and the yes/no classification built on top of them.
//
// A backend answers an InferenceRequest with generated text and, when it can,
// the top-k log-probabilities of the first generated content token. classify()
// reduces those log-probabilities to a two-class distribution (constrained
// path) and falls back to parsing the generated text (freeform path).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <openssl/evp.h>

#include "cec/core.hpp"
#include "cec/raster.hpp"

namespace cec {

struct InferenceRequest {
    std::string prompt;
    std::vector<Raster> images;  // news image first; evidence second in series mode
    int max_new_tokens = 256;
    bool want_logprobs = false;
    int top_k_logprobs = 20;
};

struct TokenLogprob {
    std::string token;
    double logprob = 0.0;  // natural log, <= 0

    bool operator==(const TokenLogprob&) const = default;
};

// Top-k alternatives for the first generated content token, sorted by
// logprob descending, unique by token text.
class TokenLogprobs {
public:
    TokenLogprobs() = default;

    // Duplicate token texts (distinct vocabulary ids that decode to the same
    // string) are merged by adding their probability mass.
    static TokenLogprobs from_entries(std::vector<TokenLogprob> entries) {
        std::map<std::string, double> merged;
        for (auto& e : entries) {
            if (std::isnan(e.logprob) || e.logprob > 1e-6)
                throw std::invalid_argument("invalid logprob for token '" + e.token + "'");
            const double lp = std::min(e.logprob, 0.0);
            auto [it, inserted] = merged.try_emplace(e.token, lp);
            if (!inserted) it->second = log_add(it->second, lp);
        }
        TokenLogprobs out;
        for (auto& [tok, lp] : merged) out.entries_.push_back({tok, lp});
        std::stable_sort(out.entries_.begin(), out.entries_.end(),
                         [](const TokenLogprob& a, const TokenLogprob& b) { return a.logprob > b.logprob; });
        return out;
    }

    std::span<const TokenLogprob> entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

private:
    static double log_add(double a, double b) {
        if (a == -std::numeric_limits<double>::infinity()) return b;
        if (b == -std::numeric_limits<double>::infinity()) return a;
        const double hi = std::max(a, b), lo = std::min(a, b);
        return std::min(0.0, hi + std::log1p(std::exp(lo - hi)));
    }

    std::vector<TokenLogprob> entries_;
};

struct BackendDescriptor {
    std::string model_id;
    bool multi_image = false;
    bool supports_logprobs = true;
};

struct Generation {
    std::string text;
    std::optional<TokenLogprobs> logprobs;
};

class Backend {
public:
    explicit Backend(BackendDescriptor descriptor) : descriptor_(std::move(descriptor)) {}
    virtual ~Backend() = default;
    Backend(const Backend&) = delete;
    Backend& operator=(const Backend&) = delete;

    const BackendDescriptor& descriptor() const { return descriptor_; }

    // Thread-safe. Logprobs are present iff requested and supported.
    Generation query(const InferenceRequest& request) const {
        if (request.images.empty()) throw CapabilityError("inference request carries no image");
        if (request.images.size() > 1 && !descriptor_.multi_image)
            throw CapabilityError("backend '" + descriptor_.model_id + "' accepts a single image, got " +
                                  std::to_string(request.images.size()));
        if (request.max_new_tokens < 1 || request.top_k_logprobs < 1)
            throw std::invalid_argument("max_new_tokens and top_k_logprobs must be positive");
        Generation g = do_query(request);
        if (!request.want_logprobs || !descriptor_.supports_logprobs) g.logprobs.reset();
        return g;
    }

protected:
    virtual Generation do_query(const InferenceRequest& request) const = 0;

private:
    BackendDescriptor descriptor_;
};

// ---------------------------------------------------------------------------
// Answer classes

namespace detail {

// Strips leading whitespace and tokenizer word-boundary markers
// ("▁" SentencePiece, "Ġ"/"Ċ" byte-level BPE), then lowercases ASCII.
inline std::string normalize_token(std::string_view tok) {
    static constexpr std::array<std::string_view, 3> markers{"\xE2\x96\x81", "\xC4\xA0", "\xC4\x8A"};
    bool stripped = true;
    while (stripped && !tok.empty()) {
        stripped = false;
        if (std::isspace(static_cast<unsigned char>(tok.front()))) {
            tok.remove_prefix(1);
            stripped = true;
            continue;
        }
        for (auto m : markers) {
            if (tok.starts_with(m)) {
                tok.remove_prefix(m.size());
                stripped = true;
                break;
            }
        }
    }
    return ascii_lower(tok);
}

}  // namespace detail

enum class AnswerClass { yes, no, other };

inline AnswerClass token_class(std::string_view token) {
    const auto t = detail::normalize_token(token);
    if (t == "yes") return AnswerClass::yes;
    if (t == "no") return AnswerClass::no;
    return AnswerClass::other;
}

// p_yes = S_yes / (S_yes + S_no), S_c = sum of exp(logprob) over class members.
// Evaluated relative to the largest class logprob so a uniform shift of all
// logprobs cancels exactly. nullopt when no class token carries mass.
inline std::optional<ClassProbs> class_probs_from_logprobs(const TokenLogprobs& lp) {
    double max_lp = -std::numeric_limits<double>::infinity();
    for (const auto& e : lp.entries())
        if (token_class(e.token) != AnswerClass::other) max_lp = std::max(max_lp, e.logprob);
    if (max_lp == -std::numeric_limits<double>::infinity()) return std::nullopt;

    double s_yes = 0.0, s_no = 0.0;
    for (const auto& e : lp.entries()) {
        switch (token_class(e.token)) {
            case AnswerClass::yes: s_yes += std::exp(e.logprob - max_lp); break;
            case AnswerClass::no: s_no += std::exp(e.logprob - max_lp); break;
            case AnswerClass::other: break;
        }
    }
    const double total = s_yes + s_no;
    if (total <= 0.0) return std::nullopt;
    return ClassProbs::from_yes(s_yes / total, ProbSource::constrained);
}

enum class Answer { yes, no, unknown };

// Lowercased, trimmed, leading punctuation removed; yes/no must be a whole
// leading word ("not visible" and "yesterday" are unknown).
inline Answer parse_answer(std::string_view text) {
    std::size_t i = 0;
    while (i < text.size() && !std::isalnum(static_cast<unsigned char>(text[i]))) ++i;
    const std::string rest = ascii_lower(text.substr(i));
    auto leading_word = [&](std::string_view w) {
        if (!std::string_view(rest).starts_with(w)) return false;
        return rest.size() == w.size() || !std::isalnum(static_cast<unsigned char>(rest[w.size()]));
    };
    if (leading_word("yes")) return Answer::yes;
    if (leading_word("no")) return Answer::no;
    return Answer::unknown;
}

struct UnknownAnswer {
    std::string text;
};

using Classification = std::variant<ClassProbs, UnknownAnswer>;

struct QueryOptions {
    int max_new_tokens = 256;
    int top_k_logprobs = 20;
};

inline Classification classify(const Backend& backend, std::string prompt, std::vector<Raster> images,
                               const QueryOptions& opts = {}) {
    InferenceRequest req{std::move(prompt), std::move(images), opts.max_new_tokens,
                         backend.descriptor().supports_logprobs, opts.top_k_logprobs};
    const Generation g = backend.query(req);
    if (g.logprobs) {
        if (auto probs = class_probs_from_logprobs(*g.logprobs)) return *probs;
    }
    switch (parse_answer(g.text)) {
        case Answer::yes: return ClassProbs::from_yes(1.0, ProbSource::freeform_parsed);
        case Answer::no: return ClassProbs::from_yes(0.0, ProbSource::freeform_parsed);
        case Answer::unknown: break;
    }
    return UnknownAnswer{g.text};
}

// ---------------------------------------------------------------------------
// Request digest: SHA-256 over the prompt and the decoded pixels of each image.

namespace detail {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
    void update(std::string_view s) { update(s.data(), s.size()); }
    void update_u32(std::uint32_t v) {
        const std::array<std::uint8_t, 4> b{static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                                            static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
        update(b.data(), b.size());
    }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, md.data(), &len);
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out += digits[md[i] >> 4];
            out += digits[md[i] & 0xF];
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

}  // namespace detail

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    detail::Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

inline std::string request_digest(std::string_view prompt, std::span<const Raster> images) {
    detail::Sha256 h;
    h.update("cec-request-v1");
    h.update_u32(static_cast<std::uint32_t>(prompt.size()));
    h.update(prompt);
    h.update_u32(static_cast<std::uint32_t>(images.size()));
    for (const auto& img : images) {
        h.update_u32(static_cast<std::uint32_t>(img.width));
        h.update_u32(static_cast<std::uint32_t>(img.height));
        h.update(img.rgb.data(), img.rgb.size());
    }
    return h.hex();
}

inline std::string request_digest(const InferenceRequest& req) { return request_digest(req.prompt, req.images); }

// ---------------------------------------------------------------------------
// Mock backend

struct MockResponse {
    std::string text;
    std::vector<TokenLogprob> logprobs;

    // "Yes"/"No" text by argmax (0.5 reads "No") with logprobs ln p and ln(1-p).
    static MockResponse with_p_yes(double p) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p_yes outside [0,1]");
        MockResponse r{p > 0.5 ? "Yes" : "No", {}};
        if (p > 0.0) r.logprobs.push_back({"Yes", std::log(p)});
        if (p < 1.0) r.logprobs.push_back({"No", std::log1p(-p)});
        return r;
    }
    static MockResponse text_only(std::string text) { return MockResponse{std::move(text), {}}; }
};

class MockBackend final : public Backend {
public:
    using Responder = std::function<MockResponse(const InferenceRequest&, const std::string& digest)>;

    MockBackend(BackendDescriptor descriptor, Responder responder)
        : Backend(std::move(descriptor)), responder_(std::move(responder)) {}

    static Responder always(MockResponse response) {
        return [response = std::move(response)](const InferenceRequest&, const std::string&) { return response; };
    }

    // Fixture JSON:
    //   {"responses": {"<digest>": R}, "rules": [{"prompt_contains": "...", "response": R}], "default": R}
    // where R is {"text", "logprobs": [{"token", "logprob"}]}, {"p_yes": p[, "text"]}
    // or {"hashed": {"min_p_yes": a, "max_p_yes": b}} (p_yes derived from the digest).
    static std::unique_ptr<MockBackend> from_fixture(BackendDescriptor descriptor, const json& fixture) {
        std::map<std::string, json> by_digest;
        std::vector<std::pair<std::string, json>> rules;
        std::optional<json> fallback;
        try {
            if (fixture.contains("responses"))
                for (const auto& [k, v] : fixture.at("responses").items()) by_digest.emplace(k, v);
            if (fixture.contains("rules"))
                for (const auto& r : fixture.at("rules"))
                    rules.emplace_back(r.at("prompt_contains").get<std::string>(), r.at("response"));
            if (fixture.contains("default")) fallback = fixture.at("default");
            // Parse once up front so malformed fixtures fail at load time.
            for (const auto& [k, v] : by_digest) response_from_json(v, k);
            for (const auto& [k, v] : rules) response_from_json(v, std::string(64, '0'));
            if (fallback) response_from_json(*fallback, std::string(64, '0'));
        } catch (const json::exception& ex) {
            throw ConfigError(std::string("mock fixture: ") + ex.what());
        }
        Responder responder = [by_digest = std::move(by_digest), rules = std::move(rules),
                               fallback = std::move(fallback)](const InferenceRequest& req, const std::string& digest) {
            if (auto it = by_digest.find(digest); it != by_digest.end()) return response_from_json(it->second, digest);
            for (const auto& [needle, resp] : rules)
                if (req.prompt.find(needle) != std::string::npos) return response_from_json(resp, digest);
            if (fallback) return response_from_json(*fallback, digest);
            throw BackendError("mock fixture has no response for request " + digest);
        };
        return std::make_unique<MockBackend>(std::move(descriptor), std::move(responder));
    }

    static MockResponse response_from_json(const json& j, const std::string& digest) {
        if (j.contains("hashed")) {
            const auto& h = j.at("hashed");
            const double lo = h.value("min_p_yes", 0.0), hi = h.value("max_p_yes", 1.0);
            // Top 52 bits of the digest give a uniform value in [0,1).
            const std::uint64_t bits = std::stoull(digest.substr(0, 13), nullptr, 16);
            const double u = static_cast<double>(bits) / static_cast<double>(std::uint64_t{1} << 52);
            return with_text(MockResponse::with_p_yes(lo + (hi - lo) * u), j);
        }
        if (j.contains("p_yes")) return with_text(MockResponse::with_p_yes(j.at("p_yes").get<double>()), j);
        MockResponse r{j.at("text").get<std::string>(), {}};
        if (j.contains("logprobs"))
            for (const auto& e : j.at("logprobs"))
                r.logprobs.push_back({e.at("token").get<std::string>(), e.at("logprob").get<double>()});
        return r;
    }

protected:
    Generation do_query(const InferenceRequest& request) const override {
        const MockResponse r = responder_(request, request_digest(request));
        Generation g{r.text, std::nullopt};
        if (!r.logprobs.empty()) g.logprobs = TokenLogprobs::from_entries(r.logprobs);
        return g;
    }

private:
    static MockResponse with_text(MockResponse r, const json& j) {
        if (j.contains("text")) r.text = j.at("text").get<std::string>();
        return r;
    }

    Responder responder_;
};

}  // namespace cec
