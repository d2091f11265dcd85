#pragma once

// HTTP plumbing: an injectable transport interface, the cpp-httplib
// implementation, a chat-completions backend adapter and backend configs.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <semaphore>
#include <string>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include "cec/backend.hpp"
#include "cec/log.hpp"

namespace cec {

using HttpHeaders = std::multimap<std::string, std::string>;

struct HttpResponse {
    int status = 0;
    std::string body;
    std::string content_type;
};

// Transport failures (connection refused, timeouts) throw TransportError;
// any HTTP status is returned to the caller.
class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse get(const std::string& url, const HttpHeaders& headers, double timeout_s) = 0;
    virtual HttpResponse post(const std::string& url, const std::string& body, const std::string& content_type,
                              const HttpHeaders& headers, double timeout_s) = 0;
};

struct UrlParts {
    std::string origin;  // scheme://host[:port]
    std::string target;  // /path?query
};

inline UrlParts split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("URL lacks a scheme: " + url);
    const auto scheme = ascii_lower(url.substr(0, scheme_end));
    if (scheme != "http" && scheme != "https") throw ConfigError("unsupported URL scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport final : public HttpTransport {
public:
    HttpResponse get(const std::string& url, const HttpHeaders& headers, double timeout_s) override {
        const auto parts = split_url(url);
        httplib::Client cli(parts.origin);
        configure(cli, timeout_s);
        return convert(cli.Get(parts.target, to_headers(headers)), url);
    }

    HttpResponse post(const std::string& url, const std::string& body, const std::string& content_type,
                      const HttpHeaders& headers, double timeout_s) override {
        const auto parts = split_url(url);
        httplib::Client cli(parts.origin);
        configure(cli, timeout_s);
        return convert(cli.Post(parts.target, to_headers(headers), body, content_type), url);
    }

private:
    static void configure(httplib::Client& cli, double timeout_s) {
        const auto usec = static_cast<long>(timeout_s * 1e6);
        cli.set_connection_timeout(usec / 1000000, usec % 1000000);
        cli.set_read_timeout(usec / 1000000, usec % 1000000);
        cli.set_write_timeout(usec / 1000000, usec % 1000000);
        cli.set_follow_location(true);
    }
    static httplib::Headers to_headers(const HttpHeaders& h) { return httplib::Headers(h.begin(), h.end()); }
    static HttpResponse convert(const httplib::Result& res, const std::string& url) {
        if (!res) throw TransportError("request to " + url + " failed: " + httplib::to_string(res.error()));
        return {res->status, res->body, res->get_header_value("Content-Type")};
    }
};

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

// ---------------------------------------------------------------------------
// Backend configuration

struct BackendConfig {
    std::string kind = "openai_chat";  // openai_chat | mock
    std::string model_id;
    std::string endpoint_url;
    std::string api_key_env_var;
    bool multi_image = false;
    bool supports_logprobs = true;
    int top_k_logprobs = 20;
    double timeout_s = 120.0;
    int max_in_flight = 4;
    int max_retries = 3;
    double retry_base_s = 0.5;
    std::string system_prompt;
    std::filesystem::path mock_fixtures;

    BackendDescriptor descriptor() const { return {model_id, multi_image, supports_logprobs}; }

    // Relative fixture paths resolve against base_dir (the config file's directory).
    static BackendConfig from_json(const json& j, const std::filesystem::path& base_dir = {}) {
        BackendConfig c;
        try {
            c.kind = j.value("kind", c.kind);
            c.model_id = j.at("model_id").get<std::string>();
            c.endpoint_url = j.value("endpoint_url", std::string{});
            c.api_key_env_var = j.value("api_key_env_var", std::string{});
            c.multi_image = j.value("multi_image", false);
            c.supports_logprobs = j.value("supports_logprobs", true);
            c.top_k_logprobs = j.value("top_k_logprobs", 20);
            c.timeout_s = j.value("timeout_s", 120.0);
            c.max_in_flight = j.value("max_in_flight", 4);
            c.max_retries = j.value("max_retries", 3);
            c.retry_base_s = j.value("retry_base_s", 0.5);
            c.system_prompt = j.value("system_prompt", std::string{});
            if (j.contains("mock_fixtures")) {
                std::filesystem::path p = j.at("mock_fixtures").get<std::string>();
                c.mock_fixtures = p.is_relative() ? base_dir / p : p;
            }
        } catch (const json::exception& ex) {
            throw ConfigError(std::string("backend config: ") + ex.what());
        }
        c.validate();
        return c;
    }

    static BackendConfig from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open backend config " + path.string());
        try {
            return from_json(json::parse(in), path.parent_path());
        } catch (const json::parse_error& ex) {
            throw ConfigError("backend config " + path.string() + ": " + ex.what());
        }
    }

    void validate() const {
        if (model_id.empty()) throw ConfigError("backend config: model_id is empty");
        if (top_k_logprobs < 1) throw ConfigError("backend config: top_k_logprobs must be >= 1");
        if (timeout_s <= 0) throw ConfigError("backend config: timeout_s must be > 0");
        if (max_in_flight < 1 || max_in_flight > 1024) throw ConfigError("backend config: max_in_flight out of range");
        if (max_retries < 0) throw ConfigError("backend config: max_retries must be >= 0");
        if (kind == "mock") {
            if (mock_fixtures.empty()) throw ConfigError("mock backend needs mock_fixtures");
            if (!std::filesystem::exists(mock_fixtures))
                throw ConfigError("mock fixtures not found: " + mock_fixtures.string());
        } else if (kind == "openai_chat") {
            split_url(endpoint_url);
            if (!api_key_env_var.empty() && !std::getenv(api_key_env_var.c_str()))
                throw ConfigError("environment variable " + api_key_env_var + " is not set");
        } else {
            throw ConfigError("unknown backend kind '" + kind + "'");
        }
    }
};

// ---------------------------------------------------------------------------
// Chat-completions adapter: one user message with base64 PNG images followed
// by the question text; greedy decoding; top-k logprobs of generated tokens.

class ChatCompletionsBackend final : public Backend {
public:
    ChatCompletionsBackend(BackendConfig config, std::shared_ptr<HttpTransport> transport)
        : Backend(config.descriptor()),
          config_(std::move(config)),
          transport_(std::move(transport)),
          in_flight_(std::make_unique<std::counting_semaphore<1024>>(config_.max_in_flight)) {}

    json build_request_body(const InferenceRequest& req) const {
        json content = json::array();
        for (const auto& img : req.images) {
            content.push_back({{"type", "image_url"},
                               {"image_url", {{"url", "data:image/png;base64," + base64_encode(encode_png(img))}}}});
        }
        content.push_back({{"type", "text"}, {"text", req.prompt}});
        json messages = json::array();
        if (!config_.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", config_.system_prompt}});
        messages.push_back({{"role", "user"}, {"content", std::move(content)}});
        json body{{"model", config_.model_id},
                  {"messages", std::move(messages)},
                  {"max_tokens", req.max_new_tokens},
                  {"temperature", 0.0}};
        if (req.want_logprobs && descriptor().supports_logprobs) {
            body["logprobs"] = true;
            body["top_logprobs"] = req.top_k_logprobs;
        }
        return body;
    }

    // Picks the first generated token with visible content and returns its
    // top-k alternatives.
    static Generation parse_response(const std::string& body) {
        Generation g;
        try {
            const json j = json::parse(body);
            const auto& choice = j.at("choices").at(0);
            const auto& content = choice.at("message").at("content");
            g.text = content.is_null() ? std::string{} : content.get<std::string>();
            const auto lp = choice.find("logprobs");
            if (lp != choice.end() && lp->is_object() && lp->contains("content") && lp->at("content").is_array()) {
                for (const auto& tok : lp->at("content")) {
                    const auto text = tok.at("token").get<std::string>();
                    if (detail::normalize_token(text).empty()) continue;
                    std::vector<TokenLogprob> entries;
                    bool chosen_listed = false;
                    if (tok.contains("top_logprobs"))
                        for (const auto& alt : tok.at("top_logprobs")) {
                            entries.push_back({alt.at("token").get<std::string>(), alt.at("logprob").get<double>()});
                            chosen_listed = chosen_listed || entries.back().token == text;
                        }
                    if (!chosen_listed) entries.push_back({text, tok.at("logprob").get<double>()});
                    g.logprobs = TokenLogprobs::from_entries(std::move(entries));
                    break;
                }
            }
        } catch (const json::exception& ex) {
            throw BackendError(std::string("malformed chat-completions response: ") + ex.what());
        } catch (const std::invalid_argument& ex) {
            throw BackendError(std::string("malformed logprobs: ") + ex.what());
        }
        return g;
    }

protected:
    Generation do_query(const InferenceRequest& req) const override {
        const std::string body = build_request_body(req).dump();
        HttpHeaders headers;
        if (!config_.api_key_env_var.empty()) {
            if (const char* key = std::getenv(config_.api_key_env_var.c_str()))
                headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        in_flight_->acquire();
        struct Release {
            std::counting_semaphore<1024>& s;
            ~Release() { s.release(); }
        } release{*in_flight_};

        for (int attempt = 0;; ++attempt) {
            try {
                const HttpResponse res =
                    transport_->post(config_.endpoint_url, body, "application/json", headers, config_.timeout_s);
                if (res.status >= 400) throw BackendError(res.status, res.body);
                return parse_response(res.body);
            } catch (const TransportError& ex) {
                if (attempt >= config_.max_retries) throw;
                const double delay = backoff_delay(attempt);
                logger()->warn("transport error ({}), retry {}/{} in {:.2f}s", ex.what(), attempt + 1,
                               config_.max_retries, delay);
                std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            }
        }
    }

private:
    double backoff_delay(int attempt) const {
        thread_local std::mt19937_64 rng{std::random_device{}()};
        std::uniform_real_distribution<double> jitter(0.5, 1.5);
        return config_.retry_base_s * std::ldexp(1.0, attempt) * jitter(rng);
    }

    BackendConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    std::unique_ptr<std::counting_semaphore<1024>> in_flight_;
};

inline std::unique_ptr<Backend> make_backend(const BackendConfig& config,
                                             std::shared_ptr<HttpTransport> transport = nullptr) {
    config.validate();
    if (config.kind == "mock") {
        std::ifstream in(config.mock_fixtures);
        json fixture;
        try {
            fixture = json::parse(in);
        } catch (const json::exception& ex) {
            throw ConfigError("mock fixtures " + config.mock_fixtures.string() + ": " + ex.what());
        }
        return MockBackend::from_fixture(config.descriptor(), fixture);
    }
    if (!transport) transport = std::make_shared<HttplibTransport>();
    return std::make_unique<ChatCompletionsBackend>(config, std::move(transport));
}

}  // namespace cec
