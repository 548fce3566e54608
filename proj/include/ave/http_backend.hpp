#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "ave/backend.hpp"
#include "ave/errors.hpp"

namespace ave {

struct HttpBackendConfig {
    std::string name = "http";
    std::string base_url;                     // e.g. http://localhost:8080
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key_env = "AVE_API_KEY";  // credentials come from the environment
    Pricing pricing;
    int timeout_seconds = 120;
};

// Chat-completions style backend. Text parts go through verbatim; image refs
// become image_url entries; audio/video refs are passed as tagged text lines
// so providers without native support still see them.
class HttpBackend : public ModelBackend {
public:
    explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
        if (config_.base_url.empty()) throw ConfigError("http backend: base_url is required");
        client_ = std::make_unique<httplib::Client>(config_.base_url);
        client_->set_connection_timeout(config_.timeout_seconds);
        client_->set_read_timeout(config_.timeout_seconds);
    }

    std::string name() const override { return config_.name; }
    Pricing pricing() const override { return config_.pricing; }

    ModelResponse invoke(const ModelRequest& req) override {
        nlohmann::json body;
        body["model"] = config_.model;
        body["temperature"] = req.temperature;
        body["max_tokens"] = req.max_tokens;
        if (req.seed) body["seed"] = *req.seed;

        nlohmann::json content = nlohmann::json::array();
        for (const auto& part : req.user_parts) {
            switch (part.kind) {
                case ModelPart::Kind::text:
                    content.push_back({{"type", "text"}, {"text", part.value}});
                    break;
                case ModelPart::Kind::image:
                    content.push_back(
                        {{"type", "image_url"}, {"image_url", {{"url", part.value}}}});
                    break;
                case ModelPart::Kind::audio:
                    content.push_back({{"type", "text"}, {"text", "[audio] " + part.value}});
                    break;
                case ModelPart::Kind::video:
                    content.push_back({{"type", "text"}, {"text", "[video] " + part.value}});
                    break;
            }
        }
        body["messages"] = nlohmann::json::array(
            {{{"role", "system"}, {"content", req.system_prompt}},
             {{"role", "user"}, {"content", content}}});

        httplib::Headers headers = {{"Content-Type", "application/json"}};
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        auto result = client_->Post(config_.path, headers, body.dump(), "application/json");
        if (!result) {
            throw TransportError("http backend '" + config_.name +
                                 "': " + httplib::to_string(result.error()));
        }
        if (result->status == 429 || result->status >= 500) {
            throw TransportError("http backend '" + config_.name + "': status " +
                                 std::to_string(result->status));
        }
        if (result->status != 200) {
            throw ProtocolError("http backend '" + config_.name + "': status " +
                                std::to_string(result->status) + ": " + result->body);
        }
        return parse_payload(req, result->body);
    }

private:
    ModelResponse parse_payload(const ModelRequest& req, const std::string& body) const {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError("http backend '" + config_.name +
                                "': unparseable payload: " + std::string(e.what()));
        }
        if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty() ||
            !doc["choices"][0].contains("message") ||
            !doc["choices"][0]["message"].contains("content") ||
            !doc["choices"][0]["message"]["content"].is_string()) {
            throw ProtocolError("http backend '" + config_.name +
                                "': payload missing choices[0].message.content");
        }
        ModelResponse resp;
        resp.text = doc["choices"][0]["message"]["content"].get<std::string>();
        if (doc.contains("usage") && doc["usage"].is_object()) {
            resp.prompt_tokens = doc["usage"].value("prompt_tokens", 0L);
            resp.completion_tokens = doc["usage"].value("completion_tokens", 0L);
        }
        if (resp.prompt_tokens <= 0) resp.prompt_tokens = estimate_tokens(req);
        if (resp.completion_tokens <= 0) resp.completion_tokens = count_words(resp.text);
        return resp;
    }

    HttpBackendConfig config_;
    std::unique_ptr<httplib::Client> client_;
};

} // namespace ave
