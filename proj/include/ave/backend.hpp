#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ave/errors.hpp"
#include "ave/util.hpp"

namespace ave {

struct ModelPart {
    enum class Kind { text, image, audio, video };
    Kind kind = Kind::text;
    std::string value;
};

inline const char* to_string(ModelPart::Kind k) {
    switch (k) {
        case ModelPart::Kind::text: return "text";
        case ModelPart::Kind::image: return "image";
        case ModelPart::Kind::audio: return "audio";
        case ModelPart::Kind::video: return "video";
    }
    return "?";
}

struct ModelRequest {
    std::string system_prompt;
    std::vector<ModelPart> user_parts;
    double temperature = 0.0;
    int max_tokens = 32000;
    std::optional<std::uint64_t> seed;
};

struct ModelResponse {
    std::string text;
    long prompt_tokens = 0;
    long completion_tokens = 0;
};

// Whitespace-token estimate over everything the request sends.
inline long estimate_tokens(const ModelRequest& req) {
    long n = count_words(req.system_prompt);
    for (const auto& p : req.user_parts) n += count_words(p.value);
    return n;
}

// Canonical request bytes; scripts key responses off the hash of this.
inline std::string canonical_request(const ModelRequest& req) {
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& p : req.user_parts) {
        parts.push_back({{"kind", to_string(p.kind)}, {"value", p.value}});
    }
    nlohmann::json doc = {{"system_prompt", req.system_prompt},
                          {"user_parts", parts},
                          {"temperature", req.temperature},
                          {"max_tokens", req.max_tokens}};
    if (req.seed) doc["seed"] = *req.seed;
    return doc.dump();
}

inline std::string request_fingerprint(const ModelRequest& req) {
    return to_hex(fnv1a64(canonical_request(req)));
}

struct Pricing {
    double usd_per_1m_input = 0.0;
    double usd_per_1m_output = 0.0;
};

class PricingTable {
public:
    PricingTable() = default;

    static PricingTable from_json(const nlohmann::json& doc) {
        PricingTable t;
        for (const auto& [name, entry] : doc.items()) {
            Pricing p;
            p.usd_per_1m_input = entry.at("usd_per_1M_input_tokens").get<double>();
            p.usd_per_1m_output = entry.at("usd_per_1M_output_tokens").get<double>();
            t.table_[name] = p;
        }
        return t;
    }

    static PricingTable load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("pricing: cannot open " + path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("pricing: " + path + ": " + e.what());
        }
        return from_json(doc);
    }

    Pricing for_backend(const std::string& name) const {
        if (auto it = table_.find(name); it != table_.end()) return it->second;
        if (auto it = table_.find("default"); it != table_.end()) return it->second;
        throw ConfigError("pricing: no entry for backend '" + name + "' and no default");
    }

private:
    std::map<std::string, Pricing> table_;
};

// Shared dollar ledger. All agent roles charge the same budget. In-flight
// calls hold a reservation so concurrent callers cannot jointly overshoot;
// a call is charged once, on success.
class CostLedger {
public:
    struct Entry {
        std::string tag;
        long prompt_tokens = 0;
        long completion_tokens = 0;
        double usd = 0.0;
    };

    explicit CostLedger(double budget_usd) : budget_(budget_usd) {
        if (!(budget_usd > 0.0)) throw ConfigError("budget_usd must be > 0");
    }

    double budget_usd() const {
        std::lock_guard lock(mu_);
        return budget_;
    }

    double spent_usd() const {
        std::lock_guard lock(mu_);
        return spent_;
    }

    std::vector<Entry> entries() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

    double spent_for_tag(const std::string& tag) const {
        std::lock_guard lock(mu_);
        double total = 0.0;
        for (const auto& e : entries_) {
            if (e.tag == tag) total += e.usd;
        }
        return total;
    }

    void reserve(double projected_usd) {
        std::lock_guard lock(mu_);
        if (spent_ + reserved_ + projected_usd > budget_ + kEps) {
            throw BudgetExhausted("projected cost " + std::to_string(projected_usd) +
                                  " USD exceeds remaining budget " +
                                  std::to_string(budget_ - spent_ - reserved_) + " USD");
        }
        reserved_ += projected_usd;
    }

    void release(double projected_usd) {
        std::lock_guard lock(mu_);
        reserved_ -= projected_usd;
        if (reserved_ < 0.0) reserved_ = 0.0;
    }

    void commit(double projected_usd, const std::string& tag, long prompt_tokens,
                long completion_tokens, double usd) {
        std::lock_guard lock(mu_);
        reserved_ -= projected_usd;
        if (reserved_ < 0.0) reserved_ = 0.0;
        if (spent_ + usd > budget_ + kEps) {
            throw BudgetExhausted("actual cost " + std::to_string(usd) +
                                  " USD exceeds remaining budget");
        }
        spent_ += usd;
        entries_.push_back({tag, prompt_tokens, completion_tokens, usd});
    }

    nlohmann::json to_json() const {
        std::lock_guard lock(mu_);
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& e : entries_) {
            entries.push_back({{"tag", e.tag},
                               {"prompt_tokens", e.prompt_tokens},
                               {"completion_tokens", e.completion_tokens},
                               {"usd", e.usd}});
        }
        return {{"budget_usd", budget_}, {"spent_usd", spent_}, {"entries", entries}};
    }

private:
    static constexpr double kEps = 1e-12;
    mutable std::mutex mu_;
    double budget_;
    double spent_ = 0.0;
    double reserved_ = 0.0;
    std::vector<Entry> entries_;
};

inline double remaining_budget(const CostLedger& ledger) {
    return ledger.budget_usd() - ledger.spent_usd();
}

class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual std::string name() const = 0;
    virtual Pricing pricing() const = 0;
    // One raw completion attempt; budget, retries and accounting live in complete().
    virtual ModelResponse invoke(const ModelRequest& req) = 0;
};

struct RetryPolicy {
    int max_retries = 3;
    int base_delay_ms = 100;
};

inline double call_cost_usd(const Pricing& p, long prompt_tokens, long completion_tokens) {
    return p.usd_per_1m_input * static_cast<double>(prompt_tokens) / 1e6 +
           p.usd_per_1m_output * static_cast<double>(completion_tokens) / 1e6;
}

// Projection charges the full max_tokens for the completion; the only
// pre-call bound that cannot undershoot.
inline double projected_cost_usd(const ModelBackend& backend, const ModelRequest& req) {
    return call_cost_usd(backend.pricing(), estimate_tokens(req), req.max_tokens);
}

inline ModelResponse complete(ModelBackend& backend, const ModelRequest& req, CostLedger& ledger,
                              const std::string& tag, const RetryPolicy& retry = {}) {
    if (req.user_parts.empty()) {
        throw std::invalid_argument("ModelRequest needs at least one user part");
    }
    if (req.temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
    if (req.max_tokens <= 0) throw std::invalid_argument("max_tokens must be positive");

    const double projected = projected_cost_usd(backend, req);
    ledger.reserve(projected);
    try {
        int attempt = 0;
        for (;;) {
            try {
                ModelResponse resp = backend.invoke(req);
                double usd = call_cost_usd(backend.pricing(), resp.prompt_tokens,
                                           resp.completion_tokens);
                ledger.commit(projected, tag, resp.prompt_tokens, resp.completion_tokens, usd);
                return resp;
            } catch (const TransportError&) {
                if (attempt >= retry.max_retries) throw;
                if (retry.base_delay_ms > 0) {
                    std::this_thread::sleep_for(
                        std::chrono::milliseconds(retry.base_delay_ms * (1 << attempt)));
                }
                ++attempt;
            }
        }
    } catch (...) {
        ledger.release(projected);
        throw;
    }
}

// Deterministic response sources, resolved in order:
//   1. exact request fingerprint
//   2. substring rules, first match wins
//   3. FIFO queue
//   4. default text
// A miss is a ProtocolError. Responses are truncated to max_tokens words so
// the actual charge never exceeds the projection.
class ScriptedBackend : public ModelBackend {
public:
    struct Rule {
        std::vector<std::string> contains;
        std::string respond;
    };

    explicit ScriptedBackend(Pricing pricing = {}, std::string name = "stub")
        : pricing_(pricing), name_(std::move(name)) {}

    std::string name() const override { return name_; }
    Pricing pricing() const override { return pricing_; }

    void add_fingerprint_response(const std::string& fingerprint, std::string text) {
        by_fingerprint_[fingerprint] = std::move(text);
    }
    void add_rule(Rule rule) { rules_.push_back(std::move(rule)); }
    void push_queue(std::string text) { queue_.push_back(std::move(text)); }
    void set_default(std::string text) { default_ = std::move(text); }

    static ScriptedBackend from_file(const std::string& path, Pricing pricing,
                                     std::string name = "stub") {
        std::ifstream in(path);
        if (!in) throw ConfigError("stub script: cannot open " + path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("stub script: " + path + ": " + e.what());
        }
        ScriptedBackend b(pricing, std::move(name));
        if (doc.contains("by_fingerprint")) {
            for (const auto& [fp, text] : doc["by_fingerprint"].items()) {
                b.add_fingerprint_response(fp, text.get<std::string>());
            }
        }
        if (doc.contains("rules")) {
            for (const auto& r : doc["rules"]) {
                Rule rule;
                rule.contains = r.at("contains").get<std::vector<std::string>>();
                rule.respond = r.at("respond").get<std::string>();
                b.add_rule(std::move(rule));
            }
        }
        if (doc.contains("queue")) {
            for (const auto& t : doc["queue"]) b.push_queue(t.get<std::string>());
        }
        if (doc.contains("default")) b.set_default(doc["default"].get<std::string>());
        return b;
    }

    ModelResponse invoke(const ModelRequest& req) override {
        std::lock_guard lock(mu_);
        std::string text;
        if (auto it = by_fingerprint_.find(request_fingerprint(req)); it != by_fingerprint_.end()) {
            text = it->second;
        } else if (auto rule = match_rule(req)) {
            text = *rule;
        } else if (!queue_.empty()) {
            text = queue_.front();
            queue_.pop_front();
        } else if (default_) {
            text = *default_;
        } else {
            throw ProtocolError("scripted backend '" + name_ + "': no response for request " +
                                request_fingerprint(req));
        }
        return make_response(req, truncate_words(text, req.max_tokens));
    }

protected:
    ModelResponse make_response(const ModelRequest& req, std::string text) const {
        ModelResponse resp;
        resp.prompt_tokens = estimate_tokens(req);
        resp.completion_tokens = count_words(text);
        resp.text = std::move(text);
        return resp;
    }

    static std::string truncate_words(const std::string& text, int max_words) {
        if (count_words(text) <= max_words) return text;
        std::istringstream in(text);
        std::string word, out;
        int n = 0;
        while (n < max_words && in >> word) {
            if (n) out += ' ';
            out += word;
            ++n;
        }
        return out;
    }

private:
    std::optional<std::string> match_rule(const ModelRequest& req) const {
        std::string haystack = req.system_prompt;
        for (const auto& p : req.user_parts) {
            haystack += '\n';
            haystack += p.value;
        }
        for (const auto& rule : rules_) {
            bool all = true;
            for (const auto& needle : rule.contains) {
                if (haystack.find(needle) == std::string::npos) {
                    all = false;
                    break;
                }
            }
            if (all) return rule.respond;
        }
        return std::nullopt;
    }

    Pricing pricing_;
    std::string name_;
    std::mutex mu_;
    std::map<std::string, std::string> by_fingerprint_;
    std::vector<Rule> rules_;
    std::deque<std::string> queue_;
    std::optional<std::string> default_;
};

// Test helper backend: response text computed by a callback.
class CallbackBackend : public ModelBackend {
public:
    using Fn = std::function<std::string(const ModelRequest&)>;

    CallbackBackend(Fn fn, Pricing pricing = {}, std::string name = "callback")
        : fn_(std::move(fn)), pricing_(pricing), name_(std::move(name)) {}

    std::string name() const override { return name_; }
    Pricing pricing() const override { return pricing_; }

    ModelResponse invoke(const ModelRequest& req) override {
        std::string text = fn_(req);
        if (count_words(text) > req.max_tokens) {
            std::istringstream in(text);
            std::string word, out;
            int n = 0;
            while (n < req.max_tokens && in >> word) {
                if (n) out += ' ';
                out += word;
                ++n;
            }
            text = out;
        }
        ModelResponse resp;
        resp.prompt_tokens = estimate_tokens(req);
        resp.completion_tokens = count_words(text);
        resp.text = std::move(text);
        return resp;
    }

private:
    Fn fn_;
    Pricing pricing_;
    std::string name_;
};

// Everything one agent role needs to issue calls: which backend, which
// ledger tag, and the request knobs.
struct AgentEndpoint {
    ModelBackend* backend = nullptr;
    CostLedger* ledger = nullptr;
    std::string tag;
    double temperature = 0.0;
    int max_tokens = 32000;
    std::uint64_t base_seed = 0;
    RetryPolicy retry;

    ModelRequest make_request(std::string system_prompt, std::vector<ModelPart> parts,
                              std::optional<std::uint64_t> seed = std::nullopt) const {
        ModelRequest req;
        req.system_prompt = std::move(system_prompt);
        req.user_parts = std::move(parts);
        req.temperature = temperature;
        req.max_tokens = max_tokens;
        req.seed = seed ? seed : std::optional<std::uint64_t>(base_seed);
        return req;
    }

    ModelResponse call(const ModelRequest& req) const {
        return complete(*backend, req, *ledger, tag, retry);
    }
};

} // namespace ave
