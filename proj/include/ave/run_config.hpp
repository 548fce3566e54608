#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "ave/backend.hpp"
#include "ave/errors.hpp"
#include "ave/http_backend.hpp"
#include "ave/metrics.hpp"
#include "ave/optimizer.hpp"
#include "ave/taxonomy.hpp"

namespace ave {

struct BackendRoleConfig {
    std::string kind = "stub";  // stub | http
    std::string name = "stub";  // pricing key
    std::string script;         // stub script file (optional)
    std::string base_url;
    std::string model;
    std::string path = "/v1/chat/completions";
    std::string api_key_env = "AVE_API_KEY";
};

struct RunConfig {
    std::filesystem::path dataset_path;
    std::filesystem::path assets_dir;
    std::filesystem::path run_dir = "runs";

    BackendRoleConfig judge;
    BackendRoleConfig match;
    BackendRoleConfig optimizer;
    BackendRoleConfig understanding;
    BackendRoleConfig target_judge;  // cross-model adaptation target

    MetricKind metric = MetricKind::f1;
    int batch_size = 4;
    int votes = 5;
    double budget_usd = 30.0;
    std::uint64_t seed = 0;
    SelectionStrategy strategy = SelectionStrategy::best_of_table;
    std::size_t feedback_char_budget = 20000;
    int max_iterations = 0;
    int max_tokens = 32000;
    double temperature = 0.0;
    bool fixed_clock = false;

    std::filesystem::path taxonomy_path() const { return assets_dir / "taxonomy.json"; }
    std::filesystem::path pricing_path() const { return assets_dir / "pricing.json"; }
    std::filesystem::path prompt_path(const std::string& name) const {
        return assets_dir / "prompts" / name;
    }
};

namespace detail {

inline BackendRoleConfig parse_role(const nlohmann::json& doc) {
    BackendRoleConfig r;
    r.kind = doc.value("kind", r.kind);
    r.name = doc.value("name", r.name);
    r.script = doc.value("script", r.script);
    r.base_url = doc.value("base_url", r.base_url);
    r.model = doc.value("model", r.model);
    r.path = doc.value("path", r.path);
    r.api_key_env = doc.value("api_key_env", r.api_key_env);
    return r;
}

} // namespace detail

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    RunConfig cfg;
    const auto& paths = doc.at("paths");
    cfg.dataset_path = paths.at("dataset").get<std::string>();
    cfg.assets_dir = paths.at("assets_dir").get<std::string>();
    if (paths.contains("run_dir")) cfg.run_dir = paths.at("run_dir").get<std::string>();

    if (doc.contains("backends")) {
        const auto& b = doc["backends"];
        if (b.contains("judge")) cfg.judge = detail::parse_role(b["judge"]);
        if (b.contains("match")) cfg.match = detail::parse_role(b["match"]);
        if (b.contains("optimizer")) cfg.optimizer = detail::parse_role(b["optimizer"]);
        if (b.contains("understanding")) cfg.understanding = detail::parse_role(b["understanding"]);
        if (b.contains("target_judge")) cfg.target_judge = detail::parse_role(b["target_judge"]);
    }

    if (doc.contains("metric")) cfg.metric = metric_kind_from_string(doc["metric"].get<std::string>());
    cfg.batch_size = doc.value("batch_size", cfg.batch_size);
    cfg.votes = doc.value("votes", cfg.votes);
    cfg.budget_usd = doc.value("budget_usd", cfg.budget_usd);
    cfg.seed = doc.value("seed", cfg.seed);
    if (doc.contains("strategy")) {
        cfg.strategy = selection_strategy_from_string(doc["strategy"].get<std::string>());
    }
    cfg.feedback_char_budget = doc.value("feedback_char_budget", cfg.feedback_char_budget);
    cfg.max_iterations = doc.value("max_iterations", cfg.max_iterations);
    cfg.max_tokens = doc.value("max_tokens", cfg.max_tokens);
    cfg.temperature = doc.value("temperature", cfg.temperature);
    cfg.fixed_clock = doc.value("fixed_clock", cfg.fixed_clock);
    return cfg;
}

inline void validate_run_config(const RunConfig& cfg) {
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.votes < 1) throw ConfigError("votes must be >= 1");
    if (!(cfg.budget_usd > 0.0)) throw ConfigError("budget_usd must be > 0");
    for (const auto& p : {cfg.dataset_path, cfg.assets_dir, cfg.taxonomy_path(),
                          cfg.pricing_path()}) {
        if (!std::filesystem::exists(p)) {
            throw ConfigError("required path does not exist: " + p.string());
        }
    }
}

inline std::unique_ptr<ModelBackend> make_backend(const BackendRoleConfig& role,
                                                  const PricingTable& pricing) {
    if (role.kind == "stub") {
        Pricing p = pricing.for_backend(role.name);
        if (!role.script.empty()) {
            return std::make_unique<ScriptedBackend>(
                ScriptedBackend::from_file(role.script, p, role.name));
        }
        auto b = std::make_unique<ScriptedBackend>(p, role.name);
        b->set_default("NONE");
        return b;
    }
    if (role.kind == "http") {
        HttpBackendConfig hc;
        hc.name = role.name;
        hc.base_url = role.base_url;
        hc.path = role.path;
        hc.model = role.model;
        hc.api_key_env = role.api_key_env;
        hc.pricing = pricing.for_backend(role.name);
        return std::make_unique<HttpBackend>(hc);
    }
    throw ConfigError("unknown backend kind '" + role.kind + "' (expected stub|http)");
}

inline std::string load_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace ave
