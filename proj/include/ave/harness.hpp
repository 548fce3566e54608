#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ave/backend.hpp"
#include "ave/dataset.hpp"
#include "ave/errors.hpp"

namespace ave {

enum class Modality { text, image, audio, video };

inline const char* to_string(Modality m) {
    switch (m) {
        case Modality::text: return "text";
        case Modality::image: return "image";
        case Modality::audio: return "audio";
        case Modality::video: return "video";
    }
    return "?";
}

inline Modality modality_from_string(std::string_view s) {
    if (s == "text") return Modality::text;
    if (s == "image") return Modality::image;
    if (s == "audio") return Modality::audio;
    if (s == "video") return Modality::video;
    throw ConfigError("unknown modality '" + std::string(s) + "'");
}

// Which input modalities a video model accepts. Text is always present.
struct CapabilityProfile {
    std::string model_name;
    std::set<Modality> accepts{Modality::text};
};

inline std::vector<CapabilityProfile> load_profiles(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("profiles: cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("profiles: " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw ConfigError("profiles: expected a JSON array");
    std::vector<CapabilityProfile> out;
    for (const auto& rec : doc) {
        CapabilityProfile p;
        p.model_name = rec.at("model_name").get<std::string>();
        for (const auto& m : rec.at("accepts")) {
            p.accepts.insert(modality_from_string(m.get<std::string>()));
        }
        p.accepts.insert(Modality::text);
        out.push_back(std::move(p));
    }
    return out;
}

inline std::set<Modality> sample_modalities(const Sample& s) {
    std::set<Modality> m{Modality::text};
    if (!s.context.image_refs.empty()) m.insert(Modality::image);
    if (!s.context.audio_refs.empty()) m.insert(Modality::audio);
    if (!s.context.video_refs.empty()) m.insert(Modality::video);
    return m;
}

struct PassRateReport {
    struct Row {
        std::string model_name;
        std::string category;
        int passes = 0;
        int cases = 0;
        double pass_rate = 0.0;  // passes / cases, in [0, 1]
    };
    std::vector<Row> rows;
};

// Group-wise pass rates. Models with identical capability sets form a group;
// a case counts for a model only if the whole group accepts its modalities,
// so rows within a group are computed on an identical case set. Rows with an
// empty denominator are not emitted.
inline PassRateReport compute_pass_rates(const std::vector<Sample>& samples,
                                         const std::vector<CapabilityProfile>& profiles) {
    std::map<std::string, std::set<Modality>> accepts_by_model;
    for (const auto& p : profiles) accepts_by_model[p.model_name] = p.accepts;

    std::map<std::pair<std::string, std::string>, std::pair<int, int>> counts;
    for (const auto& s : samples) {
        if (!s.verdict) {
            throw std::invalid_argument("sample '" + s.id + "' has no verdict");
        }
        auto it = accepts_by_model.find(s.model_name);
        if (it == accepts_by_model.end()) {
            throw DatasetError("sample '" + s.id + "' references unknown model '" +
                               s.model_name + "'");
        }
        auto needed = sample_modalities(s);
        bool accepted = std::includes(it->second.begin(), it->second.end(), needed.begin(),
                                      needed.end());
        if (!accepted) continue;  // excluded for the whole capability group
        auto& [passes, cases] = counts[{s.model_name, Taxonomy::normalize(s.category)}];
        ++cases;
        if (*s.verdict == Verdict::pass) ++passes;
    }

    PassRateReport report;
    for (const auto& [key, pc] : counts) {
        PassRateReport::Row row;
        row.model_name = key.first;
        row.category = key.second;
        row.passes = pc.first;
        row.cases = pc.second;
        row.pass_rate = static_cast<double>(pc.first) / static_cast<double>(pc.second);
        report.rows.push_back(std::move(row));
    }
    return report;
}

inline std::string pass_rate_csv(const PassRateReport& report) {
    std::ostringstream out;
    out << "model_name,category,passes,cases,pass_rate_pct\n";
    out.precision(17);
    for (const auto& r : report.rows) {
        double pct = static_cast<double>(r.passes) * 100.0 / static_cast<double>(r.cases);
        out << r.model_name << ',' << r.category << ',' << r.passes << ',' << r.cases << ','
            << pct << '\n';
    }
    return out.str();
}

inline nlohmann::json pass_rate_json(const PassRateReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"model_name", r.model_name},
                        {"category", r.category},
                        {"passes", r.passes},
                        {"cases", r.cases},
                        {"pass_rate", r.pass_rate},
                        {"pass_rate_pct",
                         static_cast<double>(r.passes) * 100.0 / static_cast<double>(r.cases)}});
    }
    return rows;
}

struct VerdictRecord {
    std::string sample_id;
    std::string model_name;
    Verdict verdict = Verdict::fail;
};

// Verdict file: JSON Lines {sample_id, model_name, verdict}.
inline std::vector<VerdictRecord> load_verdicts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("verdicts: cannot open " + path);
    std::vector<VerdictRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DatasetError("verdicts line " + std::to_string(line_no) + ": " + e.what());
        }
        VerdictRecord v;
        v.sample_id = rec.at("sample_id").get<std::string>();
        v.model_name = rec.at("model_name").get<std::string>();
        auto parsed = verdict_from_string(rec.at("verdict").get<std::string>());
        if (!parsed) {
            throw DatasetError("verdicts line " + std::to_string(line_no) +
                               ": verdict must be 'pass' or 'fail'");
        }
        v.verdict = *parsed;
        out.push_back(std::move(v));
    }
    return out;
}

// Joins verdict records onto benchmark cases: one evaluated sample per
// record, carrying that record's model and verdict.
inline std::vector<Sample> apply_verdicts(const std::vector<Sample>& dataset,
                                          const std::vector<VerdictRecord>& verdicts) {
    std::map<std::string, const Sample*> by_id;
    for (const auto& s : dataset) by_id[s.id] = &s;
    std::vector<Sample> out;
    out.reserve(verdicts.size());
    for (const auto& v : verdicts) {
        auto it = by_id.find(v.sample_id);
        if (it == by_id.end()) {
            throw DatasetError("verdict references unknown sample id '" + v.sample_id + "'");
        }
        Sample s = *it->second;
        s.model_name = v.model_name;
        s.verdict = v.verdict;
        out.push_back(std::move(s));
    }
    return out;
}

// One understanding-model call that interprets the context and emits a
// rewritten instruction. The stored context is never mutated.
inline std::string rewrite_instruction(const ContextBundle& context,
                                       const AgentEndpoint& understanding,
                                       const std::string& rewrite_prompt) {
    std::vector<ModelPart> parts;
    parts.push_back({ModelPart::Kind::text, context.instruction});
    for (const auto& r : context.image_refs) parts.push_back({ModelPart::Kind::image, r});
    for (const auto& r : context.audio_refs) parts.push_back({ModelPart::Kind::audio, r});
    for (const auto& r : context.video_refs) parts.push_back({ModelPart::Kind::video, r});
    ModelResponse resp =
        understanding.call(understanding.make_request(rewrite_prompt, std::move(parts)));
    std::string text = trim(resp.text);
    if (text.empty()) throw RewriteError("understanding model returned an empty rewrite");
    return text;
}

struct InteractionTurn {
    std::string feedback_in;
    std::string script_out;
    bool pass = false;
};

struct EpisodeConfig {
    std::string goal;
    std::string initial_video_ref;
    int max_turns = 1;
    std::uint64_t seed = 0;
};

// A capped feedback loop: each turn the environment hands back feedback, the
// model answers with a new video script, and a verdict decides success. The
// episode stops at the first passing turn.
struct InteractionEpisode {
    std::string goal;
    std::string initial_video_ref;
    int max_turns = 1;
    std::uint64_t seed = 0;
    std::vector<InteractionTurn> turns;
    std::optional<std::string> error;

    bool succeeded() const { return !turns.empty() && turns.back().pass; }

    // 1-based turn of first success, 0 if none.
    int success_turn() const { return succeeded() ? static_cast<int>(turns.size()) : 0; }

    nlohmann::json to_json() const {
        nlohmann::json turn_list = nlohmann::json::array();
        for (const auto& t : turns) {
            turn_list.push_back({{"feedback_in", t.feedback_in},
                                 {"script_out", t.script_out},
                                 {"verdict", t.pass ? "pass" : "fail"}});
        }
        nlohmann::json doc = {{"goal", goal},
                              {"initial_video_ref", initial_video_ref},
                              {"max_turns", max_turns},
                              {"seed", seed},
                              {"succeeded", succeeded()},
                              {"turns", turn_list}};
        if (error) doc["error"] = *error;
        return doc;
    }
};

// Environment feedback is a seedable provider: scripted tables in tests,
// agent-backed in production.
using FeedbackProvider =
    std::function<std::string(const InteractionEpisode& so_far, std::uint64_t seed)>;
using ScriptProvider = std::function<std::string(
    const std::string& goal, const InteractionEpisode& so_far, const std::string& feedback)>;
using VerdictProvider =
    std::function<bool(const std::string& script, const std::string& feedback)>;

inline InteractionEpisode run_interaction_episode(const EpisodeConfig& config,
                                                  const FeedbackProvider& feedback_provider,
                                                  const ScriptProvider& script_provider,
                                                  const VerdictProvider& verdict_provider) {
    if (config.max_turns < 1) throw std::invalid_argument("max_turns must be >= 1");
    InteractionEpisode ep;
    ep.goal = config.goal;
    ep.initial_video_ref = config.initial_video_ref;
    ep.max_turns = config.max_turns;
    ep.seed = config.seed;
    try {
        for (int t = 0; t < config.max_turns; ++t) {
            InteractionTurn turn;
            turn.feedback_in = feedback_provider(ep, config.seed);
            turn.script_out = script_provider(config.goal, ep, turn.feedback_in);
            turn.pass = verdict_provider(turn.script_out, turn.feedback_in);
            ep.turns.push_back(std::move(turn));
            if (ep.turns.back().pass) break;
        }
    } catch (const std::exception& e) {
        ep.error = e.what();
    }
    return ep;
}

struct TurnSuccess {
    std::vector<double> per_turn;  // fraction succeeding exactly at turn t (1-based index t-1)
    double overall = 0.0;          // fraction succeeding at any turn
};

inline TurnSuccess per_turn_success(const std::vector<InteractionEpisode>& episodes) {
    if (episodes.empty()) throw std::invalid_argument("per_turn_success: no episodes");
    const int max_turns = episodes.front().max_turns;
    for (const auto& ep : episodes) {
        if (ep.max_turns != max_turns) {
            throw std::invalid_argument("per_turn_success: episodes have mixed max_turns");
        }
    }
    TurnSuccess out;
    out.per_turn.assign(static_cast<std::size_t>(max_turns), 0.0);
    int successes = 0;
    for (const auto& ep : episodes) {
        if (int t = ep.success_turn(); t > 0) {
            out.per_turn[static_cast<std::size_t>(t - 1)] += 1.0;
            ++successes;
        }
    }
    const double n = static_cast<double>(episodes.size());
    for (auto& v : out.per_turn) v /= n;
    out.overall = static_cast<double>(successes) / n;
    return out;
}

} // namespace ave
