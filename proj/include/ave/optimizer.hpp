#pragma once

#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ave/backend.hpp"
#include "ave/dataset.hpp"
#include "ave/errors.hpp"
#include "ave/judge.hpp"
#include "ave/matching.hpp"
#include "ave/metrics.hpp"

namespace ave {

// One row of the prompt-score table: a candidate prompt, its validation
// score, and the per-instance scalars that drive Pareto selection.
struct PromptCandidate {
    JudgePrompt prompt;
    double val_score = 0.0;
    std::map<std::string, double> per_instance_scores;
    std::string feedback_digest;  // digest of the feedback that produced this prompt
};

class PromptScoreTable {
public:
    // At most one entry per prompt id; re-upserting keeps the original
    // insertion position, so argmax tie-breaks stay stable.
    void upsert(PromptCandidate entry) {
        for (auto& e : entries_) {
            if (e.prompt.id == entry.prompt.id) {
                e = std::move(entry);
                return;
            }
        }
        entries_.push_back(std::move(entry));
    }

    const std::vector<PromptCandidate>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }

    const PromptCandidate& best() const {
        if (entries_.empty()) throw std::invalid_argument("prompt table is empty");
        const PromptCandidate* top = &entries_.front();
        for (const auto& e : entries_) {
            if (e.val_score > top->val_score) top = &e;  // earliest insertion wins ties
        }
        return *top;
    }

    nlohmann::json to_json() const {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& e : entries_) {
            nlohmann::json rec = {{"prompt_id", e.prompt.id},
                                  {"parent_id", e.prompt.parent_id ? nlohmann::json(*e.prompt.parent_id)
                                                                   : nlohmann::json(nullptr)},
                                  {"prompt_text", e.prompt.text},
                                  {"val_score", e.val_score},
                                  {"feedback_digest", e.feedback_digest},
                                  {"per_instance_scores", e.per_instance_scores}};
            out.push_back(std::move(rec));
        }
        return out;
    }

private:
    std::vector<PromptCandidate> entries_;
};

enum class SelectionStrategy { best_of_table, pareto_sample };

inline const char* to_string(SelectionStrategy s) {
    return s == SelectionStrategy::best_of_table ? "best" : "pareto";
}

inline SelectionStrategy selection_strategy_from_string(std::string_view s) {
    if (s == "best") return SelectionStrategy::best_of_table;
    if (s == "pareto") return SelectionStrategy::pareto_sample;
    throw ConfigError("unknown selection strategy '" + std::string(s) +
                      "' (expected best|pareto)");
}

struct OptimizerConfig {
    MetricKind metric = MetricKind::f1;
    int batch_size = 4;  // minibatch size b
    int votes = 5;       // judge repetitions k
    SelectionStrategy strategy = SelectionStrategy::best_of_table;
    std::uint64_t seed = 0;
    std::size_t feedback_char_budget = 20000;
    // Harness-side cap for offline experiments; 0 means the dollar budget is
    // the only stop rule.
    int max_iterations = 0;
};

// All agents the loop calls. Every endpoint charges the same shared ledger.
struct AveDeps {
    AgentEndpoint judge;
    MatchContext match;
    AgentEndpoint optimizer;
    std::string optimizer_meta_prompt;
};

struct SliceEvaluation {
    double score = 0.0;
    std::string feedback;
    std::vector<std::pair<std::string, InstanceEvaluation>> instances;
};

inline std::string feedback_digest(const std::string& feedback) {
    std::string head = feedback.substr(0, 120);
    std::replace(head.begin(), head.end(), '\n', ' ');
    return to_hex(fnv1a64(feedback)) + " " + head;
}

namespace detail {

// Truncation prefers a balanced mix of omission-heavy and hallucination-heavy
// instances so the optimizer sees both failure modes.
inline std::string assemble_feedback(
    const std::vector<std::pair<std::string, InstanceEvaluation>>& instances,
    std::size_t char_budget) {
    std::vector<std::string> lines;
    std::size_t total = 0;
    for (const auto& [id, eval] : instances) {
        lines.push_back("[" + id + "] " + eval.feedback);
        total += lines.back().size() + 1;
    }
    if (total <= char_budget || lines.empty()) return join(lines, "\n");

    std::deque<std::size_t> omission_heavy, hallucination_heavy, neutral;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto& c = instances[i].second.confusion;
        if (c.raw_fn > c.raw_fp) {
            omission_heavy.push_back(i);
        } else if (c.raw_fp > c.raw_fn) {
            hallucination_heavy.push_back(i);
        } else {
            neutral.push_back(i);
        }
    }
    std::deque<std::size_t>* queues[3] = {&omission_heavy, &hallucination_heavy, &neutral};
    std::vector<std::string> picked;
    std::size_t used = 0;
    bool progress = true;
    while (progress) {
        progress = false;
        for (auto* q : queues) {
            if (q->empty()) continue;
            const std::string& line = lines[q->front()];
            std::size_t cost = line.size() + (picked.empty() ? 0 : 1);
            if (used + cost > char_budget) {
                q->clear();  // this side no longer fits
                continue;
            }
            picked.push_back(line);
            used += cost;
            q->pop_front();
            progress = true;
        }
    }
    return join(picked, "\n");
}

} // namespace detail

// Judges and scores one slice: per sample a k-vote judgement and a semantic
// evaluation, then Phi over the aggregated confusion. Validation passes
// upsert the candidate into the table. A budget failure mid-slice discards
// the partial results and surfaces to the loop.
inline SliceEvaluation evaluate_and_update(const JudgePrompt& p,
                                           const std::vector<const Sample*>& slice, bool is_val,
                                           PromptScoreTable* table, const OptimizerConfig& cfg,
                                           const AveDeps& deps,
                                           const std::string& origin_digest = "") {
    if (slice.empty()) throw std::invalid_argument("evaluate_and_update: slice is empty");
    SliceEvaluation out;
    std::vector<ConfusionVector> confusions;
    for (const Sample* s : slice) {
        JudgeOutput judged = judge_instance(p, *s, cfg.votes, deps.judge, deps.match);
        InstanceEvaluation eval = evaluate_instance(judged.weaknesses, s->weaknesses, deps.match);
        confusions.push_back(eval.confusion);
        out.instances.emplace_back(s->id, std::move(eval));
    }
    out.score = phi_apply(cfg.metric, aggregate_confusion(confusions));
    out.feedback = detail::assemble_feedback(out.instances, cfg.feedback_char_budget);

    if (is_val && table) {
        PromptCandidate entry;
        entry.prompt = p;
        entry.val_score = out.score;
        entry.feedback_digest = origin_digest;
        for (const auto& [id, eval] : out.instances) {
            const auto& nm = eval.confusion.normalized;
            entry.per_instance_scores[id] = nm[0] + nm[1] - nm[2] - nm[3];
        }
        table->upsert(std::move(entry));
    }
    return out;
}

// Candidate selection. BestOfTable takes the validation argmax; ParetoSample
// drops dominated candidates (on per-instance scalars) and samples the
// frontier weighted by how often a candidate is the strict unique maximum.
inline const PromptCandidate& select_prompt(const PromptScoreTable& table,
                                            SelectionStrategy strategy, DetRng& rng) {
    if (table.empty()) throw std::invalid_argument("select_prompt: table is empty");
    if (strategy == SelectionStrategy::best_of_table) return table.best();

    const auto& entries = table.entries();
    std::set<std::string> id_union;
    for (const auto& e : entries) {
        for (const auto& [id, v] : e.per_instance_scores) id_union.insert(id);
    }
    const double missing = -std::numeric_limits<double>::infinity();
    auto score_of = [&](const PromptCandidate& e, const std::string& id) {
        auto it = e.per_instance_scores.find(id);
        return it == e.per_instance_scores.end() ? missing : it->second;
    };
    auto dominates = [&](const PromptCandidate& a, const PromptCandidate& b) {
        bool strictly_better_somewhere = false;
        for (const auto& id : id_union) {
            double sa = score_of(a, id), sb = score_of(b, id);
            if (sa < sb) return false;
            if (sa > sb) strictly_better_somewhere = true;
        }
        return strictly_better_somewhere;
    };

    std::vector<std::size_t> frontier;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < entries.size() && !dominated; ++j) {
            if (j != i && dominates(entries[j], entries[i])) dominated = true;
        }
        if (!dominated) frontier.push_back(i);
    }

    std::vector<std::uint64_t> weights(frontier.size(), 0);
    for (const auto& id : id_union) {
        double best_val = missing;
        std::size_t best_count = 0, best_at = 0;
        for (std::size_t f = 0; f < frontier.size(); ++f) {
            double v = score_of(entries[frontier[f]], id);
            if (v > best_val) {
                best_val = v;
                best_count = 1;
                best_at = f;
            } else if (v == best_val) {
                ++best_count;
            }
        }
        if (best_count == 1) ++weights[best_at];
    }

    std::uint64_t total = 0;
    for (auto w : weights) total += w;
    if (total == 0) {
        return entries[frontier[static_cast<std::size_t>(rng.bounded(frontier.size()))]];
    }
    std::uint64_t r = rng.bounded(total);
    for (std::size_t f = 0; f < frontier.size(); ++f) {
        if (r < weights[f]) return entries[frontier[f]];
        r -= weights[f];
    }
    return entries[frontier.back()];
}

// One optimizer-agent call under the fixed meta-prompt. The child must be
// non-empty and differ from its parent; one retry, then RefinementError.
inline JudgePrompt refine_prompt(const JudgePrompt& p, const std::string& feedback,
                                 const AgentEndpoint& optimizer,
                                 const std::string& meta_prompt) {
    if (is_blank(feedback)) throw std::invalid_argument("refine_prompt: feedback is empty");
    std::string user = "CURRENT PROMPT:\n" + p.text + "\n\nEVALUATION FEEDBACK:\n" + feedback;
    ModelRequest req = optimizer.make_request(meta_prompt, {{ModelPart::Kind::text, user}});
    for (int attempt = 0; attempt < 2; ++attempt) {
        ModelResponse resp = optimizer.call(req);
        std::string text = trim(resp.text);
        if (!text.empty() && text != p.text) {
            return JudgePrompt::from_text(std::move(text), p.id);
        }
    }
    throw RefinementError("optimizer returned an empty or unchanged prompt twice for " + p.id);
}

struct IterationRecord {
    int iteration = 0;
    std::string selected_prompt_id;
    std::vector<std::string> minibatch_ids;
    double batch_score = 0.0;
    std::string feedback_digest;
    std::string new_prompt_id;
    double new_val_score = 0.0;

    nlohmann::json to_json() const {
        return {{"iteration", iteration},
                {"selected_prompt_id", selected_prompt_id},
                {"minibatch_ids", minibatch_ids},
                {"batch_score", batch_score},
                {"feedback_digest", feedback_digest},
                {"new_prompt_id", new_prompt_id},
                {"new_val_score", new_val_score}};
    }
};

struct OptimizationRun {
    OptimizerConfig config;
    std::string p0_id;
    std::string p_star_id;
    std::vector<IterationRecord> history;
    std::string termination;  // budget_exhausted | budget_spent | iteration_cap

    nlohmann::json to_json() const {
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& r : history) hist.push_back(r.to_json());
        return {{"config",
                 {{"metric", to_string(config.metric)},
                  {"batch_size", config.batch_size},
                  {"votes", config.votes},
                  {"strategy", to_string(config.strategy)},
                  {"seed", config.seed},
                  {"feedback_char_budget", config.feedback_char_budget},
                  {"max_iterations", config.max_iterations}}},
                {"p0_id", p0_id},
                {"p_star_id", p_star_id},
                {"termination", termination},
                {"history", hist}};
    }
};

struct AveResult {
    JudgePrompt p_star;
    OptimizationRun run;
    PromptScoreTable table;
};

namespace detail {

inline std::unordered_map<std::string, const Sample*> index_by_id(
    const std::vector<Sample>& dataset) {
    std::unordered_map<std::string, const Sample*> index;
    for (const auto& s : dataset) {
        if (!index.emplace(s.id, &s).second) {
            throw DatasetError("duplicate sample id '" + s.id + "'");
        }
    }
    return index;
}

inline std::vector<const Sample*> slice_for_ids(
    const std::unordered_map<std::string, const Sample*>& index,
    const std::vector<std::string>& ids) {
    std::vector<const Sample*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end()) throw DatasetError("split references unknown id '" + id + "'");
        out.push_back(it->second);
    }
    return out;
}

} // namespace detail

// The optimization loop: seed the table with p0 on validation, then while
// budget remains select a candidate, score it on a fresh train minibatch,
// refine it from the textual feedback, and validate the child. Budget
// exhaustion is normal termination; a candidate whose validation did not
// complete is discarded. Returns the validation argmax.
inline AveResult run_ave(const JudgePrompt& p0, const std::vector<Sample>& dataset,
                         const SplitAssignment& splits, const OptimizerConfig& cfg,
                         const AveDeps& deps) {
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.votes < 1) throw ConfigError("votes must be >= 1");

    auto index = detail::index_by_id(dataset);
    auto val_slice = detail::slice_for_ids(index, splits.val_ids);

    AveResult result;
    result.run.config = cfg;
    result.run.p0_id = p0.id;

    CostLedger& ledger = *deps.judge.ledger;
    bool exhausted = false;
    try {
        evaluate_and_update(p0, val_slice, true, &result.table, cfg, deps);
    } catch (const BudgetExhausted&) {
        exhausted = true;
    }

    DetRng select_rng(mix_seed(cfg.seed, fnv1a64("select")));
    int iteration = 0;
    while (!exhausted) {
        if (cfg.max_iterations > 0 && iteration >= cfg.max_iterations) {
            result.run.termination = "iteration_cap";
            break;
        }
        if (!(remaining_budget(ledger) > 0.0)) {
            result.run.termination = "budget_spent";
            break;
        }
        ++iteration;

        const PromptCandidate& selected = select_prompt(result.table, cfg.strategy, select_rng);
        JudgePrompt parent = selected.prompt;

        // Fresh uniform minibatch each iteration, without replacement.
        std::vector<std::string> pool = splits.train_ids;
        DetRng batch_rng(mix_seed(mix_seed(cfg.seed, fnv1a64("minibatch")),
                                  static_cast<std::uint64_t>(iteration)));
        batch_rng.shuffle(pool);
        std::size_t take = std::min<std::size_t>(pool.size(),
                                                 static_cast<std::size_t>(cfg.batch_size));
        std::vector<std::string> batch_ids(pool.begin(),
                                           pool.begin() + static_cast<std::ptrdiff_t>(take));

        try {
            auto batch_slice = detail::slice_for_ids(index, batch_ids);
            SliceEvaluation batch_eval =
                evaluate_and_update(parent, batch_slice, false, nullptr, cfg, deps);
            std::string digest = feedback_digest(batch_eval.feedback);
            JudgePrompt child =
                refine_prompt(parent, batch_eval.feedback, deps.optimizer,
                              deps.optimizer_meta_prompt);
            SliceEvaluation val_eval =
                evaluate_and_update(child, val_slice, true, &result.table, cfg, deps, digest);

            IterationRecord rec;
            rec.iteration = iteration;
            rec.selected_prompt_id = parent.id;
            rec.minibatch_ids = std::move(batch_ids);
            rec.batch_score = batch_eval.score;
            rec.feedback_digest = digest;
            rec.new_prompt_id = child.id;
            rec.new_val_score = val_eval.score;
            result.run.history.push_back(std::move(rec));
        } catch (const BudgetExhausted&) {
            result.run.termination = "budget_exhausted";
            exhausted = true;
        }
    }
    if (result.run.termination.empty() && exhausted) {
        result.run.termination = "budget_exhausted";
    }

    result.p_star = result.table.empty() ? p0 : result.table.best().prompt;
    result.run.p_star_id = result.p_star.id;
    return result;
}

// Frozen-prompt generalization score on held-out data: one evaluation pass,
// no table update, no refinement.
inline double freeze_and_test(const JudgePrompt& p_star, const std::vector<Sample>& dataset,
                              const SplitAssignment& splits, const OptimizerConfig& cfg,
                              const AveDeps& deps) {
    std::set<std::string> seen_ids(splits.train_ids.begin(), splits.train_ids.end());
    seen_ids.insert(splits.val_ids.begin(), splits.val_ids.end());
    for (const auto& id : splits.test_ids) {
        if (seen_ids.count(id)) {
            throw std::invalid_argument("test id '" + id + "' overlaps train/val");
        }
    }
    auto index = detail::index_by_id(dataset);
    auto test_slice = detail::slice_for_ids(index, splits.test_ids);
    return evaluate_and_update(p_star, test_slice, false, nullptr, cfg, deps).score;
}

// Cross-model transfer: score the target's own baseline prompt and the
// source-optimized prompt on the target judge backend. No optimizer calls
// happen, so optimizer-tagged spend is untouched.
inline std::pair<double, double> adapt_prompt(const JudgePrompt& p_star,
                                              const JudgePrompt& target_baseline,
                                              const AgentEndpoint& target_judge,
                                              const std::vector<Sample>& dataset,
                                              const SplitAssignment& splits,
                                              const OptimizerConfig& cfg, const AveDeps& deps) {
    AveDeps target_deps = deps;
    target_deps.judge = target_judge;
    double baseline_score = freeze_and_test(target_baseline, dataset, splits, cfg, target_deps);
    double adapted_score = freeze_and_test(p_star, dataset, splits, cfg, target_deps);
    return {baseline_score, adapted_score};
}

// Run directory artifacts: table snapshot, iteration history, final prompt
// text, ledger dump.
inline void save_run_artifacts(const std::filesystem::path& dir, const AveResult& result,
                               const CostLedger& ledger) {
    std::filesystem::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + (dir / name).string());
        out << content;
    };
    write("table.json", result.table.to_json().dump(2) + "\n");
    write("history.json", result.run.to_json().dump(2) + "\n");
    write("p_star.txt", result.p_star.text + "\n");
    write("ledger.json", ledger.to_json().dump(2) + "\n");
}

} // namespace ave
