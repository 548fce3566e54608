#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ave/backend.hpp"
#include "ave/dataset.hpp"
#include "ave/errors.hpp"

namespace ave {

// One-to-one semantic pairing of a referenced set against a predicted set.
// pairs + omissions cover the referenced side exactly; pairs + hallucinations
// cover the predicted side exactly.
struct MatchOutcome {
    std::vector<std::pair<std::string, std::string>> matched_pairs;
    std::vector<std::string> omissions;       // referenced items left unmatched (FN side)
    std::vector<std::string> hallucinations;  // predicted items left unmatched (FP side)
};

// Per-instance confusion. `normalized` always sums to 1: at least one
// indicator fires in every branch, so the raw total is >= 1.
struct ConfusionVector {
    double raw_tp = 0.0;
    double raw_tn = 0.0;
    double raw_fp = 0.0;
    double raw_fn = 0.0;
    std::array<double, 4> normalized{0.0, 0.0, 0.0, 0.0};

    static ConfusionVector from_raw(double tp, double tn, double fp, double fn) {
        ConfusionVector c;
        c.raw_tp = tp;
        c.raw_tn = tn;
        c.raw_fp = fp;
        c.raw_fn = fn;
        double total = tp + tn + fp + fn;
        if (total <= 0.0) throw std::invalid_argument("confusion raw total must be >= 1");
        c.normalized = {tp / total, tn / total, fp / total, fn / total};
        return c;
    }
};

struct InstanceEvaluation {
    std::string feedback;
    ConfusionVector confusion;
    MatchOutcome outcome;
};

// Match agent wiring: one endpoint, two wire contracts. `pairing_prompt` asks
// for a one-to-one pairing of two lists; `equivalence_prompt` asks whether
// two single statements describe the same weakness.
struct MatchContext {
    AgentEndpoint agent;
    std::string pairing_prompt;
    std::string equivalence_prompt;
};

namespace detail {

inline std::string numbered_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += std::to_string(i) + ". " + items[i] + "\n";
    }
    return out;
}

// The agent must answer with a JSON object {"pairs": [[ref_idx, pred_idx], ...]}.
// Anything else, or any out-of-range / repeated index, is a contract violation.
inline std::optional<std::vector<std::pair<std::size_t, std::size_t>>> parse_pairing(
    const std::string& text, std::size_t n_ref, std::size_t n_pred) {
    auto open = text.find('{');
    auto close = text.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) {
        return std::nullopt;
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text.substr(open, close - open + 1));
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
    if (!doc.is_object() || !doc.contains("pairs") || !doc["pairs"].is_array()) {
        return std::nullopt;
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::set<std::size_t> used_ref, used_pred;
    for (const auto& p : doc["pairs"]) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() ||
            !p[1].is_number_integer()) {
            return std::nullopt;
        }
        long long r = p[0].get<long long>();
        long long q = p[1].get<long long>();
        if (r < 0 || q < 0 || static_cast<std::size_t>(r) >= n_ref ||
            static_cast<std::size_t>(q) >= n_pred) {
            return std::nullopt;
        }
        if (!used_ref.insert(static_cast<std::size_t>(r)).second) return std::nullopt;
        if (!used_pred.insert(static_cast<std::size_t>(q)).second) return std::nullopt;
        pairs.emplace_back(static_cast<std::size_t>(r), static_cast<std::size_t>(q));
    }
    return pairs;
}

} // namespace detail

// Asks the match agent for a one-to-one pairing between the referenced and
// predicted sets. Retried once on a contract violation, then MatchProtocolError.
inline MatchOutcome semantic_set_match(const WeaknessSet& y, const WeaknessSet& yhat,
                                       const MatchContext& ctx) {
    if (y.empty() || yhat.empty()) {
        throw std::invalid_argument("semantic_set_match requires both sets non-empty");
    }
    std::string user = "REFERENCED:\n" + detail::numbered_list(y.items()) + "PREDICTED:\n" +
                       detail::numbered_list(yhat.items());
    ModelRequest req =
        ctx.agent.make_request(ctx.pairing_prompt, {{ModelPart::Kind::text, user}});

    std::optional<std::vector<std::pair<std::size_t, std::size_t>>> pairs;
    std::string last_text;
    for (int attempt = 0; attempt < 2 && !pairs; ++attempt) {
        ModelResponse resp = ctx.agent.call(req);
        last_text = resp.text;
        pairs = detail::parse_pairing(resp.text, y.size(), yhat.size());
    }
    if (!pairs) {
        throw MatchProtocolError("match agent did not return a valid one-to-one pairing: " +
                                 last_text);
    }
    std::sort(pairs->begin(), pairs->end());

    MatchOutcome outcome;
    std::vector<bool> ref_used(y.size(), false), pred_used(yhat.size(), false);
    for (auto [r, p] : *pairs) {
        ref_used[r] = true;
        pred_used[p] = true;
        outcome.matched_pairs.emplace_back(y.items()[r], yhat.items()[p]);
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!ref_used[i]) outcome.omissions.push_back(y.items()[i]);
    }
    for (std::size_t i = 0; i < yhat.size(); ++i) {
        if (!pred_used[i]) outcome.hallucinations.push_back(yhat.items()[i]);
    }
    return outcome;
}

// Instance-level confusion arithmetic. The instance indicator is added on
// top of the item-level counts: TP gets +1 whenever both sets are non-empty,
// even with zero semantic matches, and an empty referenced set yields FP = 1
// regardless of how many items were predicted.
inline ConfusionVector confusion_from_sets(const WeaknessSet& y, const WeaknessSet& yhat,
                                           const std::optional<MatchOutcome>& outcome) {
    const bool both_nonempty = !y.empty() && !yhat.empty();
    if (both_nonempty && !outcome) {
        throw std::invalid_argument("confusion_from_sets: outcome required when both sets are non-empty");
    }
    if (!both_nonempty && outcome) {
        throw std::invalid_argument("confusion_from_sets: outcome supplied for an empty set");
    }
    double n_tp = 0.0, n_fp = 0.0, n_fn = 0.0;
    if (outcome) {
        n_tp = static_cast<double>(outcome->matched_pairs.size());
        n_fp = static_cast<double>(outcome->hallucinations.size());
        n_fn = static_cast<double>(outcome->omissions.size());
    }
    double tp = (both_nonempty ? 1.0 : 0.0) + n_tp;
    double tn = (y.empty() && yhat.empty()) ? 1.0 : 0.0;
    double fp = ((y.empty() && !yhat.empty()) ? 1.0 : 0.0) + n_fp;
    double fn = ((!y.empty() && yhat.empty()) ? 1.0 : 0.0) + n_fn;
    return ConfusionVector::from_raw(tp, tn, fp, fn);
}

// "Perfect prediction." exactly when nothing was missed or invented;
// otherwise a two-sided digest naming the offending items. Without a match
// outcome (one side empty) the offending items are the sets themselves.
inline std::string synthesize_feedback(const ConfusionVector& confusion,
                                       const std::optional<MatchOutcome>& outcome,
                                       const WeaknessSet& y, const WeaknessSet& yhat) {
    if (confusion.raw_fp == 0.0 && confusion.raw_fn == 0.0) {
        return "Perfect prediction.";
    }
    std::vector<std::string> omitted =
        outcome ? outcome->omissions : (yhat.empty() ? y.items() : std::vector<std::string>{});
    std::vector<std::string> hallucinated =
        outcome ? outcome->hallucinations : (y.empty() ? yhat.items() : std::vector<std::string>{});
    auto side = [](const std::vector<std::string>& items) {
        return items.empty() ? std::string("(none)") : join(items, "; ");
    };
    return "Omissions: " + side(omitted) + "; Hallucinations: " + side(hallucinated);
}

// Full instance evaluation of a prediction against its reference. Argument
// order mirrors the evaluation call shape: prediction first.
inline InstanceEvaluation evaluate_instance(const WeaknessSet& yhat, const WeaknessSet& y,
                                            const MatchContext& ctx) {
    InstanceEvaluation eval;
    if (!y.empty() && !yhat.empty()) {
        eval.outcome = semantic_set_match(y, yhat, ctx);
        eval.confusion = confusion_from_sets(y, yhat, eval.outcome);
        eval.feedback = synthesize_feedback(eval.confusion, eval.outcome, y, yhat);
    } else {
        // Coverage still holds: the unmatched side is the whole set.
        if (yhat.empty()) eval.outcome.omissions = y.items();
        if (y.empty()) eval.outcome.hallucinations = yhat.items();
        eval.confusion = confusion_from_sets(y, yhat, std::nullopt);
        eval.feedback = synthesize_feedback(eval.confusion, std::nullopt, y, yhat);
    }
    return eval;
}

} // namespace ave
