#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "ave/backend.hpp"
#include "ave/dataset.hpp"
#include "ave/errors.hpp"
#include "ave/matching.hpp"

namespace ave {

// A judge system prompt with lineage. The id is a content hash, so equal
// texts always share an id.
struct JudgePrompt {
    std::string text;
    std::string id;
    std::optional<std::string> parent_id;

    static JudgePrompt from_text(std::string text,
                                 std::optional<std::string> parent = std::nullopt) {
        if (is_blank(text)) throw std::invalid_argument("judge prompt text is empty");
        JudgePrompt p;
        p.id = to_hex(fnv1a64(text));
        p.text = std::move(text);
        p.parent_id = std::move(parent);
        return p;
    }
};

struct JudgeOutput {
    WeaknessSet weaknesses;
    std::string raw_text;
};

// Output schema the judge prompts instruct: either the single marker NONE,
// or one weakness per line prefixed "- ". Anything else is a parse error —
// never a silent empty set. Byte-identical repeats are dropped.
inline WeaknessSet parse_judge_output(const std::string& raw) {
    std::string body = trim(raw);
    if (body == "NONE") return WeaknessSet{};
    if (body.empty()) throw JudgeParseError("judge output is empty", raw);

    std::vector<std::string> items;
    std::set<std::string> seen;
    for (const auto& line : split_lines(body)) {
        if (is_blank(line)) continue;
        std::string t = trim(line);
        if (t.rfind("- ", 0) != 0) {
            throw JudgeParseError("judge output line is not a '- ' item: '" + t + "'", raw);
        }
        std::string item = trim(t.substr(2));
        if (item.empty()) {
            throw JudgeParseError("judge output contains an empty item", raw);
        }
        if (seen.insert(item).second) items.push_back(std::move(item));
    }
    if (items.empty()) throw JudgeParseError("judge output has no items", raw);
    return WeaknessSet(std::move(items));
}

// One judge call: system prompt p, user parts = context text, context media,
// then the output video under review.
inline JudgeOutput predict_weaknesses(const JudgePrompt& p, const Sample& sample,
                                      const AgentEndpoint& judge,
                                      std::optional<std::uint64_t> seed = std::nullopt) {
    if (sample.output_video_ref.empty()) {
        throw std::invalid_argument("sample '" + sample.id + "' has no output_video_ref");
    }
    std::vector<ModelPart> parts;
    parts.push_back({ModelPart::Kind::text, sample.context.instruction});
    for (const auto& r : sample.context.image_refs) parts.push_back({ModelPart::Kind::image, r});
    for (const auto& r : sample.context.audio_refs) parts.push_back({ModelPart::Kind::audio, r});
    for (const auto& r : sample.context.video_refs) parts.push_back({ModelPart::Kind::video, r});
    parts.push_back({ModelPart::Kind::video, sample.output_video_ref});

    ModelResponse resp = judge.call(judge.make_request(p.text, std::move(parts), seed));
    JudgeOutput out;
    out.weaknesses = parse_judge_output(resp.text);
    out.raw_text = resp.text;
    return out;
}

// Asks the match agent whether two weakness statements mean the same thing.
// Wire contract: the reply must contain YES or NO.
inline bool items_equivalent(const std::string& a, const std::string& b,
                             const MatchContext& ctx) {
    std::string user = "A: " + a + "\nB: " + b;
    ModelResponse resp =
        ctx.agent.call(ctx.agent.make_request(ctx.equivalence_prompt,
                                              {{ModelPart::Kind::text, user}}));
    std::string t = trim(resp.text);
    if (t.rfind("YES", 0) == 0) return true;
    if (t.rfind("NO", 0) == 0) return false;
    throw MatchProtocolError("equivalence reply is not YES/NO: " + resp.text);
}

namespace detail {

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) {
        std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

private:
    std::vector<std::size_t> parent_;
};

} // namespace detail

// Majority vote over k repeated judge runs. Items are clustered into
// semantic-equivalence groups (transitive closure over pairwise matches); a
// group survives with support from at least ceil(k/2) distinct runs. The
// representative comes from the lowest-indexed supporting run, tie-broken by
// shortest string then lexicographic; survivors are ordered by the
// representative's (run, item) position.
inline WeaknessSet majority_vote(const std::vector<WeaknessSet>& runs, int k,
                                 const MatchContext& ctx) {
    if (k < 1) throw std::invalid_argument("majority_vote: k must be >= 1");
    if (runs.size() != static_cast<std::size_t>(k)) {
        throw std::invalid_argument("majority_vote: expected " + std::to_string(k) +
                                    " runs, got " + std::to_string(runs.size()));
    }
    struct Item {
        std::size_t run;
        std::size_t index;
        std::string text;
    };
    std::vector<Item> items;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto& list = runs[r].items();
        for (std::size_t i = 0; i < list.size(); ++i) items.push_back({r, i, list[i]});
    }
    if (items.empty()) return WeaknessSet{};

    detail::UnionFind uf(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        for (std::size_t j = i + 1; j < items.size(); ++j) {
            if (uf.find(i) == uf.find(j)) continue;
            if (items[i].text == items[j].text || items_equivalent(items[i].text, items[j].text, ctx)) {
                uf.unite(i, j);
            }
        }
    }

    std::map<std::size_t, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < items.size(); ++i) clusters[uf.find(i)].push_back(i);

    const std::size_t threshold = (static_cast<std::size_t>(k) + 1) / 2;
    struct Survivor {
        std::size_t run;
        std::size_t index;
        std::string text;
    };
    std::vector<Survivor> survivors;
    for (const auto& [root, members] : clusters) {
        std::set<std::size_t> supporting_runs;
        for (auto m : members) supporting_runs.insert(items[m].run);
        if (supporting_runs.size() < threshold) continue;

        std::size_t lowest_run = *supporting_runs.begin();
        const Item* rep = nullptr;
        for (auto m : members) {
            const Item& cand = items[m];
            if (cand.run != lowest_run) continue;
            if (!rep || cand.text.size() < rep->text.size() ||
                (cand.text.size() == rep->text.size() && cand.text < rep->text)) {
                rep = &cand;
            }
        }
        survivors.push_back({rep->run, rep->index, rep->text});
    }
    std::sort(survivors.begin(), survivors.end(), [](const Survivor& a, const Survivor& b) {
        return std::tie(a.run, a.index) < std::tie(b.run, b.index);
    });

    std::vector<std::string> voted;
    std::set<std::string> seen;
    for (auto& s : survivors) {
        if (seen.insert(trim(s.text)).second) voted.push_back(std::move(s.text));
    }
    return WeaknessSet(std::move(voted));
}

inline std::uint64_t derive_run_seed(std::uint64_t base_seed, const std::string& sample_id,
                                     std::size_t run_index) {
    return mix_seed(mix_seed(base_seed, fnv1a64(sample_id)), run_index);
}

// k-stabilized judgement: k prediction runs with distinct derived seeds,
// then a majority vote. k = 1 is exactly a single predict_weaknesses call.
inline JudgeOutput judge_instance(const JudgePrompt& p, const Sample& sample, int k,
                                  const AgentEndpoint& judge, const MatchContext& match) {
    if (k < 1) throw std::invalid_argument("judge_instance: k must be >= 1");
    if (k == 1) return predict_weaknesses(p, sample, judge);

    std::vector<WeaknessSet> runs;
    std::vector<std::string> raws;
    runs.reserve(static_cast<std::size_t>(k));
    for (int r = 0; r < k; ++r) {
        JudgeOutput out = predict_weaknesses(
            p, sample, judge,
            derive_run_seed(judge.base_seed, sample.id, static_cast<std::size_t>(r)));
        runs.push_back(std::move(out.weaknesses));
        raws.push_back(std::move(out.raw_text));
    }
    JudgeOutput voted;
    voted.weaknesses = majority_vote(runs, k, match);
    voted.raw_text = join(raws, "\n---\n");
    return voted;
}

} // namespace ave
