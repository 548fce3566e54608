#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ave/errors.hpp"
#include "ave/taxonomy.hpp"
#include "ave/util.hpp"

namespace ave {

// Ordered collection of free-form weakness strings. Empty means "no
// noticeable weaknesses". Whitespace-only items and byte-identical
// duplicates (after trimming) are rejected on construction.
class WeaknessSet {
public:
    WeaknessSet() = default;

    explicit WeaknessSet(std::vector<std::string> items) {
        std::set<std::string> seen;
        for (auto& item : items) {
            if (is_blank(item)) {
                throw DatasetError("weakness item is whitespace-only");
            }
            if (!seen.insert(trim(item)).second) {
                throw DatasetError("duplicate weakness item: '" + trim(item) + "'");
            }
        }
        items_ = std::move(items);
    }

    const std::vector<std::string>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    bool operator==(const WeaknessSet& other) const { return items_ == other.items_; }

private:
    std::vector<std::string> items_;
};

struct ContextBundle {
    std::string instruction;
    std::vector<std::string> image_refs;
    std::vector<std::string> audio_refs;
    std::vector<std::string> video_refs;
};

enum class Verdict { pass, fail };

inline const char* to_string(Verdict v) { return v == Verdict::pass ? "pass" : "fail"; }

inline std::optional<Verdict> verdict_from_string(std::string_view s) {
    if (s == "pass") return Verdict::pass;
    if (s == "fail") return Verdict::fail;
    return std::nullopt;
}

// One benchmark instance: context, a generated output video, and the
// referenced weakness annotations for that output.
struct Sample {
    std::string id;
    std::string category;
    std::string subcategory;
    TaskFamily task_family = TaskFamily::perception;
    ContextBundle context;
    std::string output_video_ref;
    WeaknessSet weaknesses;
    std::string model_name;
    std::optional<Verdict> verdict;
};

struct Violation {
    std::string sample_id;
    std::string field;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

// A ref must look like a URI or a relative path: non-empty, printable,
// no embedded whitespace.
inline bool is_valid_ref(std::string_view ref) {
    if (ref.empty()) return false;
    for (unsigned char c : ref) {
        if (c <= 0x20 || c == 0x7f) return false;
    }
    return true;
}

inline ValidationReport validate_sample(const Sample& s, const Taxonomy& taxonomy) {
    ValidationReport report;
    auto add = [&](const std::string& field, const std::string& message) {
        report.violations.push_back({s.id, field, message});
    };

    if (s.id.empty()) add("id", "id is empty");
    if (is_blank(s.context.instruction)) add("context.instruction", "instruction is empty");

    auto check_refs = [&](const std::vector<std::string>& refs, const std::string& field) {
        for (const auto& r : refs) {
            if (!is_valid_ref(r)) add(field, "invalid ref '" + r + "'");
        }
    };
    check_refs(s.context.image_refs, "context.image_refs");
    check_refs(s.context.audio_refs, "context.audio_refs");
    check_refs(s.context.video_refs, "context.video_refs");
    if (!s.output_video_ref.empty() && !is_valid_ref(s.output_video_ref)) {
        add("output_video_ref", "invalid ref '" + s.output_video_ref + "'");
    }

    std::string cat = Taxonomy::normalize(s.category);
    if (!taxonomy.has_category(cat)) {
        add("category", "unknown category '" + s.category + "'");
    } else if (!taxonomy.subcategory_in(cat, s.subcategory)) {
        add("subcategory",
            "subcategory '" + s.subcategory + "' is not in category '" + s.category + "'");
    }
    if (auto fam = family_for_category(cat); fam && *fam != s.task_family) {
        add("task_family", std::string("task_family '") + to_string(s.task_family) +
                               "' does not match category '" + s.category + "' (expected '" +
                               to_string(*fam) + "')");
    }

    for (const auto& item : s.weaknesses.items()) {
        if (is_blank(item)) add("weaknesses", "weakness item is whitespace-only");
    }
    return report;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj, const std::string& field,
                                           int line) {
    if (!obj.contains(field)) {
        throw DatasetError("line " + std::to_string(line) + ": missing field '" + field + "'");
    }
    return obj.at(field);
}

inline std::string get_string(const nlohmann::json& obj, const std::string& field, int line) {
    const auto& v = require_field(obj, field, line);
    if (!v.is_string()) {
        throw DatasetError("line " + std::to_string(line) + ": field '" + field +
                           "' must be a string");
    }
    return v.get<std::string>();
}

inline std::vector<std::string> get_string_array(const nlohmann::json& obj,
                                                 const std::string& field, int line) {
    if (!obj.contains(field)) return {};
    const auto& v = obj.at(field);
    if (!v.is_array()) {
        throw DatasetError("line " + std::to_string(line) + ": field '" + field +
                           "' must be an array");
    }
    std::vector<std::string> out;
    for (const auto& e : v) {
        if (!e.is_string()) {
            throw DatasetError("line " + std::to_string(line) + ": field '" + field +
                               "' must contain only strings");
        }
        out.push_back(e.get<std::string>());
    }
    return out;
}

} // namespace detail

inline Sample parse_sample(const nlohmann::json& rec, int line) {
    using detail::get_string;
    using detail::get_string_array;
    if (!rec.is_object()) {
        throw DatasetError("line " + std::to_string(line) + ": record is not a JSON object");
    }
    Sample s;
    s.id = get_string(rec, "id", line);
    s.category = get_string(rec, "category", line);
    s.subcategory = get_string(rec, "subcategory", line);
    std::string fam = get_string(rec, "task_family", line);
    auto parsed_fam = task_family_from_string(Taxonomy::normalize(fam));
    if (!parsed_fam) {
        throw DatasetError("line " + std::to_string(line) + ": field 'task_family': unknown value '" +
                           fam + "'");
    }
    s.task_family = *parsed_fam;

    const auto& ctx = detail::require_field(rec, "context", line);
    if (!ctx.is_object()) {
        throw DatasetError("line " + std::to_string(line) + ": field 'context' must be an object");
    }
    s.context.instruction = get_string(ctx, "instruction", line);
    s.context.image_refs = get_string_array(ctx, "image_refs", line);
    s.context.audio_refs = get_string_array(ctx, "audio_refs", line);
    s.context.video_refs = get_string_array(ctx, "video_refs", line);

    s.output_video_ref = get_string(rec, "output_video_ref", line);

    const auto& wk = detail::require_field(rec, "weaknesses", line);
    if (!wk.is_object() || !wk.contains("items")) {
        throw DatasetError("line " + std::to_string(line) +
                           ": field 'weaknesses' must be an object with 'items'");
    }
    try {
        s.weaknesses = WeaknessSet(get_string_array(wk, "items", line));
    } catch (const DatasetError& e) {
        throw DatasetError("line " + std::to_string(line) + ": field 'weaknesses': " + e.what());
    }

    if (rec.contains("model_name")) s.model_name = get_string(rec, "model_name", line);
    if (rec.contains("verdict") && !rec.at("verdict").is_null()) {
        std::string v = get_string(rec, "verdict", line);
        auto parsed = verdict_from_string(v);
        if (!parsed) {
            throw DatasetError("line " + std::to_string(line) +
                               ": field 'verdict': expected 'pass' or 'fail', got '" + v + "'");
        }
        s.verdict = parsed;
    }
    return s;
}

inline nlohmann::json sample_to_json(const Sample& s) {
    nlohmann::json rec;
    rec["id"] = s.id;
    rec["category"] = s.category;
    rec["subcategory"] = s.subcategory;
    rec["task_family"] = to_string(s.task_family);
    rec["context"] = {{"instruction", s.context.instruction},
                      {"image_refs", s.context.image_refs},
                      {"audio_refs", s.context.audio_refs},
                      {"video_refs", s.context.video_refs}};
    rec["output_video_ref"] = s.output_video_ref;
    rec["weaknesses"] = {{"items", s.weaknesses.items()}};
    rec["model_name"] = s.model_name;
    if (s.verdict) rec["verdict"] = to_string(*s.verdict);
    return rec;
}

// Parses a JSON Lines dataset. Structural problems (unparseable JSON, bad
// field types, duplicate ids) always throw; invariant violations are
// appended to `report` so a validation pass can list all of them.
inline std::vector<Sample> load_dataset(const std::string& path, const Taxonomy& taxonomy,
                                        ValidationReport& report) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open dataset file: " + path);

    std::vector<Sample> samples;
    std::unordered_map<std::string, int> id_lines;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DatasetError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        Sample s = parse_sample(rec, line_no);
        auto [it, inserted] = id_lines.emplace(s.id, line_no);
        if (!inserted) {
            throw DatasetError("duplicate id '" + s.id + "' at lines " +
                               std::to_string(it->second) + " and " + std::to_string(line_no));
        }
        auto rep = validate_sample(s, taxonomy);
        for (auto& v : rep.violations) {
            v.message = "line " + std::to_string(line_no) + ": " + v.message;
            report.violations.push_back(std::move(v));
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

// Strict variant: any invariant violation is an error naming the record.
inline std::vector<Sample> load_dataset(const std::string& path, const Taxonomy& taxonomy) {
    ValidationReport report;
    auto samples = load_dataset(path, taxonomy, report);
    if (!report.ok()) {
        const auto& v = report.violations.front();
        throw DatasetError("sample '" + v.sample_id + "': field '" + v.field + "': " + v.message);
    }
    return samples;
}

inline void save_dataset(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write dataset file: " + path);
    for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

// Disjoint train/val/test id lists. Sizes differ by at most one overall and
// per subcategory (stratified).
struct SplitAssignment {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"seed", seed},
                {"train_ids", train_ids},
                {"val_ids", val_ids},
                {"test_ids", test_ids}};
    }

    static SplitAssignment from_json(const nlohmann::json& doc) {
        SplitAssignment a;
        a.seed = doc.at("seed").get<std::uint64_t>();
        a.train_ids = doc.at("train_ids").get<std::vector<std::string>>();
        a.val_ids = doc.at("val_ids").get<std::vector<std::string>>();
        a.test_ids = doc.at("test_ids").get<std::vector<std::string>>();
        return a;
    }
};

// Deterministic stratified 3-way split. A pure function of the (id,
// subcategory) pairs and the seed: input order never changes the result.
inline SplitAssignment split_dataset(const std::vector<Sample>& ds, std::uint64_t seed) {
    if (ds.size() < 3) {
        throw DatasetError("split_dataset: need at least 3 samples, got " +
                           std::to_string(ds.size()));
    }
    std::map<std::string, std::vector<std::string>> by_sub;
    for (const auto& s : ds) {
        by_sub[Taxonomy::normalize(s.subcategory)].push_back(s.id);
    }

    SplitAssignment out;
    out.seed = seed;
    std::vector<std::string>* buckets[3] = {&out.train_ids, &out.val_ids, &out.test_ids};
    std::size_t cursor = 0;
    for (auto& [sub, ids] : by_sub) {
        std::sort(ids.begin(), ids.end());
        DetRng rng(mix_seed(seed, fnv1a64(sub)));
        rng.shuffle(ids);
        // Consecutive cursor positions keep both the global and the
        // per-subcategory bucket sizes within one of each other.
        for (auto& id : ids) {
            buckets[cursor % 3]->push_back(std::move(id));
            ++cursor;
        }
    }
    return out;
}

// Groups samples by the fixed category -> task family map. All three
// families are always present as keys.
inline std::map<TaskFamily, std::vector<Sample>> group_by_task_family(
    const std::vector<Sample>& ds) {
    std::map<TaskFamily, std::vector<Sample>> groups;
    groups[TaskFamily::prompt_following];
    groups[TaskFamily::physical_logical];
    groups[TaskFamily::perception];
    for (const auto& s : ds) {
        auto fam = family_for_category(Taxonomy::normalize(s.category));
        groups[fam.value_or(s.task_family)].push_back(s);
    }
    return groups;
}

} // namespace ave
