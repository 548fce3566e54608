#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ave/errors.hpp"
#include "ave/util.hpp"

namespace ave {

enum class TaskFamily { prompt_following, physical_logical, perception };

inline const char* to_string(TaskFamily f) {
    switch (f) {
        case TaskFamily::prompt_following: return "prompt_following";
        case TaskFamily::physical_logical: return "physical_logical";
        case TaskFamily::perception: return "perception";
    }
    return "?";
}

inline std::optional<TaskFamily> task_family_from_string(std::string_view s) {
    if (s == "prompt_following") return TaskFamily::prompt_following;
    if (s == "physical_logical") return TaskFamily::physical_logical;
    if (s == "perception") return TaskFamily::perception;
    return std::nullopt;
}

// The fixed category -> training-task-family map.
inline std::optional<TaskFamily> family_for_category(std::string_view normalized_category) {
    if (normalized_category == "element_editing" || normalized_category == "partial_reference" ||
        normalized_category == "script_continuation") {
        return TaskFamily::prompt_following;
    }
    if (normalized_category == "physical_simulation" || normalized_category == "logical_reasoning") {
        return TaskFamily::physical_logical;
    }
    if (normalized_category == "perception") return TaskFamily::perception;
    return std::nullopt;
}

// Category/subcategory lists ship as a versioned configuration asset rather
// than hard-coded names; validation reads whatever list is loaded here.
class Taxonomy {
public:
    static std::string normalize(std::string_view name) {
        std::string out = trim(name);
        std::transform(out.begin(), out.end(), out.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        std::replace(out.begin(), out.end(), ' ', '_');
        std::replace(out.begin(), out.end(), '-', '_');
        return out;
    }

    static Taxonomy from_json(const nlohmann::json& doc) {
        Taxonomy t;
        if (!doc.is_object() || !doc.contains("categories") || !doc["categories"].is_object()) {
            throw ConfigError("taxonomy: expected object with a 'categories' map");
        }
        t.version_ = doc.value("version", std::string("unversioned"));
        for (const auto& [cat, subs] : doc["categories"].items()) {
            std::string c = normalize(cat);
            if (!family_for_category(c)) {
                throw ConfigError("taxonomy: unknown category '" + cat + "'");
            }
            if (!subs.is_array()) {
                throw ConfigError("taxonomy: subcategories of '" + cat + "' must be an array");
            }
            auto& list = t.subcategories_[c];
            for (const auto& s : subs) {
                if (!s.is_string()) {
                    throw ConfigError("taxonomy: subcategory entries of '" + cat + "' must be strings");
                }
                list.push_back(normalize(s.get<std::string>()));
            }
        }
        return t;
    }

    static Taxonomy load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("taxonomy: cannot open " + path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("taxonomy: " + path + ": " + e.what());
        }
        return from_json(doc);
    }

    const std::string& version() const { return version_; }

    bool has_category(std::string_view category) const {
        return subcategories_.count(normalize(category)) > 0;
    }

    bool subcategory_in(std::string_view category, std::string_view subcategory) const {
        auto it = subcategories_.find(normalize(category));
        if (it == subcategories_.end()) return false;
        std::string sub = normalize(subcategory);
        return std::find(it->second.begin(), it->second.end(), sub) != it->second.end();
    }

    std::vector<std::string> categories() const {
        std::vector<std::string> out;
        for (const auto& [c, subs] : subcategories_) out.push_back(c);
        return out;
    }

    const std::vector<std::string>& subcategories_of(std::string_view category) const {
        static const std::vector<std::string> empty;
        auto it = subcategories_.find(normalize(category));
        return it == subcategories_.end() ? empty : it->second;
    }

    std::size_t subcategory_count() const {
        std::size_t n = 0;
        for (const auto& [c, subs] : subcategories_) n += subs.size();
        return n;
    }

private:
    std::string version_;
    std::map<std::string, std::vector<std::string>> subcategories_;
};

} // namespace ave
