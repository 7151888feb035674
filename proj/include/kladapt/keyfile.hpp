#pragma once

// Line-oriented `key = value` reader with nested `name { ... }` sections, shared by
// the model-file and scenario-preset formats. `#` starts a comment. Repeated keys
// are preserved in order.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kladapt/expr.hpp"

namespace kladapt {

struct KeySection {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
    std::vector<KeySection> sections;

    [[nodiscard]] const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }

    [[nodiscard]] std::string get(const std::string& key) const {
        const std::string* v = find(key);
        if (!v) throw Error(Error::Code::Config, "missing required field '" + key + "'" +
                                                     (name.empty() ? "" : " in section '" + name + "'"));
        return *v;
    }

    [[nodiscard]] std::string get_or(const std::string& key, const std::string& fallback) const {
        const std::string* v = find(key);
        return v ? *v : fallback;
    }

    [[nodiscard]] double get_double(const std::string& key) const {
        return parse_double(key, get(key));
    }

    [[nodiscard]] double get_double_or(const std::string& key, double fallback) const {
        const std::string* v = find(key);
        return v ? parse_double(key, *v) : fallback;
    }

    [[nodiscard]] int get_int(const std::string& key) const {
        double v = get_double(key);
        int i = static_cast<int>(v);
        if (static_cast<double>(i) != v)
            throw Error(Error::Code::Config, "field '" + key + "' must be an integer");
        return i;
    }

    [[nodiscard]] std::vector<double> get_vector(const std::string& key) const {
        return parse_vector(key, get(key));
    }

    [[nodiscard]] const KeySection* find_section(const std::string& sname) const {
        for (const auto& s : sections)
            if (s.name == sname) return &s;
        return nullptr;
    }

    static double parse_double(const std::string& key, const std::string& text) {
        std::istringstream is(text);
        double v = 0.0;
        if (!(is >> v) || !(is >> std::ws).eof())
            throw Error(Error::Code::Config, "field '" + key + "' is not a number: '" + text + "'");
        return v;
    }

    static std::vector<double> parse_vector(const std::string& key, const std::string& text) {
        std::istringstream is(text);
        std::vector<double> out;
        double v = 0.0;
        while (is >> v) out.push_back(v);
        if (!is.eof())
            throw Error(Error::Code::Config, "field '" + key + "' is not a numeric vector: '" + text + "'");
        return out;
    }
};

namespace detail {

inline std::string strip(std::string s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline KeySection parse_keyfile(std::istream& in, const std::string& origin = "<stream>") {
    KeySection root;
    std::vector<KeySection*> stack{&root};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::string s = detail::strip(line);
        if (s.empty()) continue;
        if (s == "}") {
            if (stack.size() == 1)
                throw Error(Error::Code::Config, origin + ":" + std::to_string(lineno) + ": unmatched '}'");
            stack.pop_back();
            continue;
        }
        if (s.back() == '{') {
            std::string name = detail::strip(s.substr(0, s.size() - 1));
            if (name.empty())
                throw Error(Error::Code::Config, origin + ":" + std::to_string(lineno) + ": section needs a name");
            stack.back()->sections.push_back(KeySection{name, {}, {}});
            stack.push_back(&stack.back()->sections.back());
            continue;
        }
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw Error(Error::Code::Config,
                        origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + s + "'");
        std::string key = detail::strip(s.substr(0, eq));
        std::string value = detail::strip(s.substr(eq + 1));
        if (key.empty())
            throw Error(Error::Code::Config, origin + ":" + std::to_string(lineno) + ": empty key");
        stack.back()->entries.emplace_back(std::move(key), std::move(value));
    }
    if (stack.size() != 1)
        throw Error(Error::Code::Config, origin + ": unterminated section '" + stack.back()->name + "'");
    return root;
}

inline KeySection load_keyfile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Error::Code::Config, "cannot open file: " + path);
    return parse_keyfile(in, path);
}

}  // namespace kladapt
