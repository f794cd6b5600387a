#pragma once

// Structured text reports (nested key = value sections) and scenario results.

#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "smp/stats.hpp"

namespace smp {

inline std::string format_number(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

/// Tree of sections; rendered as `[a.b.c]` headers followed by `key = value` lines.
class ReportSection {
public:
    ReportSection() = default;
    explicit ReportSection(std::string name) : name_(std::move(name)) {}

    const std::string& name() const { return name_; }

    ReportSection& child(const std::string& name) {
        for (auto& c : children_)
            if (c.name_ == name) return c;
        children_.emplace_back(name);
        return children_.back();
    }

    ReportSection& set(const std::string& key, std::string value) {
        for (auto& [k, v] : entries_)
            if (k == key) {
                v = std::move(value);
                return *this;
            }
        entries_.emplace_back(key, std::move(value));
        return *this;
    }
    ReportSection& set(const std::string& key, const char* value) { return set(key, std::string(value)); }
    ReportSection& set(const std::string& key, double value) { return set(key, format_number(value)); }
    ReportSection& set(const std::string& key, bool value) { return set(key, std::string(value ? "true" : "false")); }
    ReportSection& set(const std::string& key, std::size_t value) { return set(key, std::to_string(value)); }
    ReportSection& set(const std::string& key, int value) { return set(key, std::to_string(value)); }
    ReportSection& set(const std::string& key, const Estimate& e) {
        set(key + ".mean", e.mean);
        set(key + ".se", e.se);
        return set(key + ".n", e.n);
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    const std::vector<ReportSection>& children() const { return children_; }

    /// Value at key, or empty string.
    std::string get(const std::string& key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return v;
        return {};
    }

    void write(std::ostream& os, const std::string& prefix = {}) const {
        const std::string full = prefix.empty() ? name_ : prefix + "." + name_;
        if (!entries_.empty()) {
            os << '[' << full << "]\n";
            for (const auto& [k, v] : entries_) os << k << " = " << v << '\n';
            os << '\n';
        }
        for (const auto& c : children_) c.write(os, full);
    }

private:
    std::string name_;
    std::vector<std::pair<std::string, std::string>> entries_;
    std::vector<ReportSection> children_;
};

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Outcome of one scenario: report tree, named assertions and CSV tables.
struct ScenarioReport {
    ReportSection report;
    std::vector<Check> checks;
    std::map<std::string, std::string> csv;  // file name -> contents

    explicit ScenarioReport(std::string scenario = "scenario") : report(std::move(scenario)) {}

    void check(std::string name, bool ok, std::string detail = {}) {
        checks.push_back({std::move(name), ok, std::move(detail)});
    }
    bool passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
    const Check* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }

    void write(std::ostream& os) const {
        report.write(os);
        os << '[' << report.name() << ".checks]\n";
        for (const auto& c : checks) {
            os << c.name << " = " << (c.passed ? "pass" : "fail");
            if (!c.detail.empty()) os << " ; " << c.detail;
            os << '\n';
        }
    }
};

}  // namespace smp
