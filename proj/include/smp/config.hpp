#pragma once

// Experiment configuration: flat INI sections of `key = value`.
// Every problem found is collected; parsing fails with the full list.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "smp/errors.hpp"
#include "smp/examples.hpp"

namespace smp {

inline const std::vector<std::string>& known_scenarios() {
    static const std::vector<std::string> s{"example1", "example2",    "rates",     "gateaux",
                                            "pmp-check", "sufficiency", "isometry", "derivative-check"};
    return s;
}

/// Parsed and validated experiment.
struct ExperimentConfig {
    std::string scenario;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    Example1Config example1 = Example1Config::defaults();
    Example2Config example2 = Example2Config::defaults();

    // Candidate policy override; at most one of these is set.
    std::optional<std::vector<ControlVec>> open_loop;
    std::optional<std::string> feedback;  // "optimal" (example1 u*) or "lsmc" (example2 sweeps)

    double phi_scale = 1.0;          // isometry: Phi = phi_scale * I
    long trajectory_paths = 4;       // paths dumped to trajectories.csv
    double nonlinear_check = 0.1;    // derivative-check: strength of the nonlinear variant
    std::string text;                // source text, hashed into the manifest

    bool uses_example1() const { return scenario != "example2"; }
    bool uses_example2() const { return scenario == "example2" || scenario == "derivative-check"; }
};

/// Configuration rejected; carries every validation error.
class ConfigErrors : public ConfigError {
public:
    explicit ConfigErrors(std::vector<std::string> errors)
        : ConfigError("invalid configuration: " + detail::join_errors(errors)), errors_(std::move(errors)) {}
    const std::vector<std::string>& errors() const { return errors_; }

private:
    std::vector<std::string> errors_;
};

namespace detail {

inline std::string trim(std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && ws(static_cast<unsigned char>(s[i]))) ++i;
    return s.substr(i);
}

inline std::optional<double> to_double(const std::string& s) {
    const std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size()) return std::nullopt;
    return v;
}

/// Rows separated by ';', entries by ',' or whitespace.
inline std::optional<std::vector<std::vector<double>>> to_rows(const std::string& s) {
    std::vector<std::vector<double>> rows;
    std::stringstream rs(s);
    std::string row;
    while (std::getline(rs, row, ';')) {
        std::replace(row.begin(), row.end(), ',', ' ');
        std::stringstream es(row);
        std::string tok;
        std::vector<double> r;
        while (es >> tok) {
            const auto v = to_double(tok);
            if (!v) return std::nullopt;
            r.push_back(*v);
        }
        if (!r.empty()) rows.push_back(std::move(r));
    }
    return rows;
}

class SectionReader {
public:
    SectionReader(const boost::property_tree::ptree& pt, std::string section, std::vector<std::string>& errors)
        : section_(std::move(section)), errors_(errors) {
        if (auto s = pt.get_child_optional(section_)) node_ = &*s;
    }

    bool present() const { return node_ != nullptr; }

    std::optional<std::string> raw(const std::string& key) {
        used_.insert(key);
        if (!node_) return std::nullopt;
        if (auto v = node_->get_optional<std::string>(boost::property_tree::ptree::path_type(key, '\0')))
            return trim(*v);
        return std::nullopt;
    }

    void number(const std::string& key, double& out) {
        if (auto r = raw(key)) {
            if (auto v = to_double(*r)) out = *v;
            else bad(key, "expected a number");
        }
    }
    void integer(const std::string& key, long& out) {
        if (auto r = raw(key)) {
            const auto v = to_double(*r);
            if (v && std::floor(*v) == *v && std::abs(*v) < 9e15) out = static_cast<long>(*v);
            else bad(key, "expected an integer");
        }
    }
    void integer(const std::string& key, int& out) {
        long v = out;
        integer(key, v);
        out = static_cast<int>(v);
    }
    void seed(const std::string& key, std::uint64_t& out) {
        if (auto r = raw(key)) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(r->c_str(), &end, 10);
            if (r->empty() || (*r)[0] == '-' || end != r->c_str() + r->size()) bad(key, "expected a non-negative integer");
            else out = v;
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (auto r = raw(key)) {
            if (*r == "true" || *r == "1" || *r == "yes") out = true;
            else if (*r == "false" || *r == "0" || *r == "no") out = false;
            else bad(key, "expected true or false");
        }
    }
    void text(const std::string& key, std::string& out) {
        if (auto r = raw(key)) out = *r;
    }
    void list(const std::string& key, std::vector<double>& out) {
        if (auto r = raw(key)) {
            auto rows = to_rows(*r);
            if (!rows || rows->size() > 1) {
                bad(key, "expected a list of numbers");
                return;
            }
            out = rows->empty() ? std::vector<double>{} : rows->front();
        }
    }
    void vector(const std::string& key, Eigen::VectorXd& out) {
        std::vector<double> v;
        if (!node_ || !raw(key)) return;
        list(key, v);
        out = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    void matrix(const std::string& key, Eigen::MatrixXd& out) {
        if (auto r = raw(key)) {
            auto rows = to_rows(*r);
            if (!rows || rows->empty()) {
                bad(key, "expected rows of numbers separated by ';'");
                return;
            }
            const std::size_t cols = rows->front().size();
            for (const auto& row : *rows)
                if (row.size() != cols) {
                    bad(key, "rows have different lengths");
                    return;
                }
            out.resize(static_cast<Eigen::Index>(rows->size()), static_cast<Eigen::Index>(cols));
            for (std::size_t i = 0; i < rows->size(); ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*rows)[i][j];
        }
    }

    /// Reports keys of this section that no reader asked for.
    void reject_unknown() {
        if (!node_) return;
        for (const auto& [k, v] : *node_)
            if (!used_.count(k)) errors_.push_back(section_ + "." + k + ": unknown key");
    }

private:
    void bad(const std::string& key, const std::string& what) { errors_.push_back(section_ + "." + key + ": " + what); }

    std::string section_;
    std::vector<std::string>& errors_;
    const boost::property_tree::ptree* node_ = nullptr;
    std::set<std::string> used_;
};

inline std::optional<DerivativeFault> parse_derivative_fault(const std::string& s) {
    static const std::map<std::string, DerivativeFault> m{
        {"none", DerivativeFault::none},           {"drift_x", DerivativeFault::drift_x},
        {"drift_u", DerivativeFault::drift_u},     {"diffusion_x", DerivativeFault::diffusion_x},
        {"running_x", DerivativeFault::running_x}, {"running_u", DerivativeFault::running_u},
        {"terminal_x", DerivativeFault::terminal_x}};
    const auto it = m.find(s);
    if (it == m.end()) return std::nullopt;
    return it->second;
}

}  // namespace detail

/// Parses and validates configuration text. Throws ConfigErrors listing every problem.
inline ExperimentConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    std::vector<std::string> errors;
    pt::ptree tree;
    try {
        std::istringstream is(text);
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigErrors({std::string("syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")"});
    }

    static const std::set<std::string> sections{"run",    "space",  "example1", "example2", "spikes",
                                                "checks", "policy", "faults",   "isometry", "output"};
    for (const auto& [name, node] : tree) {
        if (node.empty() && !node.data().empty()) errors.push_back(name + ": key outside of a section");
        else if (!sections.count(name)) errors.push_back(name + ": unknown section");
    }

    ExperimentConfig cfg;
    cfg.text = text;
    auto& e1 = cfg.example1;
    auto& e2 = cfg.example2;

    detail::SectionReader run(tree, "run", errors);
    if (auto s = run.raw("scenario")) cfg.scenario = *s;
    run.text("output", cfg.output_dir);
    bool seed_given = false;
    if (run.raw("seed")) {
        seed_given = true;
        run.seed("seed", cfg.seed);
    }
    long paths = -1, steps = -1;
    double horizon = -1;
    run.integer("paths", paths);
    run.integer("steps", steps);
    run.number("horizon", horizon);
    run.reject_unknown();
    if (cfg.scenario.empty()) errors.push_back("run.scenario: missing");
    else if (std::find(known_scenarios().begin(), known_scenarios().end(), cfg.scenario) == known_scenarios().end())
        errors.push_back("run.scenario: unknown scenario '" + cfg.scenario + "'");

    // Example-2 base: the general two-dimensional problem or its scalar reduction.
    detail::SectionReader x2(tree, "example2", errors);
    std::string variant = "general";
    x2.text("variant", variant);
    if (variant == "scalar") e2 = Example2Config::scalar();
    else if (variant != "general") errors.push_back("example2.variant: expected general or scalar");

    if (seed_given) e1.seed = e2.seed = cfg.seed;
    else cfg.seed = e1.seed;
    if (paths != -1) e1.paths = e2.paths = paths;
    if (steps != -1) e1.steps = e2.steps = steps;
    if (horizon != -1) e1.horizon = e2.horizon = horizon;

    detail::SectionReader space(tree, "space", errors);
    if (cfg.scenario == "example2") {
        space.integer("state_dim", e2.state_dim);
        space.integer("control_dim", e2.control_dim);
    } else {
        space.integer("state_dim", e1.state_dim);
        space.integer("control_dim", e1.control_dim);
    }
    space.reject_unknown();

    detail::SectionReader x1(tree, "example1", errors);
    x1.vector("beta", e1.beta);
    x1.vector("c", e1.c);
    x1.vector("x0", e1.x0);
    x1.matrix("f_tilde", e1.f_tilde);
    x1.matrix("g_tilde", e1.g_tilde);
    x1.number("alpha0", e1.alpha0);
    x1.number("alpha1", e1.alpha1);
    x1.number("control_half_width", e1.control_half_width);
    x1.number("nonlinear_strength", e1.nonlinear_strength);
    x1.reject_unknown();

    x2.matrix("a", e2.a);
    x2.matrix("c", e2.c);
    x2.matrix("g_tilde", e2.g_tilde);
    x2.matrix("d", e2.d);
    x2.matrix("p", e2.p);
    x2.matrix("r", e2.r);
    x2.matrix("p1", e2.p1);
    x2.vector("f", e2.f);
    x2.vector("gamma", e2.gamma);
    x2.vector("x0", e2.x0);
    x2.vector("beta", e2.beta);
    x2.vector("initial_control", e2.initial_control);
    x2.number("alpha0", e2.alpha0);
    x2.number("alpha1", e2.alpha1);
    x2.integer("basis_degree", e2.basis_degree);
    x2.integer("sweeps", e2.sweeps);
    x2.number("control_half_width", e2.control_half_width);
    x2.number("duality_t0", e2.duality_t0);
    x2.vector("duality_v", e2.duality_v);
    x2.reject_unknown();

    detail::SectionReader spikes(tree, "spikes", errors);
    spikes.list("t0", e1.spike_t0);
    spikes.number("eps", e1.spike_eps);
    spikes.matrix("offsets", e1.spike_offsets);
    spikes.number("probe_t0", e1.probe_t0);
    spikes.vector("probe_offset", e1.probe_offset);
    spikes.list("eps_ladder", e1.eps_ladder);
    spikes.reject_unknown();

    detail::SectionReader checks(tree, "checks", errors);
    checks.integer("probes_per_dim", e1.probes_per_dim);
    checks.integer("sample_times", e1.sample_times);
    checks.integer("sample_paths", e1.sample_paths);
    checks.integer("convexity_pairs", e1.convexity_pairs);
    e2.probes_per_dim = e1.probes_per_dim;
    e2.sample_times = e1.sample_times;
    e2.sample_paths = e1.sample_paths;
    checks.number("nonlinear_check", cfg.nonlinear_check);
    checks.reject_unknown();

    detail::SectionReader policy(tree, "policy", errors);
    if (auto ol = policy.raw("open_loop")) {
        auto rows = detail::to_rows(*ol);
        if (!rows || rows->empty()) errors.push_back("policy.open_loop: expected rows of numbers separated by ';'");
        else {
            std::vector<ControlVec> sched;
            for (auto& r : *rows) sched.push_back(Eigen::Map<Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size())));
            cfg.open_loop = std::move(sched);
        }
    }
    if (auto fb = policy.raw("feedback")) {
        cfg.feedback = *fb;
        const std::string expect = cfg.scenario == "example2" ? "lsmc" : "optimal";
        if (*fb != expect) errors.push_back("policy.feedback: expected '" + expect + "' for scenario " + cfg.scenario);
    }
    if (cfg.open_loop && cfg.feedback)
        errors.push_back("policy: open_loop and feedback are both given (ambiguous candidate policy)");
    policy.reject_unknown();

    detail::SectionReader faults(tree, "faults", errors);
    faults.number("p_scale", e1.p_scale);
    faults.boolean("concave_cost", e1.concave_cost);
    std::string df = "none";
    faults.text("wrong_derivative", df);
    if (auto f = detail::parse_derivative_fault(df)) e1.derivative_fault = e2.derivative_fault = *f;
    else errors.push_back("faults.wrong_derivative: unknown derivative '" + df + "'");
    faults.reject_unknown();

    detail::SectionReader iso(tree, "isometry", errors);
    iso.number("phi_scale", cfg.phi_scale);
    iso.reject_unknown();

    detail::SectionReader out(tree, "output", errors);
    out.integer("trajectory_paths", cfg.trajectory_paths);
    out.reject_unknown();
    if (cfg.trajectory_paths < 0) errors.push_back("output.trajectory_paths: must be >= 0");

    if (cfg.uses_example1())
        for (auto& m : e1.errors()) errors.push_back("example1 " + m);
    if (cfg.uses_example2())
        for (auto& m : e2.errors()) errors.push_back("example2 " + m);

    if (cfg.open_loop) {
        const int m = cfg.scenario == "example2" ? e2.control_dim : e1.control_dim;
        const long steps_now = cfg.scenario == "example2" ? e2.steps : e1.steps;
        for (const auto& u : *cfg.open_loop)
            if (u.size() != m) {
                errors.push_back("policy.open_loop: every row needs control_dim entries");
                break;
            }
        if (cfg.open_loop->size() != 1 && static_cast<long>(cfg.open_loop->size()) != steps_now)
            errors.push_back("policy.open_loop: expected one row (constant) or one row per step");
        if (cfg.scenario == "example2" && cfg.open_loop->size() != 1)
            errors.push_back("policy.open_loop: example2 sweeps start from a constant control");
    }

    if (!errors.empty()) throw ConfigErrors(std::move(errors));
    if (cfg.scenario == "example2" && cfg.open_loop) e2.initial_control = cfg.open_loop->front();
    return cfg;
}

/// 64-bit FNV-1a digest, hex encoded.
inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

}  // namespace smp
