#include "config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mfg/dynamics.hpp"
#include "mfg/error.hpp"

namespace mfg::cli {

namespace {

struct FieldError {
    std::string message;
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& s) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw FieldError{"expected a number, got '" + s + "'"};
    }
    if (pos != s.size() || !std::isfinite(v)) throw FieldError{"expected a number, got '" + s + "'"};
    return v;
}

long long to_integer(const std::string& s) {
    std::size_t pos = 0;
    long long v;
    try {
        v = std::stoll(s, &pos);
    } catch (const std::exception&) {
        throw FieldError{"expected an integer, got '" + s + "'"};
    }
    if (pos != s.size()) throw FieldError{"expected an integer, got '" + s + "'"};
    return v;
}

int to_int(const std::string& s) {
    const long long v = to_integer(s);
    if (v < -1000000000LL || v > 1000000000LL) throw FieldError{"integer out of range: " + s};
    return static_cast<int>(v);
}

std::uint64_t to_u64(const std::string& s) {
    const long long v = to_integer(s);
    if (v < 0) throw FieldError{"expected a nonnegative integer, got '" + s + "'"};
    return static_cast<std::uint64_t>(v);
}

std::vector<double> to_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(to_double(item));
    if (out.empty()) throw FieldError{"expected a comma-separated list of numbers"};
    return out;
}

std::string to_choice(const std::string& s, std::initializer_list<const char*> choices) {
    for (const char* c : choices)
        if (s == c) return s;
    std::string msg = "expected one of";
    for (const char* c : choices) msg += std::string(" ") + c;
    throw FieldError{msg + ", got '" + s + "'"};
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

void add_density(std::map<std::string, Setter>& t, const std::string& section,
                 DensitySpec ExperimentConfig::*member) {
    t[section + ".kind"] = [member](ExperimentConfig& c, const std::string& v) {
        (c.*member).kind = to_choice(v, {"uniform", "cosine", "bump"});
    };
    t[section + ".amplitude"] = [member](ExperimentConfig& c, const std::string& v) {
        (c.*member).amplitude = to_double(v);
    };
    t[section + ".phase"] = [member](ExperimentConfig& c, const std::string& v) {
        (c.*member).phase = to_double(v);
    };
    t[section + ".width"] = [member](ExperimentConfig& c, const std::string& v) {
        (c.*member).width = to_double(v);
    };
    t[section + ".floor"] = [member](ExperimentConfig& c, const std::string& v) {
        (c.*member).floor = to_double(v);
    };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        using C = ExperimentConfig;
        using S = const std::string&;
        t["experiment.kind"] = [](C& c, S v) {
            c.experiment = to_choice(v, {"finite", "discounted", "stationary", "tauberian", "gap",
                                         "mather", "connect"});
        };
        t["experiment.tol_equality"] = [](C& c, S v) { c.tol_equality = to_double(v); };
        t["experiment.tol_tauberian"] = [](C& c, S v) { c.tol_tauberian = to_double(v); };
        t["experiment.tol_upper"] = [](C& c, S v) { c.tol_upper = to_double(v); };
        t["experiment.margin"] = [](C& c, S v) { c.margin = to_double(v); };
        t["experiment.tol_fixed"] = [](C& c, S v) { c.tol_fixed = to_double(v); };
        t["experiment.expect_window"] = [](C& c, S v) {
            c.expect_window = to_choice(v, {"any", "stationary", "non_stationary"});
        };
        t["grid.dim"] = [](C& c, S v) { c.dim = to_int(v); };
        t["grid.n"] = [](C& c, S v) { c.n = to_int(v); };
        t["time.T"] = [](C& c, S v) { c.T = to_double(v); };
        t["time.T_list"] = [](C& c, S v) { c.T_list = to_doubles(v); };
        t["time.delta"] = [](C& c, S v) { c.delta = to_double(v); };
        t["time.delta_list"] = [](C& c, S v) { c.delta_list = to_doubles(v); };
        t["time.dt"] = [](C& c, S v) { c.solver.dt = to_double(v); };
        t["time.window_T"] = [](C& c, S v) { c.window_T = to_double(v); };
        t["time.tau"] = [](C& c, S v) { c.tau = to_double(v); };
        t["model.b"] = [](C& c, S v) { c.b = to_double(v); };
        t["model.sigma"] = [](C& c, S v) { c.sigma = to_double(v); };
        add_density(t, "initial", &C::initial);
        add_density(t, "target", &C::target);
        t["coupling.kind"] = [](C& c, S v) {
            c.coupling.kind = to_choice(v, {"zero", "convolution", "bump", "sec2", "separator"});
        };
        t["coupling.coefficients"] = [](C& c, S v) { c.coupling.coefficients = to_doubles(v); };
        t["coupling.epsilon"] = [](C& c, S v) { c.coupling.epsilon = to_double(v); };
        t["coupling.amplitude"] = [](C& c, S v) { c.coupling.amplitude = to_double(v); };
        t["coupling.delta_s"] = [](C& c, S v) { c.coupling.delta_s = to_double(v); };
        t["coupling.dictionary_fourier"] = [](C& c, S v) { c.coupling.dictionary_fourier = to_int(v); };
        t["coupling.dictionary_random"] = [](C& c, S v) { c.coupling.dictionary_random = to_int(v); };
        t["coupling.seed"] = [](C& c, S v) { c.coupling.seed = to_u64(v); };
        t["coupling.a_phases"] = [](C& c, S v) { c.coupling.a_phases = to_doubles(v); };
        t["coupling.b_phases"] = [](C& c, S v) { c.coupling.b_phases = to_doubles(v); };
        t["centre.kind"] = [](C& c, S v) {
            c.coupling.centre.kind = to_choice(v, {"uniform", "cosine", "bump"});
        };
        t["centre.amplitude"] = [](C& c, S v) { c.coupling.centre.amplitude = to_double(v); };
        t["centre.phase"] = [](C& c, S v) { c.coupling.centre.phase = to_double(v); };
        t["centre.width"] = [](C& c, S v) { c.coupling.centre.width = to_double(v); };
        t["centre.floor"] = [](C& c, S v) { c.coupling.centre.floor = to_double(v); };
        t["solver.max_iter"] = [](C& c, S v) { c.solver.max_iter = to_int(v); };
        t["solver.restarts"] = [](C& c, S v) { c.solver.restarts = to_int(v); };
        t["solver.tol"] = [](C& c, S v) { c.solver.tol = to_double(v); };
        t["solver.fixed_point_tol"] = [](C& c, S v) { c.solver.fixed_point_tol = to_double(v); };
        t["solver.drift_cap"] = [](C& c, S v) { c.solver.drift_cap = to_double(v); };
        t["solver.averaging"] = [](C& c, S v) {
            c.solver.averaging = to_choice(v, {"line_search", "uniform"}) == "uniform"
                                     ? Averaging::uniform
                                     : Averaging::line_search;
        };
        t["solver.burn_in"] = [](C& c, S v) { c.solver.burn_in = to_int(v); };
        t["solver.refine_iter"] = [](C& c, S v) { c.solver.refine_iter = to_int(v); };
        t["solver.polish_iter"] = [](C& c, S v) { c.solver.polish_iter = to_int(v); };
        t["solver.seed"] = [](C& c, S v) { c.solver.seed = to_u64(v); };
        t["solver.penalty_start"] = [](C& c, S v) { c.solver.penalty_start = to_double(v); };
        t["solver.penalty_max"] = [](C& c, S v) { c.solver.penalty_max = to_double(v); };
        t["solver.endpoint_tol"] = [](C& c, S v) { c.solver.endpoint_tol = to_double(v); };
        t["solver.penalty_iter"] = [](C& c, S v) { c.solver.penalty_iter = to_int(v); };
        t["stationary.multistarts"] = [](C& c, S v) { c.stationary.multistarts = to_int(v); };
        t["stationary.max_iter"] = [](C& c, S v) { c.stationary.max_iter = to_int(v); };
        t["stationary.grad_tol"] = [](C& c, S v) { c.stationary.grad_tol = to_double(v); };
        t["stationary.memory"] = [](C& c, S v) { c.stationary.memory = to_int(v); };
        t["stationary.seed"] = [](C& c, S v) { c.stationary.seed = to_u64(v); };
        t["stationary.start_amplitude"] = [](C& c, S v) { c.stationary.start_amplitude = to_double(v); };
        t["output.directory"] = [](C& c, S v) { c.directory = v; };
        t["output.precision"] = [](C& c, S v) { c.precision = to_int(v); };
        t["output.flow_stride"] = [](C& c, S v) { c.flow_stride = to_int(v); };
        return t;
    }();
    return table;
}

RawConfig flatten(const boost::property_tree::ptree& pt) {
    RawConfig raw;
    for (const auto& [section, sub] : pt) {
        if (sub.empty()) throw Error(ErrorCode::config, "key '" + section + "' outside a section");
        for (const auto& [key, value] : sub) raw[section + "." + key] = trim(value.data());
    }
    return raw;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

bool increasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] > v[i - 1])) return false;
    return true;
}

std::shared_ptr<const Dictionary> make_dictionary(const TorusGrid& grid, const CouplingSpec& c) {
    DictionaryOptions d;
    d.fourier_features = static_cast<std::size_t>(c.dictionary_fourier);
    d.random_features = static_cast<std::size_t>(c.dictionary_random);
    d.seed = c.seed;
    return std::make_shared<const Dictionary>(build_dictionary(grid, d));
}

}  // namespace

RawConfig parse_raw_config(const std::string& text) {
    std::istringstream in(text);
    boost::property_tree::ptree pt;
    try {
        boost::property_tree::read_ini(in, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw Error(ErrorCode::config, e.what());
    }
    return flatten(pt);
}

RawConfig read_raw_config(const std::string& path) {
    boost::property_tree::ptree pt;
    try {
        boost::property_tree::read_ini(path, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw Error(ErrorCode::config, e.what());
    }
    return flatten(pt);
}

std::vector<std::string> known_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : setters()) keys.push_back(k);
    return keys;
}

ParseResult parse_config(const RawConfig& raw) {
    ParseResult out;
    out.config.raw = raw;
    const auto& table = setters();
    for (const auto& [key, value] : raw) {
        if (key.rfind("sweep.", 0) == 0) {
            const std::string target = key.substr(6);
            if (!table.count(target)) {
                out.errors.push_back(key + ": sweeps over unknown key '" + target + "'");
                continue;
            }
            const auto values = split_list(value);
            if (values.empty()) {
                out.errors.push_back(key + ": empty sweep list");
                continue;
            }
            for (const auto& v : values) {
                ExperimentConfig probe;
                try {
                    table.at(target)(probe, v);
                } catch (const FieldError& e) {
                    out.errors.push_back(key + ": " + e.message);
                }
            }
            out.config.sweep[target] = values;
            continue;
        }
        const auto it = table.find(key);
        if (it == table.end()) {
            out.errors.push_back(key + ": unknown key");
            continue;
        }
        try {
            it->second(out.config, value);
        } catch (const FieldError& e) {
            out.errors.push_back(key + ": " + e.message);
        }
    }
    return out;
}

ParseResult load_config(const std::string& path) { return parse_config(read_raw_config(path)); }

GridDensity make_density(const TorusGrid& grid, const DensitySpec& spec) {
    std::vector<double> w(grid.cells(), 1.0);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t c = 0; c < grid.cells(); ++c) {
        const double x = grid.coordinate(c);
        if (spec.kind == "cosine") {
            w[c] = 1.0 + spec.amplitude * std::cos(two_pi * (x - spec.phase));
        } else if (spec.kind == "bump") {
            double d = std::abs(x - spec.phase);
            d = d - std::floor(d);
            d = std::min(d, 1.0 - d);
            w[c] = spec.floor + std::exp(-d * d / (2.0 * spec.width * spec.width));
        }
    }
    return GridDensity::normalized(grid, std::move(w));
}

namespace {

void check_density(const DensitySpec& d, const std::string& section,
                   std::vector<std::string>& errors) {
    if (d.kind == "cosine" && !(std::abs(d.amplitude) < 1.0))
        errors.push_back(section + ".amplitude: |a| must be < 1 for a positive cosine density");
    if (d.kind == "bump") {
        if (!(d.width > 0)) errors.push_back(section + ".width: must be > 0");
        if (!(d.floor >= 0)) errors.push_back(section + ".floor: must be >= 0");
    }
}

}  // namespace

ValidationReport validate_config(const ExperimentConfig& c) {
    ValidationReport rep;
    auto& e = rep.errors;
    if (c.dim != 1) e.push_back("grid.dim: only dim = 1 is supported (got " + std::to_string(c.dim) + ")");
    if (c.n < 4) e.push_back("grid.n: must be >= 4");
    if (c.n > 4096) e.push_back("grid.n: must be <= 4096");
    if (!(c.sigma > 0)) e.push_back("model.sigma: must be > 0");
    if (c.solver.dt < 0) e.push_back("time.dt: must be >= 0 (0 selects the CFL step)");
    if (!(c.solver.drift_cap > 0)) e.push_back("solver.drift_cap: must be > 0");
    if (c.solver.max_iter < 1) e.push_back("solver.max_iter: must be >= 1");
    if (c.solver.restarts < 0) e.push_back("solver.restarts: must be >= 0");
    if (!(c.solver.tol > 0)) e.push_back("solver.tol: must be > 0");
    if (!(c.solver.fixed_point_tol > 0)) e.push_back("solver.fixed_point_tol: must be > 0");
    if (c.solver.refine_iter < 0 || c.solver.polish_iter < 0)
        e.push_back("solver.refine_iter/polish_iter: must be >= 0");
    if (c.stationary.multistarts < 0) e.push_back("stationary.multistarts: must be >= 0");
    if (c.stationary.max_iter < 1) e.push_back("stationary.max_iter: must be >= 1");
    if (c.stationary.memory < 1) e.push_back("stationary.memory: must be >= 1");
    if (c.precision < 1 || c.precision > 17) e.push_back("output.precision: must be in [1, 17]");
    if (c.flow_stride < 1) e.push_back("output.flow_stride: must be >= 1");
    check_density(c.initial, "initial", e);
    check_density(c.target, "target", e);
    check_density(c.coupling.centre, "centre", e);

    const auto& k = c.experiment;
    auto need_T_list = [&] {
        if (c.T_list.size() < 2) e.push_back("time.T_list: needs at least two horizons");
        else if (!increasing(c.T_list) || !(c.T_list.front() > 0))
            e.push_back("time.T_list: must be positive and increasing");
    };
    auto need_delta_list = [&] {
        if (c.delta_list.size() < 2) e.push_back("time.delta_list: needs at least two values");
        std::vector<double> rev(c.delta_list.rbegin(), c.delta_list.rend());
        if (!increasing(rev) || (!rev.empty() && !(rev.front() > 0)))
            e.push_back("time.delta_list: must be positive and decreasing");
    };
    if (k == "finite" && !(c.T > 0)) e.push_back("time.T: must be > 0");
    if (k == "discounted" && !(c.delta > 0)) e.push_back("time.delta: must be > 0");
    if (k == "tauberian" || k == "gap") {
        need_T_list();
        need_delta_list();
    }
    if (k == "gap" && c.coupling.kind != "convolution" && c.coupling.kind != "sec2")
        e.push_back("coupling.kind: the gap experiment needs convolution or sec2");
    if (k == "gap" || k == "mather") {
        if (!(c.window_T > 0)) e.push_back("time.window_T: must be > 0");
    }
    if (k == "mather") need_T_list();
    if (k == "connect") {
        if (!(c.tau > 0)) e.push_back("time.tau: must be > 0");
        if (!(c.T > c.tau)) e.push_back("time.T: must exceed time.tau");
    }

    const auto& cp = c.coupling;
    if (cp.kind == "convolution") {
        for (double v : cp.coefficients)
            if (v < 0) e.push_back("coupling.coefficients: must be nonnegative (monotone kernel)");
    }
    if (cp.kind == "bump" && !(cp.epsilon > 0)) e.push_back("coupling.epsilon: must be > 0 for bump");
    if (cp.kind == "bump" || cp.kind == "sec2" || cp.kind == "separator") {
        if (cp.dictionary_fourier < 0 || cp.dictionary_random < 0 ||
            cp.dictionary_fourier + cp.dictionary_random < 1)
            e.push_back("coupling.dictionary_*: need at least one feature");
    }
    if (cp.kind == "separator" && (cp.a_phases.empty() || cp.b_phases.empty()))
        e.push_back("coupling.a_phases/b_phases: both sets must be nonempty");

    if (!e.empty()) return rep;

    // Derived quantities need a valid grid.
    try {
        const TorusGrid grid(1, c.n);
        const GridDensity m0 = make_density(grid, c.initial);
        const double dt = c.solver.dt > 0 ? c.solver.dt : cfl_time_step(grid, c.solver.drift_cap);
        rep.derived.emplace_back("h", fmt(grid.h()));
        rep.derived.emplace_back("dt", fmt(dt) + (c.solver.dt > 0 ? " (configured)" : " (CFL)"));
        rep.derived.emplace_back("rate_cap", fmt(rate_cap(grid, dt, c.solver.drift_cap)));
        if (k == "finite" || k == "connect") rep.derived.emplace_back("T", fmt(c.T));
        if (k == "discounted")
            rep.derived.emplace_back("T_cut", fmt(discounted_horizon(c.delta)));
        for (double d : c.delta_list)
            if (k == "tauberian" || k == "gap")
                rep.derived.emplace_back("T_cut(delta=" + fmt(d) + ")", fmt(discounted_horizon(d)));
        if (cp.kind == "sec2") {
            if (m0.min() <= 0) {
                e.push_back("initial: sec2 reference must be strictly positive");
            } else {
                const double dist = Sec2Coupling::uniform_to_translates(m0);
                rep.derived.emplace_back("uniform_to_B_distance", fmt(dist));
                if (!(dist > 0)) {
                    e.push_back("initial: sec2 reference must not be uniform");
                } else if (cp.epsilon > 0.5 * dist * (1.0 + 1e-12)) {
                    e.push_back("coupling.epsilon: " + fmt(cp.epsilon) +
                                " exceeds half the uniform-to-B distance (distance " + fmt(dist) +
                                ", limit " + fmt(0.5 * dist) + ")");
                } else {
                    rep.derived.emplace_back("epsilon", fmt(cp.epsilon > 0 ? cp.epsilon : 0.5 * dist));
                }
            }
        }
        if (k == "connect" && make_density(grid, c.target).min() <= 0)
            e.push_back("target: connection target must be strictly positive");
    } catch (const Error& err) {
        e.push_back(std::string("model: ") + err.what());
    }
    return rep;
}

Model build_model(const ExperimentConfig& c) {
    const TorusGrid grid(c.dim, c.n);
    GridDensity m0 = make_density(grid, c.initial);
    CouplingPtr F;
    const auto& cp = c.coupling;
    if (cp.kind == "zero") {
        F = std::make_shared<ZeroCoupling>(grid);
    } else if (cp.kind == "convolution") {
        F = std::make_shared<ConvolutionCoupling>(grid, cp.coefficients);
    } else if (cp.kind == "bump") {
        F = std::make_shared<BumpCoupling>(make_density(grid, cp.centre), cp.epsilon,
                                           make_dictionary(grid, cp), cp.amplitude, cp.delta_s);
    } else if (cp.kind == "sec2") {
        F = std::make_shared<Sec2Coupling>(m0, make_dictionary(grid, cp), cp.epsilon);
    } else {
        std::vector<GridDensity> a, b;
        DensitySpec s = cp.centre;
        s.kind = "cosine";
        for (double p : cp.a_phases) {
            s.phase = p;
            a.push_back(make_density(grid, s));
        }
        for (double p : cp.b_phases) {
            s.phase = p;
            b.push_back(make_density(grid, s));
        }
        F = std::make_shared<SeparatorCoupling>(std::move(a), std::move(b), make_dictionary(grid, cp),
                                                cp.epsilon);
    }
    return Model{grid, std::move(m0), QuadraticHamiltonian::one_d(c.b), std::move(F), c.sigma};
}

std::vector<RawConfig> sweep_points(const ExperimentConfig& cfg) {
    std::vector<RawConfig> points{cfg.raw};
    for (auto& p : points)
        for (auto it = p.begin(); it != p.end();)
            it = it->first.rfind("sweep.", 0) == 0 ? p.erase(it) : std::next(it);
    for (const auto& [key, values] : cfg.sweep) {
        std::vector<RawConfig> next;
        for (const auto& p : points) {
            for (const auto& v : values) {
                RawConfig q = p;
                q[key] = v;
                next.push_back(std::move(q));
            }
        }
        points = std::move(next);
    }
    return points;
}

}  // namespace mfg::cli
