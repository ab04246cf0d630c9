#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "config.hpp"
#include "json.hpp"
#include "mfg/error.hpp"
#include "runner.hpp"

using namespace mfg;
using namespace mfg::cli;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
[experiment]
kind = finite
[grid]
dim = 1
n = 32
[time]
T = 5
dt = 0.01
[model]
b = 1
sigma = 0.1
[coupling]
kind = zero
)";

const char* kSmallConvolution = R"(
[experiment]
kind = finite
[grid]
n = 16
[time]
T = 1
dt = 0.02
[model]
b = 0.5
sigma = 0.1
[initial]
kind = cosine
amplitude = 0.4
[coupling]
kind = convolution
coefficients = 1, 0.5
[solver]
restarts = 1
)";

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("mfg_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_file(const fs::path& dir, const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

bool has_error(const std::vector<std::string>& errors, const std::string& needle) {
    for (const auto& e : errors)
        if (e.find(needle) != std::string::npos) return true;
    return false;
}

ExperimentConfig parsed(const std::string& text) {
    auto p = parse_config(parse_raw_config(text));
    REQUIRE(p.errors.empty());
    return p.config;
}

}  // namespace

TEST_CASE("config parsing") {
    SUBCASE("valid config has no errors") {
        auto cfg = parsed(kMinimal);
        CHECK(cfg.n == 32);
        CHECK(cfg.solver.dt == 0.01);
        CHECK(cfg.coupling.kind == "zero");
        CHECK(validate_config(cfg).ok());
    }
    SUBCASE("unknown keys and sections are rejected") {
        auto p = parse_config(parse_raw_config(std::string(kMinimal) + "[solver]\nmax_iterations = 3\n"));
        CHECK(has_error(p.errors, "solver.max_iterations: unknown key"));
        auto q = parse_config(parse_raw_config(std::string(kMinimal) + "[extras]\nfoo = 1\n"));
        CHECK(has_error(q.errors, "extras.foo"));
    }
    SUBCASE("field-level type errors") {
        auto p = parse_config(parse_raw_config("[grid]\nn = sixty\n[time]\nT_list = 1, x\n"));
        CHECK(has_error(p.errors, "grid.n: expected an integer"));
        CHECK(has_error(p.errors, "time.T_list: expected a number"));
        auto q = parse_config(parse_raw_config("[coupling]\nkind = quartic\n"));
        CHECK(has_error(q.errors, "coupling.kind: expected one of"));
    }
    SUBCASE("keys outside a section and repeated sections") {
        CHECK_THROWS_AS(parse_raw_config("n = 3\n[grid]\ndim = 1\n"), Error);
        CHECK_THROWS_AS(parse_raw_config("[grid]\nn = 3\n[grid]\ndim = 1\n"), Error);
    }
    CHECK(known_keys().size() > 50);
}

TEST_CASE("config validation") {
    SUBCASE("nonpositive delta in a discounted experiment") {
        auto cfg = parsed(kMinimal);
        cfg.experiment = "discounted";
        cfg.delta = 0.0;
        auto v = validate_config(cfg);
        CHECK(has_error(v.errors, "time.delta"));
    }
    SUBCASE("sec2 radius above half the uniform-to-translate distance") {
        auto cfg = parsed(R"(
[experiment]
kind = stationary
[grid]
n = 64
[model]
b = 1
sigma = 0.05
[initial]
kind = cosine
amplitude = 0.5
[coupling]
kind = sec2
epsilon = 0.05
)");
        auto v = validate_config(cfg);
        REQUIRE_FALSE(v.ok());
        CHECK(has_error(v.errors, "coupling.epsilon"));
        const double dist = Sec2Coupling::uniform_to_translates(make_density(TorusGrid(1, 64), cfg.initial));
        std::ostringstream os;
        os << std::setprecision(10) << dist;
        CHECK(has_error(v.errors, os.str()));
        cfg.coupling.epsilon = 0.02;
        CHECK(validate_config(cfg).ok());
    }
    SUBCASE("derived quantities") {
        auto cfg = parsed(kMinimal);
        cfg.solver.dt = 0.0;
        cfg.experiment = "tauberian";
        cfg.T_list = {5, 10};
        cfg.delta_list = {0.2, 0.1};
        auto v = validate_config(cfg);
        REQUIRE(v.ok());
        bool dt = false, tcut = false;
        for (const auto& [k, val] : v.derived) {
            if (k == "dt" && val.find("CFL") != std::string::npos) dt = true;
            if (k == "T_cut(delta=0.1)" && val == "50") tcut = true;
        }
        CHECK(dt);
        CHECK(tcut);
    }
    SUBCASE("lists and dimension") {
        auto cfg = parsed(kMinimal);
        cfg.dim = 2;
        cfg.experiment = "tauberian";
        cfg.T_list = {10, 5};
        cfg.delta_list = {0.1, 0.2};
        auto v = validate_config(cfg);
        CHECK(has_error(v.errors, "grid.dim"));
        CHECK(has_error(v.errors, "time.T_list"));
        CHECK(has_error(v.errors, "time.delta_list"));
    }
}

TEST_CASE("sweep points") {
    auto cfg = parsed(std::string(kMinimal) + "[sweep]\nmodel.sigma = 0.1, 0.2\nmodel.b = 0, 1, 2\n");
    auto pts = sweep_points(cfg);
    REQUIRE(pts.size() == 6);
    CHECK(pts[0].at("model.b") == "0");
    CHECK(pts[0].at("model.sigma") == "0.1");
    CHECK(pts[1].at("model.sigma") == "0.2");
    CHECK(pts[5].at("model.b") == "2");
    for (const auto& p : pts) CHECK(p.count("sweep.model.b") == 0);
    auto bad = parse_config(parse_raw_config(std::string(kMinimal) + "[sweep]\nmodel.nu = 1\n"));
    CHECK(has_error(bad.errors, "unknown key"));
}

TEST_CASE("run writes a manifest, report and CSVs") {
    const fs::path dir = scratch("run");
    const fs::path cfgfile = write_file(dir, "minimal.ini", kMinimal);
    std::ostringstream out, err;
    const int status = command_run(cfgfile.string(), (dir / "out").string(), out, err);
    CHECK(status == kExitOk);
    for (const char* f : {"manifest.json", "report.txt", "flow.csv", "value.csv", "descent.csv"})
        CHECK(fs::exists(dir / "out" / f));
    auto manifest = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
    CHECK(manifest["stages"]["finite"]["energy"].get<double>() <= 1e-3);
    CHECK(manifest["status"] == 0);
    CHECK(manifest["config"]["grid.n"] == "32");
    CHECK(out.str().find("status: PASSED") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "out" / "manifest.json.tmp"));
}

TEST_CASE("exit statuses") {
    const fs::path dir = scratch("status");
    std::ostringstream out, err;
    const fs::path bad = write_file(dir, "bad.ini", std::string(kMinimal) + "[numerics]\nwidth = 3\n");
    CHECK(command_run(bad.string(), (dir / "bad").string(), out, err) == kExitConfig);
    CHECK(err.str().find("numerics.width") != std::string::npos);
    CHECK(command_validate(bad.string(), out, err) == kExitConfig);
    CHECK(command_run((dir / "missing.ini").string(), "", out, err) == kExitConfig);

    const fs::path good = write_file(dir, "good.ini", kMinimal);
    std::ostringstream vout;
    CHECK(command_validate(good.string(), vout, err) == kExitOk);
    CHECK(vout.str().find("valid") != std::string::npos);

    // A certificate that cannot hold: Tauberian agreement at zero tolerance.
    const fs::path strict = write_file(dir, "strict.ini", R"(
[experiment]
kind = tauberian
tol_tauberian = 0
[grid]
n = 16
[time]
T_list = 2, 4
delta_list = 0.4, 0.2
dt = 0.04
[model]
sigma = 0.1
[initial]
kind = cosine
amplitude = 0.4
[coupling]
kind = convolution
coefficients = 1, 0.5
)");
    CHECK(command_run(strict.string(), (dir / "strict").string(), out, err) == kExitCertificate);
    CHECK(slurp(dir / "strict" / "report.txt").find("FAIL tauberian") != std::string::npos);
}

TEST_CASE("output root from the environment") {
    auto cfg = parsed(kMinimal);
    setenv("MFG_OUTPUT_ROOT", "/tmp/mfg_root", 1);
    CHECK(resolve_output_directory(cfg, "configs/minimal.ini") == "/tmp/mfg_root/runs/minimal");
    cfg.directory = "/abs/dir";
    CHECK(resolve_output_directory(cfg, "configs/minimal.ini") == "/abs/dir");
    unsetenv("MFG_OUTPUT_ROOT");
    cfg.directory = "";
    CHECK(resolve_output_directory(cfg, "x/y.ini") == "runs/y");
}

TEST_CASE("re-running a config reproduces the CSVs bit for bit") {
    const fs::path dir = scratch("determinism");
    const fs::path cfgfile = write_file(dir, "conv.ini", kSmallConvolution);
    std::ostringstream out, err;
    REQUIRE(command_run(cfgfile.string(), (dir / "a").string(), out, err) == kExitOk);
    REQUIRE(command_run(cfgfile.string(), (dir / "b").string(), out, err) == kExitOk);
    int compared = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        if (e.path().extension() != ".csv") continue;
        CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
        ++compared;
    }
    CHECK(compared == 3);
}

TEST_CASE("sweep runs every point with derived seeds") {
    const fs::path dir = scratch("sweep");
    const fs::path cfgfile =
        write_file(dir, "sweep.ini", std::string(kSmallConvolution) + "[sweep]\nmodel.sigma = 0.05, 0.1\n");
    std::ostringstream out, err;
    CHECK(command_sweep(cfgfile.string(), (dir / "s").string(), out, err) == kExitOk);
    auto idx = nlohmann::json::parse(slurp(dir / "s" / "sweep.json"));
    REQUIRE(idx.size() == 2);
    CHECK(idx[0]["seed"].get<std::uint64_t>() == derive_seed(1, 0));
    CHECK(idx[1]["seed"].get<std::uint64_t>() == derive_seed(1, 1));
    CHECK(fs::exists(dir / "s" / "point_001" / "manifest.json"));
}
