#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spinresolft/cli.hpp"
#include "spinresolft/error.hpp"
#include "spinresolft/io.hpp"

using namespace spinresolft;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = SPINRESOLFT_TEST_SOURCE_DIR;

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "spinresolft_test_cli" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "spinresolft");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

std::string default_scenario() { return (kSource / "scenarios/default.json").string(); }

}  // namespace

TEST_CASE("version flag") {
    const Run r = run({"--version"});
    CHECK(r.code == 0);
    CHECK(r.out.find("0.1.0") != std::string::npos);
}

TEST_CASE("unknown simulate kind is a usage error") {
    const Run r = run({"simulate", "hologram", "--scenario", default_scenario(), "--out", fresh_dir("kind").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("psf") != std::string::npos);
}

TEST_CASE("unknown figure lists the valid ids") {
    const Run r = run({"reproduce", "fig9z", "--scenario", default_scenario(), "--out", fresh_dir("fig").string()});
    CHECK(r.code == 2);
    for (const char* id : {"fig1d", "fig2c", "fig4c", "figS8"}) CHECK(r.err.find(id) != std::string::npos);
}

TEST_CASE("stochastic command without a seed") {
    Scenario sc = load_scenario(default_scenario());
    sc.seed.reset();
    RunOptions opt;
    opt.out_dir = fresh_dir("noseed");
    CHECK_THROWS_AS(cmd_simulate("coherence", sc, opt), UsageError);
    // deterministic kinds do not need one
    CHECK_NOTHROW(cmd_simulate("wirefield", sc, opt));
}

TEST_CASE("fit input without the needed column is a schema error") {
    const fs::path d = fresh_dir("badcol");
    CsvTable t;
    t.columns = {"tau_ns", "signal"};
    t.add_row({400, 0.9});
    write_csv(d / "in.csv", t);
    const Run r = run({"fit", "nmr_dip", (d / "in.csv").string(), "--scenario", default_scenario(), "--out", d.string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("contrast") != std::string::npos);
}

TEST_CASE("multi-channel coherence needs a channel") {
    const fs::path d = fresh_dir("channel");
    CHECK(run({"simulate", "coherence", "--scenario", default_scenario(), "--out", d.string(), "--seed", "3"}).code == 0);
    const fs::path in = d / "coherence.csv";
    REQUIRE(fs::exists(in));
    const Run bare = run({"fit", "stretched_exponential", in.string(), "--scenario", default_scenario(), "--out", d.string()});
    CHECK(bare.code == 3);
    CHECK(bare.err.find("--channel") != std::string::npos);
    const Run ok = run({"fit", "stretched_exponential", in.string(), "--channel", "nv1", "--scenario",
                        default_scenario(), "--out", d.string()});
    CHECK(ok.code == 0);
    CHECK(fs::exists(d / "fit_stretched_exponential_nv1.json"));
}

TEST_CASE("unknown scenario keys are rejected") {
    auto j = read_json_file(default_scenario());
    j["optics"]["wavelenght_nm"] = 532;
    CHECK_THROWS_AS(scenario_from_json(j, kSource / "scenarios"), SchemaError);
    const fs::path d = fresh_dir("badkey");
    std::ofstream(d / "s.json") << j.dump();
    CHECK(run({"simulate", "wirefield", "--scenario", (d / "s.json").string(), "--out", d.string()}).code == 3);
}

TEST_CASE("scenario directory from the environment") {
    const fs::path d = fresh_dir("env");
    auto j = read_json_file(default_scenario());
    j["rates_file"] = (kSource / "data/rates_room_temperature.json").string();
    j["name"] = "from-env";
    std::ofstream(d / "default.json") << j.dump();
    ::setenv(kScenarioDirEnv, d.c_str(), 1);
    CHECK(resolve_scenario_path(std::nullopt) == d / "default.json");
    CHECK(load_scenario(resolve_scenario_path(std::nullopt)).name == "from-env");
    CHECK(resolve_scenario_path(std::string("x.json")) == fs::path("x.json"));
    ::unsetenv(kScenarioDirEnv);
    CHECK(fs::exists(resolve_scenario_path(std::nullopt)));
}

TEST_CASE("reproduce is byte-identical across runs") {
    const fs::path a = fresh_dir("rep_a"), b = fresh_dir("rep_b");
    for (const char* fig : {"figS7", "figS8", "fig3b"}) {
        REQUIRE(run({"reproduce", fig, "--scenario", default_scenario(), "--out", a.string(), "--format", "csv+svg"}).code == 0);
        REQUIRE(run({"reproduce", fig, "--scenario", default_scenario(), "--out", b.string(), "--format", "csv+svg"}).code == 0);
    }
    int files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
        ++files;
    }
    CHECK(files >= 6);
    const CsvTable t = read_csv(a / "fig3b_fields.csv");
    bool has_seed = false;
    for (const auto& [k, v] : t.metadata) has_seed |= (k == "seed" && v == "1729");
    CHECK(has_seed);
}

TEST_CASE("golden NMR dataset fits to a 3 nm depth") {
    const fs::path d = fresh_dir("golden");
    const Run r = run({"fit", "nmr_dip", (kSource / "data/golden/nmr_dip.csv").string(), "--scenario",
                       default_scenario(), "--out", d.string()});
    REQUIRE(r.code == 0);
    const auto j = read_json_file(d / "fit_nmr_dip.json");
    double depth = 0;
    for (const auto& p : j["parameters"]) {
        if (p["name"] == "d_nv") depth = p["value"].get<double>();
    }
    CHECK(depth == doctest::Approx(3.0).epsilon(0.1));
}
