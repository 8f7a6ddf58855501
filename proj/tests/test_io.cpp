#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "spinresolft/error.hpp"
#include "spinresolft/io.hpp"

using namespace spinresolft;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "spinresolft_test_io";
    fs::create_directories(dir);
    return dir / name;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    f << s;
}

}  // namespace

TEST_CASE("FNV-1a reference vectors") {
    CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
    CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
    CHECK(hex64(fnv1a64("foobar")) == "85944171f73967e8");
}

TEST_CASE("doubles format to the shortest round-tripping text") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-30, 30);
    for (int i = 0; i < 2000; ++i) {
        const double v = std::ldexp(u(rng), static_cast<int>(u(rng)));
        CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
    }
    CHECK(format_double(0.0) == "0");
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
}

TEST_CASE("rate files round-trip bit-exactly") {
    RateConstants r;
    r.a35 = 0.1 + 1e-17;
    r.a52 = 2.6 / 65.0;
    r.sigma_scale = 1.0 / 3.0;
    const auto p = scratch("rates.json");
    save_rates(p, r);
    const RateConstants back = load_rates(p);
    CHECK(back.gamma_hz == r.gamma_hz);
    CHECK(back.a35 == r.a35);
    CHECK(back.a45 == r.a45);
    CHECK(back.a51 == r.a51);
    CHECK(back.a52 == r.a52);
    CHECK(back.sigma_scale == r.sigma_scale);
    auto j = rates_to_json(r);
    j.erase("a45");
    CHECK_THROWS_AS(rates_from_json(j), SchemaError);
}

TEST_CASE("bundled rate file loads") {
    const RateConstants r = load_rates(fs::path(SPINRESOLFT_TEST_SOURCE_DIR) / "data/rates_room_temperature.json");
    CHECK(r.gamma_hz == doctest::Approx(65e6));
    CHECK(r.a45 == doctest::Approx(80.0 / 65.0));
}

TEST_CASE("JSON with comments") {
    const auto p = scratch("commented.json");
    write_text(p, "// head\n{\n  \"a\": 1, /* inline */ \"b\": [2, 3]\n}\n");
    const auto j = read_json_file(p);
    CHECK(j["a"] == 1);
    CHECK(j["b"][1] == 3);
    write_text(p, "{\"a\": }");
    CHECK_THROWS_AS(read_json_file(p), SchemaError);
    CHECK_THROWS_AS(read_json_file(scratch("absent.json")), std::exception);
}

TEST_CASE("CSV round-trip keeps metadata and values") {
    CsvTable t;
    t.metadata = {{"tool", "spinresolft 0.1.0"}, {"seed", "1729"}};
    t.columns = {"x_nm", "profile"};
    t.add_row({-1.5, 0.1});
    t.add_row({2.0 / 3.0, 1e-300});
    const auto p = scratch("t.csv");
    write_csv(p, t);
    const CsvTable back = read_csv(p);
    CHECK(back.metadata == t.metadata);
    CHECK(back.columns == t.columns);
    CHECK(back.rows == t.rows);
    CHECK(back.column("profile")[1] == 1e-300);
    CHECK_FALSE(back.has_column("sigma"));
    CHECK_THROWS_AS(back.column("sigma"), SchemaError);
    CHECK_THROWS_AS(t.add_row({1.0}), ValidationError);
}

TEST_CASE("malformed CSV is a schema error") {
    const auto p = scratch("bad.csv");
    write_text(p, "x,y\n1,2\n3\n");
    CHECK_THROWS_AS(read_csv(p), SchemaError);
    write_text(p, "x,y\n1,abc\n");
    CHECK_THROWS_AS(read_csv(p), SchemaError);
}

TEST_CASE("profile dataset propagates Poisson noise") {
    CsvTable t;
    t.columns = {"x_nm", "y_nm", "sig_counts", "ref0_counts", "profile"};
    t.add_row({0, 0, 300, 400, 100});
    t.add_row({10, 0, 350, 390, 40});
    const Dataset d = profile_dataset(t, false);
    CHECK(d.x[1] == doctest::Approx(10e-9));
    CHECK(d.sigma[0] == doctest::Approx(std::sqrt(700.0)));
    const Dataset avg = profile_dataset(t, true);
    CHECK(avg.sigma[1] == doctest::Approx(0.5 * std::sqrt(700.0 + 740.0)));
}

TEST_CASE("SVG output is a self-contained document") {
    Plot p{"t", "x", "y", {{"a", {0, 1, 2}, {0, 1, 4}, false}, {"b", {0, 2}, {1, 3}, true}}};
    const std::string s = render_svg(p);
    CHECK(s.find("<svg") != std::string::npos);
    CHECK(s.find("</svg>") != std::string::npos);
    CHECK(s.find("polyline") != std::string::npos);
    CHECK(s.find("circle") != std::string::npos);
}
