#include "spinresolft/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "spinresolft/constants.hpp"
#include "spinresolft/error.hpp"

namespace spinresolft {

namespace fs = std::filesystem;

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

RateConstants rates_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("rate file: expected an object");
    RateConstants r;
    const auto get = [&](const char* key) {
        if (!j.contains(key)) throw SchemaError(std::string("rate file: missing key '") + key + "'");
        if (!j.at(key).is_number()) throw SchemaError(std::string("rate file: '") + key + "' is not a number");
        return j.at(key).get<double>();
    };
    r.gamma_hz = get("gamma_hz");
    r.a35 = get("a35");
    r.a45 = get("a45");
    r.a51 = get("a51");
    r.a52 = get("a52");
    r.sigma_scale = get("sigma_scale");
    r.validate();
    return r;
}

nlohmann::json rates_to_json(const RateConstants& r) {
    nlohmann::ordered_json j;
    j["gamma_hz"] = r.gamma_hz;
    j["a35"] = r.a35;
    j["a45"] = r.a45;
    j["a51"] = r.a51;
    j["a52"] = r.a52;
    j["sigma_scale"] = r.sigma_scale;
    return nlohmann::json::parse(j.dump());
}

RateConstants load_rates(const fs::path& path) { return rates_from_json(read_json_file(path)); }

void save_rates(const fs::path& path, const RateConstants& r) {
    // Written by hand to keep the documented key order.
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write " + path.string());
    out << "{\n"
        << "  \"gamma_hz\": " << format_double(r.gamma_hz) << ",\n"
        << "  \"a35\": " << format_double(r.a35) << ",\n"
        << "  \"a45\": " << format_double(r.a45) << ",\n"
        << "  \"a51\": " << format_double(r.a51) << ",\n"
        << "  \"a52\": " << format_double(r.a52) << ",\n"
        << "  \"sigma_scale\": " << format_double(r.sigma_scale) << "\n"
        << "}\n";
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::array<char, 17> buf{};
    std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(v));
    return buf.data();
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0.0) return "0";
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

std::vector<double> CsvTable::column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw SchemaError("missing column '" + name + "'");
    const auto idx = static_cast<std::size_t>(it - columns.begin());
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[idx]);
    return out;
}

bool CsvTable::has_column(const std::string& name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
}

void CsvTable::add_row(std::vector<double> row) {
    if (row.size() != columns.size()) throw ValidationError("csv: row width differs from header");
    rows.push_back(std::move(row));
}

void write_csv(const fs::path& path, const CsvTable& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SchemaError("cannot write " + path.string());
    for (const auto& [k, v] : t.metadata) out << "# " << k << ": " << v << '\n';
    for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << t.columns[i];
    out << '\n';
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_double(r[i]);
        out << '\n';
    }
}

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string s = trim(line);
        if (s.empty()) continue;
        if (s.front() == '#') {
            const std::string body = trim(s.substr(1));
            const auto colon = body.find(':');
            if (colon != std::string::npos) t.metadata.emplace_back(trim(body.substr(0, colon)), trim(body.substr(colon + 1)));
            continue;
        }
        const auto cells = split(s);
        if (t.columns.empty()) {
            t.columns = cells;
            continue;
        }
        if (cells.size() != t.columns.size()) {
            throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(t.columns.size()) + " fields, found " + std::to_string(cells.size()));
        }
        std::vector<double> row;
        for (const auto& c : cells) {
            char* end = nullptr;
            const double v = std::strtod(c.c_str(), &end);
            if (c.empty() || end != c.c_str() + c.size()) {
                throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": '" + c + "' is not a number");
            }
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    if (t.columns.empty()) throw SchemaError(path.string() + ": no header row");
    return t;
}

CsvTable scan_table(const ScanResult& r) {
    CsvTable t;
    t.columns = {"x_nm", "y_nm", "sig_counts", "ref0_counts", "profile"};
    for (std::size_t i = 0; i < r.pixels.size(); ++i) {
        t.rows.push_back({r.pixels[i].x / kNano, r.pixels[i].y / kNano, static_cast<double>(r.sig[i]),
                          static_cast<double>(r.ref0[i]), r.profile[i]});
    }
    return t;
}

namespace {

Dataset build_profile(const std::vector<double>& x, const std::vector<double>& sig, const std::vector<double>& ref0,
                      const std::vector<double>& profile, bool running_average) {
    Dataset d;
    d.x = x;
    d.y = profile;
    std::vector<double> var(sig.size());
    for (std::size_t i = 0; i < sig.size(); ++i) var[i] = std::max(1.0, sig[i] + ref0[i]);
    for (std::size_t i = 0; i < var.size(); ++i) {
        d.sigma.push_back(running_average && i > 0 ? 0.5 * std::sqrt(var[i] + var[i - 1]) : std::sqrt(var[i]));
    }
    return d;
}

}  // namespace

Dataset profile_dataset(const CsvTable& scan, bool running_average) {
    std::vector<double> x = scan.column("x_nm");
    for (double& v : x) v *= kNano;
    return build_profile(x, scan.column("sig_counts"), scan.column("ref0_counts"), scan.column("profile"), running_average);
}

Dataset profile_dataset(const ScanResult& r, bool running_average) {
    std::vector<double> x, sig, ref0;
    for (std::size_t i = 0; i < r.pixels.size(); ++i) {
        x.push_back(r.pixels[i].x);
        sig.push_back(static_cast<double>(r.sig[i]));
        ref0.push_back(static_cast<double>(r.ref0[i]));
    }
    return build_profile(x, sig, ref0, r.profile, running_average);
}

namespace {

constexpr std::array<const char*, 6> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%.2f", v);
    return buf.data();
}

std::string tick(double v) {
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%.4g", v);
    return buf.data();
}

}  // namespace

std::string render_svg(const Plot& plot) {
    const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 55;
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : plot.series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]); xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]); ymax = std::max(ymax, s.y[i]);
        }
    }
    if (!(xmin < xmax)) { xmin = std::isfinite(xmin) ? xmin - 1 : 0; xmax = xmin + 2; }
    if (!(ymin < ymax)) { ymin = std::isfinite(ymin) ? ymin - 1 : 0; ymax = ymin + 2; }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    const auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    const auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << num(W / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(plot.title) << "</text>\n";
    o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        o << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(H - B + 16) << "\" text-anchor=\"middle\">" << tick(xv) << "</text>\n";
        o << "<text x=\"" << num(L - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv) << "</text>\n";
    }
    o << "<text x=\"" << num((L + W - R) / 2) << "\" y=\"" << num(H - 12) << "\" text-anchor=\"middle\">" << escape(plot.x_label) << "</text>\n";
    o << "<text transform=\"translate(16," << num((T + H - B) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(plot.y_label) << "</text>\n";
    for (std::size_t k = 0; k < plot.series.size(); ++k) {
        const auto& s = plot.series[k];
        const char* color = kPalette[k % kPalette.size()];
        if (s.markers) {
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
                if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
                o << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"2\" fill=\"" << color << "\"/>\n";
            }
        } else {
            o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
                if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
                o << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
            }
            o << "\"/>\n";
        }
        o << "<text x=\"" << num(W - R - 8) << "\" y=\"" << num(T + 16 + 14 * k) << "\" text-anchor=\"end\" fill=\"" << color
          << "\">" << escape(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void write_svg(const fs::path& path, const Plot& plot) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SchemaError("cannot write " + path.string());
    out << render_svg(plot);
}

}  // namespace spinresolft
