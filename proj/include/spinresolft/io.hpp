#pragma once

// File formats: rate-constant files, comment-tolerant JSON, CSV tables with a
// '#' metadata header, and static SVG line plots.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinresolft/fitting.hpp"
#include "spinresolft/photophysics.hpp"
#include "spinresolft/scanner.hpp"

namespace spinresolft {

/// Parses JSON allowing // and /* */ comments. Throws SchemaError on malformed input.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// Rate files: {"gamma_hz", "a35", "a45", "a51", "a52", "sigma_scale"}; all keys required.
RateConstants rates_from_json(const nlohmann::json& j);
nlohmann::json rates_to_json(const RateConstants& rates);
RateConstants load_rates(const std::filesystem::path& path);
void save_rates(const std::filesystem::path& path, const RateConstants& rates);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

struct CsvTable {
    std::vector<std::pair<std::string, std::string>> metadata;  // written as "# key: value"
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    /// Column values; SchemaError if absent.
    std::vector<double> column(const std::string& name) const;
    bool has_column(const std::string& name) const;
    void add_row(std::vector<double> row);
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
/// Reads a table written by write_csv or any plain numeric CSV with a header row.
CsvTable read_csv(const std::filesystem::path& path);

/// Scanner export: x_nm, y_nm, sig_counts, ref0_counts, profile.
CsvTable scan_table(const ScanResult& result);
/// Profile dataset (x in m) with Poisson-propagated sigma; a running average is
/// accounted for when `running_average` is set.
Dataset profile_dataset(const CsvTable& scan, bool running_average);
Dataset profile_dataset(const ScanResult& result, bool running_average);

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    bool markers = false;  // points instead of a polyline
};

struct Plot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<PlotSeries> series;
};

/// Static SVG with linear axes and a legend.
std::string render_svg(const Plot& plot);
void write_svg(const std::filesystem::path& path, const Plot& plot);

}  // namespace spinresolft
