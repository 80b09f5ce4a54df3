#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pfsc/monte_carlo.hpp"
#include "pfsc/network.hpp"
#include "pfsc/noise.hpp"
#include "pfsc/sensitivity.hpp"

namespace pfsc {

/// One real coefficient: Re or Im of dE(bus, phase) / dP or dQ (wrt_bus, wrt_phase).
/// Buses are the labels used in the network file.
struct CoefficientSelector {
    int bus = 0;
    int wrt_bus = 0;
    Injection injection = Injection::P;
    Part part = Part::Re;
    int phase = 0;
    int wrt_phase = 0;

    bool operator==(const CoefficientSelector&) const = default;
};

/// "Re dE3/dP2"; phases are appended as a, b, c when `phases` is 3 ("Im dE3b/dQ2a").
std::string coefficient_label(const CoefficientSelector& s, int phases);
/// Inverse of coefficient_label. Throws ValidationError on malformed text.
CoefficientSelector parse_coefficient(const std::string& text);

/// The six reference coefficients of the IEEE-4 case.
std::vector<CoefficientSelector> reference_coefficients();
/// Every coefficient of x, column by column.
std::vector<CoefficientSelector> all_coefficients(const NetworkModel& network);

/// Position of a selected coefficient in x. Throws ValidationError for slack or unknown buses.
std::pair<std::size_t, std::size_t> coefficient_position(const NetworkModel& network,
                                                         const CoefficientSelector& s);

enum class RunMode { analytical, mc, both };
enum class ReportFormat { csv, json, text };

RunMode parse_run_mode(const std::string& text);
ReportFormat parse_report_format(const std::string& text);
std::string extension(ReportFormat format);

struct RunConfig {
    std::filesystem::path network_path;
    std::filesystem::path noise_config_path;
    RunMode mode = RunMode::both;
    std::vector<std::size_t> n_mc{10, 100, 1000};
    /// Admittance error levels in percent of |element|; empty uses the noise config value.
    std::vector<double> sigma_y_pct;
    /// Overrides the noise config's class when set.
    std::optional<std::string> it_class;
    std::optional<ITClassLimits> custom_limits;
    /// Report files are written here when set.
    std::optional<std::filesystem::path> out_dir;
    std::string basename = "report";
    std::vector<ReportFormat> formats{ReportFormat::csv};
    std::uint64_t seed = 42;
    /// Empty selects every coefficient.
    std::vector<CoefficientSelector> coefficients;
    SymmetryMode symmetry = SymmetryMode::independent_elements;
    unsigned threads = 1;
    /// Also report the shared-input first-order propagation.
    bool joint_first_order = false;
    bool second_order = false;
    /// Timing values make reports differ run to run; off gives byte-stable files.
    bool timing = true;
};

struct ReportRow {
    std::string label;
    double nominal = 0.0;
};

/// Results for one admittance error level. Vectors are aligned with ComparisonReport::rows.
struct LevelResult {
    double sigma_y_pct = 0.0;
    std::optional<RealVector> analytical;
    std::optional<RealVector> joint;
    std::vector<std::size_t> n_mc;
    std::vector<RealVector> mc;
    std::vector<std::size_t> mc_failed;
    double analytical_time_s = 0.0;
    double joint_time_s = 0.0;
    std::vector<double> mc_time_s;
};

enum class ReportLayout {
    /// One admittance level, MC std per sample count.
    by_sample_count,
    /// Several admittance levels, std and percent of nominal per method.
    by_admittance_level,
};

struct ComparisonReport {
    std::string network;
    std::string it_class;
    std::uint64_t seed = 0;
    std::vector<ReportRow> rows;
    std::vector<LevelResult> levels;
    bool timing = true;
    double load_flow_time_s = 0.0;
    double coefficient_time_s = 0.0;

    ReportLayout layout() const {
        return levels.size() > 1 ? ReportLayout::by_admittance_level
                                 : ReportLayout::by_sample_count;
    }
};

/// 100 std / |nominal|; infinite when the nominal value is zero.
double percent_of_nominal(double std_dev, double nominal);

/// Load flow, coefficients, analytical propagation and Monte-Carlo per the config; writes
/// report files when out_dir is set. Errors carry the failing stage in their message and
/// keep their type.
ComparisonReport run_pipeline(const RunConfig& cfg);

/// Render a report. CSV and JSON carry full precision; text uses 4 decimals and the
/// reference table layout (coefficients as columns).
std::string render_report(const ComparisonReport& report, ReportFormat format);
/// Write `render_report` output; throws Error when the path cannot be written.
void emit_report(const ComparisonReport& report, ReportFormat format,
                 const std::filesystem::path& path);

}  // namespace pfsc
