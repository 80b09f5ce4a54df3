#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pfsc/load_flow.hpp"
#include "pfsc/noise.hpp"
#include "pfsc/sensitivity.hpp"
#include "pfsc/uncertainty.hpp"

namespace pfsc {

/// How admittance errors are drawn.
enum class SymmetryMode {
    /// Every element (l, m) perturbed on its own, Y(l,m) and Y(m,l) independently.
    independent_elements,
    /// One draw per unordered pair, applied to both Y(l,m) and Y(m,l).
    symmetric_pairs,
    /// One draw per element of every branch series admittance, stamped into Y; keeps
    /// Y symmetric with zero row sums. Uses AdmittanceUncertainty::relative_level.
    branch_parameter,
};

std::string to_string(SymmetryMode mode);
SymmetryMode parse_symmetry_mode(const std::string& text);

struct MCConfig {
    std::size_t n_mc = 1000;
    std::uint64_t seed = 42;
    PolarNoiseSpec polar;
    AdmittanceUncertainty yu;
    SymmetryMode symmetry = SymmetryMode::independent_elements;
    /// Worker threads; 0 picks the hardware concurrency. Results do not depend on it.
    unsigned threads = 1;
    /// Keep every trial's coefficients (needed for QQ checks and the trial-store dump).
    bool keep_trials = false;
};

struct MCResult {
    /// Sample mean and (n-1) std over successful trials, shaped like SensitivityResult::x.
    RealMatrix mean;
    RealMatrix std;
    /// Column k holds trial k's x flattened column-major; empty unless keep_trials.
    RealMatrix trials;
    std::size_t trials_run = 0;
    std::size_t trials_failed = 0;
    double runtime_s = 0.0;
};

/// Seed of the generator used for one trial: splitmix64 applied to seed and trial index.
std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t trial);

/// One noisy operating point and admittance matrix, as drawn for a trial.
struct TrialInputs {
    ComplexVector voltages;
    ComplexMatrix y;
};

/// Draw the inputs of trial `trial`. Exposed so tests can check the sampler itself.
TrialInputs draw_trial(const NetworkModel& network, const AdmittanceMatrix& y,
                       const GridState& state, const MCConfig& cfg, std::uint64_t trial);

/// Per trial: perturb voltages in polar form (slack included) and Y, reassemble H, solve
/// for x. Singular trials are counted and excluded. Deterministic for a fixed seed and
/// independent of the thread count. Throws ValidationError for n_mc = 0 and
/// NumericalError when every trial fails.
MCResult run_monte_carlo(const NetworkModel& network, const AdmittanceMatrix& y,
                         const GridState& state, const MCConfig& cfg);

struct SampleStats {
    RealVector mean;
    RealVector std;
};

/// Row-wise mean and unbiased std of `samples` (one row per variable, one column per
/// observation). Throws ValidationError with fewer than two observations.
SampleStats estimate_stats(const RealMatrix& samples);
/// Unbiased sample covariance of rows i and j.
double sample_covariance(const RealMatrix& samples, std::size_t i, std::size_t j);

struct QQReport {
    RealVector theoretical;
    RealVector sample;
    /// Pearson correlation of the two quantile vectors.
    double correlation = 0.0;
    double threshold = 0.999;
    bool normal = false;
};

/// Sorted samples against standard normal quantiles at Blom plotting positions
/// (i - 3/8) / (n + 1/4). Throws ValidationError below 20 samples.
QQReport qq_normality_check(const RealVector& samples, double threshold = 0.999);

/// CSV with header `theoretical_quantile,sample_quantile`.
void write_qq_csv(const QQReport& report, const std::filesystem::path& path);

/// CSV with one row per coefficient and one column per trial. `labels` names the rows.
void write_trial_store(const RealMatrix& trials, const std::vector<std::string>& labels,
                       const std::filesystem::path& path);

}  // namespace pfsc
