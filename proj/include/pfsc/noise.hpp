#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfsc/network.hpp"

namespace pfsc {

/// How sigma_rho is read: a fraction of |E| (instrument accuracy classes) or per unit.
enum class MagnitudeNoise { relative, absolute };

/// Which closed form is used for the imaginary-part variance of a projected phasor.
/// `corrected` carries a minus sign on the e^{-2 s^2} cos(2 theta) term; `literal`
/// repeats the plus sign of the real-part expression and is kept only for comparison.
enum class ImagProjection { corrected, literal };

/// Standard deviations of magnitude and phase noise per node.
struct PolarNoiseSpec {
    std::vector<double> sigma_rho;
    std::vector<double> sigma_theta;
    MagnitudeNoise magnitude = MagnitudeNoise::relative;

    static PolarNoiseSpec uniform(std::size_t nodes, double sigma_rho, double sigma_theta,
                                  MagnitudeNoise magnitude = MagnitudeNoise::relative);

    std::size_t size() const noexcept { return sigma_rho.size(); }
    /// Absolute magnitude std (per unit) of a node with magnitude `rho`.
    double magnitude_std(std::size_t node, double rho) const;
    bool is_zero() const;
};

/// Variances of the real and imaginary parts of each voltage phasor.
struct CartesianNoiseSpec {
    RealVector re_variance;
    RealVector im_variance;

    static CartesianNoiseSpec zero(std::size_t nodes);
    RealVector re_std() const { return re_variance.cwiseSqrt(); }
    RealVector im_std() const { return im_variance.cwiseSqrt(); }
};

/// Worst-case limits of an instrument transformer accuracy class.
struct ITClassLimits {
    double magnitude = 0.0;  ///< ratio error as a fraction (0.005 for 0.5 %)
    double phase_rad = 0.0;  ///< phase displacement, radians
};

using ITClassTable = std::map<std::string, ITClassLimits>;

/// Noise configuration file contents.
struct NoiseConfig {
    ITClassTable it_classes;
    std::string it_class = "0.5";
    double sigma_y_pct = 1.0;
    MagnitudeNoise magnitude = MagnitudeNoise::relative;
    ImagProjection projection = ImagProjection::corrected;
};

NoiseConfig parse_noise_config(const std::string& text);
NoiseConfig load_noise_config(const std::filesystem::path& path);

/// Class limits read as 3-sigma bounds: sigma_rho = magnitude / 3, sigma_theta = phase / 3.
/// `label == "custom"` uses `custom`; an unknown label throws ValidationError.
PolarNoiseSpec it_class_to_polar(const std::string& label, const ITClassTable& table,
                                 std::size_t nodes,
                                 std::optional<ITClassLimits> custom = std::nullopt);

/// Project polar noise to Cartesian variances at the given phasors. With
/// rho = |E|, theta = arg E, s = sigma_theta and m = magnitude std:
///   var Re = 1/2 (rho^2 + m^2)(1 + e^{-2s^2} cos 2theta) + rho^2 cos^2 theta (1 - 2 e^{-s^2/2})
///   var Im = 1/2 (rho^2 + m^2)(1 - e^{-2s^2} cos 2theta) + rho^2 sin^2 theta (1 - 2 e^{-s^2/2})
/// evaluated with expm1 so that small noise levels do not cancel catastrophically.
CartesianNoiseSpec project_polar_noise(const ComplexVector& voltages, const PolarNoiseSpec& polar,
                                       ImagProjection form = ImagProjection::corrected);

}  // namespace pfsc
