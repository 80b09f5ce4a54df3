#include "pfsc/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "pfsc/errors.hpp"

namespace pfsc {

PolarNoiseSpec PolarNoiseSpec::uniform(std::size_t nodes, double sigma_rho, double sigma_theta,
                                       MagnitudeNoise magnitude) {
    if (sigma_rho < 0.0 || sigma_theta < 0.0) {
        throw ValidationError("polar noise standard deviations must be non-negative");
    }
    return PolarNoiseSpec{std::vector<double>(nodes, sigma_rho),
                          std::vector<double>(nodes, sigma_theta), magnitude};
}

double PolarNoiseSpec::magnitude_std(std::size_t node, double rho) const {
    return magnitude == MagnitudeNoise::relative ? sigma_rho[node] * rho : sigma_rho[node];
}

bool PolarNoiseSpec::is_zero() const {
    auto zero = [](double v) { return v == 0.0; };
    return std::all_of(sigma_rho.begin(), sigma_rho.end(), zero) &&
           std::all_of(sigma_theta.begin(), sigma_theta.end(), zero);
}

CartesianNoiseSpec CartesianNoiseSpec::zero(std::size_t nodes) {
    const auto n = static_cast<Eigen::Index>(nodes);
    return {RealVector::Zero(n), RealVector::Zero(n)};
}

PolarNoiseSpec it_class_to_polar(const std::string& label, const ITClassTable& table,
                                 std::size_t nodes, std::optional<ITClassLimits> custom) {
    ITClassLimits limits;
    if (label == "custom") {
        if (!custom) {
            throw ValidationError("IT class \"custom\" needs explicit magnitude and phase limits");
        }
        limits = *custom;
    } else {
        auto it = table.find(label);
        if (it == table.end()) {
            throw ValidationError(fmt::format("unknown IT accuracy class \"{}\"", label));
        }
        limits = it->second;
    }
    return PolarNoiseSpec::uniform(nodes, limits.magnitude / 3.0, limits.phase_rad / 3.0);
}

CartesianNoiseSpec project_polar_noise(const ComplexVector& voltages, const PolarNoiseSpec& polar,
                                       ImagProjection form) {
    const auto n = static_cast<std::size_t>(voltages.size());
    if (polar.sigma_rho.size() != n || polar.sigma_theta.size() != n) {
        throw DimensionError(fmt::format("polar noise has {} entries, state has {} nodes",
                                         polar.sigma_rho.size(), n));
    }
    CartesianNoiseSpec out = CartesianNoiseSpec::zero(n);
    for (std::size_t k = 0; k < n; ++k) {
        const Complex e = voltages(static_cast<Eigen::Index>(k));
        const double rho = std::abs(e);
        const double theta = std::arg(e);
        const double m = polar.magnitude_std(k, rho);
        const double s = polar.sigma_theta[k];
        if (polar.sigma_rho[k] < 0.0 || s < 0.0) {
            throw ValidationError("polar noise standard deviations must be non-negative");
        }

        // e^{-2s^2} = 1 + e1, e^{-s^2/2} = 1 + e2; the O(1) parts cancel analytically.
        const double e1 = std::expm1(-2.0 * s * s);
        const double e2 = std::expm1(-0.5 * s * s);
        const double c2 = std::cos(2.0 * theta);
        const double cc = std::cos(theta) * std::cos(theta);
        const double ss = std::sin(theta) * std::sin(theta);
        const double total = rho * rho + m * m;

        const double var_re = m * m * cc + 0.5 * total * e1 * c2 - 2.0 * rho * rho * e2 * cc;
        double var_im = 0.0;
        if (form == ImagProjection::corrected) {
            var_im = m * m * ss - 0.5 * total * e1 * c2 - 2.0 * rho * rho * e2 * ss;
        } else {
            var_im = 0.5 * total * (1.0 + std::exp(-2.0 * s * s) * c2) +
                     rho * rho * ss * (1.0 - 2.0 * std::exp(-0.5 * s * s));
        }
        out.re_variance(static_cast<Eigen::Index>(k)) = std::max(var_re, 0.0);
        out.im_variance(static_cast<Eigen::Index>(k)) = std::max(var_im, 0.0);
    }
    return out;
}

NoiseConfig parse_noise_config(const std::string& text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("noise config", e.what());
    }
    if (!doc.is_object()) {
        throw ParseError("noise config", "expected a JSON object");
    }
    NoiseConfig cfg;
    for (const auto& [key, value] : doc.items()) {
        if (key == "it_classes") {
            if (!value.is_object()) {
                throw ParseError("/it_classes", "expected an object keyed by class label");
            }
            for (const auto& [label, limits] : value.items()) {
                const std::string where = "/it_classes/" + label;
                if (!limits.is_object() || !limits.contains("magnitude_pct") ||
                    !limits.contains("phase_rad") || !limits["magnitude_pct"].is_number() ||
                    !limits["phase_rad"].is_number()) {
                    throw ParseError(where, "expected {\"magnitude_pct\": x, \"phase_rad\": y}");
                }
                const ITClassLimits l{limits["magnitude_pct"].get<double>() / 100.0,
                                      limits["phase_rad"].get<double>()};
                if (l.magnitude < 0.0 || l.phase_rad < 0.0) {
                    throw ValidationError(where + ": limits must be non-negative");
                }
                cfg.it_classes[label] = l;
            }
        } else if (key == "it_class") {
            if (!value.is_string()) {
                throw ParseError("/it_class", "expected a string");
            }
            cfg.it_class = value.get<std::string>();
        } else if (key == "sigma_y_pct") {
            if (!value.is_number() || value.get<double>() < 0.0) {
                throw ParseError("/sigma_y_pct", "expected a non-negative number");
            }
            cfg.sigma_y_pct = value.get<double>();
        } else if (key == "magnitude_noise") {
            if (value == "relative") {
                cfg.magnitude = MagnitudeNoise::relative;
            } else if (value == "absolute") {
                cfg.magnitude = MagnitudeNoise::absolute;
            } else {
                throw ParseError("/magnitude_noise", "expected \"relative\" or \"absolute\"");
            }
        } else if (key == "imag_projection") {
            if (value == "corrected") {
                cfg.projection = ImagProjection::corrected;
            } else if (value == "literal") {
                cfg.projection = ImagProjection::literal;
            } else {
                throw ParseError("/imag_projection", "expected \"corrected\" or \"literal\"");
            }
        } else if (key == "sources" || key == "notes") {
            // free-form documentation
        } else {
            throw ParseError("/" + key, "unknown field");
        }
    }
    return cfg;
}

NoiseConfig load_noise_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path.string(), "cannot open noise config");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_noise_config(buffer.str());
}

}  // namespace pfsc
