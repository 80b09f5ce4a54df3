#include "pfsc/monte_carlo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <thread>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "pfsc/errors.hpp"

namespace pfsc {

namespace {

Eigen::Index idx(std::size_t k) { return static_cast<Eigen::Index>(k); }

// Trials handed to the workers at once; bounds the buffer that is reduced in order.
constexpr std::size_t kChunk = 512;

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct BranchStamp {
    std::size_t from;
    std::size_t to;
    ComplexMatrix series;
};

class Sampler {
public:
    Sampler(const NetworkModel& network, const AdmittanceMatrix& y, const GridState& state,
            const MCConfig& cfg)
        : y_(y), state_(state), cfg_(cfg) {
        const std::size_t n = y.size();
        if (static_cast<std::size_t>(state.voltages.size()) != n || cfg.polar.size() != n) {
            throw DimensionError(fmt::format(
                "Monte-Carlo inputs disagree: {} nodes in Y, {} voltages, {} noise entries", n,
                state.voltages.size(), cfg.polar.size()));
        }
        if (cfg.symmetry != SymmetryMode::branch_parameter) {
            const auto ni = idx(n);
            if (cfg.yu.re_variance.rows() != ni || cfg.yu.re_variance.cols() != ni ||
                cfg.yu.im_variance.rows() != ni || cfg.yu.im_variance.cols() != ni) {
                throw DimensionError("admittance uncertainty does not match Y");
            }
            re_std_ = cfg.yu.re_std();
            im_std_ = cfg.yu.im_std();
            if (!re_std_.allFinite() || !im_std_.allFinite()) {
                throw ValidationError("admittance variances must be finite and non-negative");
            }
            return;
        }
        if (!cfg.yu.relative_level) {
            throw ValidationError(
                "branch-parameter mode needs a relative admittance uncertainty level");
        }
        level_ = *cfg.yu.relative_level;
        const int p = network.phase_count();
        for (std::size_t b = 0; b < network.branches().size(); ++b) {
            const Branch& br = network.branches()[b];
            stamps_.push_back({network.position_of(br.from), network.position_of(br.to),
                               network.branch_impedance_pu(b).inverse()});
        }
        phases_ = static_cast<std::size_t>(p);
    }

    TrialInputs draw(std::uint64_t trial) const {
        std::mt19937_64 rng(trial_seed(cfg_.seed, trial));
        std::normal_distribution<double> normal(0.0, 1.0);
        const std::size_t n = y_.size();

        TrialInputs out{state_.voltages, y_.values};
        for (std::size_t k = 0; k < n; ++k) {
            const Complex e = state_.voltages(idx(k));
            const double rho = std::abs(e);
            const double d_rho = normal(rng) * cfg_.polar.magnitude_std(k, rho);
            const double d_theta = normal(rng) * cfg_.polar.sigma_theta[k];
            if (d_rho != 0.0 || d_theta != 0.0) {
                out.voltages(idx(k)) = std::polar(rho + d_rho, std::arg(e) + d_theta);
            }
        }

        switch (cfg_.symmetry) {
            case SymmetryMode::independent_elements:
                for (Eigen::Index l = 0; l < idx(n); ++l) {
                    for (Eigen::Index m = 0; m < idx(n); ++m) {
                        const double dr = normal(rng) * re_std_(l, m);
                        const double di = normal(rng) * im_std_(l, m);
                        out.y(l, m) += Complex(dr, di);
                    }
                }
                break;
            case SymmetryMode::symmetric_pairs:
                for (Eigen::Index l = 0; l < idx(n); ++l) {
                    for (Eigen::Index m = l; m < idx(n); ++m) {
                        const double dr = normal(rng) * re_std_(l, m);
                        const double di = normal(rng) * im_std_(l, m);
                        out.y(l, m) += Complex(dr, di);
                        if (m != l) {
                            out.y(m, l) += Complex(dr, di);
                        }
                    }
                }
                break;
            case SymmetryMode::branch_parameter:
                for (const BranchStamp& s : stamps_) {
                    const auto p = idx(phases_);
                    ComplexMatrix delta(p, p);
                    for (Eigen::Index a = 0; a < p; ++a) {
                        for (Eigen::Index b = 0; b < p; ++b) {
                            const Complex v = s.series(a, b);
                            delta(a, b) = {normal(rng) * level_ * std::abs(v.real()),
                                           normal(rng) * level_ * std::abs(v.imag())};
                        }
                    }
                    const auto f = idx(s.from * phases_);
                    const auto t = idx(s.to * phases_);
                    out.y.block(f, f, p, p) += delta;
                    out.y.block(t, t, p, p) += delta;
                    out.y.block(f, t, p, p) -= delta;
                    out.y.block(t, f, p, p) -= delta;
                }
                break;
        }
        return out;
    }

private:
    const AdmittanceMatrix& y_;
    const GridState& state_;
    const MCConfig& cfg_;
    RealMatrix re_std_;
    RealMatrix im_std_;
    std::vector<BranchStamp> stamps_;
    std::size_t phases_ = 1;
    double level_ = 0.0;
};

}  // namespace

std::string to_string(SymmetryMode mode) {
    switch (mode) {
        case SymmetryMode::independent_elements:
            return "independent-elements";
        case SymmetryMode::symmetric_pairs:
            return "symmetric-pairs";
        case SymmetryMode::branch_parameter:
            return "branch-parameter";
    }
    return "unknown";
}

SymmetryMode parse_symmetry_mode(const std::string& text) {
    for (SymmetryMode m : {SymmetryMode::independent_elements, SymmetryMode::symmetric_pairs,
                           SymmetryMode::branch_parameter}) {
        if (text == to_string(m)) {
            return m;
        }
    }
    throw ValidationError(fmt::format("unknown symmetry mode \"{}\"", text));
}

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t trial) {
    return splitmix64(splitmix64(seed) ^ trial);
}

TrialInputs draw_trial(const NetworkModel& network, const AdmittanceMatrix& y,
                       const GridState& state, const MCConfig& cfg, std::uint64_t trial) {
    return Sampler(network, y, state, cfg).draw(trial);
}

MCResult run_monte_carlo(const NetworkModel& network, const AdmittanceMatrix& y,
                         const GridState& state, const MCConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    if (cfg.n_mc == 0) {
        throw ValidationError("Monte-Carlo trial count must be at least 1");
    }
    if (!state.converged) {
        throw NumericalError("Monte-Carlo run needs a converged nominal state");
    }
    const Sampler sampler(network, y, state, cfg);
    const ReducedIndex index(network.bus_count(), network.phase_count(),
                             network.slack_position());
    const auto dim = idx(index.dimension());
    const auto coeffs = dim * dim;

    unsigned threads = cfg.threads == 0 ? std::thread::hardware_concurrency() : cfg.threads;
    threads = std::max(1u, threads);

    MCResult result;
    result.trials_run = cfg.n_mc;
    if (cfg.keep_trials) {
        result.trials = RealMatrix::Zero(coeffs, idx(cfg.n_mc));
    }
    RealVector mean = RealVector::Zero(coeffs);
    RealVector m2 = RealVector::Zero(coeffs);
    std::size_t ok = 0;
    std::size_t kept = 0;

    RealMatrix buffer(coeffs, idx(kChunk));
    std::vector<char> success(kChunk);

    for (std::size_t first = 0; first < cfg.n_mc; first += kChunk) {
        const std::size_t count = std::min(kChunk, cfg.n_mc - first);
        auto work = [&](std::size_t slot) {
            const TrialInputs in = sampler.draw(first + slot);
            try {
                const SensitivityResult r =
                    solve_coefficients(assemble_problem(in.y, in.voltages, index));
                buffer.col(idx(slot)) = r.x.reshaped();
                success[slot] = r.x.allFinite() ? 1 : 0;
            } catch (const NumericalError&) {
                success[slot] = 0;
            }
        };

        if (threads == 1 || count < 2) {
            for (std::size_t s = 0; s < count; ++s) {
                work(s);
            }
        } else {
            std::atomic<std::size_t> next{0};
            std::vector<std::jthread> pool;
            for (unsigned t = 0; t < std::min<std::size_t>(threads, count); ++t) {
                pool.emplace_back([&] {
                    for (std::size_t s = next++; s < count; s = next++) {
                        work(s);
                    }
                });
            }
        }

        // Welford update in trial order, so the result does not depend on scheduling.
        for (std::size_t s = 0; s < count; ++s) {
            if (!success[s]) {
                ++result.trials_failed;
                continue;
            }
            ++ok;
            const auto x = buffer.col(idx(s));
            const RealVector delta = x - mean;
            mean += delta / static_cast<double>(ok);
            m2 += delta.cwiseProduct(x - mean);
            if (cfg.keep_trials) {
                result.trials.col(idx(kept++)) = x;
            }
        }
    }

    if (ok == 0) {
        throw NumericalError(
            fmt::format("all {} Monte-Carlo trials had a singular Jacobian", cfg.n_mc));
    }
    if (cfg.keep_trials) {
        result.trials.conservativeResize(coeffs, idx(kept));
    }
    result.mean = mean.reshaped(dim, dim);
    if (ok < 2) {
        result.std = RealMatrix::Constant(dim, dim, std::numeric_limits<double>::quiet_NaN());
    } else {
        result.std = (m2 / static_cast<double>(ok - 1)).cwiseSqrt().reshaped(dim, dim);
    }
    result.runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

SampleStats estimate_stats(const RealMatrix& samples) {
    const Eigen::Index n = samples.cols();
    if (n < 2) {
        throw ValidationError(
            fmt::format("sample statistics need at least 2 observations, got {}", n));
    }
    SampleStats s;
    s.mean = samples.rowwise().mean();
    const RealMatrix centred = samples.colwise() - s.mean;
    s.std = (centred.cwiseAbs2().rowwise().sum() / static_cast<double>(n - 1)).cwiseSqrt();
    return s;
}

double sample_covariance(const RealMatrix& samples, std::size_t i, std::size_t j) {
    const Eigen::Index n = samples.cols();
    if (n < 2) {
        throw ValidationError("sample covariance needs at least 2 observations");
    }
    if (i >= static_cast<std::size_t>(samples.rows()) ||
        j >= static_cast<std::size_t>(samples.rows())) {
        throw DimensionError("sample covariance: row index out of range");
    }
    const RealVector a = samples.row(idx(i)).transpose().array() - samples.row(idx(i)).mean();
    const RealVector b = samples.row(idx(j)).transpose().array() - samples.row(idx(j)).mean();
    return a.dot(b) / static_cast<double>(n - 1);
}

QQReport qq_normality_check(const RealVector& samples, double threshold) {
    const Eigen::Index n = samples.size();
    if (n < 20) {
        throw ValidationError(fmt::format("QQ check needs at least 20 samples, got {}", n));
    }
    QQReport report;
    report.threshold = threshold;
    report.sample = samples;
    std::sort(report.sample.begin(), report.sample.end());
    report.theoretical.resize(n);
    const boost::math::normal standard;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double p = (static_cast<double>(i + 1) - 0.375) / (static_cast<double>(n) + 0.25);
        report.theoretical(i) = boost::math::quantile(standard, p);
    }
    const RealVector a = report.theoretical.array() - report.theoretical.mean();
    const RealVector b = report.sample.array() - report.sample.mean();
    const double denom = a.norm() * b.norm();
    report.correlation = denom > 0.0 ? a.dot(b) / denom : 0.0;
    report.normal = report.correlation >= threshold;
    return report;
}

void write_qq_csv(const QQReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error(fmt::format("cannot write QQ output {}", path.string()));
    }
    out << "theoretical_quantile,sample_quantile\n";
    for (Eigen::Index i = 0; i < report.sample.size(); ++i) {
        out << fmt::format("{},{}\n", report.theoretical(i), report.sample(i));
    }
}

void write_trial_store(const RealMatrix& trials, const std::vector<std::string>& labels,
                       const std::filesystem::path& path) {
    if (labels.size() != static_cast<std::size_t>(trials.rows())) {
        throw DimensionError("trial store: one label per coefficient row required");
    }
    std::ofstream out(path);
    if (!out) {
        throw Error(fmt::format("cannot write trial store {}", path.string()));
    }
    out << "coefficient";
    for (Eigen::Index k = 0; k < trials.cols(); ++k) {
        out << ",trial_" << k;
    }
    out << '\n';
    for (Eigen::Index r = 0; r < trials.rows(); ++r) {
        out << labels[static_cast<std::size_t>(r)];
        for (Eigen::Index k = 0; k < trials.cols(); ++k) {
            out << fmt::format(",{}", trials(r, k));
        }
        out << '\n';
    }
}

}  // namespace pfsc
