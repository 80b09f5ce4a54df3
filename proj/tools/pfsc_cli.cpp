#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "pfsc/errors.hpp"
#include "pfsc/load_flow.hpp"
#include "pfsc/monte_carlo.hpp"
#include "pfsc/network.hpp"
#include "pfsc/noise.hpp"
#include "pfsc/report.hpp"
#include "pfsc/sensitivity.hpp"
#include "pfsc/uncertainty.hpp"

#ifndef PFSC_DATA_DIR
#define PFSC_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using namespace pfsc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

fs::path config_dir() {
    if (const char* env = std::getenv("PFSC_CONFIG_DIR"); env && *env) {
        return env;
    }
    return PFSC_DATA_DIR;
}

struct Common {
    std::string network;
    std::string noise_config;
    std::string out;
    std::string format = "csv";
    std::vector<std::string> coefficients;
    std::string it_class;
    double sigma_y_pct = -1.0;
};

void add_network(CLI::App* app, Common& c) {
    app->add_option("--network", c.network, "network description (JSON, SI units)")->required();
}

void add_noise(CLI::App* app, Common& c) {
    app->add_option("--noise-config", c.noise_config,
                    "noise configuration (default: $PFSC_CONFIG_DIR/noise.json)");
    app->add_option("--it-class", c.it_class, "instrument transformer accuracy class");
    app->add_option("--sigma-y-pct", c.sigma_y_pct, "admittance error, percent of |element|")
        ->check(CLI::NonNegativeNumber);
}

void add_coefficients(CLI::App* app, Common& c) {
    app->add_option("--coef", c.coefficients,
                    "coefficient such as \"Re dE3/dP2\"; \"reference\" selects the "
                    "six reference ones; default all");
}

void add_output(CLI::App* app, Common& c, const std::string& what) {
    app->add_option("--out", c.out, what);
    app->add_option("--format", c.format, "csv, json or text")
        ->check(CLI::IsMember({"csv", "json", "text", "pretty-text"}));
}

fs::path noise_path(const Common& c) {
    return c.noise_config.empty() ? config_dir() / "noise.json" : fs::path(c.noise_config);
}

std::vector<CoefficientSelector> selectors(const Common& c) {
    std::vector<CoefficientSelector> out;
    for (const auto& text : c.coefficients) {
        if (text == "reference") {
            const auto ref = reference_coefficients();
            out.insert(out.end(), ref.begin(), ref.end());
        } else if (text != "all") {
            out.push_back(parse_coefficient(text));
        }
    }
    return out;
}

void write_output(const std::string& text, const std::string& out) {
    if (out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(out, std::ios::binary);
    if (!f) {
        throw Error(fmt::format("cannot write {}", out));
    }
    f << text;
}

struct Loaded {
    NetworkModel network;
    AdmittanceMatrix y;
    GridState state;
};

Loaded load(const Common& c) {
    if (!fs::exists(c.network)) {
        throw ValidationError(fmt::format("network file {} does not exist", c.network));
    }
    NetworkModel network = load_network(c.network);
    AdmittanceMatrix y = build_admittance(network);
    GridState state = solve_load_flow(network, y);
    return {std::move(network), std::move(y), std::move(state)};
}

int cmd_solve(const Common& c) {
    const Loaded l = load(c);
    const ComplexVector s = nodal_power(l.state, l.y);
    const int p = l.network.phase_count();
    const ReportFormat format = parse_report_format(c.format);
    std::string text;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    if (format == ReportFormat::csv) {
        text = "bus,phase,magnitude_pu,angle_deg,re_pu,im_pu,p_pu,q_pu\n";
    } else if (format == ReportFormat::text) {
        text = fmt::format("load flow converged in {} iterations, mismatch {:.3e}\n",
                           l.state.iterations, l.state.mismatch_history.back());
        text += fmt::format("{:>4} {:>5} {:>10} {:>10} {:>10} {:>10}\n", "bus", "phase", "|E| pu",
                            "angle deg", "P pu", "Q pu");
    }
    for (std::size_t b = 0; b < l.network.bus_count(); ++b) {
        for (int ph = 0; ph < p; ++ph) {
            const auto k = static_cast<Eigen::Index>(l.network.flat_index(b, ph));
            const Complex e = l.state.voltages(k);
            const double deg = std::arg(e) * 180.0 / 3.14159265358979323846;
            const int bus = l.network.buses()[b].index;
            const char phase = static_cast<char>('a' + ph);
            if (format == ReportFormat::csv) {
                text += fmt::format("{},{},{},{},{},{},{},{}\n", bus, phase, std::abs(e), deg,
                                    e.real(), e.imag(), s(k).real(), s(k).imag());
            } else if (format == ReportFormat::text) {
                text += fmt::format("{:>4} {:>5} {:>10.6f} {:>10.4f} {:>10.6f} {:>10.6f}\n", bus,
                                    phase, std::abs(e), deg, s(k).real(), s(k).imag());
            } else {
                rows.push_back({{"bus", bus},
                                {"phase", std::string(1, phase)},
                                {"magnitude_pu", std::abs(e)},
                                {"angle_deg", deg},
                                {"re_pu", e.real()},
                                {"im_pu", e.imag()},
                                {"p_pu", s(k).real()},
                                {"q_pu", s(k).imag()}});
            }
        }
    }
    if (format == ReportFormat::json) {
        nlohmann::ordered_json doc;
        doc["network"] = l.network.name();
        doc["iterations"] = l.state.iterations;
        doc["nodes"] = rows;
        text = doc.dump(2) + "\n";
    }
    write_output(text, c.out);
    return kExitOk;
}

ComparisonReport base_report(const Loaded& l, const SensitivityResult& sol,
                             const std::vector<CoefficientSelector>& wanted,
                             std::vector<std::pair<std::size_t, std::size_t>>& positions) {
    ComparisonReport r;
    r.network = l.network.name();
    r.timing = true;
    const auto sel = wanted.empty() ? all_coefficients(l.network) : wanted;
    for (const auto& s : sel) {
        positions.push_back(coefficient_position(l.network, s));
        r.rows.push_back({coefficient_label(s, l.network.phase_count()),
                          sol.x(static_cast<Eigen::Index>(positions.back().first),
                                static_cast<Eigen::Index>(positions.back().second))});
    }
    return r;
}

RealVector pick(const RealMatrix& m, const std::vector<std::pair<std::size_t, std::size_t>>& at) {
    RealVector v(static_cast<Eigen::Index>(at.size()));
    for (std::size_t i = 0; i < at.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = m(static_cast<Eigen::Index>(at[i].first),
                                            static_cast<Eigen::Index>(at[i].second));
    }
    return v;
}

int cmd_pfsc(const Common& c) {
    const Loaded l = load(c);
    const SensitivityResult sol =
        solve_coefficients(assemble_problem(l.y, l.state, l.network.slack_position()));
    std::vector<std::pair<std::size_t, std::size_t>> positions;
    ComparisonReport r = base_report(l, sol, selectors(c), positions);
    r.timing = false;
    write_output(render_report(r, parse_report_format(c.format)), c.out);
    return kExitOk;
}

struct NoiseSetup {
    NoiseConfig config;
    std::string it_class;
    double sigma_y_pct = 0.0;
    PolarNoiseSpec polar;
    CartesianNoiseSpec cartesian;
};

NoiseSetup noise_setup(const Common& c, const Loaded& l) {
    NoiseSetup n;
    const fs::path path = noise_path(c);
    if (!fs::exists(path)) {
        throw ValidationError(fmt::format("noise config {} does not exist", path.string()));
    }
    n.config = load_noise_config(path);
    n.it_class = c.it_class.empty() ? n.config.it_class : c.it_class;
    n.sigma_y_pct = c.sigma_y_pct >= 0.0 ? c.sigma_y_pct : n.config.sigma_y_pct;
    n.polar = it_class_to_polar(n.it_class, n.config.it_classes, l.y.size());
    n.polar.magnitude = n.config.magnitude;
    n.cartesian = project_polar_noise(l.state.voltages, n.polar, n.config.projection);
    return n;
}

int cmd_propagate(const Common& c, bool joint, bool second_order) {
    const Loaded l = load(c);
    const NoiseSetup n = noise_setup(c, l);
    const SensitivityProblem problem = assemble_problem(l.y, l.state, l.network.slack_position());
    const SensitivityResult sol = solve_coefficients(problem);
    std::vector<std::pair<std::size_t, std::size_t>> positions;
    ComparisonReport r = base_report(l, sol, selectors(c), positions);
    r.it_class = n.it_class;
    const AdmittanceUncertainty yu = AdmittanceUncertainty::from_percent(l.y, n.sigma_y_pct);

    LevelResult level;
    level.sigma_y_pct = n.sigma_y_pct;
    const UncertaintyResult al = analytical_uncertainty(problem, sol, l.y, yu, n.cartesian,
                                                        PropagationOptions{second_order});
    level.analytical = pick(al.std_dev(), positions);
    level.analytical_time_s = al.runtime_s;
    if (joint) {
        const UncertaintyResult j =
            joint_first_order_uncertainty(problem, sol, l.y, yu, n.cartesian);
        level.joint = pick(j.std_dev(), positions);
        level.joint_time_s = j.runtime_s;
    }
    r.levels.push_back(std::move(level));
    r.timing = false;
    write_output(render_report(r, parse_report_format(c.format)), c.out);
    return kExitOk;
}

struct McOptions {
    std::size_t n_mc = 1000;
    std::uint64_t seed = 42;
    unsigned threads = 1;
    std::string symmetry = "independent-elements";
    std::string trials_out;
    std::string qq_out;
    std::string qq_coef;
    bool timing = true;
};

int cmd_mc(const Common& c, const McOptions& o) {
    const Loaded l = load(c);
    const NoiseSetup n = noise_setup(c, l);
    const SensitivityResult sol =
        solve_coefficients(assemble_problem(l.y, l.state, l.network.slack_position()));
    std::vector<std::pair<std::size_t, std::size_t>> positions;
    ComparisonReport r = base_report(l, sol, selectors(c), positions);
    r.it_class = n.it_class;
    r.seed = o.seed;
    r.timing = o.timing;

    MCConfig cfg;
    cfg.n_mc = o.n_mc;
    cfg.seed = o.seed;
    cfg.polar = n.polar;
    cfg.yu = AdmittanceUncertainty::from_percent(l.y, n.sigma_y_pct);
    cfg.symmetry = parse_symmetry_mode(o.symmetry);
    cfg.threads = o.threads;
    cfg.keep_trials = !o.trials_out.empty() || !o.qq_out.empty();
    const MCResult res = run_monte_carlo(l.network, l.y, l.state, cfg);
    if (res.trials_failed > 0) {
        std::cerr << fmt::format("{} of {} trials excluded (singular Jacobian)\n",
                                 res.trials_failed, res.trials_run);
    }

    LevelResult level;
    level.sigma_y_pct = n.sigma_y_pct;
    level.n_mc.push_back(o.n_mc);
    level.mc.push_back(pick(res.std, positions));
    level.mc_failed.push_back(res.trials_failed);
    level.mc_time_s.push_back(res.runtime_s);
    r.levels.push_back(std::move(level));
    write_output(render_report(r, parse_report_format(c.format)), c.out);

    const auto dim = static_cast<std::size_t>(sol.x.rows());
    auto flat_row = [&](std::pair<std::size_t, std::size_t> at) {
        return static_cast<Eigen::Index>(at.second * dim + at.first);
    };
    if (!o.trials_out.empty()) {
        RealMatrix store(static_cast<Eigen::Index>(positions.size()), res.trials.cols());
        std::vector<std::string> labels;
        for (std::size_t i = 0; i < positions.size(); ++i) {
            store.row(static_cast<Eigen::Index>(i)) = res.trials.row(flat_row(positions[i]));
            labels.push_back(r.rows[i].label);
        }
        write_trial_store(store, labels, o.trials_out);
    }
    if (!o.qq_out.empty()) {
        std::size_t which = 0;
        if (!o.qq_coef.empty()) {
            const auto target = coefficient_position(l.network, parse_coefficient(o.qq_coef));
            const auto it = std::find(positions.begin(), positions.end(), target);
            if (it == positions.end()) {
                throw ValidationError("--qq-coef must be one of the selected coefficients");
            }
            which = static_cast<std::size_t>(it - positions.begin());
        }
        if (positions.empty()) {
            throw ValidationError("no coefficient selected for the QQ check");
        }
        const QQReport qq = qq_normality_check(res.trials.row(flat_row(positions[which])).transpose());
        write_qq_csv(qq, o.qq_out);
        std::cerr << fmt::format("QQ correlation of {}: {:.6f} ({})\n", r.rows[which].label,
                                 qq.correlation, qq.normal ? "normal" : "not normal");
    }
    return kExitOk;
}

struct QqOptions {
    int bus = 0;
    int phase = 0;
    std::string part = "Re";
    std::size_t samples = 100000;
    std::uint64_t seed = 42;
};

/// Noisy voltage samples of one node under the configured IT class.
int cmd_qq(const Common& c, const QqOptions& o) {
    const Loaded l = load(c);
    const NoiseSetup n = noise_setup(c, l);
    MCConfig cfg;
    cfg.polar = n.polar;
    cfg.yu = AdmittanceUncertainty::zero(l.y.size());
    cfg.seed = o.seed;
    const std::size_t node = l.network.flat_index(l.network.position_of(o.bus), o.phase);
    RealVector samples(static_cast<Eigen::Index>(o.samples));
    for (std::size_t k = 0; k < o.samples; ++k) {
        const Complex e =
            draw_trial(l.network, l.y, l.state, cfg, k).voltages(static_cast<Eigen::Index>(node));
        samples(static_cast<Eigen::Index>(k)) = o.part == "Re" ? e.real() : e.imag();
    }
    const QQReport qq = qq_normality_check(samples);
    if (!c.out.empty()) {
        write_qq_csv(qq, c.out);
    }
    std::cout << fmt::format("{} E{} ({} samples, IT class {}): QQ correlation {:.6f} -> {}\n",
                             o.part, o.bus, o.samples, n.it_class, qq.correlation,
                             qq.normal ? "normal" : "not normal");
    return kExitOk;
}

int cmd_report(const Common& c, RunConfig cfg, const std::vector<std::string>& formats,
               const std::string& mode) {
    cfg.network_path = c.network;
    cfg.noise_config_path = noise_path(c);
    cfg.mode = parse_run_mode(mode);
    if (c.sigma_y_pct >= 0.0 && cfg.sigma_y_pct.empty()) {
        cfg.sigma_y_pct = {c.sigma_y_pct};
    }
    if (!c.it_class.empty()) {
        cfg.it_class = c.it_class;
    }
    cfg.coefficients = selectors(c);
    cfg.formats.clear();
    for (const auto& f : formats) {
        cfg.formats.push_back(parse_report_format(f));
    }
    if (!c.out.empty()) {
        cfg.out_dir = c.out;
    }
    const ComparisonReport report = run_pipeline(cfg);
    if (!cfg.out_dir) {
        std::cout << render_report(report, ReportFormat::text);
    } else {
        for (ReportFormat f : cfg.formats) {
            std::cerr << "wrote " << (*cfg.out_dir / (cfg.basename + extension(f))).string()
                      << '\n';
        }
    }
    for (const auto& level : report.levels) {
        for (std::size_t m = 0; m < level.mc_failed.size(); ++m) {
            if (level.mc_failed[m] > 0) {
                std::cerr << fmt::format("sigma_Y {}%, N_mc {}: {} trials excluded\n",
                                         level.sigma_y_pct, level.n_mc[m], level.mc_failed[m]);
            }
        }
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Power-flow sensitivity coefficients and their uncertainty"};
    app.require_subcommand(1);

    Common common;

    auto* solve = app.add_subcommand("solve", "run the load flow and print nodal voltages");
    add_network(solve, common);
    add_output(solve, common, "output file (default stdout)");

    auto* pfsc_cmd = app.add_subcommand("pfsc", "compute voltage sensitivity coefficients");
    add_network(pfsc_cmd, common);
    add_coefficients(pfsc_cmd, common);
    add_output(pfsc_cmd, common, "output file (default stdout)");

    bool joint = false;
    bool second_order = false;
    auto* propagate = app.add_subcommand("propagate", "analytical coefficient uncertainty");
    add_network(propagate, common);
    add_noise(propagate, common);
    add_coefficients(propagate, common);
    add_output(propagate, common, "output file (default stdout)");
    propagate->add_flag("--joint", joint, "also report shared-input first-order propagation");
    propagate->add_flag("--second-order", second_order, "add the second-order product term");

    McOptions mc_opts;
    bool mc_no_timing = false;
    auto* mc = app.add_subcommand("mc", "Monte-Carlo coefficient uncertainty");
    add_network(mc, common);
    add_noise(mc, common);
    add_coefficients(mc, common);
    add_output(mc, common, "output file (default stdout)");
    mc->add_option("--nmc", mc_opts.n_mc, "number of trials")->check(CLI::PositiveNumber);
    mc->add_option("--seed", mc_opts.seed, "random seed");
    mc->add_option("--threads", mc_opts.threads, "worker threads, 0 = all cores");
    mc->add_option("--symmetry", mc_opts.symmetry,
                   "independent-elements, symmetric-pairs or branch-parameter");
    mc->add_option("--trials-out", mc_opts.trials_out, "CSV of every trial's coefficients");
    mc->add_option("--qq-out", mc_opts.qq_out, "QQ CSV of one coefficient's trials");
    mc->add_option("--qq-coef", mc_opts.qq_coef, "coefficient for --qq-out (default first)");
    mc->add_flag("--no-timing", mc_no_timing, "omit runtimes for byte-stable output");

    QqOptions qq_opts;
    auto* qq = app.add_subcommand("qq", "normality check of noisy voltage samples");
    add_network(qq, common);
    add_noise(qq, common);
    qq->add_option("--bus", qq_opts.bus, "bus label")->required();
    qq->add_option("--phase", qq_opts.phase, "phase 0..p-1");
    qq->add_option("--part", qq_opts.part, "Re or Im")->check(CLI::IsMember({"Re", "Im"}));
    qq->add_option("--samples", qq_opts.samples, "number of draws")->check(CLI::Range(20, 100000000));
    qq->add_option("--seed", qq_opts.seed, "random seed");
    qq->add_option("--out", common.out, "QQ CSV output");

    RunConfig run;
    std::vector<std::string> formats{"csv"};
    std::string mode = "both";
    bool no_timing = false;
    auto* report = app.add_subcommand("report", "full comparison pipeline");
    add_network(report, common);
    report->add_option("--noise-config", common.noise_config,
                       "noise configuration (default: $PFSC_CONFIG_DIR/noise.json)");
    report->add_option("--it-class", common.it_class, "instrument transformer accuracy class");
    report->add_option("--sigma-y-pct", run.sigma_y_pct, "admittance error levels, percent")
        ->delimiter(',')
        ->check(CLI::NonNegativeNumber);
    report->add_option("--nmc", run.n_mc, "Monte-Carlo trial counts")
        ->delimiter(',')
        ->check(CLI::PositiveNumber);
    add_coefficients(report, common);
    report->add_option("--out", common.out, "output directory (default: text to stdout)");
    report->add_option("--format", formats, "csv, json, text (comma separated)")
        ->delimiter(',')
        ->check(CLI::IsMember({"csv", "json", "text", "pretty-text"}));
    report->add_option("--mode", mode, "analytical, mc or both")
        ->check(CLI::IsMember({"analytical", "mc", "both"}));
    report->add_option("--seed", run.seed, "random seed");
    report->add_option("--threads", run.threads, "worker threads, 0 = all cores");
    report->add_flag("--joint", run.joint_first_order,
                     "also report shared-input first-order propagation");
    report->add_flag("--no-timing", no_timing, "omit runtimes for byte-stable output");
    report->add_option("--basename", run.basename, "report file name without extension");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*solve) return cmd_solve(common);
        if (*pfsc_cmd) return cmd_pfsc(common);
        if (*propagate) return cmd_propagate(common, joint, second_order);
        if (*mc) {
            mc_opts.timing = !mc_no_timing;
            return cmd_mc(common, mc_opts);
        }
        if (*qq) return cmd_qq(common, qq_opts);
        if (*report) {
            run.timing = !no_timing;
            return cmd_report(common, run, formats, mode);
        }
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
