#include "pfsc/report.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <regex>
#include <variant>

#include <fmt/format.h>
#include <json.hpp>

#include "pfsc/errors.hpp"
#include "pfsc/load_flow.hpp"
#include "pfsc/uncertainty.hpp"

namespace pfsc {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Run one pipeline stage; errors keep their type and gain the stage name.
template <typename F>
auto stage(const std::string& name, const std::string& context, F&& body) {
    const std::string prefix = context.empty() ? fmt::format("stage {}: ", name)
                                               : fmt::format("stage {} ({}): ", name, context);
    try {
        return body();
    } catch (const ParseError& e) {
        throw ParseError(e.where(), prefix + e.message());
    } catch (const ConvergenceError& e) {
        throw ConvergenceError(prefix + e.what(), e.last_mismatch(), e.iterations());
    } catch (const NumericalError& e) {
        throw NumericalError(prefix + e.what());
    } catch (const DimensionError& e) {
        throw DimensionError(prefix + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(prefix + e.what());
    } catch (const Error& e) {
        throw Error(prefix + e.what());
    }
}

char phase_letter(int phase) { return static_cast<char>('a' + phase); }

// A rendered table shared by the CSV and JSON writers.
using Cell = std::variant<std::monostate, double, std::string>;

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
};

Table build_table(const ComparisonReport& r) {
    Table t;
    const bool by_level = r.layout() == ReportLayout::by_admittance_level;
    const LevelResult* first = r.levels.empty() ? nullptr : &r.levels.front();
    const bool has_al = first && first->analytical;
    const bool has_joint = first && first->joint;
    const std::vector<std::size_t> counts = first ? first->n_mc : std::vector<std::size_t>{};

    if (by_level) {
        t.columns.push_back("sigma_y_pct");
    }
    t.columns.push_back("coefficient");
    t.columns.push_back("nominal_pu");
    auto method_columns = [&](const std::string& name) {
        t.columns.push_back("std_" + name);
        if (by_level) {
            t.columns.push_back("pct_" + name);
        }
    };
    if (!by_level && has_al) method_columns("analytical");
    if (!by_level && has_joint) method_columns("joint");
    for (std::size_t n : counts) {
        method_columns(fmt::format("mc_{}", n));
    }
    if (by_level && has_al) method_columns("analytical");
    if (by_level && has_joint) method_columns("joint");
    t.columns.push_back("time_s");

    for (const LevelResult& level : r.levels) {
        auto method_cells = [&](std::vector<Cell>& row, double std_dev, double nominal) {
            row.emplace_back(std_dev);
            if (by_level) {
                row.emplace_back(percent_of_nominal(std_dev, nominal));
            }
        };
        for (std::size_t i = 0; i < r.rows.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            const double nominal = r.rows[i].nominal;
            std::vector<Cell> row;
            if (by_level) row.emplace_back(level.sigma_y_pct);
            row.emplace_back(r.rows[i].label);
            row.emplace_back(nominal);
            if (!by_level && has_al) method_cells(row, (*level.analytical)(k), nominal);
            if (!by_level && has_joint) method_cells(row, (*level.joint)(k), nominal);
            for (std::size_t m = 0; m < level.mc.size(); ++m) {
                method_cells(row, level.mc[m](k), nominal);
            }
            if (by_level && has_al) method_cells(row, (*level.analytical)(k), nominal);
            if (by_level && has_joint) method_cells(row, (*level.joint)(k), nominal);
            row.emplace_back();
            t.rows.push_back(std::move(row));
        }

        if (!r.timing || r.rows.empty()) {
            continue;
        }
        // Trailing row: runtime of each method in its std column, total in time_s.
        std::vector<Cell> row;
        if (by_level) row.emplace_back(level.sigma_y_pct);
        row.emplace_back(std::string("time_s"));
        row.emplace_back();
        double total = r.load_flow_time_s + r.coefficient_time_s;
        auto time_cells = [&](std::vector<Cell>& out, double v) {
            out.emplace_back(v);
            if (by_level) out.emplace_back();
            total += v;
        };
        if (!by_level && has_al) time_cells(row, level.analytical_time_s);
        if (!by_level && has_joint) time_cells(row, level.joint_time_s);
        for (double v : level.mc_time_s) {
            time_cells(row, v);
        }
        if (by_level && has_al) time_cells(row, level.analytical_time_s);
        if (by_level && has_joint) time_cells(row, level.joint_time_s);
        row.emplace_back(total);
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string render_csv(const Table& t) {
    std::string out;
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        out += (c ? "," : "") + t.columns[c];
    }
    out += '\n';
    for (const auto& row : t.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out += ',';
            if (const auto* d = std::get_if<double>(&row[c])) {
                out += fmt::format("{}", *d);
            } else if (const auto* s = std::get_if<std::string>(&row[c])) {
                out += *s;
            }
        }
        out += '\n';
    }
    return out;
}

std::string render_json(const ComparisonReport& r, const Table& t) {
    nlohmann::ordered_json doc;
    doc["network"] = r.network;
    doc["it_class"] = r.it_class;
    doc["seed"] = r.seed;
    doc["layout"] = r.layout() == ReportLayout::by_sample_count ? "by-sample-count"
                                                                : "by-admittance-level";
    doc["columns"] = t.columns;
    doc["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : t.rows) {
        nlohmann::ordered_json obj = nlohmann::ordered_json::object();
        for (std::size_t c = 0; c < row.size(); ++c) {
            const std::string& key = t.columns[c];
            if (const auto* d = std::get_if<double>(&row[c])) {
                obj[key] = std::isfinite(*d) ? nlohmann::ordered_json(*d) : nullptr;
            } else if (const auto* s = std::get_if<std::string>(&row[c])) {
                obj[key] = *s;
            } else {
                obj[key] = nullptr;
            }
        }
        doc["rows"].push_back(std::move(obj));
    }
    return doc.dump(2) + "\n";
}

std::string fixed4(double v) { return fmt::format("{:.4f}", v); }

std::string render_text(const ComparisonReport& r) {
    std::string out;
    const LevelResult* first = r.levels.empty() ? nullptr : &r.levels.front();
    std::vector<std::string> header;
    for (const auto& row : r.rows) {
        header.push_back(row.label);
    }

    std::size_t width = 12;
    for (const auto& h : header) {
        width = std::max(width, h.size());
    }
    auto line = [&](const std::string& lead, const std::vector<std::string>& cells,
                    const std::string& tail, std::size_t lead_width, bool with_tail) {
        std::string s = fmt::format("{:<{}}", lead, lead_width);
        for (const auto& c : cells) {
            s += fmt::format(" | {:>{}}", c, width);
        }
        if (with_tail) {
            s += fmt::format(" | {:>10}", tail);
        }
        return s + "\n";
    };
    auto time_text = [&](double v) { return r.timing ? fmt::format("{:.3g}", v) : "----"; };

    out += fmt::format("network: {}\nIT class: {}, seed: {}\n", r.network, r.it_class, r.seed);

    if (r.layout() == ReportLayout::by_sample_count) {
        const std::size_t lead = 34;
        if (first) {
            out += fmt::format("admittance error: {}% of |Y|\n", first->sigma_y_pct);
        }
        out += "\n" + line("", header, "time (s)", lead, true);
        std::vector<std::string> cells;
        for (const auto& row : r.rows) cells.push_back(fixed4(row.nominal));
        out += line("Nominal value (pu)", cells, "----", lead, true);
        if (!first) {
            return out;
        }
        auto method = [&](const std::string& name, const RealVector& v, double time) {
            std::vector<std::string> c;
            for (Eigen::Index i = 0; i < v.size(); ++i) c.push_back(fixed4(v(i)));
            out += line(name, c, time_text(time), lead, true);
        };
        if (first->analytical) {
            method("Std. deviation (analytical)", *first->analytical, first->analytical_time_s);
        }
        if (first->joint) {
            method("Std. deviation (joint 1st order)", *first->joint, first->joint_time_s);
        }
        for (std::size_t m = 0; m < first->mc.size(); ++m) {
            method(fmt::format("Std. deviation (MC, N_mc = {})", first->n_mc[m]), first->mc[m],
                   first->mc_time_s[m]);
        }
        return out;
    }

    const std::size_t lead = 40;
    out += fmt::format("N_mc = {}\n\n",
                       first && !first->n_mc.empty() ? fmt::format("{}", first->n_mc.back())
                                                     : std::string("-"));
    out += line("sigma_Y (% of Y)", header, "", lead, false);
    std::vector<std::string> cells;
    for (const auto& row : r.rows) cells.push_back(fixed4(row.nominal));
    out += line("Nominal value, x (pu)", cells, "", lead, false);
    auto method = [&](const std::string& name, const RealVector& v) {
        std::vector<std::string> c;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            c.push_back(fmt::format("{} ({:.1f}%)", fixed4(v(i)),
                                    percent_of_nominal(v(i), r.rows[static_cast<std::size_t>(i)].nominal)));
        }
        out += line(name, c, "", lead, false);
    };
    for (const LevelResult& level : r.levels) {
        const std::string tag = fmt::format("{}", level.sigma_y_pct);
        for (std::size_t m = 0; m < level.mc.size(); ++m) {
            method(fmt::format("{:<5} sigma_x,MC N={} (% of x)", tag, level.n_mc[m]), level.mc[m]);
        }
        if (level.analytical) method(fmt::format("{:<5} sigma_x,AL (% of x)", tag), *level.analytical);
        if (level.joint) method(fmt::format("{:<5} sigma_x,J1 (% of x)", tag), *level.joint);
    }
    return out;
}

RealVector pick(const RealMatrix& m, const std::vector<std::pair<std::size_t, std::size_t>>& at) {
    RealVector v(static_cast<Eigen::Index>(at.size()));
    for (std::size_t i = 0; i < at.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = m(static_cast<Eigen::Index>(at[i].first),
                                            static_cast<Eigen::Index>(at[i].second));
    }
    return v;
}

}  // namespace

std::string coefficient_label(const CoefficientSelector& s, int phases) {
    const char* part = s.part == Part::Re ? "Re" : "Im";
    const char inj = s.injection == Injection::P ? 'P' : 'Q';
    if (phases == 1) {
        return fmt::format("{} dE{}/d{}{}", part, s.bus, inj, s.wrt_bus);
    }
    return fmt::format("{} dE{}{}/d{}{}{}", part, s.bus, phase_letter(s.phase), inj, s.wrt_bus,
                       phase_letter(s.wrt_phase));
}

CoefficientSelector parse_coefficient(const std::string& text) {
    static const std::regex pattern(R"(^\s*(Re|Im)\s+dE(\d+)([abc]?)/d([PQ])(\d+)([abc]?)\s*$)");
    std::smatch m;
    if (!std::regex_match(text, m, pattern)) {
        throw ValidationError(fmt::format(
            "malformed coefficient \"{}\" (expected e.g. \"Re dE3/dP2\" or \"Im dE3b/dQ2a\")",
            text));
    }
    CoefficientSelector s;
    s.part = m[1] == "Re" ? Part::Re : Part::Im;
    s.bus = std::stoi(m[2]);
    s.phase = m[3].length() ? m[3].str()[0] - 'a' : 0;
    s.injection = m[4] == "P" ? Injection::P : Injection::Q;
    s.wrt_bus = std::stoi(m[5]);
    s.wrt_phase = m[6].length() ? m[6].str()[0] - 'a' : 0;
    return s;
}

std::vector<CoefficientSelector> reference_coefficients() {
    return {
        {3, 2, Injection::P, Part::Re}, {3, 4, Injection::P, Part::Re},
        {4, 4, Injection::P, Part::Re}, {3, 2, Injection::P, Part::Im},
        {3, 3, Injection::P, Part::Im}, {4, 4, Injection::P, Part::Im},
    };
}

std::vector<CoefficientSelector> all_coefficients(const NetworkModel& network) {
    const ReducedIndex index(network.bus_count(), network.phase_count(),
                             network.slack_position());
    std::vector<CoefficientSelector> out;
    for (std::size_t w = 0; w < index.size(); ++w) {
        for (Injection inj : {Injection::P, Injection::Q}) {
            for (std::size_t k = 0; k < index.size(); ++k) {
                for (Part part : {Part::Re, Part::Im}) {
                    out.push_back({network.buses()[index.bus_position(k)].index,
                                   network.buses()[index.bus_position(w)].index, inj, part,
                                   index.phase(k), index.phase(w)});
                }
            }
        }
    }
    return out;
}

std::pair<std::size_t, std::size_t> coefficient_position(const NetworkModel& network,
                                                         const CoefficientSelector& s) {
    const ReducedIndex index(network.bus_count(), network.phase_count(),
                             network.slack_position());
    const int p = network.phase_count();
    if (s.phase < 0 || s.phase >= p || s.wrt_phase < 0 || s.wrt_phase >= p) {
        throw ValidationError(fmt::format("coefficient {}: phase outside the network",
                                          coefficient_label(s, 3)));
    }
    const auto node = index.reduced(network.position_of(s.bus), s.phase);
    const auto wrt = index.reduced(network.position_of(s.wrt_bus), s.wrt_phase);
    if (!node || !wrt) {
        throw ValidationError(fmt::format("coefficient {} refers to the slack bus",
                                          coefficient_label(s, p)));
    }
    return {ReducedIndex::row(*node, s.part), ReducedIndex::column(*wrt, s.injection)};
}

RunMode parse_run_mode(const std::string& text) {
    if (text == "analytical") return RunMode::analytical;
    if (text == "mc") return RunMode::mc;
    if (text == "both") return RunMode::both;
    throw ValidationError(fmt::format("unknown mode \"{}\" (analytical, mc, both)", text));
}

ReportFormat parse_report_format(const std::string& text) {
    if (text == "csv") return ReportFormat::csv;
    if (text == "json") return ReportFormat::json;
    if (text == "text" || text == "pretty-text") return ReportFormat::text;
    throw ValidationError(fmt::format("unknown format \"{}\" (csv, json, text)", text));
}

std::string extension(ReportFormat format) {
    switch (format) {
        case ReportFormat::csv:
            return ".csv";
        case ReportFormat::json:
            return ".json";
        case ReportFormat::text:
            return ".txt";
    }
    return "";
}

double percent_of_nominal(double std_dev, double nominal) {
    if (nominal == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 100.0 * std_dev / std::abs(nominal);
}

ComparisonReport run_pipeline(const RunConfig& cfg) {
    const std::string net_ctx = cfg.network_path.string();
    const NetworkModel network = stage("load-network", net_ctx, [&] {
        if (!std::filesystem::exists(cfg.network_path)) {
            throw ValidationError("network file does not exist");
        }
        return load_network(cfg.network_path);
    });
    const NoiseConfig noise = stage("load-noise-config", cfg.noise_config_path.string(), [&] {
        if (!std::filesystem::exists(cfg.noise_config_path)) {
            throw ValidationError("noise config file does not exist");
        }
        return load_noise_config(cfg.noise_config_path);
    });
    if (cfg.mode != RunMode::analytical && cfg.n_mc.empty()) {
        throw ValidationError("Monte-Carlo mode needs at least one trial count");
    }
    for (std::size_t n : cfg.n_mc) {
        if (n == 0) throw ValidationError("Monte-Carlo trial counts must be at least 1");
    }
    const std::vector<double> levels =
        cfg.sigma_y_pct.empty() ? std::vector<double>{noise.sigma_y_pct} : cfg.sigma_y_pct;
    const std::string it_class = cfg.it_class.value_or(noise.it_class);

    ComparisonReport report;
    report.network = network.name().empty() ? net_ctx : network.name();
    report.it_class = it_class;
    report.seed = cfg.seed;
    report.timing = cfg.timing;

    auto start = Clock::now();
    const AdmittanceMatrix y = stage("admittance", net_ctx, [&] { return build_admittance(network); });
    const GridState state = stage("load-flow", net_ctx, [&] { return solve_load_flow(network, y); });
    report.load_flow_time_s = seconds_since(start);

    start = Clock::now();
    const SensitivityProblem problem = stage("coefficients", net_ctx, [&] {
        return assemble_problem(y, state, network.slack_position());
    });
    const SensitivityResult solution =
        stage("coefficients", net_ctx, [&] { return solve_coefficients(problem); });
    report.coefficient_time_s = seconds_since(start);

    const std::vector<CoefficientSelector> selectors =
        cfg.coefficients.empty() ? all_coefficients(network) : cfg.coefficients;
    std::vector<std::pair<std::size_t, std::size_t>> positions;
    for (const auto& s : selectors) {
        positions.push_back(stage("coefficient-filter", coefficient_label(s, network.phase_count()),
                                  [&] { return coefficient_position(network, s); }));
        const auto [row, col] = positions.back();
        report.rows.push_back({coefficient_label(s, network.phase_count()),
                               solution.x(static_cast<Eigen::Index>(row),
                                          static_cast<Eigen::Index>(col))});
    }

    const PolarNoiseSpec polar = stage("noise", "IT class " + it_class, [&] {
        PolarNoiseSpec spec =
            it_class_to_polar(it_class, noise.it_classes, y.size(), cfg.custom_limits);
        spec.magnitude = noise.magnitude;
        return spec;
    });
    const CartesianNoiseSpec cartesian = stage("noise", "IT class " + it_class, [&] {
        return project_polar_noise(state.voltages, polar, noise.projection);
    });

    for (double pct : levels) {
        const std::string ctx = fmt::format("sigma_Y {}%", pct);
        LevelResult level;
        level.sigma_y_pct = pct;
        const AdmittanceUncertainty yu =
            stage("admittance-uncertainty", ctx, [&] { return AdmittanceUncertainty::from_percent(y, pct); });

        if (cfg.mode != RunMode::mc) {
            const UncertaintyResult al = stage("analytical", ctx, [&] {
                return analytical_uncertainty(problem, solution, y, yu, cartesian,
                                              PropagationOptions{cfg.second_order});
            });
            level.analytical = pick(al.std_dev(), positions);
            level.analytical_time_s = al.runtime_s;
            if (cfg.joint_first_order) {
                const UncertaintyResult j = stage("joint-first-order", ctx, [&] {
                    return joint_first_order_uncertainty(problem, solution, y, yu, cartesian);
                });
                level.joint = pick(j.std_dev(), positions);
                level.joint_time_s = j.runtime_s;
            }
        }
        if (cfg.mode != RunMode::analytical) {
            for (std::size_t n : cfg.n_mc) {
                MCConfig mc;
                mc.n_mc = n;
                mc.seed = cfg.seed;
                mc.polar = polar;
                mc.yu = yu;
                mc.symmetry = cfg.symmetry;
                mc.threads = cfg.threads;
                const MCResult res = stage("monte-carlo", fmt::format("{}, N_mc {}", ctx, n),
                                           [&] { return run_monte_carlo(network, y, state, mc); });
                level.n_mc.push_back(n);
                level.mc.push_back(pick(res.std, positions));
                level.mc_failed.push_back(res.trials_failed);
                level.mc_time_s.push_back(res.runtime_s);
            }
        }
        report.levels.push_back(std::move(level));
    }

    if (cfg.out_dir) {
        stage("write-report", cfg.out_dir->string(), [&] {
            std::error_code ec;
            std::filesystem::create_directories(*cfg.out_dir, ec);
            for (ReportFormat f : cfg.formats) {
                emit_report(report, f, *cfg.out_dir / (cfg.basename + extension(f)));
            }
            return 0;
        });
    }
    return report;
}

std::string render_report(const ComparisonReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::csv:
            return render_csv(build_table(report));
        case ReportFormat::json:
            return render_json(report, build_table(report));
        case ReportFormat::text:
            return render_text(report);
    }
    return {};
}

void emit_report(const ComparisonReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(fmt::format("cannot write report {}", path.string()));
    }
    out << render_report(report, format);
    if (!out) {
        throw Error(fmt::format("failed writing report {}", path.string()));
    }
}

}  // namespace pfsc
