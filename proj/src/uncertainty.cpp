#include "pfsc/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pfsc/errors.hpp"

namespace pfsc {

namespace {

Eigen::Index idx(std::size_t k) { return static_cast<Eigen::Index>(k); }

/// Values and variances of the independent inputs, in jacobian_terms numbering.
struct Inputs {
    const ComplexMatrix& y;
    const ComplexVector& e;
    const AdmittanceUncertainty& yu;
    const CartesianNoiseSpec& en;
    std::size_t nodes;

    double y_value(std::size_t var) const {
        const std::size_t elem = var / 2;
        const Complex v = y(idx(elem / nodes), idx(elem % nodes));
        return var % 2 == 0 ? v.real() : v.imag();
    }
    double y_variance(std::size_t var) const {
        const std::size_t elem = var / 2;
        const RealMatrix& m = var % 2 == 0 ? yu.re_variance : yu.im_variance;
        return m(idx(elem / nodes), idx(elem % nodes));
    }
    double e_value(std::size_t var) const {
        const Complex v = e(idx(var / 2));
        return var % 2 == 0 ? v.real() : v.imag();
    }
    double e_variance(std::size_t var) const {
        return (var % 2 == 0 ? en.re_variance : en.im_variance)(idx(var / 2));
    }
};

void check_inputs(const SensitivityProblem& problem, const AdmittanceMatrix& y,
                  const AdmittanceUncertainty& yu, const CartesianNoiseSpec& en) {
    const auto n = static_cast<Eigen::Index>(y.size());
    if (problem.voltages.size() != n || yu.re_variance.rows() != n ||
        yu.re_variance.cols() != n || yu.im_variance.rows() != n || yu.im_variance.cols() != n ||
        en.re_variance.size() != n || en.im_variance.size() != n) {
        throw DimensionError("uncertainty inputs do not match the admittance matrix size");
    }
    if ((yu.re_variance.array() < 0.0).any() || (yu.im_variance.array() < 0.0).any() ||
        (en.re_variance.array() < 0.0).any() || (en.im_variance.array() < 0.0).any()) {
        throw ValidationError("input variances must be non-negative");
    }
}

/// Walks the entries of H and hands each entry's gradient (by input) to a visitor.
template <typename Visitor>
void for_each_entry_gradient(const std::vector<BilinearTerm>& terms, const Inputs& in,
                             Visitor&& visit) {
    // Scratch gradients, dense over all inputs, reset through the touched lists.
    std::vector<double> grad_y(2 * in.nodes * in.nodes, 0.0);
    std::vector<double> grad_e(2 * in.nodes, 0.0);
    std::vector<std::size_t> touched_y;
    std::vector<std::size_t> touched_e;

    std::size_t begin = 0;
    while (begin < terms.size()) {
        std::size_t end = begin;
        while (end < terms.size() && terms[end].row == terms[begin].row &&
               terms[end].col == terms[begin].col) {
            ++end;
        }
        for (std::size_t t = begin; t < end; ++t) {
            const BilinearTerm& term = terms[t];
            if (grad_y[term.y_var] == 0.0) {
                touched_y.push_back(term.y_var);
            }
            if (grad_e[term.e_var] == 0.0) {
                touched_e.push_back(term.e_var);
            }
            grad_y[term.y_var] += term.coef * in.e_value(term.e_var);
            grad_e[term.e_var] += term.coef * in.y_value(term.y_var);
        }
        // A gradient may cancel back to zero and be listed twice; deduplicate.
        std::sort(touched_y.begin(), touched_y.end());
        touched_y.erase(std::unique(touched_y.begin(), touched_y.end()), touched_y.end());
        std::sort(touched_e.begin(), touched_e.end());
        touched_e.erase(std::unique(touched_e.begin(), touched_e.end()), touched_e.end());

        visit(terms[begin].row, terms[begin].col, begin, end, touched_y, grad_y, touched_e,
              grad_e);

        for (std::size_t v : touched_y) {
            grad_y[v] = 0.0;
        }
        for (std::size_t v : touched_e) {
            grad_e[v] = 0.0;
        }
        touched_y.clear();
        touched_e.clear();
        begin = end;
    }
}

void check_square(const RealMatrix& h_inverse, const RealMatrix& h_variance) {
    if (h_inverse.rows() != h_inverse.cols() || h_variance.rows() != h_inverse.rows() ||
        h_variance.cols() != h_inverse.cols()) {
        throw DimensionError("H^-1 and var(H) must be square and of equal size");
    }
}

double cross_covariance(const RealMatrix& a, const RealMatrix& hv,
                        std::pair<std::size_t, std::size_t> mn,
                        std::pair<std::size_t, std::size_t> ab) {
    const auto n = static_cast<std::size_t>(a.rows());
    if (mn.first >= n || mn.second >= n || ab.first >= n || ab.second >= n) {
        throw DimensionError(fmt::format("H^-1 index out of range (size {})", n));
    }
    const auto m = idx(mn.first);
    const auto c = idx(mn.second);
    const auto r = idx(ab.first);
    const auto b = idx(ab.second);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double left = a(m, i) * a(r, i);
        if (left == 0.0) {
            continue;
        }
        for (Eigen::Index j = 0; j < a.rows(); ++j) {
            sum += left * hv(i, j) * a(j, c) * a(j, b);
        }
    }
    return sum;
}

/// sum_j var(Hinv_ij) z_j^2, shared by the reduced and the full form.
RealMatrix inverse_term(const InverseVariance& iv, const RealMatrix& z) {
    if (iv.variance.cols() != z.rows()) {
        throw DimensionError("var(H^-1) and z do not conform");
    }
    return iv.variance * z.cwiseAbs2();
}

}  // namespace

AdmittanceUncertainty AdmittanceUncertainty::from_percent(const AdmittanceMatrix& y,
                                                          double percent) {
    if (percent < 0.0) {
        throw ValidationError("admittance uncertainty level must be non-negative");
    }
    const double f = percent / 100.0;
    AdmittanceUncertainty u;
    u.re_variance = (y.values.real().cwiseAbs() * f).cwiseAbs2();
    u.im_variance = (y.values.imag().cwiseAbs() * f).cwiseAbs2();
    u.relative_level = f;
    return u;
}

AdmittanceUncertainty AdmittanceUncertainty::zero(std::size_t nodes) {
    const auto n = idx(nodes);
    return {RealMatrix::Zero(n, n), RealMatrix::Zero(n, n), 0.0};
}

bool AdmittanceUncertainty::is_zero() const {
    return re_variance.isZero(0.0) && im_variance.isZero(0.0);
}

std::vector<BilinearTerm> jacobian_terms(const ReducedIndex& index, std::size_t nodes) {
    std::vector<BilinearTerm> terms;
    const std::size_t ns = index.size();
    terms.reserve(8 * ns * ns + 16 * ns * nodes);

    for (std::size_t r = 0; r < ns; ++r) {
        const std::size_t i = index.flat(r);
        auto yv = [&](std::size_t n, std::size_t part) { return 2 * (i * nodes + n) + part; };
        auto ev = [](std::size_t n, std::size_t part) { return 2 * n + part; };

        for (std::size_t part_row = 0; part_row < 2; ++part_row) {
            const std::size_t row = 2 * r + part_row;
            for (std::size_t c = 0; c < ns; ++c) {
                const std::size_t k = index.flat(c);
                for (std::size_t part_col = 0; part_col < 2; ++part_col) {
                    const std::size_t col = 2 * c + part_col;
                    auto add = [&](double coef, std::size_t y_var, std::size_t e_var) {
                        terms.push_back({row, col, coef, y_var, e_var});
                    };
                    // conj(E_i) Y_ik = cr + j ci
                    //   cr = Er_i Yr_ik + Ei_i Yi_ik,  ci = Er_i Yi_ik - Ei_i Yr_ik
                    auto add_cr = [&](double s) {
                        add(s, yv(k, 0), ev(i, 0));
                        add(s, yv(k, 1), ev(i, 1));
                    };
                    auto add_ci = [&](double s) {
                        add(s, yv(k, 1), ev(i, 0));
                        add(-s, yv(k, 0), ev(i, 1));
                    };
                    // sum_n Y_in E_n = ar + j ai
                    auto add_ar = [&](double s) {
                        for (std::size_t n = 0; n < nodes; ++n) {
                            add(s, yv(n, 0), ev(n, 0));
                            add(-s, yv(n, 1), ev(n, 1));
                        }
                    };
                    auto add_ai = [&](double s) {
                        for (std::size_t n = 0; n < nodes; ++n) {
                            add(s, yv(n, 0), ev(n, 1));
                            add(s, yv(n, 1), ev(n, 0));
                        }
                    };

                    if (part_row == 0 && part_col == 0) {
                        add_cr(1.0);
                        if (c == r) add_ar(1.0);
                    } else if (part_row == 0 && part_col == 1) {
                        add_ci(-1.0);
                        if (c == r) add_ai(1.0);
                    } else if (part_row == 1 && part_col == 0) {
                        add_ci(1.0);
                        if (c == r) add_ai(1.0);
                    } else {
                        add_cr(1.0);
                        if (c == r) add_ar(-1.0);
                    }
                }
            }
        }
    }
    return terms;
}

HVariance propagate_to_h(const SensitivityProblem& problem, const AdmittanceMatrix& y,
                         const AdmittanceUncertainty& yu, const CartesianNoiseSpec& en,
                         const PropagationOptions& options) {
    check_inputs(problem, y, yu, en);
    const Inputs in{y.values, problem.voltages, yu, en, y.size()};
    const std::vector<BilinearTerm> terms = jacobian_terms(problem.index, y.size());

    const auto m = idx(problem.index.dimension());
    HVariance hv{RealMatrix::Zero(m, m)};
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> pair_coef;

    for_each_entry_gradient(
        terms, in,
        [&](std::size_t row, std::size_t col, std::size_t begin, std::size_t end,
            const std::vector<std::size_t>& ty, const std::vector<double>& gy,
            const std::vector<std::size_t>& te, const std::vector<double>& ge) {
            double var = 0.0;
            for (std::size_t v : ty) {
                var += gy[v] * gy[v] * in.y_variance(v);
            }
            for (std::size_t v : te) {
                var += ge[v] * ge[v] * in.e_variance(v);
            }
            if (options.second_order) {
                // For a bilinear form in independent Gaussians the exact variance adds
                // sum over (y, e) pairs of coef^2 var(y) var(e).
                std::vector<std::size_t> order(end - begin);
                for (std::size_t t = 0; t < order.size(); ++t) {
                    order[t] = begin + t;
                }
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    return std::pair(terms[a].y_var, terms[a].e_var) <
                           std::pair(terms[b].y_var, terms[b].e_var);
                });
                for (std::size_t t = 0; t < order.size();) {
                    const BilinearTerm& first = terms[order[t]];
                    double coef = 0.0;
                    while (t < order.size() && terms[order[t]].y_var == first.y_var &&
                           terms[order[t]].e_var == first.e_var) {
                        coef += terms[order[t]].coef;
                        ++t;
                    }
                    var += coef * coef * in.y_variance(first.y_var) * in.e_variance(first.e_var);
                }
            }
            hv.variance(idx(row), idx(col)) = var;
        });
    return hv;
}

InverseVariance inverse_self_variance(const RealMatrix& h_inverse, const HVariance& hv) {
    check_square(h_inverse, hv.variance);
    const RealMatrix a2 = h_inverse.cwiseAbs2();
    return InverseVariance{a2 * hv.variance * a2, h_inverse, hv.variance};
}

RealMatrix inverse_self_variance_reference(const RealMatrix& h_inverse, const HVariance& hv) {
    check_square(h_inverse, hv.variance);
    const Eigen::Index n = h_inverse.rows();
    RealMatrix out = RealMatrix::Zero(n, n);
    for (Eigen::Index m = 0; m < n; ++m) {
        for (Eigen::Index c = 0; c < n; ++c) {
            double sum = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    sum += h_inverse(m, i) * h_inverse(m, i) * hv.variance(i, j) *
                           h_inverse(j, c) * h_inverse(j, c);
                }
            }
            out(m, c) = sum;
        }
    }
    return out;
}

double inverse_cross_covariance(const RealMatrix& h_inverse, const HVariance& hv,
                                std::pair<std::size_t, std::size_t> mn,
                                std::pair<std::size_t, std::size_t> ab) {
    check_square(h_inverse, hv.variance);
    return cross_covariance(h_inverse, hv.variance, mn, ab);
}

double InverseVariance::covariance(std::pair<std::size_t, std::size_t> mn,
                                   std::pair<std::size_t, std::size_t> ab) const {
    return cross_covariance(h_inverse, h_variance, mn, ab);
}

std::string to_string(UncertaintyMethod method) {
    switch (method) {
        case UncertaintyMethod::analytical:
            return "analytical";
        case UncertaintyMethod::joint_first_order:
            return "joint-first-order";
        case UncertaintyMethod::monte_carlo:
            return "monte-carlo";
    }
    return "unknown";
}

UncertaintyResult coefficient_variance(const RealMatrix& h_inverse, const InverseVariance& iv,
                                       const RealMatrix& z) {
    check_square(h_inverse, iv.variance);
    UncertaintyResult result;
    result.variance = inverse_term(iv, z);

    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        Eigen::Index hit = -1;
        int nonzero = 0;
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
            if (z(j, c) != 0.0) {
                ++nonzero;
                hit = j;
            }
        }
        if (nonzero == 1 && std::abs(z(hit, c)) == 1.0 &&
            result.variance.col(c) != iv.variance.col(hit)) {
            throw NumericalError(fmt::format(
                "coefficient variance of column {} differs from var(H^-1) column {}", c, hit));
        }
    }
    return result;
}

UncertaintyResult general_variance(const RealMatrix& h_inverse, const InverseVariance& iv,
                                   const RealMatrix& z, const RealMatrix& z_variance) {
    check_square(h_inverse, iv.variance);
    if (z_variance.rows() != z.rows() || z_variance.cols() != z.cols()) {
        throw DimensionError("var(z) must have the shape of z");
    }
    if ((z_variance.array() < 0.0).any()) {
        throw ValidationError("var(z) must be non-negative");
    }
    UncertaintyResult result;
    const RealMatrix from_z = h_inverse.cwiseAbs2() * z_variance;
    result.variance = from_z + inverse_term(iv, z);
    return result;
}

UncertaintyResult analytical_uncertainty(const SensitivityProblem& problem,
                                         const SensitivityResult& solution,
                                         const AdmittanceMatrix& y,
                                         const AdmittanceUncertainty& yu,
                                         const CartesianNoiseSpec& en,
                                         const PropagationOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const HVariance hv = propagate_to_h(problem, y, yu, en, options);
    const InverseVariance iv = inverse_self_variance(solution.h_inverse, hv);
    UncertaintyResult result = coefficient_variance(solution.h_inverse, iv, problem.z);
    result.method = UncertaintyMethod::analytical;
    result.description = options.second_order ? "entrywise H variance, second-order product rule"
                                              : "entrywise H variance, first-order product rule";
    result.runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

UncertaintyResult joint_first_order_uncertainty(const SensitivityProblem& problem,
                                                const SensitivityResult& solution,
                                                const AdmittanceMatrix& y,
                                                const AdmittanceUncertainty& yu,
                                                const CartesianNoiseSpec& en) {
    const auto start = std::chrono::steady_clock::now();
    check_inputs(problem, y, yu, en);
    const std::size_t nodes = y.size();
    const Inputs in{y.values, problem.voltages, yu, en, nodes};
    const std::vector<BilinearTerm> terms = jacobian_terms(problem.index, nodes);

    // dH/dv as sparse (row, col, value) lists, one per input.
    struct Entry {
        Eigen::Index row;
        Eigen::Index col;
        double value;
    };
    std::vector<std::vector<Entry>> by_y(2 * nodes * nodes);
    std::vector<std::vector<Entry>> by_e(2 * nodes);
    for_each_entry_gradient(
        terms, in,
        [&](std::size_t row, std::size_t col, std::size_t, std::size_t,
            const std::vector<std::size_t>& ty, const std::vector<double>& gy,
            const std::vector<std::size_t>& te, const std::vector<double>& ge) {
            for (std::size_t v : ty) {
                if (gy[v] != 0.0) by_y[v].push_back({idx(row), idx(col), gy[v]});
            }
            for (std::size_t v : te) {
                if (ge[v] != 0.0) by_e[v].push_back({idx(row), idx(col), ge[v]});
            }
        });

    const RealMatrix& a = solution.h_inverse;
    const RealMatrix& x = solution.x;
    RealMatrix variance = RealMatrix::Zero(x.rows(), x.cols());
    RealMatrix gx(x.rows(), x.cols());
    auto accumulate = [&](const std::vector<Entry>& entries, double var) {
        if (var == 0.0 || entries.empty()) {
            return;
        }
        gx.setZero();
        for (const Entry& e : entries) {
            gx.row(e.row) += e.value * x.row(e.col);
        }
        variance += (a * gx).cwiseAbs2() * var;
    };
    for (std::size_t v = 0; v < by_y.size(); ++v) {
        accumulate(by_y[v], in.y_variance(v));
    }
    for (std::size_t v = 0; v < by_e.size(); ++v) {
        accumulate(by_e[v], in.e_variance(v));
    }

    UncertaintyResult result;
    result.variance = std::move(variance);
    result.method = UncertaintyMethod::joint_first_order;
    result.description = "first-order propagation with shared-input covariance";
    result.runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace pfsc
