#include <doctest.h>

#include <cmath>
#include <random>

#include "pfsc/errors.hpp"
#include "pfsc/load_flow.hpp"
#include "pfsc/noise.hpp"
#include "pfsc/uncertainty.hpp"
#include "support/oracles.hpp"

using namespace pfsc;

namespace {

struct Case {
    NetworkModel network;
    AdmittanceMatrix y;
    GridState state;
    SensitivityProblem problem;
    SensitivityResult solution;
};

Case make_case(NetworkModel network) {
    Case c{std::move(network), {}, {}, {}, {}};
    c.y = build_admittance(c.network);
    c.state = solve_load_flow(c.network, c.y);
    c.problem = assemble_problem(c.y, c.state, c.network.slack_position());
    c.solution = solve_coefficients(c.problem);
    return c;
}

Case two_bus_case() { return make_case(oracle::two_bus({0.02, 0.04}, {-0.5, -0.2})); }

CartesianNoiseSpec voltage_noise(const Case& c, double class_limit) {
    return project_polar_noise(c.state.voltages,
                               PolarNoiseSpec::uniform(c.y.size(), class_limit / 3.0, class_limit / 3.0));
}

struct Draw {
    ComplexMatrix y;
    ComplexVector e;
};

Draw draw_inputs(std::mt19937_64& rng, const Case& c, const AdmittanceUncertainty& yu,
                 const CartesianNoiseSpec& en) {
    std::normal_distribution<double> n01;
    Draw d{c.y.values, c.state.voltages};
    for (Eigen::Index i = 0; i < d.y.rows(); ++i) {
        for (Eigen::Index j = 0; j < d.y.cols(); ++j) {
            d.y(i, j) += Complex(std::sqrt(yu.re_variance(i, j)) * n01(rng),
                                 std::sqrt(yu.im_variance(i, j)) * n01(rng));
        }
    }
    for (Eigen::Index i = 0; i < d.e.size(); ++i) {
        d.e(i) += Complex(std::sqrt(en.re_variance(i)) * n01(rng), std::sqrt(en.im_variance(i)) * n01(rng));
    }
    return d;
}

RealMatrix random_matrix(std::mt19937_64& rng, Eigen::Index n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    RealMatrix m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            m(i, j) = u(rng);
        }
    }
    return m;
}

}  // namespace

TEST_CASE("zero input uncertainty gives exactly zero output") {
    const Case c = make_case(oracle::bundled_ieee4());
    const auto yu = AdmittanceUncertainty::zero(c.y.size());
    const auto en = CartesianNoiseSpec::zero(c.y.size());
    CHECK(propagate_to_h(c.problem, c.y, yu, en, {true}).variance.isZero(0.0));
    CHECK(analytical_uncertainty(c.problem, c.solution, c.y, yu, en).variance.isZero(0.0));
    CHECK(joint_first_order_uncertainty(c.problem, c.solution, c.y, yu, en).variance.isZero(0.0));
}

TEST_CASE("bilinear terms reproduce the Jacobian") {
    std::mt19937_64 rng(5);
    for (int phases : {1, 3}) {
        const Case c = make_case(oracle::random_network(rng, 4, phases));
        const std::size_t nodes = c.y.size();
        RealVector yv(2 * nodes * nodes);
        for (std::size_t i = 0; i < nodes; ++i) {
            for (std::size_t n = 0; n < nodes; ++n) {
                const Complex v = c.y.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n));
                yv(static_cast<Eigen::Index>(2 * (i * nodes + n))) = v.real();
                yv(static_cast<Eigen::Index>(2 * (i * nodes + n) + 1)) = v.imag();
            }
        }
        RealVector ev(2 * nodes);
        for (std::size_t n = 0; n < nodes; ++n) {
            ev(static_cast<Eigen::Index>(2 * n)) = c.state.voltages(static_cast<Eigen::Index>(n)).real();
            ev(static_cast<Eigen::Index>(2 * n + 1)) = c.state.voltages(static_cast<Eigen::Index>(n)).imag();
        }
        RealMatrix h = RealMatrix::Zero(c.problem.h.rows(), c.problem.h.cols());
        for (const BilinearTerm& t : jacobian_terms(c.problem.index, nodes)) {
            h(static_cast<Eigen::Index>(t.row), static_cast<Eigen::Index>(t.col)) +=
                t.coef * yv(static_cast<Eigen::Index>(t.y_var)) * ev(static_cast<Eigen::Index>(t.e_var));
        }
        CHECK((h - c.problem.h).cwiseAbs().maxCoeff() <= 1e-12 * c.problem.h.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("single product term follows the product rule") {
    // Only Y(2,2) is uncertain. Its real part enters a = sum Y E and c = conj(E) Y, giving
    // dH/dReY22 = [[2u, 2v], [0, 0]] for E2 = u + jv.
    const Case c = two_bus_case();
    auto yu = AdmittanceUncertainty::zero(2);
    yu.re_variance(1, 1) = 0.25;
    auto en = CartesianNoiseSpec::zero(2);
    const HVariance hv = propagate_to_h(c.problem, c.y, yu, en);
    const double u = c.state.voltages(1).real();
    const double v = c.state.voltages(1).imag();
    CHECK(hv.variance(0, 0) == doctest::Approx(0.25 * 4.0 * u * u).epsilon(1e-12));
    CHECK(hv.variance(0, 1) == doctest::Approx(0.25 * 4.0 * v * v).epsilon(1e-12));
    CHECK(hv.variance(1, 0) == 0.0);
    CHECK(hv.variance(1, 1) == 0.0);

    // Add E noise: the second-order term adds exactly sum coef^2 var(Y) var(E) per pair.
    en.re_variance(1) = 1e-4;
    const HVariance first = propagate_to_h(c.problem, c.y, yu, en);
    const HVariance second = propagate_to_h(c.problem, c.y, yu, en, {true});
    CHECK(second.variance(0, 0) - first.variance(0, 0) == doctest::Approx(4.0 * 0.25 * 1e-4).epsilon(1e-9));
}

TEST_CASE("H variance matches sampling") {
    std::mt19937_64 net_rng(11);
    for (const Case& c : {two_bus_case(), make_case(oracle::random_network(net_rng, 3))}) {
        const auto yu = AdmittanceUncertainty::from_percent(c.y, 2.0);
        const auto en = voltage_noise(c, 0.01);
        const RealMatrix analytic = propagate_to_h(c.problem, c.y, yu, en, {true}).variance;

        std::mt19937_64 rng(99);
        const int n = 100000;
        const Eigen::Index d = c.problem.h.rows();
        RealMatrix sum = RealMatrix::Zero(d, d);
        RealMatrix sum2 = RealMatrix::Zero(d, d);
        for (int t = 0; t < n; ++t) {
            const Draw dr = draw_inputs(rng, c, yu, en);
            const RealMatrix h = assemble_jacobian(dr.y, dr.e, c.problem.index);
            sum += h;
            sum2 += h.cwiseAbs2();
        }
        const RealMatrix sampled = (sum2 - sum.cwiseAbs2() / n) / (n - 1);
        const double scale = analytic.maxCoeff();
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) {
                if (analytic(i, j) > 1e-3 * scale) {
                    CHECK(oracle::rel_diff(analytic(i, j), sampled(i, j)) <= 0.03);
                }
            }
        }
    }
}

TEST_CASE("inverse variance of a scalar") {
    const double h = 2.0;
    const double s2 = 0.01;
    const RealMatrix a = RealMatrix::Constant(1, 1, 1.0 / h);
    const InverseVariance iv = inverse_self_variance(a, HVariance{RealMatrix::Constant(1, 1, s2)});
    CHECK(iv.variance(0, 0) == doctest::Approx(s2 / std::pow(h, 4)).epsilon(1e-15));

    // var(x) = Hinv^2 var(z) + var(Hinv) z^2 with z = 3, var(z) = 0.25.
    const RealMatrix z = RealMatrix::Constant(1, 1, 3.0);
    const RealMatrix zv = RealMatrix::Constant(1, 1, 0.25);
    const UncertaintyResult r = general_variance(a, iv, z, zv);
    CHECK(r.variance(0, 0) == doctest::Approx(0.25 * 0.25 + 9.0 * s2 / 16.0).epsilon(1e-15));
}

TEST_CASE("inverse variance matches sampling for small independent entry noise") {
    std::mt19937_64 rng(3);
    const RealMatrix h = random_matrix(rng, 4) + 3.0 * RealMatrix::Identity(4, 4);
    const RealMatrix a = h.inverse();
    RealMatrix hv(4, 4);
    for (Eigen::Index i = 0; i < 4; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) {
            hv(i, j) = std::pow(0.002 * (1.0 + std::abs(h(i, j))), 2);
        }
    }
    const InverseVariance iv = inverse_self_variance(a, HVariance{hv});

    std::normal_distribution<double> n01;
    const int n = 100000;
    RealMatrix samples(16, n);
    for (int t = 0; t < n; ++t) {
        RealMatrix p = h;
        for (Eigen::Index i = 0; i < 4; ++i) {
            for (Eigen::Index j = 0; j < 4; ++j) {
                p(i, j) += std::sqrt(hv(i, j)) * n01(rng);
            }
        }
        samples.col(t) = p.inverse().reshaped();
    }
    const RealVector mean = samples.rowwise().mean();
    const RealMatrix centered = samples.colwise() - mean;
    const RealMatrix cov = centered * centered.transpose() / (n - 1);

    for (Eigen::Index m = 0; m < 4; ++m) {
        for (Eigen::Index k = 0; k < 4; ++k) {
            CHECK(oracle::rel_diff(iv.variance(m, k), cov(k * 4 + m, k * 4 + m)) <= 0.05);
        }
    }
    // Covariances, normalised by the two standard deviations.
    const std::pair<std::size_t, std::size_t> pairs[][2] = {
        {{0, 0}, {1, 1}}, {{0, 1}, {2, 1}}, {{3, 2}, {3, 0}}, {{1, 3}, {0, 2}}};
    for (const auto& pr : pairs) {
        const auto [m, n1] = pr[0];
        const auto [a1, b1] = pr[1];
        const double analytic = iv.covariance(pr[0], pr[1]);
        const auto r1 = static_cast<Eigen::Index>(n1 * 4 + m);
        const auto r2 = static_cast<Eigen::Index>(b1 * 4 + a1);
        const double norm = std::sqrt(cov(r1, r1) * cov(r2, r2));
        CHECK(std::abs(analytic - cov(r1, r2)) <= 0.10 * norm);
    }
}

TEST_CASE("covariance of an entry with itself is its variance") {
    std::mt19937_64 rng(8);
    const RealMatrix a = random_matrix(rng, 6);
    const RealMatrix hv = random_matrix(rng, 6).cwiseAbs();
    const InverseVariance iv = inverse_self_variance(a, HVariance{hv});
    for (std::size_t m = 0; m < 6; ++m) {
        for (std::size_t n = 0; n < 6; ++n) {
            CHECK(iv.covariance({m, n}, {m, n}) ==
                  doctest::Approx(iv.variance(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)))
                      .epsilon(1e-12));
        }
    }
    CHECK(inverse_cross_covariance(a, HVariance{hv}, {0, 1}, {2, 3}) ==
          doctest::Approx(iv.covariance({0, 1}, {2, 3})).epsilon(1e-12));
    CHECK_THROWS_AS(iv.covariance({6, 0}, {0, 0}), DimensionError);
}

TEST_CASE("matrix form agrees with the explicit quadruple loop") {
    std::mt19937_64 rng(21);
    const RealMatrix a = random_matrix(rng, 10);
    const RealMatrix hv = random_matrix(rng, 10).cwiseAbs();
    const RealMatrix fast = inverse_self_variance(a, HVariance{hv}).variance;
    const RealMatrix slow = inverse_self_variance_reference(a, HVariance{hv});
    CHECK((fast - slow).cwiseAbs().maxCoeff() <= 1e-12 * slow.cwiseAbs().maxCoeff());
}

TEST_CASE("general variance reduces to its parts") {
    const Case c = make_case(oracle::bundled_ieee4());
    const auto yu = AdmittanceUncertainty::from_percent(c.y, 1.0);
    const auto en = voltage_noise(c, 0.005);
    const HVariance hv = propagate_to_h(c.problem, c.y, yu, en);
    const InverseVariance iv = inverse_self_variance(c.solution.h_inverse, hv);
    const RealMatrix& z = c.problem.z;

    SUBCASE("exact z gives the coefficient variance bitwise") {
        const UncertaintyResult a = general_variance(c.solution.h_inverse, iv, z, RealMatrix::Zero(z.rows(), z.cols()));
        const UncertaintyResult b = coefficient_variance(c.solution.h_inverse, iv, z);
        CHECK(a.variance == b.variance);
        CHECK(b.variance == iv.variance);
    }
    SUBCASE("exact H keeps only the z term") {
        InverseVariance exact = iv;
        exact.variance.setZero();
        const RealMatrix zv = RealMatrix::Constant(z.rows(), z.cols(), 1e-6);
        const UncertaintyResult r = general_variance(c.solution.h_inverse, exact, z, zv);
        CHECK(r.variance == RealMatrix(c.solution.h_inverse.cwiseAbs2() * zv));
    }
    SUBCASE("invalid z variance") {
        CHECK_THROWS_AS(general_variance(c.solution.h_inverse, iv, z, -RealMatrix::Ones(z.rows(), z.cols())),
                        ValidationError);
        CHECK_THROWS_AS(general_variance(c.solution.h_inverse, iv, z, RealMatrix::Zero(1, 1)), DimensionError);
    }
}

TEST_CASE("scaling every input std by k scales the output std by k") {
    const Case c = make_case(oracle::bundled_ieee4());
    auto yu = AdmittanceUncertainty::from_percent(c.y, 1.0);
    auto en = voltage_noise(c, 0.005);
    const RealMatrix base = analytical_uncertainty(c.problem, c.solution, c.y, yu, en).std_dev();
    const RealMatrix base_joint = joint_first_order_uncertainty(c.problem, c.solution, c.y, yu, en).std_dev();
    const double k = 2.0;
    yu.re_variance *= k * k;
    yu.im_variance *= k * k;
    en.re_variance *= k * k;
    en.im_variance *= k * k;
    CHECK(analytical_uncertainty(c.problem, c.solution, c.y, yu, en).std_dev() == k * base);
    CHECK(joint_first_order_uncertainty(c.problem, c.solution, c.y, yu, en).std_dev() == k * base_joint);
}

TEST_CASE("joint first-order propagation matches sampling at small noise") {
    std::mt19937_64 net_rng(13);
    const Case c = make_case(oracle::random_network(net_rng, 3));
    const auto yu = AdmittanceUncertainty::from_percent(c.y, 0.1);
    const auto en = voltage_noise(c, 0.001);
    const RealMatrix joint = joint_first_order_uncertainty(c.problem, c.solution, c.y, yu, en).variance;

    std::mt19937_64 rng(4);
    const int n = 40000;
    const Eigen::Index cells = c.solution.x.size();
    RealMatrix samples(cells, n);
    for (int t = 0; t < n; ++t) {
        const Draw dr = draw_inputs(rng, c, yu, en);
        const RealMatrix h = assemble_jacobian(dr.y, dr.e, c.problem.index);
        samples.col(t) = RealMatrix(h.partialPivLu().solve(c.problem.z)).reshaped();
    }
    const RealVector mean = samples.rowwise().mean();
    const RealVector var = (samples.colwise() - mean).cwiseAbs2().rowwise().sum() / (n - 1);
    const RealVector jv = joint.reshaped();
    const double scale = jv.maxCoeff();
    for (Eigen::Index i = 0; i < cells; ++i) {
        if (jv(i) > 1e-3 * scale) {
            CHECK(oracle::rel_diff(jv(i), var(i)) <= 0.05);
        }
    }
}

TEST_CASE("admittance uncertainty from a percentage") {
    const Case c = two_bus_case();
    const auto yu = AdmittanceUncertainty::from_percent(c.y, 2.0);
    CHECK(yu.relative_level.value() == 0.02);
    CHECK(yu.re_std()(0, 1) == doctest::Approx(0.02 * std::abs(c.y.values(0, 1).real())).epsilon(1e-15));
    CHECK(yu.im_std()(1, 1) == doctest::Approx(0.02 * std::abs(c.y.values(1, 1).imag())).epsilon(1e-15));
    CHECK_THROWS_AS(AdmittanceUncertainty::from_percent(c.y, -1.0), ValidationError);
}

TEST_CASE("invalid inputs") {
    const Case c = two_bus_case();
    auto yu = AdmittanceUncertainty::zero(2);
    auto en = CartesianNoiseSpec::zero(2);
    yu.im_variance(0, 1) = -1e-6;
    CHECK_THROWS_AS(propagate_to_h(c.problem, c.y, yu, en), ValidationError);
    CHECK_THROWS_AS(propagate_to_h(c.problem, c.y, AdmittanceUncertainty::zero(3), en), DimensionError);
    CHECK_THROWS_AS(inverse_self_variance(RealMatrix::Identity(2, 2), HVariance{RealMatrix::Zero(3, 3)}),
                    DimensionError);
}
