#include "doctest.h"

#include <cmath>
#include <random>

#include "lgm/marginal.hpp"
#include "lgm/metrics.hpp"

using namespace lgm;
using namespace lgm::metrics;

namespace {

PosteriorMarginal normal_marginal(double mean, double sd, std::vector<double> xs)
{
    std::vector<double> dens;
    for (double x : xs)
        dens.push_back(std::exp(-0.5 * std::pow((x - mean) / sd, 2)));
    return marginal_from_grid("beta", std::move(xs), std::move(dens));
}

std::vector<double> uniform_grid(double lo, double hi, std::size_t n)
{
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i)
        xs[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return xs;
}

}  // namespace

TEST_CASE("percent error examples")
{
    auto a = percent_error(1.2, 1.0, 0.5);
    CHECK(a.value == doctest::Approx(40.0));
    CHECK(a.classification == PEClass::Problematic);
    auto b = percent_error(1.05, 1.0, 0.2);
    CHECK(b.value == doctest::Approx(25.0));
    CHECK(b.classification == PEClass::Borderline);
    auto c = percent_error(0.37, 0.37, 0.1);
    CHECK(c.value == 0.0);
    CHECK(c.classification == PEClass::Acceptable);
    CHECK_THROWS_AS(percent_error(1.0, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(percent_error(1.0, 1.0, -1.0), std::invalid_argument);

    CHECK(classify_pe(20.0) == PEClass::Acceptable);
    CHECK(classify_pe(-20.0) == PEClass::Acceptable);
    CHECK(classify_pe(30.0) == PEClass::Borderline);
    CHECK(classify_pe(-30.5) == PEClass::Problematic);
    CHECK(to_string(PEClass::Borderline) == "Borderline");
}

TEST_CASE("percent change examples")
{
    CHECK(percent_change(0.06, 0.05) == doctest::Approx(20.0));
    CHECK(percent_change(1.0, 1.0) == 0.0);
    CHECK(percent_change(0.5, 1.0) == doctest::Approx(-50.0));
    CHECK_THROWS_AS(percent_change(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("metric identities on random inputs")
{
    std::mt19937_64 gen(2021);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(1e-3, 10.0);
    for (int i = 0; i < 1000; ++i)
    {
        double a = 10 * nd(gen), b = 10 * nd(gen), s = ud(gen);
        CHECK(percent_error(a, b, s).value == -percent_error(b, a, s).value);
        CHECK(percent_error(a, b, s).classification == percent_error(b, a, s).classification);
        double g = nd(gen);
        if (g != 0.0)
            CHECK(percent_change(g, g) == 0.0);
    }
}

TEST_CASE("waic of constant draws")
{
    Eigen::MatrixXd l = Eigen::MatrixXd::Constant(5, 1, -1.7);
    auto w = waic(l);
    CHECK(w.lppd == doctest::Approx(-1.7).epsilon(1e-15));
    CHECK(w.p_waic == 0.0);
    CHECK(w.waic == doctest::Approx(3.4).epsilon(1e-15));
    CHECK_THROWS(waic(Eigen::MatrixXd::Zero(1, 3)));
}

TEST_CASE("waic against the brute-force oracle")
{
    // Frozen from tests/oracles/waic_2x3.py.
    Eigen::MatrixXd l(2, 3);
    l << -1.0, -2.0, -0.5, -1.5, -1.0, -0.7;
    auto w = waic(l);
    CHECK(std::abs(w.lppd - -3.193964000599914) < 1e-12);
    CHECK(std::abs(w.p_waic - 0.3225) < 1e-12);
    CHECK(std::abs(w.waic - 7.032928001199828) < 1e-12);
    CHECK(w.waic == doctest::Approx(-2.0 * (w.lppd - w.p_waic)));
    CHECK(w.lppd_pointwise.sum() == doctest::Approx(w.lppd));

    Eigen::VectorXd wt(2);
    wt << 2.0, 1.0;
    auto ww = waic(l, wt);
    CHECK(std::abs(ww.waic - 7.073504069445395) < 1e-12);

    // A duplicated draw is the same as doubling its weight.
    Eigen::MatrixXd dup(3, 3);
    dup << l.row(0), l.row(0), l.row(1);
    CHECK(std::abs(waic(dup).waic - ww.waic) < 1e-12);
}

TEST_CASE("waic is one definition for draws and weighted points")
{
    std::mt19937_64 gen(8);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 50; ++rep)
    {
        Eigen::MatrixXd l(20 + rep, 7);
        for (Eigen::Index i = 0; i < l.size(); ++i)
            l.data()[i] = -3.0 + nd(gen);
        auto a = waic(l);
        auto b = waic(l, Eigen::VectorXd::Constant(l.rows(), 0.37));
        CHECK(std::abs(a.waic - b.waic) < 1e-12);
        CHECK(a.p_waic >= 0.0);
    }
}

TEST_CASE("model selection")
{
    auto a = select_model(100.0, 101.0, "A", "B");
    CHECK(a.selected == "A");
    CHECK_FALSE(a.tie);
    CHECK(select_model(101.0, 100.0, "A", "B").selected == "B");
    auto t = select_model(100.0, 100.0, "zeta", "alpha");
    CHECK(t.tie);
    CHECK(t.selected == "alpha");
    CHECK_THROWS(select_model(std::nan(""), 1.0, "A", "B"));
    CHECK_THROWS(select_model(1.0, INFINITY, "A", "B"));
}

TEST_CASE("rate ratio from draws")
{
    Eigen::VectorXd point = Eigen::VectorXd::Constant(100, 0.1);
    auto r = rate_ratio(point, 1.0, 3.0, "x");
    CHECK(r.ratio == doctest::Approx(std::exp(0.2)));
    CHECK(r.lo == doctest::Approx(r.ratio));
    CHECK(r.hi == doctest::Approx(r.ratio));
    CHECK(r.significant);

    Eigen::VectorXd sym(201);
    for (int i = 0; i < 201; ++i)
        sym[i] = (i - 100) * 0.01;
    auto s = rate_ratio(sym, 0.0, 2.0, "x");
    CHECK(s.lo < 1.0);
    CHECK(s.hi > 1.0);
    CHECK_FALSE(s.significant);
    CHECK(s.ratio == doctest::Approx(1.0));

    CHECK_THROWS(rate_ratio(point, 2.0, 2.0, "x"));
    CHECK_THROWS(rate_ratio(point, 3.0, 1.0, "x"));
}

TEST_CASE("rate ratio from a gridded marginal")
{
    // Frozen from tests/oracles/rate_ratio.py.
    auto m = normal_marginal(0.1, 0.02, uniform_grid(0.0, 0.2, 4001));
    auto r = rate_ratio(m, 1.0, 3.0, "x");
    CHECK(r.ratio == doctest::Approx(1.2214027581601699).epsilon(1e-6));
    CHECK(r.lo == doctest::Approx(1.1293039174027135).epsilon(1e-5));
    CHECK(r.hi == doctest::Approx(1.3210125942645436).epsilon(1e-5));
    CHECK(r.mean == doctest::Approx(1.2223802713198277).epsilon(1e-5));
    CHECK(r.significant);
    CHECK(r.lo <= r.ratio);
    CHECK(r.ratio <= r.hi);

    auto sym = normal_marginal(0.0, 0.3, uniform_grid(-1.5, 1.5, 801));
    CHECK_FALSE(rate_ratio(sym, 0.0, 1.0, "x").significant);

    auto pm = point_mass_marginal("beta", 0.1, 1e-9);
    auto p = rate_ratio(pm, 1.0, 3.0, "x");
    CHECK(p.ratio == doctest::Approx(std::exp(0.2)).epsilon(1e-8));
}

TEST_CASE("significance does not depend on the grid")
{
    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> ud(-0.1, 0.1);
    for (int rep = 0; rep < 40; ++rep)
    {
        double mean = ud(gen), sd = 0.03;
        auto xs = uniform_grid(mean - 8 * sd, mean + 8 * sd, 1201);
        // Strictly monotone warp that keeps the end points.
        std::vector<double> warped;
        for (double x : xs)
        {
            double u = (x - xs.front()) / (xs.back() - xs.front());
            warped.push_back(xs.front() + (xs.back() - xs.front()) * (u + 0.15 * std::sin(2 * M_PI * u) / (2 * M_PI)));
        }
        auto a = rate_ratio(normal_marginal(mean, sd, xs), 0.0, 1.0, "x");
        auto b = rate_ratio(normal_marginal(mean, sd, warped), 0.0, 1.0, "x");
        CHECK(a.significant == b.significant);
    }
}
