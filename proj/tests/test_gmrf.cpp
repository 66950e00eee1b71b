#include "doctest.h"

#include <cmath>
#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "lgm/errors.hpp"
#include "lgm/gmrf.hpp"
#include "lgm/rng.hpp"

using namespace lgm;
using namespace lgm::gmrf;

namespace {

AdjacencyGraph random_graph(std::mt19937_64& gen, std::size_t n, double p)
{
    AdjacencyGraph g(n);
    std::bernoulli_distribution coin(p);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (coin(gen))
                g.add_edge(i, j);
    return g;
}

Eigen::MatrixXd no_constraints(std::size_t n) { return Eigen::MatrixXd(0, static_cast<Eigen::Index>(n)); }

Eigen::MatrixXd sample_covariance(std::vector<Eigen::VectorXd> const& draws)
{
    auto n = draws.front().size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
    for (auto const& d : draws)
        mean += d;
    mean /= static_cast<double>(draws.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
    for (auto const& d : draws)
        cov += (d - mean) * (d - mean).transpose();
    return cov / static_cast<double>(draws.size() - 1);
}

}  // namespace

TEST_CASE("adjacency graph rejects malformed edges")
{
    AdjacencyGraph g(3);
    g.add_edge(0, 1);
    CHECK_THROWS_AS(g.add_edge(1, 0), std::invalid_argument);
    CHECK_THROWS_AS(g.add_edge(2, 2), std::invalid_argument);
    CHECK_THROWS_AS(g.add_edge(0, 3), std::invalid_argument);
    CHECK(g.edges().size() == 1);
    CHECK(g.degree(1) == 1);
}

TEST_CASE("edge list round trip")
{
    auto g = lattice_graph(3, 4);
    std::stringstream ss;
    write_edge_list(ss, g);
    auto h = read_edge_list(ss, g.n_nodes());
    CHECK(h.edges() == g.edges());

    std::istringstream in("# comment\n0 1\n\n1 2\n");
    auto p = read_edge_list(in);
    CHECK(p.n_nodes() == 3);
    CHECK(p.edges().size() == 2);
}

TEST_CASE("graph laplacian examples")
{
    Eigen::MatrixXd p3(3, 3);
    p3 << 1, -1, 0, -1, 2, -1, 0, -1, 1;
    CHECK(graph_laplacian(path_graph(3)).to_dense() == p3);

    auto single = graph_laplacian(AdjacencyGraph(1)).to_dense();
    CHECK(single.rows() == 1);
    CHECK(single(0, 0) == 0.0);

    auto c4 = graph_laplacian(cycle_graph(4)).to_dense();
    for (int i = 0; i < 4; ++i)
    {
        CHECK(c4(i, i) == 2.0);
        CHECK(c4(i, (i + 1) % 4) == -1.0);
        CHECK(c4(i, (i + 2) % 4) == 0.0);
        CHECK(c4.row(i).sum() == 0.0);
    }
}

TEST_CASE("laplacian row sums vanish and rank is n - k")
{
    std::mt19937_64 gen(11);
    for (int rep = 0; rep < 50; ++rep)
    {
        std::size_t n = 2 + rep % 15;
        auto g = random_graph(gen, n, 0.25);
        auto q = graph_laplacian(g).to_dense();
        for (Eigen::Index i = 0; i < q.rows(); ++i)
            CHECK(q.row(i).sum() == 0.0);
        auto k = connected_components(g);
        auto diag = propriety_check(graph_laplacian(g), no_constraints(n));
        if (g.edges().empty())
            CHECK(diag.deficiency == n);
        else
            CHECK(diag.deficiency == k);
    }
}

TEST_CASE("connected components")
{
    CHECK(connected_components(path_graph(3)) == 1);
    AdjacencyGraph two(4);
    two.add_edge(0, 1);
    two.add_edge(2, 3);
    CHECK(connected_components(two) == 2);
    CHECK(connected_components(AdjacencyGraph(296)) == 296);
    auto labels = component_labels(two);
    CHECK(labels[0] == labels[1]);
    CHECK(labels[0] != labels[2]);
}

TEST_CASE("icar log density examples")
{
    auto p3 = path_graph(3);
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
    CHECK(icar_log_density(zero, IcarSpec(p3, 3.0)) == doctest::Approx(2.0 * std::log(3.0)));

    Eigen::VectorXd mu(3);
    mu << 1, 0, -1;
    CHECK(icar_quadratic_form(mu, p3) == 2.0);
    CHECK(icar_log_density(mu, IcarSpec(p3, 1.0)) == doctest::Approx(-1.0).epsilon(1e-15));

    double d1 = icar_log_density(zero, IcarSpec(p3, 1.0));
    double d2 = icar_log_density(zero, IcarSpec(p3, 2.0));
    CHECK(d2 - d1 == doctest::Approx(2.0 * std::log(2.0)));

    double h = icar_log_density(zero, IcarSpec(p3, 2.0, IcarConstraint::None, IcarExponent::Halved));
    CHECK(h == doctest::Approx(std::log(2.0)));

    CHECK_THROWS_AS(icar_log_density(Eigen::VectorXd::Zero(4), IcarSpec(p3, 1.0)), DimensionError);
    CHECK_THROWS(IcarSpec(p3, 0.0));
}

TEST_CASE("icar log density ignores constant shifts on connected graphs")
{
    std::mt19937_64 gen(5);
    std::normal_distribution<double> nd;
    auto g = lattice_graph(4, 5);
    IcarSpec spec(g, 1.7);
    for (int rep = 0; rep < 20; ++rep)
    {
        Eigen::VectorXd mu(20);
        for (auto& v : mu)
            v = nd(gen);
        double c = 10.0 * nd(gen);
        Eigen::VectorXd shifted = mu.array() + c;
        CHECK(icar_log_density(shifted, spec) == doctest::Approx(icar_log_density(mu, spec)).epsilon(1e-10));
    }
}

TEST_CASE("quadratic form matches the laplacian")
{
    auto g = lattice_graph(3, 3);
    Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(9, -1.0, 2.0);
    CHECK(icar_quadratic_form(mu, g) == doctest::Approx(graph_laplacian(g).quadratic_form(mu)).epsilon(1e-14));
}

TEST_CASE("kriging draws satisfy the constraint per component")
{
    auto p3 = path_graph(3);
    KrigingSampler s(IcarSpec(p3, 1.0, IcarConstraint::SumToZeroKriging));
    for (std::uint64_t it = 0; it < 200; ++it)
    {
        RngStream rng(3, 1, it);
        CHECK(std::abs(s.draw(rng).sum()) < 1e-10);
    }

    AdjacencyGraph two(5);
    two.add_edge(0, 1);
    two.add_edge(1, 2);
    two.add_edge(3, 4);
    KrigingSampler t(IcarSpec(two, 50.0, IcarConstraint::SumToZeroKriging));
    for (std::uint64_t it = 0; it < 200; ++it)
    {
        RngStream rng(4, 1, it);
        auto x = t.draw(rng);
        CHECK(std::abs(x[0] + x[1] + x[2]) < 1e-10);
        CHECK(std::abs(x[3] + x[4]) < 1e-10);
    }

    CHECK_THROWS_AS(KrigingSampler(IcarSpec(p3, 1.0, IcarConstraint::None)), std::invalid_argument);
}

TEST_CASE("kriging covariance matches the pseudo-inverse of Q")
{
    // Frozen from tests/oracles/icar_pinv.py.
    double const diag[10] = {0.78301435406698416, 0.4471291866028696,  0.34473684210526312, 0.44712918660287176,
                             0.78301435406698672, 0.78301435406698494, 0.44712918660286999, 0.34473684210526317,
                             0.44712918660287199, 0.78301435406698661};
    auto g = lattice_graph(2, 5);
    Eigen::MatrixXd q = graph_laplacian(g).to_dense();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
    Eigen::MatrixXd pinv = Eigen::MatrixXd::Zero(10, 10);
    for (int i = 0; i < 10; ++i)
        if (es.eigenvalues()[i] > 1e-10 * es.eigenvalues().maxCoeff())
            pinv += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / es.eigenvalues()[i];
    for (int i = 0; i < 10; ++i)
        CHECK(pinv(i, i) == doctest::Approx(diag[i]).epsilon(1e-12));
    CHECK(pinv(0, 1) == doctest::Approx(0.24904306220095557).epsilon(1e-12));
    CHECK(pinv(0, 9) == doctest::Approx(-0.40119617224880388).epsilon(1e-12));
    CHECK(pinv.norm() == doctest::Approx(2.8622113949313679).epsilon(1e-12));

    KrigingSampler s(IcarSpec(g, 1.0, IcarConstraint::SumToZeroKriging));
    std::vector<Eigen::VectorXd> draws;
    for (std::uint64_t it = 0; it < 20000; ++it)
    {
        RngStream rng(17, 1, it);
        draws.push_back(s.draw(rng));
    }
    double rel = (sample_covariance(draws) - pinv).norm() / pinv.norm();
    CHECK(rel < 0.05);
}

TEST_CASE("precision scaling halves the spread")
{
    auto g = lattice_graph(2, 5);
    KrigingSampler one(IcarSpec(g, 1.0, IcarConstraint::SumToZeroKriging));
    KrigingSampler four(IcarSpec(g, 4.0, IcarConstraint::SumToZeroKriging));
    std::vector<Eigen::VectorXd> a, b;
    for (std::uint64_t it = 0; it < 2000; ++it)
    {
        RngStream r1(9, 1, it), r2(9, 1, it);
        a.push_back(one.draw(r1));
        b.push_back(four.draw(r2));
    }
    auto ca = sample_covariance(a), cb = sample_covariance(b);
    for (int i = 0; i < 10; ++i)
        CHECK(std::sqrt(cb(i, i) / ca(i, i)) == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("kriging moments follow a node relabeling")
{
    auto g = lattice_graph(3, 4);
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 gen(3);
    std::shuffle(perm.begin(), perm.end(), gen);
    auto h = g.relabeled(perm);
    KrigingSampler sg(IcarSpec(g, 1.0, IcarConstraint::SumToZeroKriging));
    KrigingSampler sh(IcarSpec(h, 1.0, IcarConstraint::SumToZeroKriging));
    std::vector<Eigen::VectorXd> a, b;
    for (std::uint64_t it = 0; it < 20000; ++it)
    {
        RngStream r1(21, 1, it), r2(21, 1, it);
        a.push_back(sg.draw(r1));
        b.push_back(sh.draw(r2));
    }
    auto ca = sample_covariance(a), cb = sample_covariance(b);
    for (std::size_t i = 0; i < 12; ++i)
        CHECK(cb(perm[i], perm[i]) == doctest::Approx(ca(i, i)).epsilon(0.06));
}

TEST_CASE("propriety examples")
{
    auto q = graph_laplacian(path_graph(3));
    auto none = propriety_check(q, no_constraints(3));
    CHECK_FALSE(none.proper());
    CHECK(none.deficiency == 1);
    CHECK(to_string(none) == "RankDeficient(1)");

    CHECK(propriety_check(q, sum_to_zero_constraints(path_graph(3))).proper());

    Eigen::MatrixXd shifted = q.to_dense() + 0.5 * Eigen::MatrixXd::Identity(3, 3);
    auto p = propriety_check(shifted, no_constraints(3));
    CHECK(p.proper());
    CHECK(p.min_eigenvalue == doctest::Approx(0.5));
    CHECK(p.max_eigenvalue == doctest::Approx(3.5));
}

TEST_CASE("sparse symmetric matrix stores the upper triangle without zeros")
{
    auto m = SparseSymMatrix::from_triplets(3, {{1, 0, 2.0}, {0, 1, 1.0}, {2, 2, 0.0}, {2, 2, 4.0}, {1, 1, 0.0}});
    REQUIRE(m.entries().size() == 2);
    CHECK(m.entries()[0].row == 0);
    CHECK(m.entries()[0].col == 1);
    CHECK(m.entries()[0].value == 3.0);
    Eigen::MatrixXd d = m.to_dense();
    CHECK(d(1, 0) == 3.0);
    CHECK(d(2, 2) == 4.0);
    Eigen::VectorXd x(3);
    x << 1, 2, 3;
    CHECK(m.quadratic_form(x) == doctest::Approx(x.dot(d * x)));
}

TEST_CASE("rng streams are addressed by seed, block and iteration")
{
    RngStream a(1, 2, 3), b(1, 2, 3), c(1, 2, 4), d(1, 3, 3);
    auto x = a(), y = b();
    CHECK(x == y);
    CHECK(c() != x);
    CHECK(d() != x);
    double sum = 0.0, sq = 0.0;
    RngStream r(99, 0, 0);
    for (int i = 0; i < 100000; ++i)
    {
        double z = r.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / 1e5) < 0.02);
    CHECK(sq / 1e5 == doctest::Approx(1.0).epsilon(0.02));
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
}
