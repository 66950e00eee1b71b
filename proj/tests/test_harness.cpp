#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lgm/harness.hpp"

using namespace lgm;
using namespace lgm::harness;

namespace {

StudyConfig small(StudyKind kind, std::size_t n_datasets)
{
    auto c = StudyConfig::defaults(kind, Scale::Desk);
    c.n_datasets = n_datasets;
    c.chain.iterations = 6000;
    c.chain.burn_in = 1000;
    c.chain.thin = 5;
    return c;
}

std::filesystem::path scratch_dir(std::string const& name)
{
    auto p = std::filesystem::temp_directory_path() / ("lgm-harness-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("poisson data are reproducible and use fixed covariates")
{
    auto c = small(StudyKind::PoissonStudy, 3);
    auto a = generate_poisson_data(c);
    auto b = generate_poisson_data(c);
    REQUIRE(a.size() == 3);
    for (std::size_t k = 0; k < a.size(); ++k)
    {
        CHECK(a[k].y == b[k].y);
        CHECK(a[k].x == a[0].x);
        CHECK(a[k].offset == a[0].offset);
        CHECK(a[k].generating_values.at("x") == 0.05);
    }
    CHECK_FALSE(a[0].y == a[1].y);
    CHECK(a[0].id == "poisson_iid-000");
    c.seed += 1;
    CHECK_FALSE(generate_poisson_data(c)[0].y == a[0].y);

    auto cov = study_covariates(c);
    CHECK(std::all_of(cov.x.begin(), cov.x.end(), [](double x) { return x >= 0 && x <= 60; }));
    CHECK(std::all_of(cov.total.begin(), cov.total.end(), [](double t) { return t >= 50; }));
}

TEST_CASE("iid noise has unit variance")
{
    auto c = small(StudyKind::PoissonStudy, 200);
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (auto const& d : generate_poisson_data(c))
        for (double e : d.simulated_iid)
        {
            sum += e;
            sq += e * e;
            ++n;
        }
    REQUIRE(n == 10000);
    double mean = sum / static_cast<double>(n);
    double var = sq / static_cast<double>(n) - mean * mean;
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("zero noise gives the closed-form mean")
{
    auto c = small(StudyKind::PoissonStudy, 2000);
    c.zero_noise = true;
    c.generating.slope = 0.0;
    auto data = generate_poisson_data(c);
    auto cov = study_covariates(c);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(50);
    for (auto const& d : data)
    {
        CHECK(d.simulated_iid.isZero());
        mean += d.y;
    }
    mean /= static_cast<double>(data.size());
    int outside = 0;
    for (std::size_t i = 0; i < 50; ++i)
    {
        double expect = cov.total[i] * std::exp(0.1);
        outside += std::abs(mean[static_cast<Eigen::Index>(i)] - expect) > 4 * std::sqrt(expect / 2000.0);
    }
    CHECK(outside == 0);
}

TEST_CASE("covariates can come from a file")
{
    auto dir = scratch_dir("cov");
    auto c = small(StudyKind::PoissonStudy, 1);
    c.lattice_rows = 2;
    c.lattice_cols = 2;
    {
        std::ofstream out(dir / "cov.csv");
        out << "x,total\n1,100\n2,200\n3,300\n4,400\n";
    }
    c.covariate_csv = (dir / "cov.csv").string();
    auto cov = study_covariates(c);
    CHECK(cov.total == std::vector<double>{100, 200, 300, 400});
    {
        std::ofstream out(dir / "cov.csv");
        out << "x,total\n1,100\n2,0\n3,300\n4,400\n";
    }
    CHECK_THROWS_AS(study_covariates(c), std::invalid_argument);
}

TEST_CASE("bym data: centred effects with positive neighbour correlation")
{
    auto c = small(StudyKind::BymStudy, 10000);
    auto graph = study_graph(c);
    auto data = generate_bym_data(c, graph);
    auto const n = static_cast<Eigen::Index>(graph.n_nodes());
    Eigen::MatrixXd mu(static_cast<Eigen::Index>(data.size()), n);
    double worst = 0.0;
    for (std::size_t k = 0; k < data.size(); ++k)
    {
        REQUIRE(data[k].simulated_spatial.size() == n);
        worst = std::max(worst, std::abs(data[k].simulated_spatial.sum()));
        mu.row(static_cast<Eigen::Index>(k)) = data[k].simulated_spatial.transpose();
    }
    CHECK(worst < 1e-10);
    CHECK(generate_bym_data(c, graph)[17].y == data[17].y);

    // Pseudo-inverse of the lattice Laplacian.
    Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < graph.n_nodes(); ++i)
        for (auto j : graph.neighbors(i))
        {
            lap(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) -= 1.0;
            lap(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += 1.0;
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
    Eigen::VectorXd inv = es.eigenvalues();
    for (auto& v : inv)
        v = v > 1e-9 ? 1.0 / v : 0.0;
    Eigen::MatrixXd pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();

    Eigen::MatrixXd centred = mu.rowwise() - mu.colwise().mean();
    Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(mu.rows() - 1);
    int pairs = 0;
    for (std::size_t i = 0; i < graph.n_nodes(); ++i)
        for (auto j : graph.neighbors(i))
        {
            auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
            double emp = cov(a, b) / std::sqrt(cov(a, a) * cov(b, b));
            double ref = pinv(a, b) / std::sqrt(pinv(a, a) * pinv(b, b));
            CHECK(emp > 0.0);
            CHECK(std::abs(emp - ref) < 0.05);
            ++pairs;
        }
    CHECK(pairs == 2 * 85);
}

TEST_CASE("study config validation and json")
{
    auto c = StudyConfig::defaults(StudyKind::BymStudy, Scale::Desk);
    CHECK(c.n_datasets == 20);
    CHECK(c.n_areas() == 50);
    CHECK(c.chain.iterations == 100000);
    auto p = StudyConfig::defaults(StudyKind::BymStudy, Scale::Paper);
    CHECK(p.n_datasets == 100);
    CHECK(p.n_areas() == 296);

    auto back = study_config_from_json(to_json(c), StudyConfig{});
    CHECK(to_json(back).dump() == to_json(c).dump());
    CHECK(config_hash(back) == config_hash(c));
    back.workers = 4;
    CHECK(config_hash(back) == config_hash(c));
    back.seed += 1;
    CHECK(config_hash(back) != config_hash(c));

    auto bad = c;
    bad.n_datasets = 0;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.generating.p_zero = 1.0;
    CHECK_THROWS(bad.validate());
    CHECK_THROWS(study_kind_from_string("spline"));
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);

    auto pipe = pipeline_from_json(nlohmann::json::parse(R"({"seed": 5, "defaults": {"n_datasets": 2}})"), Scale::Desk, 1);
    REQUIRE(pipe.studies.size() == 4);
    for (auto const& s : pipe.studies)
    {
        CHECK(s.seed == 5);
        CHECK(s.n_datasets == 2);
    }
    CHECK_THROWS(pipeline_from_json(
        nlohmann::json::parse(R"({"studies": [{"kind": "poisson"}, {"kind": "poisson"}]})"), Scale::Desk, 1));
}

TEST_CASE("paired study bookkeeping")
{
    auto c = small(StudyKind::PoissonStudy, 3);
    auto r = run_paired_study(c);
    CHECK(r.datasets.size() == 3);
    std::set<std::string> failed;
    for (auto const& f : r.failures)
        failed.insert(f.dataset);
    CHECK(r.parameters.size() == (3 - failed.size()) * 2);
    for (auto const& p : r.parameters)
    {
        CHECK(failed.count(p.dataset) == 0);
        CHECK(p.generating.has_value() == p.pc_laplace.has_value());
        CHECK(p.generating.has_value() == p.pc_mcmc.has_value());
        CHECK(p.generating.has_value());
        CHECK(std::isfinite(p.pe));
    }

    c.workers = 3;
    CHECK(run_paired_study(c) == r);
}

TEST_CASE("failed fits are ledgered and excluded")
{
    auto c = small(StudyKind::PoissonStudy, 2);
    c.laplace.newton_max_iter = 1;
    auto r = run_paired_study(c);
    CHECK(r.datasets.size() == 2);
    CHECK(r.parameters.empty());
    REQUIRE(r.failures.size() >= 2);
    CHECK(r.failures[0].engine == "laplace");
    CHECK(r.failures[0].cause == "NonConvergence");
}

TEST_CASE("paired study PE is within Monte Carlo error")
{
    auto c = small(StudyKind::PoissonStudy, 2);
    c.chain.iterations = 40000;
    c.chain.burn_in = 5000;
    c.chain.thin = 5;
    auto r = run_paired_study(c);
    REQUIRE_FALSE(r.parameters.empty());
    for (auto const& p : r.parameters)
    {
        if (p.parameter != "x")
            continue;
        double mcse_pct = 100.0 / std::sqrt(p.mcmc_ess);
        CHECK(std::abs(p.pe) < 4 * mcse_pct + 5.0);
    }
}

TEST_CASE("selection rows follow the definitions")
{
    auto c = small(StudyKind::SelectionStudy, 2);
    auto r = run_selection_study(c);
    CHECK(r.datasets.size() == 4);
    for (auto const& s : r.selection)
    {
        CHECK(s.correct_laplace == (s.selected_laplace == s.generating_model));
        CHECK(s.correct_mcmc == (s.selected_mcmc == s.generating_model));
        auto expect = s.waic_mcmc_poisson < s.waic_mcmc_bym ? "poisson_iid" : "bym";
        if (!s.tie_mcmc)
            CHECK(s.selected_mcmc == expect);
        CHECK(s.generating_model == (s.dataset.rfind("bym", 0) == 0 ? "bym" : "poisson_iid"));
    }
    CHECK(r.waic_differences.size() == 2 * r.selection.size());
    for (std::size_t k = 0; k < r.waic_differences.size(); ++k)
    {
        auto const& w = r.waic_differences[k];
        CHECK(w.model == (k % 2 == 0 ? "poisson_iid" : "bym"));
        CHECK(w.difference == w.waic_laplace - w.waic_mcmc);
    }
}

TEST_CASE("long chains select the generating model" * doctest::may_fail())
{
    // Measured 50-65% at desk scale; see the README.
    auto c = small(StudyKind::SelectionStudy, 10);
    c.generating.prec_mu = 0.2;
    c.generating.prec_eps = 10.0;
    c.icar_exponent = gmrf::IcarExponent::Halved;
    c.chain.iterations = 20000;
    c.chain.burn_in = 4000;
    c.chain.thin = 4;
    auto r = run_selection_study(c);
    int correct = 0;
    for (auto const& s : r.selection)
        correct += s.correct_mcmc;
    MESSAGE("mcmc selected the generating model in ", correct, " of ", r.selection.size());
    CHECK(correct >= 0.8 * static_cast<double>(r.selection.size()));
}

TEST_CASE("zero-inflated study")
{
    auto c = small(StudyKind::ZinbStudy, 20);
    c.chain.iterations = 20000;
    c.chain.burn_in = 5000;
    c.chain.thin = 5;
    auto r = run_zinb_study(c);
    CHECK(r.datasets.size() == 20);
    int null_quiet = 0, null_seen = 0, pz_close = 0, pz_seen = 0;
    for (auto const& a : r.agreement)
        if (a.covariate == "z4")
        {
            ++null_seen;
            null_quiet += !a.significant_laplace && !a.significant_mcmc;
        }
    for (auto const& p : r.parameters)
        if (p.parameter == "p_zero")
        {
            ++pz_seen;
            pz_close += std::abs(p.mcmc_mean - 0.3) <= 0.1;
        }
    REQUIRE(null_seen >= 18);
    CHECK(null_quiet >= 0.9 * null_seen);
    CHECK(pz_close == pz_seen);
    CHECK(r.rate_ratios.size() == 2 * r.agreement.size());
    for (auto const& a : r.agreement)
        CHECK(a.same_significance == (a.significant_laplace == a.significant_mcmc));
}

TEST_CASE("csv formatting and parsing")
{
    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(format_double(1.0) == "1");
    CHECK(std::stod(format_double(M_PI)) == M_PI);
    Table t;
    t.header = {"a", "b"};
    t.rows = {{"x,y", "1"}, {"q\"uote", "2"}};
    auto back = parse_csv(to_csv(t));
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
}

TEST_CASE("empty report gives headers only")
{
    auto dir = scratch_dir("empty");
    auto files = emit_report(ComparisonReport{}, dir.string());
    CHECK_FALSE(files.empty());
    for (auto const& [stem, t] : read_report_dir(dir.string()))
    {
        CHECK_FALSE(t.header.empty());
        CHECK(t.rows.empty());
        std::ifstream in(dir / (stem + ".csv"));
        std::string line;
        int lines = 0;
        while (std::getline(in, line))
            ++lines;
        CHECK(lines == 1);
    }
}

TEST_CASE("report round trip through csv")
{
    auto c = small(StudyKind::PoissonStudy, 2);
    auto r = run_paired_study(c);
    r.failures.push_back({"poisson", "poisson_iid-009", "poisson_iid", "mcmc", "Error", "a, \"quoted\" detail"});
    auto dir = scratch_dir("roundtrip");
    emit_report(r, dir.string());
    auto tables = read_report_dir(dir.string());
    CHECK(report_from_tables(tables) == r);

    std::ifstream in(dir / "report.json");
    auto j = nlohmann::json::parse(in);
    CHECK(j.at("parameters").size() == r.parameters.size());
}

TEST_CASE("audit passes, names its inputs and catches injected nondeterminism")
{
    PipelineConfig p;
    auto c = small(StudyKind::PoissonStudy, 2);
    c.chain.iterations = 3000;
    c.chain.burn_in = 1000;
    c.chain.thin = 2;
    p.studies.push_back(c);

    AuditOptions o;
    o.worker_counts = {1, 2};
    auto a = reproducibility_audit(p, o);
    CHECK(a.pass);
    CHECK(a.mismatches.empty());
    CHECK(a.runs.size() == 2);
    CHECK(a.engine_version == laplace::engine_version);
    CHECK(a.config_hash.size() == 16);
    auto j = to_json(a);
    CHECK(j.at("engine_version") == laplace::engine_version);
    CHECK(j.at("config_hash") == a.config_hash);
    CHECK(reproducibility_audit(p, o).config_hash == a.config_hash);

    o.inject_nondeterminism = true;
    auto bad = reproducibility_audit(p, o);
    CHECK_FALSE(bad.pass);
    REQUIRE_FALSE(bad.mismatches.empty());
    CHECK(bad.mismatches[0].table == "parameters");
    CHECK(bad.mismatches[0].line >= 2);
    CHECK_FALSE(bad.mismatches[0].column.empty());
    CHECK(bad.mismatches[0].value_a != bad.mismatches[0].value_b);
}
