// Acceptance run: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lgm/gmrf.hpp"
#include "lgm/harness.hpp"
#include "lgm/laplace.hpp"
#include "lgm/mcmc.hpp"
#include "lgm/metrics.hpp"

#include "toys.hpp"

using namespace lgm;

namespace {

struct Outcome
{
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(char const* f, double a, double b = 0, double c = 0, double d = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome gaussian_exactness()
{
    auto t0 = std::chrono::steady_clock::now();
    auto t = toys::gaussian_toy(50, 2021);
    double worst = 0.0;
    for (auto st : {laplace::Strategy::Gaussian, laplace::Strategy::SimplifiedLaplace, laplace::Strategy::FullLaplace})
    {
        laplace::LaplaceConfig cfg;
        for (std::size_t i = 0; i < 52; ++i)
            cfg.latent_subset.push_back(i);
        auto r = laplace::fit(t.spec, t.data, st, cfg);
        for (std::size_t k = 0; k < 52; ++k)
        {
            auto i = static_cast<Eigen::Index>(k);
            double sd = std::sqrt(t.cov(i, i));
            worst = std::max(worst, std::abs(r.latent[k].mean - t.mean[i]) / std::max(std::abs(t.mean[i]), sd));
            worst = std::max(worst, std::abs(r.latent[k].sd - sd) / sd);
        }
    }
    double secs = seconds_since(t0);
    return {worst < 1e-6 && secs < 5.0, fmt("max relative error %.2e, %.1f s", worst, secs)};
}

Outcome conjugate_toys()
{
    mcmc::ChainConfig cc;
    cc.store_pointwise = false;
    std::string detail;
    bool pass = true;
    auto check = [&](char const* name, models::ModelSpec const& spec, models::Dataset const& data, double mean,
                     double sd, std::uint64_t seed) {
        auto t0 = std::chrono::steady_clock::now();
        cc.seed = seed;
        auto x = mcmc::run_chain(spec, data, cc).column("(Intercept)");
        auto s = mcmc::summarize(x);
        double secs = seconds_since(t0);
        double zm = std::abs(s.mean - mean) / s.mcse, zs = std::abs(s.sd - sd) / toys::sd_mcse(x);
        pass = pass && zm < 3 && zs < 3 && secs < 60;
        detail += (detail.empty() ? "" : "; ") + std::string(name) + fmt(" mean %.2f MCSE, sd %.2f MCSE, %.1f s", zm, zs, secs);
    };
    auto nn = toys::normal_normal();
    check("normal-normal", nn.spec, nn.data, nn.mean, nn.sd, 3);
    auto gp = toys::gamma_poisson();
    check("gamma-poisson", gp.spec, gp.data, gp.mean, gp.sd, 4);
    return {pass, detail};
}

Outcome kriging_fidelity()
{
    auto t0 = std::chrono::steady_clock::now();
    auto g = gmrf::lattice_graph(2, 5);
    Eigen::MatrixXd q = gmrf::graph_laplacian(g).to_dense();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
    Eigen::MatrixXd pinv = Eigen::MatrixXd::Zero(10, 10);
    for (int i = 0; i < 10; ++i)
        if (es.eigenvalues()[i] > 1e-10 * es.eigenvalues().maxCoeff())
            pinv += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / es.eigenvalues()[i];

    gmrf::KrigingSampler s(gmrf::IcarSpec(g, 1.0, gmrf::IcarConstraint::SumToZeroKriging));
    Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(10, 10);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(10);
    double worst_sum = 0.0;
    std::size_t const n = 100000;
    for (std::uint64_t it = 0; it < n; ++it)
    {
        RngStream rng(31, 1, it);
        auto x = s.draw(rng);
        worst_sum = std::max(worst_sum, std::abs(x.sum()));
        sum += x;
        sum_sq += x * x.transpose();
    }
    Eigen::VectorXd mean = sum / static_cast<double>(n);
    Eigen::MatrixXd cov = (sum_sq - static_cast<double>(n) * mean * mean.transpose()) / static_cast<double>(n - 1);
    double rel = (cov - pinv).norm() / pinv.norm();
    double secs = seconds_since(t0);
    return {rel < 0.02 && worst_sum < 1e-10 && secs < 30,
            fmt("relative Frobenius %.4f, max |sum| %.1e, %.1f s", rel, worst_sum, secs)};
}

Outcome poisson_desk_study()
{
    auto t0 = std::chrono::steady_clock::now();
    auto c = harness::StudyConfig::defaults(harness::StudyKind::PoissonStudy, harness::Scale::Desk);
    c.strategy = laplace::Strategy::FullLaplace;
    auto r = harness::run_paired_study(c);
    std::vector<double> pe_prec, pe_x;
    for (auto const& p : r.parameters)
    {
        if (p.parameter == "prec_eps")
            pe_prec.push_back(std::abs(p.pe));
        if (p.parameter == "x")
            pe_x.push_back(std::abs(p.pe));
    }
    double secs = seconds_since(t0);
    if (pe_prec.empty() || pe_x.empty())
        return {false, "no fitted datasets"};
    double mp = median(pe_prec), mx = median(pe_x);
    auto detail = fmt("median |PE| iid precision %.2f, slope %.2f; ", mp, mx)
                  + std::to_string(pe_x.size()) + " of " + std::to_string(r.datasets.size())
                  + fmt(" datasets fitted, %.0f s", secs);
    return {mp < 5 && mx < 20 && secs < 1800, detail};
}

Outcome waic_definition()
{
    // Chain pointwise densities, read as draws and as an equally weighted grid.
    auto d = toys::poisson_desk(12);
    mcmc::ChainConfig cc;
    cc.iterations = 20000;
    cc.burn_in = 2000;
    cc.thin = 10;
    auto chain = mcmc::run_chain(models::poisson_iid_spec({"x"}, 5e-5), d, cc);
    auto s = chain.pointwise.rows();
    double d1 = std::abs(metrics::waic(chain.pointwise).waic
                         - metrics::waic(chain.pointwise, Eigen::VectorXd::Constant(s, 1.0 / static_cast<double>(s))).waic);

    // A Laplace-style input: two grid points, and the same rows as draws in proportion to the weights.
    Eigen::MatrixXd grid = chain.pointwise.topRows(2);
    Eigen::VectorXd w(2);
    w << 0.75, 0.25;
    Eigen::MatrixXd draws(4, grid.cols());
    draws << grid.row(0), grid.row(0), grid.row(0), grid.row(1);
    double d2 = std::abs(metrics::waic(grid, w).waic - metrics::waic(draws).waic);

    Eigen::MatrixXd toy(2, 3);
    toy << -1.0, -2.0, -0.5, -1.5, -1.0, -0.7;
    double d3 = std::abs(metrics::waic(toy).waic - 7.032928001199828);
    return {d1 < 1e-12 && d2 < 1e-12 && d3 < 1e-12,
            fmt("draws vs weighted %.1e, grid vs expanded draws %.1e, 2x3 oracle %.1e", d1, d2, d3)};
}

Outcome selection_bookkeeping(std::string const& out_dir, std::string const& python, std::string const& script)
{
    auto t0 = std::chrono::steady_clock::now();
    auto c = harness::StudyConfig::defaults(harness::StudyKind::SelectionStudy, harness::Scale::Desk);
    auto r = harness::run_selection_study(c);
    auto dir = std::filesystem::path(out_dir) / "selection";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    harness::emit_report(r, dir.string(), true, false);
    std::string cmd = "\"" + python + "\" \"" + script + "\" \"" + dir.string() + "\"";
    int rc = std::system(cmd.c_str());
    int correct_mcmc = 0, correct_laplace = 0;
    for (auto const& s : r.selection)
    {
        correct_mcmc += s.correct_mcmc;
        correct_laplace += s.correct_laplace;
    }
    auto detail = std::to_string(r.selection.size()) + " selections, " + std::to_string(r.failures.size())
                  + " failures; correct: laplace " + std::to_string(correct_laplace) + ", mcmc "
                  + std::to_string(correct_mcmc) + fmt("; %.0f s", seconds_since(t0));
    return {rc == 0 && r.datasets.size() == 2 * c.n_datasets, detail};
}

Outcome propriety()
{
    auto d = toys::poisson_desk(5);
    d.graph = gmrf::lattice_graph(5, 10);
    auto spec = models::bym_spec({"x"}, 5e-4);
    spec.include_intercept = true;
    spec.unsafe = true;
    std::string cause = "none";
    try
    {
        laplace::fit(spec, d, laplace::Strategy::FullLaplace);
    }
    catch (laplace::FitFailure const& e)
    {
        cause = laplace::FitFailure::to_string(e.cause());
    }
    mcmc::ChainConfig cc;
    cc.allow_improper = true;
    cc.iterations = 20000;
    cc.burn_in = 2000;
    cc.store_pointwise = false;
    auto rep = mcmc::diagnostics(mcmc::run_chain(spec, d, cc));
    return {cause == "RankDeficient" && rep.verdict == mcmc::Verdict::Fail,
            "laplace: " + cause + ", mcmc verdict: " + mcmc::to_string(rep.verdict)};
}

harness::PipelineConfig audit_pipeline(bool full)
{
    auto p = harness::PipelineConfig::defaults(harness::Scale::Desk, 20210701);
    if (full)
        return p;
    for (auto& c : p.studies)
    {
        c.n_datasets = 2;
        c.chain.iterations = 4000;
        c.chain.burn_in = 1000;
        c.chain.thin = 3;
        if (c.kind == harness::StudyKind::ZinbStudy)
            c.zinb_n = 200;
    }
    return p;
}

Outcome audit(bool full)
{
    auto t0 = std::chrono::steady_clock::now();
    auto p = audit_pipeline(full);
    auto a = harness::reproducibility_audit(p);
    harness::AuditOptions bad;
    bad.worker_counts = {1, 1};
    bad.inject_nondeterminism = true;
    auto b = harness::reproducibility_audit(p, bad);
    std::string where = "none";
    if (!b.mismatches.empty())
    {
        auto const& m = b.mismatches.front();
        where = m.table + ".csv line " + std::to_string(m.line) + " (" + m.record + ", " + m.column + ")";
    }
    std::string detail = std::string(full ? "full" : "reduced") + " desk pipeline, " + std::to_string(a.runs.size())
                         + " runs, " + std::to_string(a.mismatches.size()) + " mismatches, digest "
                         + (a.runs.empty() ? "" : a.runs[0].digest) + "; injected: " + (b.pass ? "not detected" : "detected")
                         + " at " + where + fmt("; %.0f s", seconds_since(t0));
    return {a.pass && !b.pass && !b.mismatches.empty(), detail};
}

Outcome metric_suite()
{
    int bad = 0;
    auto expect = [&](bool ok) { bad += ok ? 0 : 1; };
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
    auto a = metrics::percent_error(1.2, 1.0, 0.5);
    expect(near(a.value, 40.0) && a.classification == metrics::PEClass::Problematic);
    auto b = metrics::percent_error(1.05, 1.0, 0.2);
    expect(near(b.value, 25.0) && b.classification == metrics::PEClass::Borderline);
    auto c = metrics::percent_error(0.37, 0.37, 0.1);
    expect(c.value == 0.0 && c.classification == metrics::PEClass::Acceptable);
    expect(near(metrics::percent_change(0.06, 0.05), 20.0));
    expect(metrics::percent_change(1.0, 1.0) == 0.0);
    expect(near(metrics::percent_change(0.5, 1.0), -50.0));
    Eigen::VectorXd point = Eigen::VectorXd::Constant(100, 0.1);
    auto rr = metrics::rate_ratio(point, 1.0, 3.0, "x");
    expect(near(rr.ratio, std::exp(0.2)) && rr.significant);
    Eigen::VectorXd sym(201);
    for (int i = 0; i < 201; ++i)
        sym[i] = (i - 100) * 0.01;
    expect(!metrics::rate_ratio(sym, 0.0, 2.0, "x").significant);
    int examples = 8 - bad;

    std::mt19937_64 gen(2021);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(1e-3, 10.0);
    int random_bad = 0;
    for (int i = 0; i < 1000; ++i)
    {
        double x = 10 * nd(gen), y = 10 * nd(gen), s = ud(gen), g = nd(gen);
        random_bad += metrics::percent_error(x, y, s).value != -metrics::percent_error(y, x, s).value;
        random_bad += g != 0.0 && metrics::percent_change(g, g) != 0.0;
    }
    return {bad == 0 && random_bad == 0,
            std::to_string(examples) + "/8 examples, " + std::to_string(random_bad) + " violations in 1000 random inputs"};
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app("acceptance checks");
    std::string out_dir = LGM_ACCEPTANCE_DIR;
    std::vector<int> only;
    bool full_audit = false;
    app.add_option("--out", out_dir, "directory for emitted reports");
    app.add_option("--only", only, "criteria to run");
    app.add_flag("--full-audit", full_audit, "audit the full desk pipeline instead of the reduced one");
    CLI11_PARSE(app, argc, argv);

    std::vector<std::pair<char const*, std::function<Outcome()>>> criteria{
        {"gaussian exactness", gaussian_exactness},
        {"conjugate mcmc toys", conjugate_toys},
        {"icar kriging sampler", kriging_fidelity},
        {"poisson desk study", poisson_desk_study},
        {"waic shared definition", waic_definition},
        {"selection bookkeeping", [&] { return selection_bookkeeping(out_dir, LGM_PYTHON, LGM_AUDIT_SCRIPT); }},
        {"propriety diagnostic", propriety},
        {"reproducibility audit", [&] { return audit(full_audit); }},
        {"metric formulas", metric_suite},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k)
    {
        int id = static_cast<int>(k + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end())
            continue;
        Outcome o;
        try
        {
            o = criteria[k].second();
        }
        catch (std::exception const& e)
        {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("criterion %d %s: %s (%s)\n", id, criteria[k].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
