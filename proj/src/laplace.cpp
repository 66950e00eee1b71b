#include "lgm/laplace.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include <boost/math/distributions/skew_normal.hpp>

#include "lgm/errors.hpp"
#include "lgm/parallel.hpp"
#include "spline.hpp"

namespace lgm::laplace {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using models::HyperVector;
using models::Model;

constexpr double log_2pi = 1.8378770664093454835606594728112;

// Everything about a model the inner solver needs, computed once.
struct Problem
{
    Model const& model;
    MatrixXd a;  // latent -> eta
    MatrixXd abs_a;
    MatrixXd c;  // constraint rows
    VectorXd prior_mean;
    VectorXd abs_y;
    LaplaceConfig const& cfg;

    Problem(Model const& m, LaplaceConfig const& config)
        : model(m), a(m.predictor_matrix()), abs_a(a.cwiseAbs()), c(m.constraints()),
          prior_mean(m.latent_prior_mean()), abs_y(m.data().y.cwiseAbs()), cfg(config)
    {
    }
};

struct Eval
{
    VectorXd eta;
    VectorXd d1;
    VectorXd w;  // -d2
    VectorXd d3;
    VectorXd pointwise;
    double f = 0.0;  // log pi(y|x) + log pi(x|theta), y-constants dropped
};

Eval evaluate(Problem const& p, HyperVector const& theta, VectorXd const& x)
{
    Eval e;
    e.eta = p.model.linear_predictor(x);
    p.model.check_predictor(e.eta);
    auto n = e.eta.size();
    e.d1.resize(n);
    e.w.resize(n);
    e.d3.resize(n);
    e.pointwise.resize(n);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
    {
        auto o = p.model.obs(static_cast<std::size_t>(i), e.eta[i], theta);
        e.pointwise[i] = o.value;
        e.d1[i] = o.d1;
        e.w[i] = -o.d2;
        e.d3[i] = o.d3;
        ll += o.value;
    }
    e.f = ll + p.model.y_constant() + p.model.log_prior_latent(x, theta);
    if (!std::isfinite(e.f))
        throw OverflowError("log density is not finite", 0);
    return e;
}

struct Constraints
{
    MatrixXd c;
    VectorXd rhs;
    Eigen::LLT<MatrixXd> cct;
    double log_det_cct = 0.0;

    Constraints(MatrixXd rows, VectorXd r) : c(std::move(rows)), rhs(std::move(r))
    {
        if (c.rows() > 0)
        {
            cct.compute(c * c.transpose());
            if (cct.info() != Eigen::Success)
                throw ConstraintError("constraint rows are linearly dependent");
            log_det_cct = 2.0 * cct.matrixLLT().diagonal().array().log().sum();
        }
    }

    VectorXd project(VectorXd const& x) const
    {
        if (c.rows() == 0)
            return x;
        return x - c.transpose() * cct.solve(c * x - rhs);
    }

    VectorXd project_direction(VectorXd const& g) const
    {
        if (c.rows() == 0)
            return g;
        return g - c.transpose() * cct.solve(c * g);
    }
};

struct Factor
{
    Eigen::LLT<MatrixXd> llt;
    MatrixXd h;
    MatrixXd v;  // Htilde^{-1} C'
    Eigen::LLT<MatrixXd> s;
    bool clipped = false;
};

// H + rho C'C with C the constraint rows; W clipped at zero when the plain
// factorisation fails.
bool factor(Problem const& p, MatrixXd const& q, VectorXd const& w, Constraints const& cons, Factor& out)
{
    for (int attempt = 0; attempt < 2; ++attempt)
    {
        VectorXd ww = attempt == 0 ? w : VectorXd(w.cwiseMax(0.0));
        out.h = q;
        out.h.noalias() += p.a.transpose() * ww.asDiagonal() * p.a;
        MatrixXd ht = out.h;
        if (cons.c.rows() > 0)
        {
            double rho = std::max(1.0, out.h.diagonal().mean());
            ht.noalias() += rho * cons.c.transpose() * cons.c;
        }
        out.llt.compute(ht);
        if (out.llt.info() == Eigen::Success && out.llt.matrixLLT().diagonal().minCoeff() > 0)
        {
            out.clipped = attempt == 1;
            if (cons.c.rows() > 0)
            {
                out.v = out.llt.solve(cons.c.transpose());
                out.s.compute(cons.c * out.v);
                if (out.s.info() != Eigen::Success)
                    return false;
            }
            return true;
        }
        if ((w.array() >= 0).all())
            break;
    }
    return false;
}

struct NewtonOut
{
    VectorXd x;
    Eval eval;
    int iterations = 0;
    bool converged = false;
    double gradient_norm = 0.0;
};

NewtonOut newton(Problem const& p, HyperVector const& theta, MatrixXd const& q, Constraints const& cons, VectorXd x0)
{
    auto const& cfg = p.cfg;
    NewtonOut out;
    out.x = cons.project(x0);
    out.eval = evaluate(p, theta, out.x);
    for (int iter = 0;; ++iter)
    {
        VectorXd prior_part = q * (out.x - p.prior_mean);
        VectorXd grad = p.a.transpose() * out.eval.d1 - prior_part;
        VectorXd gp = cons.project_direction(grad);
        VectorXd scale = p.abs_a.transpose() * (p.abs_y + out.eval.d1.cwiseAbs() + out.eval.w.cwiseAbs());
        scale.array() += prior_part.array().abs() + 1.0;
        out.gradient_norm = (gp.array().abs() / scale.array()).maxCoeff();
        out.iterations = iter;
        if (out.gradient_norm < cfg.newton_tol)
        {
            out.converged = true;
            return out;
        }
        if (iter >= cfg.newton_max_iter)
            return out;

        Factor fac;
        if (!factor(p, q, out.eval.w, cons, fac))
            throw NonConvergence(iter, out.gradient_norm);
        VectorXd u = fac.llt.solve(grad);
        VectorXd step = u;
        if (cons.c.rows() > 0)
        {
            VectorXd r = cons.rhs - cons.c * out.x;
            step -= fac.v * fac.s.solve(cons.c * u - r);
        }

        double s = 1.0;
        bool accepted = false;
        for (int h = 0; h <= cfg.max_halvings; ++h, s *= 0.5)
        {
            VectorXd xn = out.x + s * step;
            try
            {
                Eval en = evaluate(p, theta, xn);
                if (en.f >= out.eval.f - 1e-12 * (1.0 + std::abs(out.eval.f)))
                {
                    bool stalled = std::abs(en.f - out.eval.f) <= 1e-15 * (1.0 + std::abs(out.eval.f))
                                && (s * step).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + out.x.cwiseAbs().maxCoeff());
                    out.x = std::move(xn);
                    out.eval = std::move(en);
                    accepted = true;
                    if (stalled)
                    {
                        out.iterations = iter + 1;
                        out.converged = out.gradient_norm < std::sqrt(cfg.newton_tol);
                        return out;
                    }
                    break;
                }
            }
            catch (OverflowError const&)
            {
            }
        }
        if (!accepted)
        {
            // No ascent left at round-off level.
            out.iterations = iter + 1;
            out.converged = out.gradient_norm < std::sqrt(cfg.newton_tol);
            return out;
        }
    }
}

struct Restricted
{
    double log_det = 0.0;
    MatrixXd precision;
    MatrixXd covariance;
    bool clipped = false;
};

Restricted restricted_curvature(Problem const& p, MatrixXd const& q, VectorXd const& w, Constraints const& cons,
                                bool want_covariance)
{
    Factor fac;
    if (!factor(p, q, w, cons, fac))
        throw NonConvergence(0, NAN);
    Restricted r;
    r.clipped = fac.clipped;
    r.log_det = 2.0 * fac.llt.matrixLLT().diagonal().array().log().sum();
    if (cons.c.rows() > 0)
        r.log_det += 2.0 * fac.s.matrixLLT().diagonal().array().log().sum() - cons.log_det_cct;
    if (want_covariance)
    {
        auto dim = q.rows();
        r.covariance = fac.llt.solve(MatrixXd::Identity(dim, dim));
        if (cons.c.rows() > 0)
            r.covariance -= fac.v * fac.s.solve(fac.v.transpose());
        r.covariance = 0.5 * (r.covariance + r.covariance.transpose()).eval();
        r.precision = std::move(fac.h);
    }
    return r;
}

GaussianApprox approx_at(Problem const& p, HyperVector const& theta, VectorXd const& start)
{
    MatrixXd q = p.model.latent_prior_precision(theta).to_dense();
    Constraints cons(p.c, VectorXd::Zero(p.c.rows()));
    NewtonOut nw = newton(p, theta, q, cons, start);
    if (!nw.converged)
        throw NonConvergence(nw.iterations, nw.gradient_norm);
    Restricted r = restricted_curvature(p, q, nw.eval.w, cons, true);
    GaussianApprox g;
    g.mode = std::move(nw.x);
    g.precision = std::move(r.precision);
    g.covariance = std::move(r.covariance);
    g.log_det_half = 0.5 * r.log_det;
    g.newton_iters = nw.iterations;
    g.converged = true;
    g.gradient_norm = nw.gradient_norm;
    g.log_joint = nw.eval.f;
    auto d = static_cast<double>(q.rows() - p.c.rows());
    g.log_post_theta = p.model.log_prior_hyper(theta) + g.log_joint + 0.5 * d * log_2pi - g.log_det_half;
    return g;
}

VectorXd default_start(Problem const& p)
{
    return p.prior_mean;
}

HyperVector initial_theta(Model const& m)
{
    HyperVector t = HyperVector::Zero(static_cast<Eigen::Index>(m.hyper_size()));
    for (std::size_t s = 0; s < m.hyper_size(); ++s)
    {
        auto const& prior = m.hyper_slots()[s].prior;
        if (prior.kind == models::HyperPrior::Kind::Normal)
            t[static_cast<Eigen::Index>(s)] = prior.a;
    }
    return t;
}

IntegrationDesign resolve_design(IntegrationDesign d, std::size_t dim)
{
    if (d != IntegrationDesign::Auto)
        return d;
    return dim <= 2 ? IntegrationDesign::Grid : IntegrationDesign::CCD;
}

struct Explored
{
    ThetaGrid grid;
    std::vector<GaussianApprox> approx;  // aligned with grid.points
    VectorXd global_mode;
};

// Quasi-Newton (BFGS) maximisation of the Laplace log pi(theta|y) with
// central-difference gradients.
struct ModeSearch
{
    Problem const& p;
    VectorXd warm;
    int evaluations = 0;

    double value(HyperVector const& theta)
    {
        ++evaluations;
        try
        {
            GaussianApprox g = approx_at(p, theta, warm);
            return g.log_post_theta;
        }
        catch (NonConvergence const&)
        {
            return -INFINITY;
        }
        catch (OverflowError const&)
        {
            return -INFINITY;
        }
        catch (ConstraintError const&)
        {
            return -INFINITY;
        }
    }

    VectorXd gradient(HyperVector const& theta, double h)
    {
        VectorXd g(theta.size());
        for (Eigen::Index k = 0; k < theta.size(); ++k)
        {
            HyperVector tp = theta, tm = theta;
            tp[k] += h;
            tm[k] -= h;
            g[k] = (value(tp) - value(tm)) / (2.0 * h);
        }
        return g;
    }
};

Explored explore(Model const& model, LaplaceConfig const& cfg)
{
    Problem p(model, cfg);
    Explored out;
    auto& grid = out.grid;
    grid.internal_names = model.hyper_internal_names();
    grid.natural_names = model.hyper_natural_names();
    for (auto const& s : model.hyper_slots())
        grid.transforms.push_back(s.transform);
    auto m = static_cast<Eigen::Index>(model.hyper_size());

    HyperVector theta = initial_theta(model);
    GaussianApprox start_approx;
    try
    {
        start_approx = approx_at(p, theta, default_start(p));
    }
    catch (NonConvergence const& e)
    {
        throw FitFailure(FitFailure::Cause::NonConvergence, std::string("at the initial hyperparameters: ") + e.what());
    }
    catch (OverflowError const& e)
    {
        throw FitFailure(FitFailure::Cause::Overflow, e.what());
    }
    catch (ConstraintError const& e)
    {
        throw FitFailure(FitFailure::Cause::RankDeficient, e.what());
    }

    ModeSearch search{p, start_approx.mode};
    double fval = start_approx.log_post_theta;
    if (m > 0)
    {
        double h = 1e-4;
        VectorXd g = -search.gradient(theta, h);
        if (!g.allFinite())
            throw FitFailure(FitFailure::Cause::ModeSearchFailed, "gradient not finite at the initial point");
        MatrixXd hinv = MatrixXd::Identity(m, m);
        double phi = -fval;
        int iter = 0;
        bool done = false;
        for (; iter < cfg.mode_max_iter && !done; ++iter)
        {
            if (g.cwiseAbs().maxCoeff() < std::max(cfg.mode_grad_tol, 1e-4))
                break;
            VectorXd dir = -hinv * g;
            if (g.dot(dir) >= 0)
            {
                hinv.setIdentity();
                dir = -g;
            }
            double len = dir.cwiseAbs().maxCoeff();
            if (len > 2.0)
                dir *= 2.0 / len;
            double t = 1.0;
            bool moved = false;
            HyperVector trial;
            double phi_new = INFINITY;
            for (int bt = 0; bt < 40; ++bt, t *= 0.5)
            {
                trial = theta + t * dir;
                phi_new = -search.value(trial);
                if (std::isfinite(phi_new) && phi_new <= phi + 1e-4 * t * g.dot(dir))
                {
                    moved = true;
                    break;
                }
            }
            if (!moved)
                break;
            // Keep the inner warm start at the accepted point.
            try
            {
                search.warm = approx_at(p, trial, search.warm).mode;
            }
            catch (std::exception const&)
            {
            }
            VectorXd g_new = -search.gradient(trial, h);
            if (!g_new.allFinite())
                break;
            VectorXd s = trial - theta;
            VectorXd y = g_new - g;
            double sy = s.dot(y);
            if (sy > 1e-12)
            {
                double rho = 1.0 / sy;
                MatrixXd id = MatrixXd::Identity(m, m);
                hinv = (id - rho * s * y.transpose()) * hinv * (id - rho * y * s.transpose()) + rho * s * s.transpose();
            }
            double improvement = phi - phi_new;
            theta = trial;
            g = g_new;
            phi = phi_new;
            if (s.cwiseAbs().maxCoeff() < 1e-7 || improvement < 1e-12 * (1.0 + std::abs(phi)))
                done = true;
        }
        grid.mode_iterations = iter;
    }
    grid.mode = theta;

    GaussianApprox center;
    try
    {
        center = approx_at(p, theta, search.warm);
    }
    catch (std::exception const& e)
    {
        throw FitFailure(FitFailure::Cause::ModeSearchFailed, e.what());
    }
    out.global_mode = center.mode;
    double f0 = center.log_post_theta;

    if (m == 0)
    {
        grid.design = IntegrationDesign::Grid;
        grid.mode_hessian.resize(0, 0);
        grid.points.push_back({theta, VectorXd(), f0, 1.0});
        grid.evaluated_points = 1;
        out.approx.push_back(std::move(center));
        return out;
    }

    // Negative Hessian by central differences.
    double hs = cfg.hessian_step;
    MatrixXd hess(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
    {
        HyperVector tp = theta, tm = theta;
        tp[i] += hs;
        tm[i] -= hs;
        hess(i, i) = -(search.value(tp) - 2.0 * f0 + search.value(tm)) / (hs * hs);
        for (Eigen::Index j = 0; j < i; ++j)
        {
            HyperVector a = theta, b = theta, c = theta, d = theta;
            a[i] += hs, a[j] += hs;
            b[i] += hs, b[j] -= hs;
            c[i] -= hs, c[j] += hs;
            d[i] -= hs, d[j] -= hs;
            double v = -(search.value(a) - search.value(b) - search.value(c) + search.value(d)) / (4.0 * hs * hs);
            hess(i, j) = hess(j, i) = v;
        }
    }
    grid.mode_hessian = hess;
    if (!hess.allFinite())
        throw FitFailure(FitFailure::Cause::HessianNotPD, "Hessian at the mode is not finite");
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(hess);
    if (eig.eigenvalues().minCoeff() <= 0)
    {
        std::string ev;
        for (Eigen::Index i = 0; i < m; ++i)
            ev += (i ? ", " : "") + std::to_string(eig.eigenvalues()[i]);
        throw FitFailure(FitFailure::Cause::HessianNotPD, "eigenvalues [" + ev + "]");
    }

    auto design = resolve_design(cfg.design, static_cast<std::size_t>(m));
    grid.design = design;

    struct Candidate
    {
        VectorXd z;
        HyperVector theta;
        std::optional<GaussianApprox> approx;
        std::string error;
    };
    auto evaluate_all = [&](std::vector<Candidate>& cands) {
        parallel_for(cands.size(), cfg.workers, [&](std::size_t i) {
            try
            {
                cands[i].approx = approx_at(p, cands[i].theta, out.global_mode);
            }
            catch (std::exception const& e)
            {
                cands[i].error = e.what();
            }
        });
        grid.evaluated_points += cands.size();
    };

    std::vector<Candidate> kept;
    if (design == IntegrationDesign::Grid)
    {
        MatrixXd cov = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
        VectorXd sd = cov.diagonal().cwiseSqrt();
        grid.step = cfg.grid_step;
        auto to_theta = [&](std::vector<int> const& z) {
            HyperVector t = theta;
            for (Eigen::Index k = 0; k < m; ++k)
                t[k] += cfg.grid_step * sd[k] * z[static_cast<std::size_t>(k)];
            return t;
        };
        std::set<std::vector<int>> visited;
        std::vector<std::vector<int>> frontier{std::vector<int>(static_cast<std::size_t>(m), 0)};
        visited.insert(frontier.front());
        while (!frontier.empty())
        {
            if (grid.evaluated_points + frontier.size() > cfg.max_grid_points)
                throw FitFailure(FitFailure::Cause::ModeSearchFailed, "hyperparameter grid exceeded the point budget");
            std::vector<Candidate> cands;
            for (auto const& z : frontier)
            {
                VectorXd zz(m);
                for (Eigen::Index k = 0; k < m; ++k)
                    zz[k] = z[static_cast<std::size_t>(k)];
                cands.push_back({zz, to_theta(z), std::nullopt, {}});
            }
            evaluate_all(cands);
            std::set<std::vector<int>> next;
            for (std::size_t i = 0; i < cands.size(); ++i)
            {
                auto& c = cands[i];
                if (!c.approx)
                {
                    grid.failed_points.push_back(c.error);
                    continue;
                }
                if (f0 - c.approx->log_post_theta > cfg.log_deficit_cutoff)
                    continue;
                for (Eigen::Index k = 0; k < m; ++k)
                    for (int sgn : {-1, 1})
                    {
                        auto nb = frontier[i];
                        nb[static_cast<std::size_t>(k)] += sgn;
                        if (visited.insert(nb).second)
                            next.insert(nb);
                    }
                kept.push_back(std::move(c));
            }
            frontier.assign(next.begin(), next.end());
        }
        std::sort(kept.begin(), kept.end(), [](Candidate const& a, Candidate const& b) {
            return std::lexicographical_compare(a.z.begin(), a.z.end(), b.z.begin(), b.z.end());
        });
    }
    else
    {
        // Central composite design in eigen-standardised coordinates.
        double f0d = cfg.ccd_f0;
        double radius = f0d * std::sqrt(static_cast<double>(m));
        std::vector<VectorXd> zs{VectorXd::Zero(m)};
        for (Eigen::Index k = 0; k < m; ++k)
            for (double sgn : {-1.0, 1.0})
            {
                VectorXd z = VectorXd::Zero(m);
                z[k] = sgn * radius;
                zs.push_back(z);
            }
        for (std::size_t corner = 0; corner < (std::size_t{1} << m); ++corner)
        {
            VectorXd z(m);
            for (Eigen::Index k = 0; k < m; ++k)
                z[k] = ((corner >> k) & 1) ? f0d : -f0d;
            zs.push_back(z);
        }
        MatrixXd map = eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal();
        std::vector<Candidate> cands;
        for (auto const& z : zs)
            cands.push_back({z, theta + map * z, std::nullopt, {}});
        evaluate_all(cands);
        for (auto& c : cands)
        {
            if (!c.approx)
                grid.failed_points.push_back(c.error);
            else
                kept.push_back(std::move(c));
        }
        grid.step = radius;
    }
    if (kept.empty())
        throw FitFailure(FitFailure::Cause::NonConvergence, "no hyperparameter point could be evaluated");

    double fmax = -INFINITY;
    for (auto const& c : kept)
        fmax = std::max(fmax, c.approx->log_post_theta);
    double np = static_cast<double>(kept.size());
    double delta = 1.0;
    if (design == IntegrationDesign::CCD)
    {
        double f2 = cfg.ccd_f0 * cfg.ccd_f0;
        delta = std::exp(0.5 * static_cast<double>(m) * f2) / ((np - 1.0) * (f2 - 1.0));
    }
    double total = 0.0;
    for (auto const& c : kept)
    {
        double base = (design == IntegrationDesign::CCD && c.z.squaredNorm() > 0) ? delta : 1.0;
        double w = base * std::exp(c.approx->log_post_theta - fmax);
        grid.points.push_back({c.theta, c.z, c.approx->log_post_theta, w});
        total += w;
    }
    for (auto& pt : grid.points)
        pt.weight /= total;
    for (auto& c : kept)
        out.approx.push_back(std::move(*c.approx));
    return out;
}

std::vector<std::size_t> resolve_subset(Model const& model, LaplaceConfig const& cfg)
{
    std::vector<std::size_t> idx = cfg.latent_subset;
    if (idx.empty())
    {
        idx.resize(model.latent_size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            idx[i] = i;
    }
    for (auto i : idx)
        if (i >= model.latent_size())
            throw DimensionError("latent subset index out of range");
    return idx;
}

// One conditional density pi(x_i | theta_j, y) in standardised units
// t = (x - mean) / sd.
struct Component
{
    double mean = 0.0;
    double sd = 0.0;
    Strategy kind = Strategy::Gaussian;
    // skew-normal parameters for t
    double xi = 0.0, omega = 1.0, alpha = 0.0;
    // Laplace residual r(t) = log density + t^2/2
    std::optional<detail::EquispacedSpline> residual;
    double log_norm = 0.0;
    double moment_mean = 0.0;  // of x
    double moment_var = 0.0;

    double density(double x) const
    {
        if (!(sd > 0))
            return 0.0;
        double t = (x - mean) / sd;
        switch (kind)
        {
        case Strategy::Gaussian:
            return std::exp(-0.5 * t * t) / (std::sqrt(2.0 * std::numbers::pi) * sd);
        case Strategy::SimplifiedLaplace:
        {
            boost::math::skew_normal_distribution<double> sn(xi, omega, alpha);
            return boost::math::pdf(sn, t) / sd;
        }
        case Strategy::FullLaplace:
            return std::exp(-0.5 * t * t + (*residual)(t) - log_norm) / sd;
        }
        return 0.0;
    }
};

// Skew-normal with mean `mu`, unit variance and skewness `skew`.
void fit_skew_normal(double mu, double skew, Component& c)
{
    double g = std::clamp(skew, -0.99, 0.99);
    double ag = std::pow(std::abs(g), 2.0 / 3.0);
    double k = std::pow((4.0 - std::numbers::pi) / 2.0, 2.0 / 3.0);
    double delta = std::sqrt(std::numbers::pi / 2.0 * ag / (ag + k));
    if (g < 0)
        delta = -delta;
    double b = delta * std::sqrt(2.0 / std::numbers::pi);
    c.omega = 1.0 / std::sqrt(1.0 - b * b);
    c.xi = mu - c.omega * b;
    c.alpha = delta / std::sqrt(1.0 - delta * delta);
}

Component gaussian_component(GaussianApprox const& g, std::size_t i)
{
    Component c;
    auto ii = static_cast<Eigen::Index>(i);
    c.mean = g.mode[ii];
    c.sd = std::sqrt(std::max(0.0, g.covariance(ii, ii)));
    c.moment_mean = c.mean;
    c.moment_var = c.sd * c.sd;
    return c;
}

struct PointCache
{
    VectorXd d3;
    VectorXd var_eta;
    MatrixXd cov_eta_x;  // n x L
};

Component sla_component(GaussianApprox const& g, PointCache const& pc, std::size_t i)
{
    Component c = gaussian_component(g, i);
    c.kind = Strategy::SimplifiedLaplace;
    if (!(c.sd > 0))
        return c;
    auto ii = static_cast<Eigen::Index>(i);
    double g1 = 0.0, g3 = 0.0;
    for (Eigen::Index j = 0; j < pc.d3.size(); ++j)
    {
        double b = pc.cov_eta_x(j, ii) / c.sd;  // E[eta_j | t] slope
        double cond_var = std::max(0.0, pc.var_eta[j] - b * b);
        g1 += 0.5 * cond_var * pc.d3[j] * b;
        g3 += pc.d3[j] * b * b * b;
    }
    fit_skew_normal(g1, g3, c);
    c.moment_mean = c.mean + c.sd * g1;
    c.moment_var = c.sd * c.sd;
    return c;
}

Component full_laplace_component(Problem const& p, HyperVector const& theta, MatrixXd const& q,
                                 GaussianApprox const& g, std::size_t i, bool& ok)
{
    Component c = gaussian_component(g, i);
    c.kind = Strategy::FullLaplace;
    if (!(c.sd > 0))
    {
        c.kind = Strategy::Gaussian;
        return c;
    }
    auto const& cfg = p.cfg;
    auto ii = static_cast<Eigen::Index>(i);
    auto k = p.c.rows();
    auto big_l = q.rows();
    MatrixXd rows(k + 1, big_l);
    rows.topRows(k) = p.c;
    rows.row(k).setZero();
    rows(k, ii) = 1.0;

    int npts = std::max(5, cfg.full_laplace_points | 1);
    double span = cfg.full_laplace_span;
    double step = 2.0 * span / (npts - 1);
    std::vector<double> ell(static_cast<std::size_t>(npts));
    VectorXd col = g.covariance.col(ii) / g.covariance(ii, ii);
    double ref = 0.0;
    for (int kk = 0; kk < npts; ++kk)
    {
        double t = -span + step * kk;
        if (kk == npts / 2)
            t = 0.0;
        double v = c.mean + t * c.sd;
        VectorXd rhs = VectorXd::Zero(k + 1);
        rhs[k] = v;
        Constraints cons(rows, rhs);
        VectorXd x0 = g.mode + col * (t * c.sd);
        try
        {
            NewtonOut nw = newton(p, theta, q, cons, x0);
            if (!nw.converged)
                throw NonConvergence(nw.iterations, nw.gradient_norm);
            Restricted r = restricted_curvature(p, q, nw.eval.w, cons, false);
            ell[static_cast<std::size_t>(kk)] = nw.eval.f - 0.5 * r.log_det + 0.5 * t * t;
        }
        catch (std::exception const&)
        {
            ok = false;
            c.kind = Strategy::Gaussian;
            return c;
        }
        if (kk == npts / 2)
            ref = ell[static_cast<std::size_t>(kk)];
    }
    for (auto& e : ell)
        e -= ref;
    c.residual.emplace(ell, -span, step);

    // Moments on a fine standardised grid.
    constexpr int fine = 2001;
    constexpr double lim = 10.0;
    double h = 2.0 * lim / (fine - 1);
    std::vector<double> ts(fine), dens(fine);
    for (int j = 0; j < fine; ++j)
    {
        ts[static_cast<std::size_t>(j)] = -lim + h * j;
        double t = ts[static_cast<std::size_t>(j)];
        dens[static_cast<std::size_t>(j)] = std::exp(-0.5 * t * t + (*c.residual)(t));
    }
    double z = trapezoid(ts, dens);
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < fine; ++j)
    {
        double wgt = (j == 0 || j == fine - 1) ? 0.5 * h : h;
        double t = ts[static_cast<std::size_t>(j)];
        m1 += wgt * t * dens[static_cast<std::size_t>(j)];
        m2 += wgt * t * t * dens[static_cast<std::size_t>(j)];
    }
    m1 /= z;
    m2 /= z;
    c.log_norm = std::log(z);
    c.moment_mean = c.mean + c.sd * m1;
    c.moment_var = c.sd * c.sd * std::max(0.0, m2 - m1 * m1);
    return c;
}

PosteriorMarginal mix(std::string name, std::vector<Component const*> const& comps, std::vector<double> const& w,
                      LaplaceConfig const& cfg)
{
    std::vector<std::size_t> order(comps.size());
    for (std::size_t j = 0; j < order.size(); ++j)
        order[j] = j;
    if (cfg.debug_shuffle_reduction)
    {
        std::random_device rd;
        std::mt19937 gen(rd());
        std::shuffle(order.begin(), order.end(), gen);
    }
    double mean = 0.0, second = 0.0;
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t j : order)
    {
        auto const& c = *comps[j];
        mean += w[j] * c.moment_mean;
        second += w[j] * (c.moment_var + c.moment_mean * c.moment_mean);
        lo = std::min(lo, c.mean - 8.0 * c.sd);
        hi = std::max(hi, c.mean + 8.0 * c.sd);
    }
    double var = std::max(0.0, second - mean * mean);
    if (!(hi > lo))
    {
        auto m = point_mass_marginal(std::move(name), mean, 1e-9 * (1.0 + std::abs(mean)));
        return m;
    }
    std::size_t npts = std::max<std::size_t>(cfg.output_points, 11);
    std::vector<double> xs(npts), dens(npts, 0.0);
    for (std::size_t k = 0; k < npts; ++k)
        xs[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(npts - 1);
    for (std::size_t j : order)
        for (std::size_t k = 0; k < npts; ++k)
            dens[k] += w[j] * comps[j]->density(xs[k]);
    auto m = marginal_from_grid(std::move(name), std::move(xs), std::move(dens));
    m.mean = mean;
    m.sd = std::sqrt(var);
    return m;
}

std::vector<PosteriorMarginal> marginals_impl(Problem const& p, ThetaGrid const& grid,
                                              std::vector<GaussianApprox> const& approx, Strategy strategy)
{
    auto const& model = p.model;
    auto const& cfg = p.cfg;
    auto subset = resolve_subset(model, cfg);
    std::size_t npts = grid.points.size();
    std::vector<std::vector<Component>> comps(npts);
    std::vector<char> point_ok(npts, 1);
    parallel_for(npts, cfg.workers, [&](std::size_t j) {
        auto const& g = approx[j];
        auto const& theta = grid.points[j].theta;
        auto& out = comps[j];
        out.reserve(subset.size());
        if (strategy == Strategy::Gaussian)
        {
            for (auto i : subset)
                out.push_back(gaussian_component(g, i));
        }
        else if (strategy == Strategy::SimplifiedLaplace)
        {
            PointCache pc;
            Eval e = evaluate(p, theta, g.mode);
            pc.d3 = e.d3;
            pc.cov_eta_x = p.a * g.covariance;
            pc.var_eta = (pc.cov_eta_x.cwiseProduct(p.a)).rowwise().sum();
            for (auto i : subset)
                out.push_back(sla_component(g, pc, i));
        }
        else
        {
            MatrixXd q = model.latent_prior_precision(theta).to_dense();
            bool ok = true;
            for (auto i : subset)
                out.push_back(full_laplace_component(p, theta, q, g, i, ok));
            point_ok[j] = ok ? 1 : 0;
        }
    });
    bool all_ok = std::all_of(point_ok.begin(), point_ok.end(), [](char c) { return c != 0; });
    std::vector<double> w(npts);
    for (std::size_t j = 0; j < npts; ++j)
        w[j] = grid.points[j].weight;
    std::vector<PosteriorMarginal> result(subset.size());
    parallel_for(subset.size(), cfg.workers, [&](std::size_t s) {
        std::vector<Component const*> cs(npts);
        for (std::size_t j = 0; j < npts; ++j)
            cs[j] = &comps[j][s];
        result[s] = mix(model.latent_names()[subset[s]], cs, w, cfg);
        result[s].reliable = all_ok && grid.failed_points.empty();
    });
    return result;
}

PosteriorMarginal hyper_from_atoms(std::string const& name, std::vector<double> const& pos,
                                   std::vector<double> const& mass, double mean, double sd)
{
    std::size_t q = pos.size();
    if (q >= 3)
    {
        double h = pos[1] - pos[0];
        std::vector<double> logd(q);
        for (std::size_t j = 0; j < q; ++j)
            logd[j] = std::log(std::max(mass[j], 1e-300) / h);
        detail::EquispacedSpline sp(logd, pos.front(), h);
        sp.cap_tail_slopes(1.0 / h, -1.0 / h);
        constexpr std::size_t fine = 8001;
        double lo = pos.front() - 2.0 * h, hi = pos.back() + 2.0 * h;
        std::vector<double> xs(fine), dens(fine);
        for (std::size_t k = 0; k < fine; ++k)
        {
            xs[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(fine - 1);
            dens[k] = std::exp(sp(xs[k]));
        }
        auto m = marginal_from_grid(name, std::move(xs), std::move(dens));
        m.mean = mean;
        m.sd = sd;
        return m;
    }
    if (q == 1)
    {
        auto m = point_mass_marginal(name, pos[0], 1e-3 * std::max(1.0, std::abs(pos[0])));
        return m;
    }
    double h = pos[1] - pos[0];
    std::vector<double> xs{pos[0] - h / 2, pos[0], 0.5 * (pos[0] + pos[1]), pos[1], pos[1] + h / 2};
    std::vector<double> dens{0.0, 2.0 * mass[0] / h, 0.0, 2.0 * mass[1] / h, 0.0};
    auto m = marginal_from_grid(name, std::move(xs), std::move(dens));
    m.mean = mean;
    m.sd = sd;
    return m;
}

PosteriorMarginal to_natural_scale(PosteriorMarginal const& in, std::string name, models::HyperTransform tr,
                                   double mean, double sd)
{
    PosteriorMarginal m;
    m.name = std::move(name);
    m.x.reserve(in.x.size());
    m.density.reserve(in.x.size());
    for (std::size_t k = 0; k < in.x.size(); ++k)
    {
        double v = models::to_natural(tr, in.x[k]);
        double jac = models::natural_jacobian(tr, in.x[k]);
        if (!std::isfinite(v) || !(jac > 0))
            continue;
        if (!m.x.empty() && !(v > m.x.back()))
            continue;
        m.x.push_back(v);
        m.density.push_back(in.density[k] / jac);
    }
    m.mean = mean;
    m.sd = sd;
    for (double pr : summary_probs)
        m.quantiles[pr] = models::to_natural(tr, in.quantile(pr));
    return m;
}

}  // namespace

std::string to_string(Strategy s)
{
    switch (s)
    {
    case Strategy::Gaussian: return "gaussian";
    case Strategy::SimplifiedLaplace: return "simplified_laplace";
    case Strategy::FullLaplace: return "full_laplace";
    }
    return "unknown";
}

Strategy strategy_from_string(std::string const& s)
{
    if (s == "gaussian")
        return Strategy::Gaussian;
    if (s == "simplified_laplace")
        return Strategy::SimplifiedLaplace;
    if (s == "full_laplace" || s == "laplace")
        return Strategy::FullLaplace;
    throw std::invalid_argument("unknown strategy: " + s);
}

std::string to_string(IntegrationDesign d)
{
    switch (d)
    {
    case IntegrationDesign::Auto: return "auto";
    case IntegrationDesign::Grid: return "grid";
    case IntegrationDesign::CCD: return "ccd";
    }
    return "unknown";
}

IntegrationDesign design_from_string(std::string const& s)
{
    if (s == "auto")
        return IntegrationDesign::Auto;
    if (s == "grid")
        return IntegrationDesign::Grid;
    if (s == "ccd")
        return IntegrationDesign::CCD;
    throw std::invalid_argument("unknown integration design: " + s);
}

std::string FitFailure::to_string(Cause c)
{
    switch (c)
    {
    case Cause::RankDeficient: return "RankDeficient";
    case Cause::NonConvergence: return "NonConvergence";
    case Cause::ModeSearchFailed: return "ModeSearchFailed";
    case Cause::HessianNotPD: return "HessianNotPD";
    case Cause::Overflow: return "Overflow";
    case Cause::InvalidSpec: return "InvalidSpec";
    }
    return "Unknown";
}

NonConvergence::NonConvergence(int iterations, double gradient_norm)
    : std::runtime_error("Newton iteration did not converge after " + std::to_string(iterations)
                         + " iterations (scaled gradient " + std::to_string(gradient_norm) + ")"),
      iterations_(iterations), gradient_norm_(gradient_norm)
{
}

nlohmann::json to_json(LaplaceConfig const& c)
{
    return {{"newton_tol", c.newton_tol},
            {"newton_max_iter", c.newton_max_iter},
            {"max_halvings", c.max_halvings},
            {"design", to_string(c.design)},
            {"grid_step", c.grid_step},
            {"log_deficit_cutoff", c.log_deficit_cutoff},
            {"max_grid_points", c.max_grid_points},
            {"ccd_f0", c.ccd_f0},
            {"hessian_step", c.hessian_step},
            {"mode_max_iter", c.mode_max_iter},
            {"mode_grad_tol", c.mode_grad_tol},
            {"full_laplace_points", c.full_laplace_points},
            {"full_laplace_span", c.full_laplace_span},
            {"output_points", c.output_points},
            {"latent_subset", c.latent_subset},
            {"debug_shuffle_reduction", c.debug_shuffle_reduction}};
}

LaplaceConfig laplace_config_from_json(nlohmann::json const& j)
{
    LaplaceConfig c;
    c.newton_tol = j.value("newton_tol", c.newton_tol);
    c.newton_max_iter = j.value("newton_max_iter", c.newton_max_iter);
    c.max_halvings = j.value("max_halvings", c.max_halvings);
    c.design = design_from_string(j.value("design", to_string(c.design)));
    c.grid_step = j.value("grid_step", c.grid_step);
    c.log_deficit_cutoff = j.value("log_deficit_cutoff", c.log_deficit_cutoff);
    c.max_grid_points = j.value("max_grid_points", c.max_grid_points);
    c.ccd_f0 = j.value("ccd_f0", c.ccd_f0);
    c.hessian_step = j.value("hessian_step", c.hessian_step);
    c.mode_max_iter = j.value("mode_max_iter", c.mode_max_iter);
    c.mode_grad_tol = j.value("mode_grad_tol", c.mode_grad_tol);
    c.full_laplace_points = j.value("full_laplace_points", c.full_laplace_points);
    c.full_laplace_span = j.value("full_laplace_span", c.full_laplace_span);
    c.output_points = j.value("output_points", c.output_points);
    c.latent_subset = j.value("latent_subset", c.latent_subset);
    c.debug_shuffle_reduction = j.value("debug_shuffle_reduction", c.debug_shuffle_reduction);
    if (!(c.newton_tol > 0) || c.newton_max_iter < 1 || !(c.grid_step > 0) || !(c.log_deficit_cutoff > 0)
        || !(c.ccd_f0 > 1.0) || c.full_laplace_points < 3 || !(c.full_laplace_span > 0))
        throw std::invalid_argument("invalid Laplace configuration");
    return c;
}

GaussianApprox gaussian_approx_latent(models::Model const& model, HyperVector const& theta,
                                      LaplaceConfig const& config, std::optional<VectorXd> const& start)
{
    Problem p(model, config);
    return approx_at(p, theta, start ? *start : default_start(p));
}

GaussianApprox gaussian_approx_latent(models::ModelSpec const& spec, HyperVector const& theta,
                                      models::Dataset const& data, LaplaceConfig const& config)
{
    Model model(spec, data);
    return gaussian_approx_latent(model, theta, config);
}

ThetaGrid explore_theta(models::Model const& model, LaplaceConfig const& config)
{
    return explore(model, config).grid;
}

ThetaGrid explore_theta(models::ModelSpec const& spec, models::Dataset const& data, LaplaceConfig const& config)
{
    Model model(spec, data);
    return explore_theta(model, config);
}

std::vector<HyperMarginal> hyper_marginals(ThetaGrid const& grid)
{
    std::vector<HyperMarginal> out;
    if (grid.points.empty())
        return out;
    auto m = grid.points.front().theta.size();
    for (Eigen::Index k = 0; k < m; ++k)
    {
        auto tr = grid.transforms.at(static_cast<std::size_t>(k));
        double mean = 0.0, second = 0.0, nmean = 0.0, nsecond = 0.0;
        for (auto const& pt : grid.points)
        {
            double t = pt.theta[k];
            double v = models::to_natural(tr, t);
            mean += pt.weight * t;
            second += pt.weight * t * t;
            nmean += pt.weight * v;
            nsecond += pt.weight * v * v;
        }
        double sd = std::sqrt(std::max(0.0, second - mean * mean));
        double nsd = std::sqrt(std::max(0.0, nsecond - nmean * nmean));

        std::string iname = grid.internal_names.at(static_cast<std::size_t>(k));
        std::string nname = grid.natural_names.at(static_cast<std::size_t>(k));
        PosteriorMarginal internal;
        if (grid.design == IntegrationDesign::Grid)
        {
            std::map<long, std::pair<double, double>> atoms;  // z -> (position, mass)
            for (auto const& pt : grid.points)
            {
                long z = pt.z.size() ? std::lround(pt.z[k]) : 0;
                auto& a = atoms[z];
                a.first = pt.theta[k];
                a.second += pt.weight;
            }
            // Fill interior gaps so the atoms are equispaced.
            std::vector<double> pos, mass;
            long zlo = atoms.begin()->first, zhi = atoms.rbegin()->first;
            double h = 0.0;
            if (atoms.size() >= 2)
            {
                auto it = atoms.begin();
                auto a0 = *it++;
                h = (it->second.first - a0.second.first) / static_cast<double>(it->first - a0.first);
            }
            for (long z = zlo; z <= zhi; ++z)
            {
                auto it = atoms.find(z);
                pos.push_back(atoms.begin()->second.first + h * static_cast<double>(z - zlo));
                mass.push_back(it == atoms.end() ? 0.0 : it->second.second);
            }
            internal = hyper_from_atoms(iname, pos, mass, mean, sd);
        }
        else
        {
            constexpr std::size_t fine = 8001;
            std::vector<double> xs(fine), dens(fine);
            double s = sd > 0 ? sd : 1e-6;
            for (std::size_t j = 0; j < fine; ++j)
            {
                xs[j] = mean - 7.0 * s + 14.0 * s * static_cast<double>(j) / static_cast<double>(fine - 1);
                double z = (xs[j] - mean) / s;
                dens[j] = std::exp(-0.5 * z * z);
            }
            internal = marginal_from_grid(iname, std::move(xs), std::move(dens));
            internal.mean = mean;
            internal.sd = sd;
        }
        internal.reliable = grid.failed_points.empty();
        auto natural = to_natural_scale(internal, nname, tr, nmean, nsd);
        natural.reliable = internal.reliable;
        out.push_back({std::move(internal), std::move(natural)});
    }
    return out;
}

std::vector<PosteriorMarginal> latent_marginals(models::Model const& model, ThetaGrid const& grid,
                                                std::vector<PointState> const& states, Strategy strategy,
                                                LaplaceConfig const& config)
{
    if (states.size() != grid.points.size())
        throw DimensionError("one point state is needed per grid point");
    Problem p(model, config);
    std::vector<GaussianApprox> approx;
    approx.reserve(states.size());
    for (auto const& s : states)
        approx.push_back(s.approx);
    return marginals_impl(p, grid, approx, strategy);
}

std::vector<PosteriorMarginal> latent_marginals(models::ModelSpec const& spec, models::Dataset const& data,
                                                Strategy strategy, LaplaceConfig const& config)
{
    Model model(spec, data);
    Explored ex = explore(model, config);
    Problem p(model, config);
    return marginals_impl(p, ex.grid, ex.approx, strategy);
}

PosteriorMarginal const& FitResult::latent_marginal(std::string const& name) const
{
    for (auto const& m : latent)
        if (m.name == name)
            return m;
    throw std::out_of_range("no latent marginal named " + name);
}

HyperMarginal const& FitResult::hyper_marginal(std::string const& natural_name) const
{
    for (auto const& h : hyper)
        if (h.natural.name == natural_name || h.internal.name == natural_name)
            return h;
    throw std::out_of_range("no hyperparameter marginal named " + natural_name);
}

FitResult fit(models::ModelSpec const& spec, models::Dataset const& data, Strategy strategy,
              LaplaceConfig const& config)
{
    std::optional<Model> model_holder;
    try
    {
        model_holder.emplace(spec, data);
    }
    catch (std::exception const& e)
    {
        throw FitFailure(FitFailure::Cause::InvalidSpec, e.what());
    }
    Model const& model = *model_holder;
    if (model.has_centering_constraint())
        throw FitFailure(FitFailure::Cause::InvalidSpec,
                         "centering on the fly is an MCMC-only constraint; use kriging constraints");

    Problem p(model, config);
    FitResult r;
    r.dataset_id = data.id;
    r.strategy = strategy;

    // Propriety gate at theta = 0 with the curvature at the prior mean.
    HyperVector theta0 = HyperVector::Zero(static_cast<Eigen::Index>(model.hyper_size()));
    try
    {
        Eval e0 = evaluate(p, theta0, p.prior_mean);
        MatrixXd h0 = model.latent_prior_precision(theta0).to_dense();
        h0.noalias() += p.a.transpose() * e0.w.cwiseMax(0.0).asDiagonal() * p.a;
        auto prop = gmrf::propriety_check(h0, p.c);
        r.diagnostics.propriety = gmrf::to_string(prop);
        if (!prop.proper())
            throw FitFailure(FitFailure::Cause::RankDeficient,
                             "joint precision is " + r.diagnostics.propriety + " on the constraint set");
    }
    catch (OverflowError const& e)
    {
        throw FitFailure(FitFailure::Cause::Overflow, e.what());
    }

    Explored ex = explore(model, config);
    r.grid = std::move(ex.grid);
    r.hyper = hyper_marginals(r.grid);
    try
    {
        r.latent = marginals_impl(p, r.grid, ex.approx, strategy);
    }
    catch (OverflowError const& e)
    {
        throw FitFailure(FitFailure::Cause::Overflow, e.what());
    }
    r.latent_indices = resolve_subset(model, config);
    for (auto i : r.latent_indices)
        r.latent_names.push_back(model.latent_names()[i]);

    auto npts = static_cast<Eigen::Index>(r.grid.points.size());
    r.pointwise.resize(npts, static_cast<Eigen::Index>(model.n_obs()));
    r.weights.resize(npts);
    for (Eigen::Index j = 0; j < npts; ++j)
    {
        auto const& pt = r.grid.points[static_cast<std::size_t>(j)];
        r.pointwise.row(j) = model.pointwise_loglik(ex.approx[static_cast<std::size_t>(j)].mode, pt.theta).transpose();
        r.weights[j] = pt.weight;
        r.diagnostics.newton_iterations.push_back(ex.approx[static_cast<std::size_t>(j)].newton_iters);
    }
    r.diagnostics.grid_size = r.grid.points.size();
    r.diagnostics.evaluated_points = r.grid.evaluated_points;
    r.diagnostics.mode_iterations = r.grid.mode_iterations;
    r.diagnostics.failed_points = r.grid.failed_points;
    if (r.grid.mode_hessian.size() > 0)
    {
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(r.grid.mode_hessian);
        for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
            r.diagnostics.hessian_eigenvalues.push_back(eig.eigenvalues()[i]);
    }
    r.diagnostics.reliable = std::all_of(r.latent.begin(), r.latent.end(), [](auto const& m) { return m.reliable; })
                          && r.grid.failed_points.empty();
    return r;
}

nlohmann::json to_json(FitResult const& r, models::ModelSpec const& spec, LaplaceConfig const& config,
                       bool include_grids)
{
    nlohmann::json latent = nlohmann::json::array();
    for (auto const& m : r.latent)
        latent.push_back(to_json(m, include_grids));
    nlohmann::json hyper = nlohmann::json::array();
    for (auto const& h : r.hyper)
        hyper.push_back({{"internal", to_json(h.internal, include_grids)}, {"natural", to_json(h.natural, include_grids)}});
    nlohmann::json points = nlohmann::json::array();
    for (auto const& pt : r.grid.points)
        points.push_back({{"theta", std::vector<double>(pt.theta.begin(), pt.theta.end())},
                          {"log_post", pt.log_post},
                          {"weight", pt.weight}});
    auto const& d = r.diagnostics;
    return {{"version", engine_version},
            {"dataset", r.dataset_id},
            {"strategy", to_string(r.strategy)},
            {"config", to_json(config)},
            {"model", models::to_json(spec)},
            {"latent", latent},
            {"hyper", hyper},
            {"grid",
             {{"design", to_string(r.grid.design)},
              {"step", r.grid.step},
              {"mode", std::vector<double>(r.grid.mode.begin(), r.grid.mode.end())},
              {"points", points}}},
            {"diagnostics",
             {{"newton_iterations", d.newton_iterations},
              {"grid_size", d.grid_size},
              {"evaluated_points", d.evaluated_points},
              {"mode_iterations", d.mode_iterations},
              {"propriety", d.propriety},
              {"hessian_eigenvalues", d.hessian_eigenvalues},
              {"failed_points", d.failed_points},
              {"reliable", d.reliable}}}};
}

}  // namespace lgm::laplace
