#include "lgm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lgm/mcmc.hpp"

namespace lgm::metrics {

std::string to_string(PEClass c)
{
    switch (c)
    {
    case PEClass::Acceptable: return "Acceptable";
    case PEClass::Borderline: return "Borderline";
    case PEClass::Problematic: return "Problematic";
    }
    return "Unknown";
}

PEClass classify_pe(double value)
{
    double a = std::abs(value);
    if (a <= 20.0)
        return PEClass::Acceptable;
    if (a <= 30.0)
        return PEClass::Borderline;
    return PEClass::Problematic;
}

PEResult percent_error(double mean_approx, double mean_reference, double sd_reference)
{
    if (!(sd_reference > 0.0))
        throw std::invalid_argument("percent_error: reference sd must be positive");
    PEResult r;
    r.value = 100.0 * (mean_approx - mean_reference) / sd_reference;
    r.classification = classify_pe(r.value);
    return r;
}

double percent_change(double mean_method, double generating_value)
{
    if (generating_value == 0.0)
        throw std::invalid_argument("percent_change: generating value must be nonzero");
    return 100.0 * (mean_method - generating_value) / generating_value;
}

WaicResult waic(Eigen::MatrixXd const& ll, std::optional<Eigen::VectorXd> const& weights)
{
    auto s = ll.rows();
    if (s < 2)
        throw std::invalid_argument("waic needs at least two draws or grid points");
    Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(s);
    if (w.size() != s)
        throw std::invalid_argument("waic: weight count does not match rows");
    if ((w.array() < 0).any() || !(w.sum() > 0))
        throw std::invalid_argument("waic: weights must be nonnegative with a positive sum");
    w /= w.sum();

    WaicResult r;
    r.lppd_pointwise.resize(ll.cols());
    r.p_waic_pointwise.resize(ll.cols());
    for (Eigen::Index i = 0; i < ll.cols(); ++i)
    {
        auto col = ll.col(i);
        double top = -INFINITY;
        for (Eigen::Index k = 0; k < s; ++k)
            if (w[k] > 0)
                top = std::max(top, col[k]);
        // Moments about the column maximum.
        double acc = 0.0, shift = 0.0;
        for (Eigen::Index k = 0; k < s; ++k)
        {
            acc += w[k] * std::exp(col[k] - top);
            shift += w[k] * (col[k] - top);
        }
        double mean = top + shift;
        double var = 0.0;
        for (Eigen::Index k = 0; k < s; ++k)
            var += w[k] * (col[k] - mean) * (col[k] - mean);
        r.lppd_pointwise[i] = top + std::log(acc);
        r.p_waic_pointwise[i] = var;
    }
    r.lppd = r.lppd_pointwise.sum();
    r.p_waic = r.p_waic_pointwise.sum();
    r.waic = -2.0 * (r.lppd - r.p_waic);
    return r;
}

Selection select_model(double waic_a, double waic_b, std::string const& label_a, std::string const& label_b)
{
    if (!std::isfinite(waic_a) || !std::isfinite(waic_b))
        throw std::invalid_argument("select_model: non-finite WAIC");
    Selection s{label_a, label_b, waic_a, waic_b, {}, false};
    if (waic_a < waic_b)
        s.selected = label_a;
    else if (waic_b < waic_a)
        s.selected = label_b;
    else
    {
        s.tie = true;
        s.selected = std::min(label_a, label_b);
    }
    return s;
}

Selection select_model(WaicResult const& a, WaicResult const& b, std::string const& label_a, std::string const& label_b)
{
    return select_model(a.waic, b.waic, label_a, label_b);
}

namespace {

double spread(double q1, double q3)
{
    if (!(q3 > q1))
        throw std::invalid_argument("rate_ratio: q3 must exceed q1");
    return q3 - q1;
}

void flag(RateRatio& r)
{
    r.significant = !(r.lo <= 1.0 && 1.0 <= r.hi);
}

}  // namespace

RateRatio rate_ratio(Eigen::VectorXd const& coef_draws, double q1, double q3, std::string const& name)
{
    double d = spread(q1, q3);
    if (coef_draws.size() < 1)
        throw std::invalid_argument("rate_ratio: no draws");
    std::vector<double> g(coef_draws.size());
    for (Eigen::Index k = 0; k < coef_draws.size(); ++k)
        g[static_cast<std::size_t>(k)] = std::exp(coef_draws[k] * d);
    RateRatio r;
    r.name = name;
    r.mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
    std::sort(g.begin(), g.end());
    r.ratio = mcmc::quantile_type7(g, 0.5);
    r.lo = mcmc::quantile_type7(g, 0.025);
    r.hi = mcmc::quantile_type7(g, 0.975);
    flag(r);
    return r;
}

// exp(beta d) is increasing, so its quantiles are the images of the
// coefficient quantiles.
RateRatio rate_ratio(PosteriorMarginal const& coef, double q1, double q3, std::string const& name)
{
    double d = spread(q1, q3);
    RateRatio r;
    r.name = name;
    r.ratio = std::exp(d * coef.quantile(0.5));
    r.lo = std::exp(d * coef.quantile(0.025));
    r.hi = std::exp(d * coef.quantile(0.975));
    std::vector<double> gp(coef.x.size());
    for (std::size_t k = 0; k < coef.x.size(); ++k)
        gp[k] = std::exp(d * coef.x[k]) * coef.density[k];
    double mass = trapezoid(coef.x, coef.density);
    r.mean = mass > 0 ? trapezoid(coef.x, gp) / mass : r.ratio;
    flag(r);
    return r;
}

nlohmann::json to_json(PEResult const& r)
{
    return {{"value", r.value}, {"classification", to_string(r.classification)}};
}

nlohmann::json to_json(WaicResult const& r, bool include_pointwise)
{
    nlohmann::json j{{"waic", r.waic}, {"lppd", r.lppd}, {"p_waic", r.p_waic}};
    if (include_pointwise)
    {
        j["lppd_pointwise"] = std::vector<double>(r.lppd_pointwise.begin(), r.lppd_pointwise.end());
        j["p_waic_pointwise"] = std::vector<double>(r.p_waic_pointwise.begin(), r.p_waic_pointwise.end());
    }
    return j;
}

nlohmann::json to_json(Selection const& s)
{
    return {{"label_a", s.label_a}, {"label_b", s.label_b}, {"waic_a", s.waic_a},
            {"waic_b", s.waic_b},   {"selected", s.selected}, {"tie", s.tie}};
}

nlohmann::json to_json(RateRatio const& r)
{
    return {{"name", r.name}, {"ratio", r.ratio}, {"mean", r.mean},
            {"lo", r.lo},     {"hi", r.hi},       {"significant", r.significant}};
}

}  // namespace lgm::metrics
