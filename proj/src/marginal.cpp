#include "lgm/marginal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lgm {

double trapezoid(std::vector<double> const& x, std::vector<double> const& y)
{
    double total = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i)
        total += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    return total;
}

double PosteriorMarginal::cdf(double value) const
{
    if (x.empty() || value <= x.front())
        return 0.0;
    double c = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i)
    {
        double h = x[i] - x[i - 1];
        if (value < x[i])
        {
            double s = value - x[i - 1];
            double k = h > 0 ? (density[i] - density[i - 1]) / h : 0.0;
            return std::min(1.0, c + density[i - 1] * s + 0.5 * k * s * s);
        }
        c += 0.5 * (density[i] + density[i - 1]) * h;
    }
    return std::min(1.0, c);
}

double PosteriorMarginal::quantile(double p) const
{
    if (x.empty())
        throw std::logic_error("quantile of an empty marginal");
    if (x.size() == 1)
        return x.front();
    double c = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i)
    {
        double h = x[i] - x[i - 1];
        double mass = 0.5 * (density[i] + density[i - 1]) * h;
        if (mass > 0 && c + mass >= p)
        {
            // F(s) = c + d0 s + k s^2 / 2 on the segment.
            double d0 = density[i - 1];
            double k = (density[i] - density[i - 1]) / h;
            double r = std::max(0.0, p - c);
            double disc = std::max(0.0, d0 * d0 + 2.0 * k * r);
            double denom = d0 + std::sqrt(disc);
            double s = denom > 0 ? 2.0 * r / denom : 0.0;
            return x[i - 1] + std::clamp(s, 0.0, h);
        }
        c += mass;
    }
    return x.back();
}

PosteriorMarginal marginal_from_grid(std::string name, std::vector<double> x, std::vector<double> density)
{
    if (x.size() != density.size() || x.size() < 2)
        throw std::invalid_argument("marginal grid needs at least two matching points");
    for (std::size_t i = 1; i < x.size(); ++i)
        if (!(x[i] > x[i - 1]))
            throw std::invalid_argument("marginal grid must be strictly increasing");
    for (auto& d : density)
        if (!(d >= 0.0) || !std::isfinite(d))
            d = 0.0;
    double z = trapezoid(x, density);
    if (!(z > 0.0))
        throw std::runtime_error("marginal " + name + " has zero mass on its grid");
    for (auto& d : density)
        d /= z;

    PosteriorMarginal m;
    m.name = std::move(name);
    m.x = std::move(x);
    m.density = std::move(density);
    // Exact moments of the piecewise-linear density.
    double mean = 0.0;
    double second = 0.0;
    for (std::size_t i = 1; i < m.x.size(); ++i)
    {
        double a = m.x[i - 1], b = m.x[i], fa = m.density[i - 1], fb = m.density[i];
        double h = b - a;
        mean += h / 6.0 * (fa * (2 * a + b) + fb * (a + 2 * b));
        second += h / 12.0 * (fa * (3 * a * a + 2 * a * b + b * b) + fb * (a * a + 2 * a * b + 3 * b * b));
    }
    m.mean = mean;
    m.sd = std::sqrt(std::max(0.0, second - mean * mean));
    for (double p : summary_probs)
        m.quantiles[p] = m.quantile(p);
    return m;
}

PosteriorMarginal point_mass_marginal(std::string name, double value, double half_width)
{
    auto m = marginal_from_grid(std::move(name), {value - half_width, value, value + half_width}, {0.0, 1.0, 0.0});
    m.mean = value;
    for (double p : summary_probs)
        if (p == 0.5)
            m.quantiles[p] = value;
    return m;
}

nlohmann::json to_json(PosteriorMarginal const& m, bool include_grid)
{
    nlohmann::json q = nlohmann::json::object();
    for (auto const& [p, v] : m.quantiles)
    {
        char key[32];
        std::snprintf(key, sizeof key, "%g", p);
        q[key] = v;
    }
    nlohmann::json j{{"name", m.name}, {"mean", m.mean}, {"sd", m.sd}, {"quantiles", q}, {"reliable", m.reliable}};
    if (include_grid)
    {
        j["x"] = m.x;
        j["density"] = m.density;
    }
    return j;
}

}  // namespace lgm
