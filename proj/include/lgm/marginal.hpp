#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace lgm {

// Gridded density of one scalar parameter with summaries.
struct PosteriorMarginal
{
    std::string name;
    std::vector<double> x;
    std::vector<double> density;
    double mean = 0.0;
    double sd = 0.0;
    std::map<double, double> quantiles;  // keys 0.025, 0.5, 0.975
    bool reliable = true;

    // Linear interpolation of the trapezoid CDF.
    double quantile(double p) const;
    double cdf(double value) const;
};

inline constexpr double summary_probs[3] = {0.025, 0.5, 0.975};

double trapezoid(std::vector<double> const& x, std::vector<double> const& y);

// Normalises `density` on `x` by the trapezoid rule and fills mean, sd and
// quantiles from the grid.
PosteriorMarginal marginal_from_grid(std::string name, std::vector<double> x, std::vector<double> density);

// Point mass rendered as a narrow triangle of half-width `half_width`.
PosteriorMarginal point_mass_marginal(std::string name, double value, double half_width);

nlohmann::json to_json(PosteriorMarginal const& m, bool include_grid);

}  // namespace lgm
