#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "lgm/marginal.hpp"

namespace lgm::metrics {

enum class PEClass
{
    Acceptable,   // |PE| <= 20
    Borderline,   // 20 < |PE| <= 30
    Problematic,  // |PE| > 30
};

std::string to_string(PEClass c);

struct PEResult
{
    double value = 0.0;  // percent
    PEClass classification = PEClass::Acceptable;
};

PEClass classify_pe(double value);

// 100 (approx - reference) / reference_sd. Throws std::invalid_argument when
// reference_sd <= 0.
PEResult percent_error(double mean_approx, double mean_reference, double sd_reference);

// 100 (mean - generating) / generating. Throws on a zero generating value.
double percent_change(double mean_method, double generating_value);

struct WaicResult
{
    double waic = 0.0;
    double lppd = 0.0;
    double p_waic = 0.0;
    Eigen::VectorXd lppd_pointwise;
    Eigen::VectorXd p_waic_pointwise;
};

// Rows are draws (or grid points), columns observations. Weights default to
// equal; they are normalised internally. Variances are weighted population
// variances. Throws with fewer than two rows.
WaicResult waic(Eigen::MatrixXd const& pointwise_logdens, std::optional<Eigen::VectorXd> const& weights = {});

struct Selection
{
    std::string label_a;
    std::string label_b;
    double waic_a = 0.0;
    double waic_b = 0.0;
    std::string selected;
    bool tie = false;
};

// Lower WAIC wins; an exact tie goes to the lexicographically smaller label.
Selection select_model(WaicResult const& a, WaicResult const& b, std::string const& label_a, std::string const& label_b);
Selection select_model(double waic_a, double waic_b, std::string const& label_a, std::string const& label_b);

struct RateRatio
{
    std::string name;
    double ratio = 1.0;  // posterior median of exp(beta (q3 - q1))
    double mean = 1.0;
    double lo = 1.0;
    double hi = 1.0;
    bool significant = false;
};

RateRatio rate_ratio(Eigen::VectorXd const& coef_draws, double q1, double q3, std::string const& name);
RateRatio rate_ratio(PosteriorMarginal const& coef, double q1, double q3, std::string const& name);

nlohmann::json to_json(PEResult const& r);
nlohmann::json to_json(WaicResult const& r, bool include_pointwise = false);
nlohmann::json to_json(Selection const& s);
nlohmann::json to_json(RateRatio const& r);

}  // namespace lgm::metrics
