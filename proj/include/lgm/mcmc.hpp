#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "lgm/models.hpp"

namespace lgm::mcmc {

enum class ConstraintMode
{
    KrigingProject,
    CenterOnTheFly,
    None,
};

std::string to_string(ConstraintMode m);
ConstraintMode constraint_mode_from_string(std::string const& s);

struct ChainConfig
{
    std::size_t iterations = 100000;
    std::size_t burn_in = 10000;
    std::size_t thin = 10;
    std::uint64_t seed = 1;
    std::size_t adaptation_window = 100;
    // Overrides the mode implied by the ICAR term's constraint.
    std::optional<ConstraintMode> constraint_mode;
    // Runs even when the joint precision is rank deficient.
    bool allow_improper = false;
    bool store_pointwise = true;

    void validate() const;
};

nlohmann::json to_json(ChainConfig const& c);
ChainConfig chain_config_from_json(nlohmann::json const& j);

class ImproperPosterior : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

struct ChainOutput
{
    std::string dataset_id;
    std::vector<std::string> columns;  // latent names then natural hyper names
    Eigen::MatrixXd draws;             // kept iterations x columns
    Eigen::MatrixXd pointwise;         // kept iterations x observations (constants included)
    std::map<std::string, double> acceptance;
    std::uint64_t seed = 0;
    ChainConfig config;
    ConstraintMode constraint_mode = ConstraintMode::None;
    std::size_t n_latent = 0;
    // Joint precision check at the start; an improper run fails diagnostics.
    bool proper = true;
    std::string propriety;

    Eigen::VectorXd column(std::string const& name) const;
};

ChainOutput run_chain(models::ModelSpec const& spec, models::Dataset const& data, ChainConfig const& config);

enum class Verdict
{
    Pass,
    Warn,
    Fail,
};

std::string to_string(Verdict v);

struct ParameterDiagnostics
{
    std::string name;
    double ess = 0.0;
    double geweke_z = 0.0;
    double psrf = 1.0;
    double trace_slope = 0.0;  // fitted drift over the whole trace, in sd units
    bool constant = false;
};

struct DiagnosticsReport
{
    std::vector<ParameterDiagnostics> parameters;
    Verdict verdict = Verdict::Pass;
    std::vector<std::string> reasons;

    // Fail thresholds.
    static constexpr double geweke_fail = 4.0;
    static constexpr double psrf_fail = 1.1;
    static constexpr double ess_fail = 20.0;
    // Warn thresholds.
    static constexpr double geweke_warn = 3.0;
    static constexpr double psrf_warn = 1.05;
    static constexpr double ess_warn = 100.0;
};

// Initial positive sequence estimate; equals the trace length for a
// constant trace.
double effective_sample_size(Eigen::VectorXd const& trace);
// Autocorrelations at lags 0..max_lag (FFT based).
Eigen::VectorXd autocorrelation(Eigen::VectorXd const& trace, std::size_t max_lag);
double geweke_z(Eigen::VectorXd const& trace, double first = 0.1, double last = 0.5);
double split_psrf(Eigen::VectorXd const& trace);
double psrf(std::vector<Eigen::VectorXd> const& chains);
double trace_slope(Eigen::VectorXd const& trace);

DiagnosticsReport diagnostics(ChainOutput const& chain, std::vector<std::string> const& parameters = {});
DiagnosticsReport diagnose_traces(std::vector<std::string> const& names, Eigen::MatrixXd const& draws);

struct Summary
{
    double mean = 0.0;
    double sd = 0.0;
    double q025 = 0.0;
    double q50 = 0.0;
    double q975 = 0.0;
    double ess = 0.0;
    double mcse = 0.0;
};

// Type-7 quantile of a sample.
double quantile_type7(std::vector<double> sorted, double p);
Summary summarize(Eigen::VectorXd const& draws);
std::map<std::string, Summary> posterior_summary(ChainOutput const& chain);

nlohmann::json to_json(DiagnosticsReport const& r);

}  // namespace lgm::mcmc
