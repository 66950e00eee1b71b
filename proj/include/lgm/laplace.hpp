#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "lgm/gmrf.hpp"
#include "lgm/marginal.hpp"
#include "lgm/models.hpp"

namespace lgm::laplace {

enum class Strategy
{
    Gaussian,
    SimplifiedLaplace,
    FullLaplace,
};

std::string to_string(Strategy s);
Strategy strategy_from_string(std::string const& s);

enum class IntegrationDesign
{
    Auto,  // Grid for dim <= 2, CCD above
    Grid,
    CCD,
};

std::string to_string(IntegrationDesign d);
IntegrationDesign design_from_string(std::string const& s);

struct LaplaceConfig
{
    double newton_tol = 1e-8;
    int newton_max_iter = 50;
    int max_halvings = 20;

    IntegrationDesign design = IntegrationDesign::Auto;
    double grid_step = 0.75;  // in posterior sd units
    double log_deficit_cutoff = 6.0;
    std::size_t max_grid_points = 4000;
    double ccd_f0 = 1.1;
    double hessian_step = 5e-3;
    int mode_max_iter = 200;
    double mode_grad_tol = 1e-5;

    int full_laplace_points = 15;
    double full_laplace_span = 4.0;  // conditional sds either side
    std::size_t output_points = 801;

    // Latent indices to produce marginals for; empty means all.
    std::vector<std::size_t> latent_subset;

    std::size_t workers = 1;
    // Shuffles the mixture accumulation order with a nondeterministic seed.
    bool debug_shuffle_reduction = false;
};

nlohmann::json to_json(LaplaceConfig const& c);
LaplaceConfig laplace_config_from_json(nlohmann::json const& j);

class FitFailure : public std::runtime_error
{
  public:
    enum class Cause
    {
        RankDeficient,
        NonConvergence,
        ModeSearchFailed,
        HessianNotPD,
        Overflow,
        InvalidSpec,
    };

    FitFailure(Cause cause, std::string const& detail)
        : std::runtime_error(to_string(cause) + ": " + detail), cause_(cause), detail_(detail)
    {
    }
    Cause cause() const { return cause_; }
    std::string const& detail() const { return detail_; }

    static std::string to_string(Cause c);

  private:
    Cause cause_;
    std::string detail_;
};

// Newton did not reach the gradient tolerance.
class NonConvergence : public std::runtime_error
{
  public:
    NonConvergence(int iterations, double gradient_norm);
    int iterations() const { return iterations_; }
    double gradient_norm() const { return gradient_norm_; }

  private:
    int iterations_;
    double gradient_norm_;
};

struct GaussianApprox
{
    Eigen::VectorXd mode;
    Eigen::MatrixXd precision;   // prior precision + A'WA at the mode
    Eigen::MatrixXd covariance;  // restricted to the constraint set
    double log_det_half = 0.0;   // half log-determinant of the restricted precision
    int newton_iters = 0;
    bool converged = false;
    double gradient_norm = 0.0;
    double log_joint = 0.0;      // log pi(y|x*) + log pi(x*|theta), y-constants dropped
    double log_post_theta = 0.0; // Laplace log pi(theta|y) up to a constant

    gmrf::SparseSymMatrix sparse_precision() const { return gmrf::SparseSymMatrix::from_dense(precision); }
};

// Inner problem at fixed theta. `start` defaults to the prior mean projected
// onto the constraints.
GaussianApprox gaussian_approx_latent(models::Model const& model,
                                      models::HyperVector const& theta,
                                      LaplaceConfig const& config,
                                      std::optional<Eigen::VectorXd> const& start = {});

GaussianApprox gaussian_approx_latent(models::ModelSpec const& spec,
                                      models::HyperVector const& theta,
                                      models::Dataset const& data,
                                      LaplaceConfig const& config = {});

struct ThetaPoint
{
    models::HyperVector theta;
    Eigen::VectorXd z;  // design coordinates
    double log_post = 0.0;
    double weight = 0.0;
};

struct ThetaGrid
{
    std::vector<ThetaPoint> points;
    models::HyperVector mode;
    Eigen::MatrixXd mode_hessian;  // negative Hessian of log pi(theta|y) at the mode
    IntegrationDesign design = IntegrationDesign::Grid;
    double step = 0.0;
    std::vector<std::string> internal_names;
    std::vector<std::string> natural_names;
    std::vector<models::HyperTransform> transforms;
    int mode_iterations = 0;
    std::size_t evaluated_points = 0;
    std::vector<std::string> failed_points;
};

ThetaGrid explore_theta(models::Model const& model, LaplaceConfig const& config);
ThetaGrid explore_theta(models::ModelSpec const& spec, models::Dataset const& data, LaplaceConfig const& config = {});

struct HyperMarginal
{
    PosteriorMarginal internal;
    PosteriorMarginal natural;
};

std::vector<HyperMarginal> hyper_marginals(ThetaGrid const& grid);

// Conditional approximations at one grid point, kept for mixing and WAIC.
struct PointState
{
    GaussianApprox approx;
    Eigen::VectorXd pointwise_loglik;
};

std::vector<PosteriorMarginal> latent_marginals(models::Model const& model,
                                                ThetaGrid const& grid,
                                                std::vector<PointState> const& states,
                                                Strategy strategy,
                                                LaplaceConfig const& config);

std::vector<PosteriorMarginal> latent_marginals(models::ModelSpec const& spec,
                                                models::Dataset const& data,
                                                Strategy strategy,
                                                LaplaceConfig const& config = {});

struct FitDiagnostics
{
    std::vector<int> newton_iterations;  // per grid point
    std::size_t grid_size = 0;
    std::size_t evaluated_points = 0;
    int mode_iterations = 0;
    std::string propriety;
    std::vector<double> hessian_eigenvalues;
    std::vector<std::string> failed_points;
    bool reliable = true;
};

struct FitResult
{
    std::string dataset_id;
    Strategy strategy = Strategy::Gaussian;
    std::vector<std::string> latent_names;
    std::vector<std::size_t> latent_indices;
    std::vector<PosteriorMarginal> latent;
    std::vector<HyperMarginal> hyper;
    ThetaGrid grid;
    // WAIC inputs: pointwise log densities at the plug-in modes, one row per
    // grid point, with the grid weights.
    Eigen::MatrixXd pointwise;
    Eigen::VectorXd weights;
    FitDiagnostics diagnostics;

    PosteriorMarginal const& latent_marginal(std::string const& name) const;
    HyperMarginal const& hyper_marginal(std::string const& natural_name) const;
};

// Throws FitFailure.
FitResult fit(models::ModelSpec const& spec,
              models::Dataset const& data,
              Strategy strategy,
              LaplaceConfig const& config = {});

nlohmann::json to_json(FitResult const& r, models::ModelSpec const& spec, LaplaceConfig const& config,
                       bool include_grids = false);

inline constexpr char const* engine_version = "lgmbench 0.1.0";

}  // namespace lgm::laplace
