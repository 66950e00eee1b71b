#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "lgm/gmrf.hpp"

namespace lgm::models {

enum class Family
{
    Poisson,
    ZeroInflatedNegBinomial,
    // Identity link with known observation precision; used for exactness checks.
    Gaussian,
};

std::string to_string(Family f);
Family family_from_string(std::string const& s);

// How the second LogGamma parameter is read: exp(theta) ~ Gamma(shape, rate = b)
// or Gamma(shape, scale = b).
enum class GammaConvention
{
    Rate,
    Scale,
};

struct NormalPrior
{
    double mean = 0.0;
    double sd = 1000.0;
};

// Prior on one internal-scale hyperparameter.
struct HyperPrior
{
    enum class Kind
    {
        LogGamma,
        Flat,
        Normal,
    };
    Kind kind = Kind::Flat;
    double a = 0.0;  // LogGamma shape | Normal mean
    double b = 0.0;  // LogGamma rate-or-scale | Normal precision
    GammaConvention convention = GammaConvention::Rate;

    static HyperPrior log_gamma(double shape, double b, GammaConvention c = GammaConvention::Rate);
    static HyperPrior flat();
    static HyperPrior normal(double mean, double precision);

    double log_density(double theta) const;
};

enum class TermKind
{
    IID,
    ICAR,
};

struct RandomEffect
{
    TermKind kind = TermKind::IID;
    std::string label;
    HyperPrior precision_prior = HyperPrior::flat();
    gmrf::IcarConstraint constraint = gmrf::IcarConstraint::None;
    // Known precision; the term then contributes no hyperparameter.
    std::optional<double> fixed_precision;
};

struct PriorSet
{
    NormalPrior fixed_effect;
    HyperPrior zinb_logit_zero = HyperPrior::normal(-1.0, 0.2);
    HyperPrior zinb_log_size = HyperPrior::flat();
};

struct ModelSpec
{
    Family family = Family::Poisson;
    std::vector<std::string> fixed_effects;
    std::string offset;
    bool include_intercept = true;
    std::vector<RandomEffect> random_effects;
    PriorSet priors;
    gmrf::IcarExponent icar_exponent = gmrf::IcarExponent::AsPrinted;
    double gaussian_obs_precision = 1.0;
    // Permits an intercept next to an unconstrained ICAR term.
    bool unsafe = false;

    // Throws std::invalid_argument on violated invariants.
    void validate() const;
};

struct Dataset
{
    std::string id;
    Eigen::VectorXd y;
    Eigen::MatrixXd x;
    std::vector<std::string> columns;
    Eigen::VectorXd offset;
    std::optional<gmrf::AdjacencyGraph> graph;
    std::map<std::string, double> generating_values;
    // Effects drawn by a simulator, when known.
    Eigen::VectorXd simulated_iid;
    Eigen::VectorXd simulated_spatial;

    std::size_t n() const { return static_cast<std::size_t>(y.size()); }
    Eigen::VectorXd column(std::string const& name) const;
    void validate(Family family) const;
};

using HyperVector = Eigen::VectorXd;
using LatentVector = Eigen::VectorXd;

enum class HyperTransform
{
    Exp,
    Logistic,
};

double to_natural(HyperTransform t, double internal);
double from_natural(HyperTransform t, double natural);
// d natural / d internal
double natural_jacobian(HyperTransform t, double internal);

struct HyperSlot
{
    enum class Role
    {
        TermPrecision,
        ZinbLogitZero,
        ZinbLogSize,
    };
    Role role;
    std::size_t term = 0;  // TermPrecision only
    std::string internal_name;
    std::string natural_name;
    HyperTransform transform;
    HyperPrior prior;
};

// Per-observation log-likelihood derivatives with respect to eta.
struct ObsDerivatives
{
    double value;  // log density including constants
    double d1;
    double d2;
    double d3;
};

ObsDerivatives poisson_obs(double y, double eta);
// p_zero may be 0 exactly (plain negative binomial).
ObsDerivatives zinb_obs(double y, double eta, double p_zero, double size);
ObsDerivatives gaussian_obs(double y, double eta, double precision);

double nb_log_pmf(double y, double mean, double size);
double zinb_log_pmf(double y, double mean, double size, double p_zero);

// A ModelSpec bound to a Dataset: latent/hyper layout, design matrix and the
// densities both inference engines evaluate.
class Model
{
  public:
    struct Block
    {
        std::size_t term;
        std::size_t start;  // first latent index
        TermKind kind;
    };

    Model(ModelSpec spec, Dataset data);

    ModelSpec const& spec() const { return spec_; }
    Dataset const& data() const { return data_; }

    std::size_t n_obs() const { return n_; }
    std::size_t n_fixed() const { return static_cast<std::size_t>(design_.cols()); }
    std::size_t latent_size() const { return latent_size_; }
    std::size_t hyper_size() const { return slots_.size(); }
    std::vector<Block> const& blocks() const { return blocks_; }
    std::vector<HyperSlot> const& hyper_slots() const { return slots_; }
    std::vector<std::string> const& latent_names() const { return latent_names_; }
    std::vector<std::string> hyper_internal_names() const;
    std::vector<std::string> hyper_natural_names() const;

    Eigen::MatrixXd const& design() const { return design_; }
    Eigen::VectorXd const& log_offset() const { return log_offset_; }
    gmrf::AdjacencyGraph const* graph() const { return data_.graph ? &*data_.graph : nullptr; }
    std::size_t graph_components() const { return components_; }

    // Kriging constraint rows (k x latent_size); zero rows when none apply.
    Eigen::MatrixXd const& constraints() const { return constraints_; }
    bool has_centering_constraint() const;

    // Sparse linear map latent -> eta (without offset) as a dense n x L matrix.
    Eigen::MatrixXd predictor_matrix() const;
    Eigen::VectorXd linear_predictor(LatentVector const& x) const;

    double term_precision(std::size_t term, HyperVector const& theta) const;

    // Checks every eta is finite and below the exp() overflow bound.
    void check_predictor(Eigen::VectorXd const& eta) const;

    ObsDerivatives obs(std::size_t i, double eta, HyperVector const& theta) const;

    // Sum over observations, y-only constants (log y!) excluded.
    double log_likelihood(LatentVector const& x, HyperVector const& theta) const;
    double log_likelihood_eta(Eigen::VectorXd const& eta, HyperVector const& theta) const;
    // Per observation, constants included.
    Eigen::VectorXd pointwise_loglik(LatentVector const& x, HyperVector const& theta) const;
    double y_constant() const { return y_constant_; }

    struct Derivatives
    {
        Eigen::VectorXd gradient;
        Eigen::MatrixXd neg_hessian;
    };
    Derivatives loglik_derivatives(LatentVector const& x, HyperVector const& theta) const;

    gmrf::SparseSymMatrix latent_prior_precision(HyperVector const& theta) const;
    // Prior mean of the latent field (fixed-effect means, zeros elsewhere).
    Eigen::VectorXd latent_prior_mean() const;
    double log_prior_latent(LatentVector const& x, HyperVector const& theta) const;
    double log_prior_hyper(HyperVector const& theta) const;

    HyperVector natural_to_internal(Eigen::VectorXd const& natural) const;
    Eigen::VectorXd internal_to_natural(HyperVector const& theta) const;

  private:
    void check_latent(LatentVector const& x) const;
    void check_hyper(HyperVector const& theta) const;

    ModelSpec spec_;
    Dataset data_;
    std::size_t n_ = 0;
    Eigen::MatrixXd design_;
    Eigen::VectorXd log_offset_;
    std::vector<Block> blocks_;
    std::vector<HyperSlot> slots_;
    std::vector<std::string> latent_names_;
    std::size_t latent_size_ = 0;
    std::size_t components_ = 0;
    Eigen::MatrixXd constraints_;
    double y_constant_ = 0.0;
    Eigen::VectorXd lgamma_y1_;
};

// Free-function forms.
double log_likelihood(ModelSpec const& spec, LatentVector const& x, HyperVector const& theta, Dataset const& data);
Eigen::VectorXd pointwise_loglik(ModelSpec const& spec, LatentVector const& x, HyperVector const& theta, Dataset const& data);
double log_prior_hyper(HyperVector const& theta, Model const& model);
gmrf::SparseSymMatrix latent_prior_precision(ModelSpec const& spec, HyperVector const& theta, Dataset const& data);
Model::Derivatives gradient_hessian_loglik(ModelSpec const& spec, LatentVector const& x, HyperVector const& theta, Dataset const& data);

// Convenience constructors used by the harness and tests.
ModelSpec poisson_iid_spec(std::vector<std::string> covariates, double loggamma_b);
ModelSpec bym_spec(std::vector<std::string> covariates, double loggamma_b);
ModelSpec zinb_spec(std::vector<std::string> covariates);

nlohmann::json to_json(ModelSpec const& spec);
ModelSpec model_spec_from_json(nlohmann::json const& j);
nlohmann::json to_json(HyperPrior const& p);
HyperPrior hyper_prior_from_json(nlohmann::json const& j);

}  // namespace lgm::models
