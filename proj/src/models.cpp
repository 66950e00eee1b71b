#include "lgm/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lgm/errors.hpp"

namespace lgm::models {
namespace {

constexpr double log_2pi = 1.8378770664093454835606594728112;
// exp() overflows just above 709.78.
constexpr double eta_limit = 700.0;

double log_add_exp(double a, double b)
{
    if (a == -INFINITY)
        return b;
    if (b == -INFINITY)
        return a;
    double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

double logistic(double t)
{
    return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

bool is_count(double y)
{
    return y >= 0.0 && std::floor(y) == y && std::isfinite(y);
}

}  // namespace

std::string to_string(Family f)
{
    switch (f)
    {
    case Family::Poisson: return "poisson";
    case Family::ZeroInflatedNegBinomial: return "zinb";
    case Family::Gaussian: return "gaussian";
    }
    return "unknown";
}

Family family_from_string(std::string const& s)
{
    if (s == "poisson")
        return Family::Poisson;
    if (s == "zinb")
        return Family::ZeroInflatedNegBinomial;
    if (s == "gaussian")
        return Family::Gaussian;
    throw std::invalid_argument("unknown likelihood family: " + s);
}

HyperPrior HyperPrior::log_gamma(double shape, double b, GammaConvention c)
{
    if (!(shape > 0.0) || !(b > 0.0))
        throw std::invalid_argument("LogGamma prior needs positive shape and scale");
    return {Kind::LogGamma, shape, b, c};
}

HyperPrior HyperPrior::flat()
{
    return {Kind::Flat, 0.0, 0.0, GammaConvention::Rate};
}

HyperPrior HyperPrior::normal(double mean, double precision)
{
    if (!(precision > 0.0))
        throw std::invalid_argument("Normal hyperprior needs a positive precision");
    return {Kind::Normal, mean, precision, GammaConvention::Rate};
}

double HyperPrior::log_density(double theta) const
{
    switch (kind)
    {
    case Kind::Flat: return 0.0;
    case Kind::Normal:
        return 0.5 * (std::log(b) - log_2pi) - 0.5 * b * (theta - a) * (theta - a);
    case Kind::LogGamma:
    {
        // Density of theta = log(lambda), lambda ~ Gamma(a, rate), including
        // the Jacobian d lambda / d theta = lambda.
        double rate = convention == GammaConvention::Rate ? b : 1.0 / b;
        return a * std::log(rate) - std::lgamma(a) + a * theta - rate * std::exp(theta);
    }
    }
    return 0.0;
}

double to_natural(HyperTransform t, double internal)
{
    return t == HyperTransform::Exp ? std::exp(internal) : logistic(internal);
}

double from_natural(HyperTransform t, double natural)
{
    return t == HyperTransform::Exp ? std::log(natural) : std::log(natural / (1.0 - natural));
}

double natural_jacobian(HyperTransform t, double internal)
{
    if (t == HyperTransform::Exp)
        return std::exp(internal);
    double p = logistic(internal);
    return p * (1.0 - p);
}

ObsDerivatives poisson_obs(double y, double eta)
{
    double mu = std::exp(eta);
    return {y * eta - mu - std::lgamma(y + 1.0), y - mu, -mu, -mu};
}

double nb_log_pmf(double y, double mean, double size)
{
    double log_ns = std::log(size + mean);
    return std::lgamma(y + size) - std::lgamma(size) - std::lgamma(y + 1.0)
         + size * (std::log(size) - log_ns) + (y > 0 ? y * (std::log(mean) - log_ns) : 0.0);
}

double zinb_log_pmf(double y, double mean, double size, double p_zero)
{
    double nb = nb_log_pmf(y, mean, size);
    double log_1mp = std::log1p(-p_zero);
    if (y > 0)
        return log_1mp + nb;
    return log_add_exp(p_zero > 0 ? std::log(p_zero) : -INFINITY, log_1mp + nb);
}

ObsDerivatives zinb_obs(double y, double eta, double p_zero, double size)
{
    double mu = std::exp(eta);
    double n = size;
    double log_ns = log_add_exp(std::log(n), eta);
    double ns = n + mu;
    double log_1mp = std::log1p(-p_zero);
    if (y > 0)
    {
        double value = log_1mp + std::lgamma(y + n) - std::lgamma(n) - std::lgamma(y + 1.0)
                     + n * (std::log(n) - log_ns) + y * (eta - log_ns);
        double d1 = n * (y - mu) / ns;
        double d2 = -(y + n) * n * mu / (ns * ns);
        double d3 = -(y + n) * n * mu * (n - mu) / (ns * ns * ns);
        return {value, d1, d2, d3};
    }
    double log_r = n * (std::log(n) - log_ns);
    double a = -n * mu / ns;
    double b = -n * n * mu / (ns * ns);
    double c = -n * n * mu * (n - mu) / (ns * ns * ns);
    double log_nb_part = log_1mp + log_r;
    double value = log_add_exp(p_zero > 0 ? std::log(p_zero) : -INFINITY, log_nb_part);
    // q: posterior probability that a zero came from the count component.
    double q = std::exp(log_nb_part - value);
    double d1 = q * a;
    double d2 = q * b + q * (1.0 - q) * a * a;
    double d3 = q * c + 3.0 * q * (1.0 - q) * a * b + q * (1.0 - q) * (1.0 - 2.0 * q) * a * a * a;
    return {value, d1, d2, d3};
}

ObsDerivatives gaussian_obs(double y, double eta, double precision)
{
    double r = y - eta;
    return {0.5 * (std::log(precision) - log_2pi) - 0.5 * precision * r * r, precision * r, -precision, 0.0};
}

void ModelSpec::validate() const
{
    bool has_unconstrained_icar = false;
    std::size_t n_icar = 0;
    for (auto const& re : random_effects)
    {
        if (re.label.empty())
            throw std::invalid_argument("random effect needs a label");
        if (re.fixed_precision && !(*re.fixed_precision > 0.0))
            throw std::invalid_argument("fixed precision must be positive");
        if (re.kind == TermKind::ICAR)
        {
            ++n_icar;
            if (re.constraint == gmrf::IcarConstraint::None)
                has_unconstrained_icar = true;
        }
        else if (re.constraint != gmrf::IcarConstraint::None)
        {
            throw std::invalid_argument("constraints apply to ICAR terms only");
        }
    }
    for (std::size_t i = 0; i < random_effects.size(); ++i)
        for (std::size_t j = i + 1; j < random_effects.size(); ++j)
            if (random_effects[i].label == random_effects[j].label)
                throw std::invalid_argument("duplicate random effect label " + random_effects[i].label);
    if (n_icar > 1)
        throw std::invalid_argument("at most one ICAR term is supported");
    if (has_unconstrained_icar && include_intercept && !unsafe)
        throw std::invalid_argument(
            "an intercept with an unconstrained ICAR term is not identifiable; omit the intercept, "
            "add a sum-to-zero constraint, or set unsafe");
    if (!(priors.fixed_effect.sd > 0.0))
        throw std::invalid_argument("fixed-effect prior sd must be positive");
    if (family == Family::Gaussian && !(gaussian_obs_precision > 0.0))
        throw std::invalid_argument("Gaussian observation precision must be positive");
}

Eigen::VectorXd Dataset::column(std::string const& name) const
{
    for (std::size_t c = 0; c < columns.size(); ++c)
        if (columns[c] == name)
            return x.col(static_cast<Eigen::Index>(c));
    throw std::invalid_argument("dataset has no column " + name);
}

void Dataset::validate(Family family) const
{
    auto n = y.size();
    if (x.rows() != n && x.cols() > 0)
        throw DimensionError("design rows do not match response length");
    if (static_cast<std::size_t>(x.cols()) != columns.size())
        throw DimensionError("column names do not match design columns");
    if (offset.size() != 0 && offset.size() != n)
        throw DimensionError("offset length does not match response length");
    for (Eigen::Index i = 0; i < offset.size(); ++i)
        if (!(offset[i] > 0.0) || !std::isfinite(offset[i]))
            throw std::invalid_argument("offsets must be strictly positive");
    if (family != Family::Gaussian)
        for (Eigen::Index i = 0; i < n; ++i)
            if (!is_count(y[i]))
                throw std::invalid_argument("count response must hold nonnegative integers");
    if (graph && graph->n_nodes() != static_cast<std::size_t>(n))
        throw DimensionError("graph node count does not match observations");
}

Model::Model(ModelSpec spec, Dataset data) : spec_(std::move(spec)), data_(std::move(data))
{
    spec_.validate();
    data_.validate(spec_.family);
    n_ = data_.n();
    if (n_ == 0)
        throw std::invalid_argument("dataset is empty");

    std::size_t p = spec_.fixed_effects.size() + (spec_.include_intercept ? 1 : 0);
    design_.resize(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(p));
    std::size_t col = 0;
    if (spec_.include_intercept)
    {
        design_.col(0).setOnes();
        latent_names_.push_back("(Intercept)");
        ++col;
    }
    for (auto const& name : spec_.fixed_effects)
    {
        design_.col(static_cast<Eigen::Index>(col++)) = data_.column(name);
        latent_names_.push_back(name);
    }

    if (spec_.offset.empty())
    {
        log_offset_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
    }
    else
    {
        if (data_.offset.size() != static_cast<Eigen::Index>(n_))
            throw DimensionError("model declares an offset but the dataset has none");
        log_offset_ = data_.offset.array().log();
    }

    latent_size_ = p;
    for (std::size_t t = 0; t < spec_.random_effects.size(); ++t)
    {
        auto const& re = spec_.random_effects[t];
        if (re.kind == TermKind::ICAR && !data_.graph)
            throw std::invalid_argument("ICAR term requires an adjacency graph");
        blocks_.push_back({t, latent_size_, re.kind});
        for (std::size_t i = 0; i < n_; ++i)
            latent_names_.push_back(re.label + "[" + std::to_string(i) + "]");
        latent_size_ += n_;
        if (!re.fixed_precision)
            slots_.push_back({HyperSlot::Role::TermPrecision, t, "log_prec_" + re.label,
                              "prec_" + re.label, HyperTransform::Exp, re.precision_prior});
    }
    if (spec_.family == Family::ZeroInflatedNegBinomial)
    {
        slots_.push_back({HyperSlot::Role::ZinbLogitZero, 0, "logit_p_zero", "p_zero",
                          HyperTransform::Logistic, spec_.priors.zinb_logit_zero});
        slots_.push_back({HyperSlot::Role::ZinbLogSize, 0, "log_size", "size",
                          HyperTransform::Exp, spec_.priors.zinb_log_size});
    }

    components_ = data_.graph ? gmrf::connected_components(*data_.graph) : 0;
    constraints_.resize(0, static_cast<Eigen::Index>(latent_size_));
    for (auto const& b : blocks_)
    {
        auto const& re = spec_.random_effects[b.term];
        if (re.kind == TermKind::ICAR && re.constraint == gmrf::IcarConstraint::SumToZeroKriging)
        {
            Eigen::MatrixXd a = gmrf::sum_to_zero_constraints(*data_.graph);
            Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(a.rows(), static_cast<Eigen::Index>(latent_size_));
            rows.middleCols(static_cast<Eigen::Index>(b.start), static_cast<Eigen::Index>(n_)) = a;
            Eigen::MatrixXd stacked(constraints_.rows() + rows.rows(), constraints_.cols());
            stacked << constraints_, rows;
            constraints_ = std::move(stacked);
        }
    }

    lgamma_y1_.resize(static_cast<Eigen::Index>(n_));
    y_constant_ = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
    {
        lgamma_y1_[static_cast<Eigen::Index>(i)] =
            spec_.family == Family::Gaussian ? 0.0 : std::lgamma(data_.y[static_cast<Eigen::Index>(i)] + 1.0);
        y_constant_ += lgamma_y1_[static_cast<Eigen::Index>(i)];
    }
}

std::vector<std::string> Model::hyper_internal_names() const
{
    std::vector<std::string> out;
    for (auto const& s : slots_)
        out.push_back(s.internal_name);
    return out;
}

std::vector<std::string> Model::hyper_natural_names() const
{
    std::vector<std::string> out;
    for (auto const& s : slots_)
        out.push_back(s.natural_name);
    return out;
}

bool Model::has_centering_constraint() const
{
    for (auto const& re : spec_.random_effects)
        if (re.kind == TermKind::ICAR && re.constraint == gmrf::IcarConstraint::SumToZeroCentering)
            return true;
    return false;
}

void Model::check_latent(LatentVector const& x) const
{
    if (static_cast<std::size_t>(x.size()) != latent_size_)
        throw DimensionError("latent vector has length " + std::to_string(x.size()) + ", expected "
                             + std::to_string(latent_size_));
}

void Model::check_hyper(HyperVector const& theta) const
{
    if (static_cast<std::size_t>(theta.size()) != slots_.size())
        throw DimensionError("hyper vector has length " + std::to_string(theta.size()) + ", expected "
                             + std::to_string(slots_.size()));
    for (Eigen::Index i = 0; i < theta.size(); ++i)
        if (!std::isfinite(theta[i]))
            throw std::invalid_argument("hyperparameters must be finite");
}

Eigen::MatrixXd Model::predictor_matrix() const
{
    auto n = static_cast<Eigen::Index>(n_);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(latent_size_));
    a.leftCols(design_.cols()) = design_;
    for (auto const& b : blocks_)
        a.middleCols(static_cast<Eigen::Index>(b.start), n).setIdentity();
    return a;
}

Eigen::VectorXd Model::linear_predictor(LatentVector const& x) const
{
    check_latent(x);
    auto n = static_cast<Eigen::Index>(n_);
    Eigen::VectorXd eta = log_offset_;
    if (design_.cols() > 0)
        eta.noalias() += design_ * x.head(design_.cols());
    for (auto const& b : blocks_)
        eta += x.segment(static_cast<Eigen::Index>(b.start), n);
    return eta;
}

double Model::term_precision(std::size_t term, HyperVector const& theta) const
{
    auto const& re = spec_.random_effects.at(term);
    if (re.fixed_precision)
        return *re.fixed_precision;
    for (std::size_t s = 0; s < slots_.size(); ++s)
        if (slots_[s].role == HyperSlot::Role::TermPrecision && slots_[s].term == term)
            return std::exp(theta[static_cast<Eigen::Index>(s)]);
    throw std::logic_error("no hyperparameter slot for term");
}

void Model::check_predictor(Eigen::VectorXd const& eta) const
{
    if (spec_.family == Family::Gaussian)
    {
        for (Eigen::Index i = 0; i < eta.size(); ++i)
            if (!std::isfinite(eta[i]))
                throw OverflowError("linear predictor is not finite", static_cast<std::size_t>(i));
        return;
    }
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        if (!std::isfinite(eta[i]) || eta[i] > eta_limit)
            throw OverflowError("linear predictor overflow at observation " + std::to_string(i),
                                static_cast<std::size_t>(i));
}

ObsDerivatives Model::obs(std::size_t i, double eta, HyperVector const& theta) const
{
    double y = data_.y[static_cast<Eigen::Index>(i)];
    switch (spec_.family)
    {
    case Family::Poisson: return poisson_obs(y, eta);
    case Family::Gaussian: return gaussian_obs(y, eta, spec_.gaussian_obs_precision);
    case Family::ZeroInflatedNegBinomial:
    {
        auto m = static_cast<Eigen::Index>(slots_.size());
        return zinb_obs(y, eta, logistic(theta[m - 2]), std::exp(theta[m - 1]));
    }
    }
    throw std::logic_error("unhandled family");
}

double Model::log_likelihood_eta(Eigen::VectorXd const& eta, HyperVector const& theta) const
{
    check_hyper(theta);
    check_predictor(eta);
    double total = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
        total += obs(i, eta[static_cast<Eigen::Index>(i)], theta).value;
    return total + y_constant_;
}

double Model::log_likelihood(LatentVector const& x, HyperVector const& theta) const
{
    return log_likelihood_eta(linear_predictor(x), theta);
}

Eigen::VectorXd Model::pointwise_loglik(LatentVector const& x, HyperVector const& theta) const
{
    check_hyper(theta);
    Eigen::VectorXd eta = linear_predictor(x);
    check_predictor(eta);
    Eigen::VectorXd out(static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i)
        out[static_cast<Eigen::Index>(i)] = obs(i, eta[static_cast<Eigen::Index>(i)], theta).value;
    return out;
}

Model::Derivatives Model::loglik_derivatives(LatentVector const& x, HyperVector const& theta) const
{
    check_hyper(theta);
    Eigen::VectorXd eta = linear_predictor(x);
    check_predictor(eta);
    auto n = static_cast<Eigen::Index>(n_);
    Eigen::VectorXd d1(n);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        auto o = obs(static_cast<std::size_t>(i), eta[i], theta);
        d1[i] = o.d1;
        w[i] = -o.d2;
    }
    auto big_l = static_cast<Eigen::Index>(latent_size_);
    auto p = design_.cols();
    Derivatives out{Eigen::VectorXd::Zero(big_l), Eigen::MatrixXd::Zero(big_l, big_l)};
    // A = [X, I, I, ...]; gradient A'd1, negative Hessian A' W A.
    if (p > 0)
    {
        out.gradient.head(p) = design_.transpose() * d1;
        Eigen::MatrixXd wx = w.asDiagonal() * design_;
        out.neg_hessian.topLeftCorner(p, p) = design_.transpose() * wx;
        for (auto const& b : blocks_)
        {
            auto s = static_cast<Eigen::Index>(b.start);
            out.neg_hessian.block(0, s, p, n) = wx.transpose();
            out.neg_hessian.block(s, 0, n, p) = wx;
        }
    }
    for (auto const& bi : blocks_)
    {
        auto si = static_cast<Eigen::Index>(bi.start);
        out.gradient.segment(si, n) = d1;
        for (auto const& bj : blocks_)
        {
            auto sj = static_cast<Eigen::Index>(bj.start);
            for (Eigen::Index i = 0; i < n; ++i)
                out.neg_hessian(si + i, sj + i) = w[i];
        }
    }
    return out;
}

gmrf::SparseSymMatrix Model::latent_prior_precision(HyperVector const& theta) const
{
    check_hyper(theta);
    std::vector<gmrf::SparseSymMatrix::Entry> entries;
    double fixed_prec = 1.0 / (spec_.priors.fixed_effect.sd * spec_.priors.fixed_effect.sd);
    for (Eigen::Index j = 0; j < design_.cols(); ++j)
        entries.push_back({static_cast<std::size_t>(j), static_cast<std::size_t>(j), fixed_prec});
    for (auto const& b : blocks_)
    {
        double prec = term_precision(b.term, theta);
        if (b.kind == TermKind::IID)
        {
            for (std::size_t i = 0; i < n_; ++i)
                entries.push_back({b.start + i, b.start + i, prec});
        }
        else
        {
            auto laplacian = gmrf::graph_laplacian(*data_.graph);
            for (auto const& e : laplacian.entries())
                entries.push_back({b.start + e.row, b.start + e.col, prec * e.value});
        }
    }
    return gmrf::SparseSymMatrix::from_triplets(std::max<std::size_t>(latent_size_, 1), std::move(entries));
}

Eigen::VectorXd Model::latent_prior_mean() const
{
    Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(latent_size_));
    m.head(design_.cols()).setConstant(spec_.priors.fixed_effect.mean);
    return m;
}

double Model::log_prior_latent(LatentVector const& x, HyperVector const& theta) const
{
    check_latent(x);
    check_hyper(theta);
    auto const& fe = spec_.priors.fixed_effect;
    double total = 0.0;
    for (Eigen::Index j = 0; j < design_.cols(); ++j)
    {
        double z = (x[j] - fe.mean) / fe.sd;
        total += -0.5 * log_2pi - std::log(fe.sd) - 0.5 * z * z;
    }
    auto n = static_cast<Eigen::Index>(n_);
    for (auto const& b : blocks_)
    {
        double prec = term_precision(b.term, theta);
        Eigen::VectorXd block = x.segment(static_cast<Eigen::Index>(b.start), n);
        if (b.kind == TermKind::IID)
        {
            total += 0.5 * static_cast<double>(n) * (std::log(prec) - log_2pi) - 0.5 * prec * block.squaredNorm();
        }
        else
        {
            double c = gmrf::icar_log_tau_coefficient(n_, components_, spec_.icar_exponent);
            total += c * std::log(prec) - 0.5 * prec * gmrf::icar_quadratic_form(block, *data_.graph);
        }
    }
    return total;
}

double Model::log_prior_hyper(HyperVector const& theta) const
{
    check_hyper(theta);
    double total = 0.0;
    for (std::size_t s = 0; s < slots_.size(); ++s)
        total += slots_[s].prior.log_density(theta[static_cast<Eigen::Index>(s)]);
    return total;
}

HyperVector Model::natural_to_internal(Eigen::VectorXd const& natural) const
{
    if (static_cast<std::size_t>(natural.size()) != slots_.size())
        throw DimensionError("natural hyper vector has wrong length");
    HyperVector theta(natural.size());
    for (std::size_t s = 0; s < slots_.size(); ++s)
        theta[static_cast<Eigen::Index>(s)] = from_natural(slots_[s].transform, natural[static_cast<Eigen::Index>(s)]);
    return theta;
}

Eigen::VectorXd Model::internal_to_natural(HyperVector const& theta) const
{
    check_hyper(theta);
    Eigen::VectorXd out(theta.size());
    for (std::size_t s = 0; s < slots_.size(); ++s)
        out[static_cast<Eigen::Index>(s)] = to_natural(slots_[s].transform, theta[static_cast<Eigen::Index>(s)]);
    return out;
}

double log_likelihood(ModelSpec const& spec, LatentVector const& x, HyperVector const& theta, Dataset const& data)
{
    Model m(spec, data);
    return m.log_likelihood(x, theta);
}

Eigen::VectorXd pointwise_loglik(ModelSpec const& spec, LatentVector const& x, HyperVector const& theta, Dataset const& data)
{
    return Model(spec, data).pointwise_loglik(x, theta);
}

double log_prior_hyper(HyperVector const& theta, Model const& model)
{
    return model.log_prior_hyper(theta);
}

gmrf::SparseSymMatrix latent_prior_precision(ModelSpec const& spec, HyperVector const& theta, Dataset const& data)
{
    return Model(spec, data).latent_prior_precision(theta);
}

Model::Derivatives gradient_hessian_loglik(ModelSpec const& spec, LatentVector const& x, HyperVector const& theta, Dataset const& data)
{
    return Model(spec, data).loglik_derivatives(x, theta);
}

ModelSpec poisson_iid_spec(std::vector<std::string> covariates, double loggamma_b)
{
    ModelSpec s;
    s.family = Family::Poisson;
    s.fixed_effects = std::move(covariates);
    s.offset = "total";
    s.include_intercept = true;
    s.random_effects.push_back({TermKind::IID, "eps", HyperPrior::log_gamma(1.0, loggamma_b), gmrf::IcarConstraint::None, {}});
    return s;
}

ModelSpec bym_spec(std::vector<std::string> covariates, double loggamma_b)
{
    ModelSpec s;
    s.family = Family::Poisson;
    s.fixed_effects = std::move(covariates);
    s.offset = "total";
    s.include_intercept = false;
    s.random_effects.push_back({TermKind::IID, "eps", HyperPrior::log_gamma(1.0, loggamma_b), gmrf::IcarConstraint::None, {}});
    s.random_effects.push_back({TermKind::ICAR, "mu", HyperPrior::log_gamma(1.0, loggamma_b), gmrf::IcarConstraint::None, {}});
    return s;
}

ModelSpec zinb_spec(std::vector<std::string> covariates)
{
    ModelSpec s;
    s.family = Family::ZeroInflatedNegBinomial;
    s.fixed_effects = std::move(covariates);
    s.offset = "population";
    s.include_intercept = true;
    return s;
}

nlohmann::json to_json(HyperPrior const& p)
{
    switch (p.kind)
    {
    case HyperPrior::Kind::Flat: return {{"kind", "flat"}};
    case HyperPrior::Kind::Normal: return {{"kind", "normal"}, {"mean", p.a}, {"precision", p.b}};
    case HyperPrior::Kind::LogGamma:
        return {{"kind", "loggamma"},
                {"shape", p.a},
                {"b", p.b},
                {"convention", p.convention == GammaConvention::Rate ? "rate" : "scale"}};
    }
    return {};
}

HyperPrior hyper_prior_from_json(nlohmann::json const& j)
{
    auto kind = j.at("kind").get<std::string>();
    if (kind == "flat")
        return HyperPrior::flat();
    if (kind == "normal")
        return HyperPrior::normal(j.at("mean").get<double>(), j.at("precision").get<double>());
    if (kind == "loggamma")
    {
        auto conv = j.value("convention", std::string("rate"));
        if (conv != "rate" && conv != "scale")
            throw std::invalid_argument("LogGamma convention must be rate or scale");
        return HyperPrior::log_gamma(j.at("shape").get<double>(), j.at("b").get<double>(),
                                     conv == "rate" ? GammaConvention::Rate : GammaConvention::Scale);
    }
    throw std::invalid_argument("unknown hyperprior kind: " + kind);
}

nlohmann::json to_json(ModelSpec const& spec)
{
    nlohmann::json terms = nlohmann::json::array();
    for (auto const& re : spec.random_effects)
    {
        nlohmann::json t{{"kind", re.kind == TermKind::IID ? "iid" : "icar"},
                         {"label", re.label},
                         {"precision_prior", to_json(re.precision_prior)},
                         {"constraint", gmrf::to_string(re.constraint)}};
        if (re.fixed_precision)
            t["fixed_precision"] = *re.fixed_precision;
        terms.push_back(t);
    }
    return {{"family", to_string(spec.family)},
            {"fixed_effects", spec.fixed_effects},
            {"offset", spec.offset},
            {"include_intercept", spec.include_intercept},
            {"random_effects", terms},
            {"priors",
             {{"fixed_effect", {{"mean", spec.priors.fixed_effect.mean}, {"sd", spec.priors.fixed_effect.sd}}},
              {"zinb_logit_zero", to_json(spec.priors.zinb_logit_zero)},
              {"zinb_log_size", to_json(spec.priors.zinb_log_size)}}},
            {"icar_exponent", gmrf::to_string(spec.icar_exponent)},
            {"gaussian_obs_precision", spec.gaussian_obs_precision},
            {"unsafe", spec.unsafe}};
}

ModelSpec model_spec_from_json(nlohmann::json const& j)
{
    ModelSpec s;
    s.family = family_from_string(j.at("family").get<std::string>());
    s.fixed_effects = j.value("fixed_effects", std::vector<std::string>{});
    s.offset = j.value("offset", std::string{});
    s.include_intercept = j.value("include_intercept", true);
    for (auto const& t : j.value("random_effects", nlohmann::json::array()))
    {
        RandomEffect re;
        auto kind = t.at("kind").get<std::string>();
        if (kind != "iid" && kind != "icar")
            throw std::invalid_argument("unknown random effect kind: " + kind);
        re.kind = kind == "iid" ? TermKind::IID : TermKind::ICAR;
        re.label = t.at("label").get<std::string>();
        if (t.contains("precision_prior"))
            re.precision_prior = hyper_prior_from_json(t.at("precision_prior"));
        re.constraint = gmrf::icar_constraint_from_string(t.value("constraint", std::string("none")));
        if (t.contains("fixed_precision"))
            re.fixed_precision = t.at("fixed_precision").get<double>();
        s.random_effects.push_back(re);
    }
    if (j.contains("priors"))
    {
        auto const& p = j.at("priors");
        if (p.contains("fixed_effect"))
        {
            s.priors.fixed_effect.mean = p.at("fixed_effect").value("mean", 0.0);
            s.priors.fixed_effect.sd = p.at("fixed_effect").value("sd", 1000.0);
        }
        if (p.contains("zinb_logit_zero"))
            s.priors.zinb_logit_zero = hyper_prior_from_json(p.at("zinb_logit_zero"));
        if (p.contains("zinb_log_size"))
            s.priors.zinb_log_size = hyper_prior_from_json(p.at("zinb_log_size"));
    }
    s.icar_exponent = gmrf::icar_exponent_from_string(j.value("icar_exponent", std::string("as_printed")));
    s.gaussian_obs_precision = j.value("gaussian_obs_precision", 1.0);
    s.unsafe = j.value("unsafe", false);
    s.validate();
    return s;
}

}  // namespace lgm::models
