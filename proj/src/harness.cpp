#include "lgm/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lgm/errors.hpp"
#include "lgm/metrics.hpp"
#include "lgm/parallel.hpp"
#include "lgm/rng.hpp"

namespace lgm::harness {
namespace {

constexpr char const* poisson_label = "poisson_iid";
constexpr char const* bym_label = "bym";

// Stream addresses used by the generators.
enum GenBlock : std::uint32_t
{
    CovariateBlock = 900,
    ZinbCovariateBlock = 901,
    NoiseBlock = 1,
    IcarBlock = 2,
    CountBlock = 3,
    ZeroBlock = 4,
};

enum FamilyTag : std::uint64_t
{
    PoissonFamily = 1,
    BymFamily = 2,
    ZinbFamily = 3,
};

std::uint64_t dataset_seed(StudyConfig const& c, FamilyTag family, std::size_t index)
{
    return derive_seed(derive_seed(c.seed, family), index);
}

std::string dataset_id(std::string const& prefix, std::size_t index)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", index);
    return prefix + "-" + buf;
}

long long poisson_draw(RngStream& rng, double mean)
{
    if (!(mean > 0))
        return 0;
    std::poisson_distribution<long long> d(mean);
    return d(rng);
}

models::ModelSpec poisson_model(StudyConfig const& c)
{
    auto s = models::poisson_iid_spec({"x"}, c.poisson_loggamma_b);
    for (auto& re : s.random_effects)
        re.precision_prior.convention = c.loggamma_convention;
    return s;
}

models::ModelSpec bym_model(StudyConfig const& c)
{
    auto s = models::bym_spec({"x"}, c.bym_loggamma_b);
    for (auto& re : s.random_effects)
        re.precision_prior.convention = c.loggamma_convention;
    s.icar_exponent = c.icar_exponent;
    return s;
}

std::vector<std::string> zinb_covariate_names(StudyConfig const& c)
{
    std::vector<std::string> names;
    for (std::size_t k = 0; k < c.generating.zinb_slopes.size(); ++k)
        names.push_back("z" + std::to_string(k + 1));
    return names;
}

models::ModelSpec zinb_model(StudyConfig const& c)
{
    return models::zinb_spec(zinb_covariate_names(c));
}

laplace::LaplaceConfig laplace_config(StudyConfig const& c, models::ModelSpec const& spec)
{
    auto cfg = c.laplace;
    cfg.workers = 1;
    if (c.fixed_effects_only && cfg.latent_subset.empty())
    {
        std::size_t p = spec.fixed_effects.size() + (spec.include_intercept ? 1 : 0);
        for (std::size_t j = 0; j < p; ++j)
            cfg.latent_subset.push_back(j);
    }
    return cfg;
}

double type7(std::vector<double> v, double p)
{
    std::sort(v.begin(), v.end());
    return mcmc::quantile_type7(std::move(v), p);
}

struct EngineFits
{
    std::optional<laplace::FitResult> laplace;
    std::optional<mcmc::ChainOutput> chain;
    std::optional<mcmc::DiagnosticsReport> diagnostics;
};

// Runs both engines on one dataset. Failures are appended to `failures` and
// leave the corresponding slot empty.
EngineFits fit_both(StudyConfig const& c, models::ModelSpec const& spec, models::Dataset const& data,
                    std::string const& model_label, std::vector<std::string> const& tracked,
                    std::uint64_t chain_seed, std::vector<FailureRow>& failures)
{
    EngineFits f;
    auto fail = [&](std::string const& engine, std::string const& cause, std::string const& detail) {
        failures.push_back({c.id, data.id, model_label, engine, cause, detail});
    };
    try
    {
        f.laplace = laplace::fit(spec, data, c.strategy, laplace_config(c, spec));
    }
    catch (laplace::FitFailure const& e)
    {
        fail("laplace", laplace::FitFailure::to_string(e.cause()), e.detail());
    }
    catch (std::exception const& e)
    {
        fail("laplace", "Error", e.what());
    }
    try
    {
        auto chain = c.chain;
        chain.seed = chain_seed;
        f.chain = mcmc::run_chain(spec, data, chain);
        f.diagnostics = mcmc::diagnostics(*f.chain, tracked);
        if (f.diagnostics->verdict == mcmc::Verdict::Fail)
        {
            std::string why;
            for (auto const& r : f.diagnostics->reasons)
                why += (why.empty() ? "" : "; ") + r;
            fail("mcmc", "DiagnosticsFail", why);
            f.chain.reset();
        }
    }
    catch (mcmc::ImproperPosterior const& e)
    {
        fail("mcmc", "ImproperPosterior", e.what());
    }
    catch (OverflowError const& e)
    {
        fail("mcmc", "Overflow", e.what());
    }
    catch (std::exception const& e)
    {
        fail("mcmc", "Error", e.what());
    }
    return f;
}

std::vector<ParameterRow> parameter_rows(StudyConfig const& c, models::Dataset const& data,
                                         std::string const& model_label, std::vector<std::string> const& tracked,
                                         EngineFits const& f)
{
    std::vector<ParameterRow> rows;
    for (auto const& name : tracked)
    {
        ParameterRow r;
        r.study = c.id;
        r.dataset = data.id;
        r.model = model_label;
        r.parameter = name;
        PosteriorMarginal const* m = nullptr;
        for (auto const& lm : f.laplace->latent)
            if (lm.name == name)
                m = &lm;
        if (!m)
            m = &f.laplace->hyper_marginal(name).natural;
        r.laplace_mean = m->mean;
        r.laplace_sd = m->sd;
        r.laplace_q025 = m->quantile(0.025);
        r.laplace_q50 = m->quantile(0.5);
        r.laplace_q975 = m->quantile(0.975);
        auto s = mcmc::summarize(f.chain->column(name));
        r.mcmc_mean = s.mean;
        r.mcmc_sd = s.sd;
        r.mcmc_q025 = s.q025;
        r.mcmc_q50 = s.q50;
        r.mcmc_q975 = s.q975;
        r.mcmc_ess = s.ess;
        if (s.sd > 0)
        {
            auto pe = metrics::percent_error(r.laplace_mean, r.mcmc_mean, s.sd);
            r.pe = pe.value;
            r.pe_class = metrics::to_string(pe.classification);
        }
        else
        {
            r.pe = NAN;
            r.pe_class = "Undefined";
        }
        auto g = data.generating_values.find(name);
        if (g != data.generating_values.end() && g->second != 0.0)
        {
            r.generating = g->second;
            r.pc_laplace = metrics::percent_change(r.laplace_mean, g->second);
            r.pc_mcmc = metrics::percent_change(r.mcmc_mean, g->second);
        }
        r.status = mcmc::to_string(f.diagnostics->verdict);
        rows.push_back(std::move(r));
    }
    return rows;
}

template <class Fn>
ComparisonReport run_indexed(StudyConfig const& c, std::vector<models::Dataset> const& data, Fn&& per_dataset)
{
    std::vector<ComparisonReport> parts(data.size());
    parallel_for(data.size(), c.workers, [&](std::size_t i) { parts[i] = per_dataset(i, data[i]); });
    ComparisonReport out;
    for (auto const& d : data)
        out.datasets.push_back({c.id, d.id});
    for (auto const& p : parts)
        out.append(p);
    return out;
}

std::string hex64(std::uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

bool parse_bool(std::string const& s)
{
    if (s == "true")
        return true;
    if (s == "false")
        return false;
    throw std::invalid_argument("not a boolean: " + s);
}

double parse_double(std::string const& s)
{
    if (s == "nan" || s == "-nan")
        return NAN;
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size())
        throw std::invalid_argument("not a number: " + s);
    return v;
}

std::string opt_str(std::optional<double> const& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> parse_opt(std::string const& s)
{
    if (s.empty())
        return std::nullopt;
    return parse_double(s);
}

std::string serialize(ComparisonReport const& r)
{
    std::string out;
    for (auto const& [stem, t] : report_tables(r))
        out += "## " + stem + "\n" + to_csv(t);
    return out;
}

}  // namespace

std::string to_string(StudyKind k)
{
    switch (k)
    {
    case StudyKind::PoissonStudy: return "poisson";
    case StudyKind::BymStudy: return "bym";
    case StudyKind::SelectionStudy: return "selection";
    case StudyKind::ZinbStudy: return "zinb";
    }
    return "unknown";
}

StudyKind study_kind_from_string(std::string const& s)
{
    if (s == "poisson")
        return StudyKind::PoissonStudy;
    if (s == "bym")
        return StudyKind::BymStudy;
    if (s == "selection")
        return StudyKind::SelectionStudy;
    if (s == "zinb")
        return StudyKind::ZinbStudy;
    throw std::invalid_argument("unknown study kind: " + s);
}

std::string to_string(Scale s) { return s == Scale::Desk ? "desk" : "paper"; }

Scale scale_from_string(std::string const& s)
{
    if (s == "desk")
        return Scale::Desk;
    if (s == "paper")
        return Scale::Paper;
    throw std::invalid_argument("unknown scale: " + s);
}

void StudyConfig::validate() const
{
    if (n_datasets < 1)
        throw std::invalid_argument("a study needs at least one dataset");
    if (n_areas() < 2)
        throw std::invalid_argument("a study needs at least two areas");
    if (kind == StudyKind::ZinbStudy && zinb_n < 10)
        throw std::invalid_argument("zero-inflated study needs at least 10 observations");
    if (!(poisson_loggamma_b > 0) || !(bym_loggamma_b > 0))
        throw std::invalid_argument("LogGamma b must be positive");
    if (!(generating.p_zero >= 0 && generating.p_zero < 1) || !(generating.size > 0))
        throw std::invalid_argument("invalid zero-inflation generating values");
    if (!(generating.prec_eps > 0) || !(generating.prec_mu > 0))
        throw std::invalid_argument("generating precisions must be positive");
    chain.validate();
}

StudyConfig StudyConfig::defaults(StudyKind kind, Scale scale)
{
    StudyConfig c;
    c.kind = kind;
    c.id = to_string(kind);
    if (scale == Scale::Paper)
    {
        c.n_datasets = 100;
        c.lattice_rows = 8;
        c.lattice_cols = 37;
        c.chain.iterations = 2000000;
        c.chain.burn_in = 100000;
        c.chain.thin = 200;
        c.chain.adaptation_window = 500;
        if (kind == StudyKind::ZinbStudy)
        {
            c.n_datasets = 20;
            c.zinb_n = 3108;
        }
    }
    return c;
}

nlohmann::json to_json(StudyConfig const& c)
{
    auto const& g = c.generating;
    return {{"kind", to_string(c.kind)},
            {"id", c.id},
            {"n_datasets", c.n_datasets},
            {"lattice_rows", c.lattice_rows},
            {"lattice_cols", c.lattice_cols},
            {"zinb_n", c.zinb_n},
            {"seed", c.seed},
            {"workers", c.workers},
            {"generating",
             {{"intercept", g.intercept},
              {"slope", g.slope},
              {"prec_eps", g.prec_eps},
              {"prec_mu", g.prec_mu},
              {"zinb_intercept", g.zinb_intercept},
              {"zinb_slopes", g.zinb_slopes},
              {"p_zero", g.p_zero},
              {"size", g.size}}},
            {"covariate_csv", c.covariate_csv},
            {"zero_noise", c.zero_noise},
            {"poisson_loggamma_b", c.poisson_loggamma_b},
            {"bym_loggamma_b", c.bym_loggamma_b},
            {"loggamma_convention", c.loggamma_convention == models::GammaConvention::Rate ? "rate" : "scale"},
            {"icar_exponent", gmrf::to_string(c.icar_exponent)},
            {"strategy", laplace::to_string(c.strategy)},
            {"laplace", laplace::to_json(c.laplace)},
            {"fixed_effects_only", c.fixed_effects_only},
            {"chain", mcmc::to_json(c.chain)}};
}

StudyConfig study_config_from_json(nlohmann::json const& j, StudyConfig c)
{
    c.kind = study_kind_from_string(j.value("kind", to_string(c.kind)));
    c.id = j.value("id", c.id);
    c.n_datasets = j.value("n_datasets", c.n_datasets);
    c.lattice_rows = j.value("lattice_rows", c.lattice_rows);
    c.lattice_cols = j.value("lattice_cols", c.lattice_cols);
    c.zinb_n = j.value("zinb_n", c.zinb_n);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    if (j.contains("generating"))
    {
        auto const& g = j.at("generating");
        auto& o = c.generating;
        o.intercept = g.value("intercept", o.intercept);
        o.slope = g.value("slope", o.slope);
        o.prec_eps = g.value("prec_eps", o.prec_eps);
        o.prec_mu = g.value("prec_mu", o.prec_mu);
        o.zinb_intercept = g.value("zinb_intercept", o.zinb_intercept);
        o.zinb_slopes = g.value("zinb_slopes", o.zinb_slopes);
        o.p_zero = g.value("p_zero", o.p_zero);
        o.size = g.value("size", o.size);
    }
    c.covariate_csv = j.value("covariate_csv", c.covariate_csv);
    c.zero_noise = j.value("zero_noise", c.zero_noise);
    c.poisson_loggamma_b = j.value("poisson_loggamma_b", c.poisson_loggamma_b);
    c.bym_loggamma_b = j.value("bym_loggamma_b", c.bym_loggamma_b);
    if (j.contains("loggamma_convention"))
    {
        auto s = j.at("loggamma_convention").get<std::string>();
        if (s != "rate" && s != "scale")
            throw std::invalid_argument("loggamma_convention must be rate or scale");
        c.loggamma_convention = s == "rate" ? models::GammaConvention::Rate : models::GammaConvention::Scale;
    }
    if (j.contains("icar_exponent"))
        c.icar_exponent = gmrf::icar_exponent_from_string(j.at("icar_exponent").get<std::string>());
    if (j.contains("strategy"))
        c.strategy = laplace::strategy_from_string(j.at("strategy").get<std::string>());
    if (j.contains("laplace"))
    {
        auto merged = laplace::to_json(c.laplace);
        merged.update(j.at("laplace"));
        auto workers = c.laplace.workers;
        c.laplace = laplace::laplace_config_from_json(merged);
        c.laplace.workers = workers;
    }
    c.fixed_effects_only = j.value("fixed_effects_only", c.fixed_effects_only);
    if (j.contains("chain"))
    {
        auto merged = mcmc::to_json(c.chain);
        merged.update(j.at("chain"));
        c.chain = mcmc::chain_config_from_json(merged);
    }
    c.validate();
    return c;
}

std::uint64_t fnv1a(std::string const& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : bytes)
    {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t config_hash(StudyConfig const& c)
{
    auto j = to_json(c);
    j.erase("workers");
    return fnv1a(j.dump());
}

Covariates study_covariates(StudyConfig const& c)
{
    std::size_t n = c.n_areas();
    Covariates cov;
    if (!c.covariate_csv.empty())
    {
        std::ifstream in(c.covariate_csv);
        if (!in)
            throw std::runtime_error("cannot open covariate file " + c.covariate_csv);
        std::stringstream ss;
        ss << in.rdbuf();
        auto t = parse_csv(ss.str());
        auto col = [&](std::string const& name) {
            auto it = std::find(t.header.begin(), t.header.end(), name);
            if (it == t.header.end())
                throw std::runtime_error("covariate file lacks column " + name);
            return static_cast<std::size_t>(it - t.header.begin());
        };
        auto xi = col("x"), ti = col("total");
        for (auto const& row : t.rows)
        {
            cov.x.push_back(parse_double(row.at(xi)));
            cov.total.push_back(parse_double(row.at(ti)));
        }
        if (cov.x.size() != n)
            throw std::runtime_error("covariate file has " + std::to_string(cov.x.size()) + " rows, study needs "
                                     + std::to_string(n));
    }
    else
    {
        RngStream rng(c.seed, CovariateBlock, 0);
        for (std::size_t i = 0; i < n; ++i)
        {
            cov.x.push_back(60.0 * rng.uniform());
            cov.total.push_back(50.0 + static_cast<double>(poisson_draw(rng, 500.0)));
        }
    }
    for (double t : cov.total)
        if (!(t > 0))
            throw std::invalid_argument("offsets must be positive");
    return cov;
}

gmrf::AdjacencyGraph study_graph(StudyConfig const& c)
{
    return gmrf::lattice_graph(c.lattice_rows, c.lattice_cols);
}

namespace {

models::Dataset base_dataset(Covariates const& cov, gmrf::AdjacencyGraph const& graph)
{
    models::Dataset d;
    auto n = static_cast<Eigen::Index>(cov.x.size());
    d.y.resize(n);
    d.x.resize(n, 1);
    d.offset.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        d.x(i, 0) = cov.x[static_cast<std::size_t>(i)];
        d.offset[i] = cov.total[static_cast<std::size_t>(i)];
    }
    d.columns = {"x"};
    d.graph = graph;
    return d;
}

std::vector<models::Dataset> generate_areal(StudyConfig const& c, gmrf::AdjacencyGraph const& graph, bool spatial)
{
    c.validate();
    auto cov = study_covariates(c);
    auto const& g = c.generating;
    std::optional<gmrf::KrigingSampler> icar;
    if (spatial)
        icar.emplace(gmrf::IcarSpec(graph, g.prec_mu, gmrf::IcarConstraint::SumToZeroKriging, c.icar_exponent));
    std::vector<models::Dataset> out;
    for (std::size_t k = 0; k < c.n_datasets; ++k)
    {
        auto seed = dataset_seed(c, spatial ? BymFamily : PoissonFamily, k);
        auto d = base_dataset(cov, graph);
        d.id = dataset_id(spatial ? bym_label : poisson_label, k);
        RngStream noise(seed, NoiseBlock, 0);
        RngStream counts(seed, CountBlock, 0);
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(d.y.size());
        if (spatial)
        {
            RngStream r(seed, IcarBlock, 0);
            mu = icar->draw(r);
        }
        double eps_sd = 1.0 / std::sqrt(g.prec_eps);
        d.simulated_iid.resize(d.y.size());
        for (Eigen::Index i = 0; i < d.y.size(); ++i)
        {
            double eps = c.zero_noise ? 0.0 : eps_sd * noise.normal();
            double eta = g.intercept + g.slope * d.x(i, 0) + std::log(d.offset[i]) + mu[i] + eps;
            d.y[i] = static_cast<double>(poisson_draw(counts, std::exp(eta)));
            d.simulated_iid[i] = eps;
        }
        if (spatial)
            d.simulated_spatial = mu;
        d.generating_values = {{"(Intercept)", g.intercept}, {"x", g.slope}, {"prec_eps", g.prec_eps}};
        if (spatial)
            d.generating_values["prec_mu"] = g.prec_mu;
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace

std::vector<models::Dataset> generate_poisson_data(StudyConfig const& c)
{
    return generate_areal(c, study_graph(c), false);
}

std::vector<models::Dataset> generate_bym_data(StudyConfig const& c, gmrf::AdjacencyGraph const& graph)
{
    if (graph.n_nodes() != c.n_areas())
        throw DimensionError("graph size does not match the study's area count");
    return generate_areal(c, graph, true);
}

std::vector<models::Dataset> generate_zinb_data(StudyConfig const& c)
{
    c.validate();
    auto const& g = c.generating;
    auto names = zinb_covariate_names(c);
    auto n = static_cast<Eigen::Index>(c.zinb_n);
    auto k = static_cast<Eigen::Index>(names.size());

    // Standardised covariates and populations fixed across datasets.
    Eigen::MatrixXd z(n, k);
    Eigen::VectorXd pop(n);
    RngStream rng(c.seed, ZinbCovariateBlock, 0);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        for (Eigen::Index j = 0; j < k; ++j)
            z(i, j) = rng.normal();
        pop[i] = std::round(std::pow(10.0, 3.5 + 2.0 * rng.uniform()));
    }
    for (Eigen::Index j = 0; j < k; ++j)
    {
        double mean = z.col(j).mean();
        double sd = std::sqrt((z.col(j).array() - mean).square().sum() / static_cast<double>(n - 1));
        z.col(j) = (z.col(j).array() - mean) / sd;
    }

    std::vector<models::Dataset> out;
    for (std::size_t d = 0; d < c.n_datasets; ++d)
    {
        auto seed = dataset_seed(c, ZinbFamily, d);
        models::Dataset ds;
        ds.id = dataset_id("zinb", d);
        ds.x = z;
        ds.columns = names;
        ds.offset = pop;
        ds.y.resize(n);
        RngStream zero(seed, ZeroBlock, 0);
        RngStream counts(seed, CountBlock, 0);
        for (Eigen::Index i = 0; i < n; ++i)
        {
            double eta = g.zinb_intercept + std::log(pop[i]);
            for (Eigen::Index j = 0; j < k; ++j)
                eta += g.zinb_slopes[static_cast<std::size_t>(j)] * z(i, j);
            bool structural = zero.uniform() < g.p_zero;
            std::gamma_distribution<double> gamma(g.size, std::exp(eta) / g.size);
            double lambda = gamma(counts);
            long long y = poisson_draw(counts, lambda);
            ds.y[i] = structural ? 0.0 : static_cast<double>(y);
        }
        ds.generating_values["(Intercept)"] = g.zinb_intercept;
        for (Eigen::Index j = 0; j < k; ++j)
            ds.generating_values[names[static_cast<std::size_t>(j)]] = g.zinb_slopes[static_cast<std::size_t>(j)];
        ds.generating_values["p_zero"] = g.p_zero;
        ds.generating_values["size"] = g.size;
        out.push_back(std::move(ds));
    }
    return out;
}

std::vector<models::Dataset> generate_study_data(StudyConfig const& c)
{
    switch (c.kind)
    {
    case StudyKind::PoissonStudy: return generate_poisson_data(c);
    case StudyKind::BymStudy: return generate_bym_data(c, study_graph(c));
    case StudyKind::ZinbStudy: return generate_zinb_data(c);
    case StudyKind::SelectionStudy:
    {
        auto a = generate_poisson_data(c);
        auto b = generate_bym_data(c, study_graph(c));
        a.insert(a.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
        return a;
    }
    }
    return {};
}

void write_dataset_csv(models::Dataset const& d, std::string const& path)
{
    Table t;
    t.header = {"y"};
    for (auto const& c : d.columns)
        t.header.push_back(c);
    t.header.push_back("offset");
    for (Eigen::Index i = 0; i < d.y.size(); ++i)
    {
        std::vector<std::string> row{format_double(d.y[i])};
        for (Eigen::Index j = 0; j < d.x.cols(); ++j)
            row.push_back(format_double(d.x(i, j)));
        row.push_back(d.offset.size() ? format_double(d.offset[i]) : "1");
        t.rows.push_back(std::move(row));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << to_csv(t);
}

void ComparisonReport::append(ComparisonReport const& o)
{
    parameters.insert(parameters.end(), o.parameters.begin(), o.parameters.end());
    selection.insert(selection.end(), o.selection.begin(), o.selection.end());
    waic_differences.insert(waic_differences.end(), o.waic_differences.begin(), o.waic_differences.end());
    rate_ratios.insert(rate_ratios.end(), o.rate_ratios.begin(), o.rate_ratios.end());
    agreement.insert(agreement.end(), o.agreement.begin(), o.agreement.end());
    failures.insert(failures.end(), o.failures.begin(), o.failures.end());
    datasets.insert(datasets.end(), o.datasets.begin(), o.datasets.end());
}

ComparisonReport run_paired_study(StudyConfig const& c)
{
    bool spatial = c.kind == StudyKind::BymStudy;
    if (!spatial && c.kind != StudyKind::PoissonStudy)
        throw std::invalid_argument("paired study needs a poisson or bym study config");
    auto data = generate_study_data(c);
    auto spec = spatial ? bym_model(c) : poisson_model(c);
    std::string label = spatial ? bym_label : poisson_label;
    std::vector<std::string> tracked{"x", "prec_eps"};
    if (spatial)
        tracked.push_back("prec_mu");
    return run_indexed(c, data, [&](std::size_t i, models::Dataset const& d) {
        ComparisonReport r;
        auto fits = fit_both(c, spec, d, label, tracked, derive_seed(dataset_seed(c, spatial ? BymFamily : PoissonFamily, i), 100),
                             r.failures);
        if (fits.laplace && fits.chain)
            r.parameters = parameter_rows(c, d, label, tracked, fits);
        return r;
    });
}

ComparisonReport run_selection_study(StudyConfig const& c)
{
    if (c.kind != StudyKind::SelectionStudy)
        throw std::invalid_argument("selection study needs a selection config");
    auto data = generate_study_data(c);
    auto specs = std::array{poisson_model(c), bym_model(c)};
    std::array<std::string, 2> labels{poisson_label, bym_label};
    std::array<std::vector<std::string>, 2> tracked{std::vector<std::string>{"x", "prec_eps"},
                                                    std::vector<std::string>{"x", "prec_eps", "prec_mu"}};
    return run_indexed(c, data, [&](std::size_t i, models::Dataset const& d) {
        ComparisonReport r;
        bool spatial = i >= c.n_datasets;
        std::string truth = spatial ? bym_label : poisson_label;
        auto seed = dataset_seed(c, spatial ? BymFamily : PoissonFamily, i % c.n_datasets);
        std::array<double, 2> wl{}, wm{};
        bool ok = true;
        for (std::size_t m = 0; m < 2; ++m)
        {
            auto fits = fit_both(c, specs[m], d, labels[m], tracked[m], derive_seed(seed, 200 + m), r.failures);
            try
            {
                if (fits.laplace)
                    wl[m] = metrics::waic(fits.laplace->pointwise, fits.laplace->weights).waic;
                if (fits.chain)
                    wm[m] = metrics::waic(fits.chain->pointwise).waic;
            }
            catch (std::exception const& e)
            {
                r.failures.push_back({c.id, d.id, labels[m], "waic", "Error", e.what()});
                ok = false;
            }
            ok = ok && fits.laplace && fits.chain;
        }
        if (!ok)
            return r;
        auto sl = metrics::select_model(wl[0], wl[1], labels[0], labels[1]);
        auto sm = metrics::select_model(wm[0], wm[1], labels[0], labels[1]);
        SelectionRow row;
        row.study = c.id;
        row.dataset = d.id;
        row.generating_model = truth;
        row.waic_laplace_poisson = wl[0];
        row.waic_laplace_bym = wl[1];
        row.waic_mcmc_poisson = wm[0];
        row.waic_mcmc_bym = wm[1];
        row.selected_laplace = sl.selected;
        row.selected_mcmc = sm.selected;
        row.tie_laplace = sl.tie;
        row.tie_mcmc = sm.tie;
        row.correct_laplace = sl.selected == truth;
        row.correct_mcmc = sm.selected == truth;
        for (std::size_t m = 0; m < 2; ++m)
            r.waic_differences.push_back({c.id, d.id, truth, labels[m], wl[m], wm[m], wl[m] - wm[m],
                                          row.correct_laplace, row.correct_mcmc});
        r.selection.push_back(std::move(row));
        return r;
    });
}

ComparisonReport run_zinb_study(StudyConfig const& c)
{
    if (c.kind != StudyKind::ZinbStudy)
        throw std::invalid_argument("zero-inflated study needs a zinb config");
    auto data = generate_study_data(c);
    auto spec = zinb_model(c);
    auto names = zinb_covariate_names(c);
    std::vector<std::string> tracked{"(Intercept)"};
    tracked.insert(tracked.end(), names.begin(), names.end());
    tracked.push_back("p_zero");
    tracked.push_back("size");

    // Quartiles of the (shared) covariates.
    std::vector<std::pair<double, double>> quartiles;
    if (!data.empty())
        for (Eigen::Index j = 0; j < data.front().x.cols(); ++j)
        {
            std::vector<double> col(data.front().x.col(j).begin(), data.front().x.col(j).end());
            quartiles.emplace_back(type7(col, 0.25), type7(col, 0.75));
        }

    return run_indexed(c, data, [&](std::size_t i, models::Dataset const& d) {
        ComparisonReport r;
        auto fits = fit_both(c, spec, d, "zinb", tracked, derive_seed(dataset_seed(c, ZinbFamily, i), 300), r.failures);
        if (!(fits.laplace && fits.chain))
            return r;
        r.parameters = parameter_rows(c, d, "zinb", tracked, fits);
        for (std::size_t j = 0; j < names.size(); ++j)
        {
            auto [q1, q3] = quartiles[j];
            auto rl = metrics::rate_ratio(fits.laplace->latent_marginal(names[j]), q1, q3, names[j]);
            auto rm = metrics::rate_ratio(fits.chain->column(names[j]), q1, q3, names[j]);
            double gen = d.generating_values.at(names[j]);
            r.rate_ratios.push_back({c.id, d.id, "laplace", names[j], rl.ratio, rl.mean, rl.lo, rl.hi, rl.significant, gen});
            r.rate_ratios.push_back({c.id, d.id, "mcmc", names[j], rm.ratio, rm.mean, rm.lo, rm.hi, rm.significant, gen});
            bool same_dir = (rl.ratio > 1.0) == (rm.ratio > 1.0);
            r.agreement.push_back(
                {c.id, d.id, names[j], rl.significant, rm.significant, rl.significant == rm.significant, same_dir});
        }
        return r;
    });
}

ComparisonReport run_study(StudyConfig const& c)
{
    switch (c.kind)
    {
    case StudyKind::PoissonStudy:
    case StudyKind::BymStudy: return run_paired_study(c);
    case StudyKind::SelectionStudy: return run_selection_study(c);
    case StudyKind::ZinbStudy: return run_zinb_study(c);
    }
    return {};
}

PipelineConfig PipelineConfig::defaults(Scale scale, std::uint64_t seed)
{
    PipelineConfig p;
    for (auto k : {StudyKind::PoissonStudy, StudyKind::BymStudy, StudyKind::SelectionStudy, StudyKind::ZinbStudy})
    {
        auto c = StudyConfig::defaults(k, scale);
        c.seed = seed;
        p.studies.push_back(c);
    }
    return p;
}

PipelineConfig pipeline_from_json(nlohmann::json const& j, Scale scale, std::uint64_t seed)
{
    if (j.contains("scale"))
        scale = scale_from_string(j.at("scale").get<std::string>());
    seed = j.value("seed", seed);
    if (!j.contains("studies"))
    {
        auto p = PipelineConfig::defaults(scale, seed);
        for (auto& c : p.studies)
            if (j.contains("defaults"))
                c = study_config_from_json(j.at("defaults"), c);
        return p;
    }
    PipelineConfig p;
    for (auto const& s : j.at("studies"))
    {
        auto kind = study_kind_from_string(s.at("kind").get<std::string>());
        auto base = StudyConfig::defaults(kind, scale);
        base.seed = seed;
        if (j.contains("defaults"))
            base = study_config_from_json(j.at("defaults"), base);
        p.studies.push_back(study_config_from_json(s, base));
    }
    std::set<std::string> ids;
    for (auto const& c : p.studies)
        if (!ids.insert(c.id).second)
            throw std::invalid_argument("duplicate study id " + c.id);
    return p;
}

nlohmann::json to_json(PipelineConfig const& p)
{
    nlohmann::json s = nlohmann::json::array();
    for (auto const& c : p.studies)
        s.push_back(to_json(c));
    return {{"studies", s}};
}

ComparisonReport run_pipeline(PipelineConfig const& p, std::size_t workers)
{
    ComparisonReport out;
    for (auto c : p.studies)
    {
        c.workers = workers;
        out.append(run_study(c));
    }
    return out;
}

std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string to_csv(Table const& t)
{
    auto field = [](std::string const& s) {
        if (s.find_first_of(",\"\n\r") == std::string::npos)
            return s;
        std::string q = "\"";
        for (char ch : s)
        {
            if (ch == '"')
                q += '"';
            q += ch;
        }
        return q + "\"";
    };
    std::string out;
    auto line = [&](std::vector<std::string> const& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i)
            out += (i ? "," : "") + field(cells[i]);
        out += "\n";
    };
    line(t.header);
    for (auto const& r : t.rows)
        line(r);
    return out;
}

Table parse_csv(std::string const& text)
{
    std::vector<std::vector<std::string>> lines;
    std::vector<std::string> row;
    std::string cell;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i)
    {
        char ch = text[i];
        if (quoted)
        {
            if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"')
                cell += '"', ++i;
            else if (ch == '"')
                quoted = false;
            else
                cell += ch;
            continue;
        }
        if (ch == '"')
            quoted = true, any = true;
        else if (ch == ',')
        {
            row.push_back(std::move(cell));
            cell.clear();
            any = true;
        }
        else if (ch == '\n' || ch == '\r')
        {
            if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n')
                ++i;
            if (any || !cell.empty())
            {
                row.push_back(std::move(cell));
                lines.push_back(std::move(row));
            }
            cell.clear();
            row.clear();
            any = false;
        }
        else
            cell += ch, any = true;
    }
    if (quoted)
        throw std::invalid_argument("unterminated quoted CSV field");
    if (any || !cell.empty())
    {
        row.push_back(std::move(cell));
        lines.push_back(std::move(row));
    }
    Table t;
    if (lines.empty())
        return t;
    t.header = std::move(lines.front());
    for (std::size_t i = 1; i < lines.size(); ++i)
    {
        if (lines[i].size() != t.header.size())
            throw std::invalid_argument("CSV row " + std::to_string(i + 1) + " has " + std::to_string(lines[i].size())
                                        + " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(lines[i]));
    }
    return t;
}

std::vector<std::pair<std::string, Table>> report_tables(ComparisonReport const& r)
{
    auto f = format_double;
    std::vector<std::pair<std::string, Table>> out;

    Table params{{"study", "dataset", "model", "parameter", "laplace_mean", "laplace_sd", "laplace_q025", "laplace_q50",
                  "laplace_q975", "mcmc_mean", "mcmc_sd", "mcmc_q025", "mcmc_q50", "mcmc_q975", "mcmc_ess", "pe",
                  "pe_class", "generating", "pc_laplace", "pc_mcmc", "status"},
                 {}};
    for (auto const& p : r.parameters)
        params.rows.push_back({p.study, p.dataset, p.model, p.parameter, f(p.laplace_mean), f(p.laplace_sd),
                               f(p.laplace_q025), f(p.laplace_q50), f(p.laplace_q975), f(p.mcmc_mean), f(p.mcmc_sd),
                               f(p.mcmc_q025), f(p.mcmc_q50), f(p.mcmc_q975), f(p.mcmc_ess), f(p.pe), p.pe_class,
                               opt_str(p.generating), opt_str(p.pc_laplace), opt_str(p.pc_mcmc), p.status});
    out.emplace_back("parameters", std::move(params));

    Table sel{{"study", "dataset", "generating_model", "waic_laplace_poisson_iid", "waic_laplace_bym",
               "waic_mcmc_poisson_iid", "waic_mcmc_bym", "selected_laplace", "selected_mcmc", "tie_laplace", "tie_mcmc",
               "correct_laplace", "correct_mcmc"},
              {}};
    for (auto const& s : r.selection)
        sel.rows.push_back({s.study, s.dataset, s.generating_model, f(s.waic_laplace_poisson), f(s.waic_laplace_bym),
                            f(s.waic_mcmc_poisson), f(s.waic_mcmc_bym), s.selected_laplace, s.selected_mcmc,
                            bool_str(s.tie_laplace), bool_str(s.tie_mcmc), bool_str(s.correct_laplace),
                            bool_str(s.correct_mcmc)});
    out.emplace_back("selection", std::move(sel));

    Table wd{{"study", "dataset", "generating_model", "model", "waic_laplace", "waic_mcmc", "difference",
              "correct_laplace", "correct_mcmc"},
             {}};
    for (auto const& w : r.waic_differences)
        wd.rows.push_back({w.study, w.dataset, w.generating_model, w.model, f(w.waic_laplace), f(w.waic_mcmc),
                           f(w.difference), bool_str(w.correct_laplace), bool_str(w.correct_mcmc)});
    out.emplace_back("waic_differences", std::move(wd));

    Table rr{{"study", "dataset", "engine", "covariate", "ratio", "mean", "lo", "hi", "significant", "generating"}, {}};
    for (auto const& x : r.rate_ratios)
        rr.rows.push_back({x.study, x.dataset, x.engine, x.covariate, f(x.ratio), f(x.mean), f(x.lo), f(x.hi),
                           bool_str(x.significant), f(x.generating)});
    out.emplace_back("rate_ratios", std::move(rr));

    Table ag{{"study", "dataset", "covariate", "significant_laplace", "significant_mcmc", "same_significance",
              "same_direction"},
             {}};
    for (auto const& a : r.agreement)
        ag.rows.push_back({a.study, a.dataset, a.covariate, bool_str(a.significant_laplace), bool_str(a.significant_mcmc),
                           bool_str(a.same_significance), bool_str(a.same_direction)});
    out.emplace_back("rate_ratio_agreement", std::move(ag));

    Table fl{{"study", "dataset", "model", "engine", "cause", "detail"}, {}};
    for (auto const& x : r.failures)
        fl.rows.push_back({x.study, x.dataset, x.model, x.engine, x.cause, x.detail});
    out.emplace_back("failures", std::move(fl));

    Table ds{{"study", "dataset"}, {}};
    for (auto const& d : r.datasets)
        ds.rows.push_back({d.study, d.dataset});
    out.emplace_back("datasets", std::move(ds));

    // Plot-ready long formats.
    Table pe{{"study", "dataset", "model", "parameter", "pe"}, {}};
    Table pc{{"study", "dataset", "model", "parameter", "engine", "pc"}, {}};
    for (auto const& p : r.parameters)
    {
        pe.rows.push_back({p.study, p.dataset, p.model, p.parameter, f(p.pe)});
        if (p.generating)
        {
            pc.rows.push_back({p.study, p.dataset, p.model, p.parameter, "laplace", opt_str(p.pc_laplace)});
            pc.rows.push_back({p.study, p.dataset, p.model, p.parameter, "mcmc", opt_str(p.pc_mcmc)});
        }
    }
    out.emplace_back("plot_pe_by_parameter", std::move(pe));
    out.emplace_back("plot_pc_by_engine", std::move(pc));

    Table wo{{"study", "dataset", "generating_model", "model", "laplace_outcome", "mcmc_outcome", "difference"}, {}};
    auto outcome = [](bool ok) { return std::string(ok ? "correct" : "incorrect"); };
    for (auto const& w : r.waic_differences)
        wo.rows.push_back({w.study, w.dataset, w.generating_model, w.model, outcome(w.correct_laplace),
                           outcome(w.correct_mcmc), f(w.difference)});
    out.emplace_back("plot_waic_difference_by_outcome", std::move(wo));
    return out;
}

ComparisonReport report_from_tables(std::map<std::string, Table> const& tables)
{
    ComparisonReport r;
    auto rows = [&](std::string const& stem) -> std::vector<std::vector<std::string>> const& {
        static std::vector<std::vector<std::string>> const empty;
        auto it = tables.find(stem);
        return it == tables.end() ? empty : it->second.rows;
    };
    auto d = parse_double;
    for (auto const& x : rows("parameters"))
    {
        ParameterRow p;
        p.study = x[0], p.dataset = x[1], p.model = x[2], p.parameter = x[3];
        p.laplace_mean = d(x[4]), p.laplace_sd = d(x[5]), p.laplace_q025 = d(x[6]), p.laplace_q50 = d(x[7]);
        p.laplace_q975 = d(x[8]), p.mcmc_mean = d(x[9]), p.mcmc_sd = d(x[10]), p.mcmc_q025 = d(x[11]);
        p.mcmc_q50 = d(x[12]), p.mcmc_q975 = d(x[13]), p.mcmc_ess = d(x[14]), p.pe = d(x[15]);
        p.pe_class = x[16], p.generating = parse_opt(x[17]), p.pc_laplace = parse_opt(x[18]);
        p.pc_mcmc = parse_opt(x[19]), p.status = x[20];
        r.parameters.push_back(std::move(p));
    }
    for (auto const& x : rows("selection"))
        r.selection.push_back({x[0], x[1], x[2], d(x[3]), d(x[4]), d(x[5]), d(x[6]), x[7], x[8], parse_bool(x[9]),
                               parse_bool(x[10]), parse_bool(x[11]), parse_bool(x[12])});
    for (auto const& x : rows("waic_differences"))
        r.waic_differences.push_back(
            {x[0], x[1], x[2], x[3], d(x[4]), d(x[5]), d(x[6]), parse_bool(x[7]), parse_bool(x[8])});
    for (auto const& x : rows("rate_ratios"))
        r.rate_ratios.push_back(
            {x[0], x[1], x[2], x[3], d(x[4]), d(x[5]), d(x[6]), d(x[7]), parse_bool(x[8]), d(x[9])});
    for (auto const& x : rows("rate_ratio_agreement"))
        r.agreement.push_back(
            {x[0], x[1], x[2], parse_bool(x[3]), parse_bool(x[4]), parse_bool(x[5]), parse_bool(x[6])});
    for (auto const& x : rows("failures"))
        r.failures.push_back({x[0], x[1], x[2], x[3], x[4], x[5]});
    for (auto const& x : rows("datasets"))
        r.datasets.push_back({x[0], x[1]});
    return r;
}

nlohmann::json to_json(ComparisonReport const& r)
{
    nlohmann::json out = nlohmann::json::object();
    for (auto const& [stem, t] : report_tables(r))
    {
        if (stem.rfind("plot_", 0) == 0)
            continue;
        nlohmann::json rows = nlohmann::json::array();
        for (auto const& row : t.rows)
        {
            nlohmann::json o = nlohmann::json::object();
            for (std::size_t i = 0; i < t.header.size(); ++i)
                o[t.header[i]] = row[i];
            rows.push_back(std::move(o));
        }
        out[stem] = std::move(rows);
    }
    // Nest parameter records under study and dataset.
    nlohmann::json nested = nlohmann::json::object();
    for (auto const& p : r.parameters)
        nested[p.study][p.dataset][p.model][p.parameter] = {
            {"laplace", {{"mean", p.laplace_mean}, {"sd", p.laplace_sd}, {"q025", p.laplace_q025},
                         {"q50", p.laplace_q50}, {"q975", p.laplace_q975}}},
            {"mcmc", {{"mean", p.mcmc_mean}, {"sd", p.mcmc_sd}, {"q025", p.mcmc_q025}, {"q50", p.mcmc_q50},
                      {"q975", p.mcmc_q975}, {"ess", p.mcmc_ess}}},
            {"pe", p.pe},
            {"pe_class", p.pe_class}};
    out["by_study"] = std::move(nested);
    out["engine_version"] = laplace::engine_version;
    return out;
}

std::vector<std::string> emit_report(ComparisonReport const& r, std::string const& dir, bool csv, bool json)
{
    std::filesystem::create_directories(dir);
    std::vector<std::string> written;
    auto write = [&](std::string const& name, std::string const& body) {
        auto path = (std::filesystem::path(dir) / name).string();
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw std::runtime_error("cannot write " + path);
        out << body;
        written.push_back(path);
    };
    if (csv)
        for (auto const& [stem, t] : report_tables(r))
            write(stem + ".csv", to_csv(t));
    if (json)
        write("report.json", to_json(r).dump(2) + "\n");
    return written;
}

std::map<std::string, Table> read_report_dir(std::string const& dir)
{
    std::map<std::string, Table> out;
    for (auto const& [stem, t] : report_tables(ComparisonReport{}))
    {
        auto path = std::filesystem::path(dir) / (stem + ".csv");
        std::ifstream in(path, std::ios::binary);
        if (!in)
            continue;
        std::stringstream ss;
        ss << in.rdbuf();
        out[stem] = parse_csv(ss.str());
    }
    return out;
}

AuditReport reproducibility_audit(PipelineConfig const& p, AuditOptions const& options)
{
    PipelineConfig cfg = p;
    if (options.inject_nondeterminism)
        for (auto& c : cfg.studies)
            c.laplace.debug_shuffle_reduction = true;

    AuditReport a;
    a.engine_version = laplace::engine_version;
    auto j = to_json(cfg);
    for (auto& s : j["studies"])
        s.erase("workers");
    a.config_hash = hex64(fnv1a(j.dump()));

    std::vector<std::vector<std::pair<std::string, Table>>> outputs;
    for (auto w : options.worker_counts)
    {
        auto report = run_pipeline(cfg, w);
        a.runs.push_back({w, hex64(fnv1a(serialize(report)))});
        outputs.push_back(report_tables(report));
    }
    for (std::size_t k = 1; k < outputs.size(); ++k)
    {
        if (a.runs[k].digest == a.runs[0].digest)
            continue;
        for (std::size_t t = 0; t < outputs[0].size(); ++t)
        {
            auto const& ta = outputs[0][t].second;
            auto const& tb = outputs[k][t].second;
            std::size_t n = std::max(ta.rows.size(), tb.rows.size());
            for (std::size_t i = 0; i < n; ++i)
            {
                bool in_a = i < ta.rows.size(), in_b = i < tb.rows.size();
                if (in_a && in_b && ta.rows[i] == tb.rows[i])
                    continue;
                Mismatch m;
                m.run_a = 0;
                m.run_b = k;
                m.table = outputs[0][t].first;
                m.line = i + 2;
                auto const& ref = in_a ? ta.rows[i] : tb.rows[i];
                for (std::size_t c = 0; c < std::min<std::size_t>(4, ref.size()); ++c)
                    m.record += (c ? "/" : "") + ref[c];
                if (in_a && in_b)
                {
                    for (std::size_t c = 0; c < ta.header.size(); ++c)
                        if (ta.rows[i][c] != tb.rows[i][c])
                        {
                            m.column = ta.header[c];
                            m.value_a = ta.rows[i][c];
                            m.value_b = tb.rows[i][c];
                            break;
                        }
                }
                else
                {
                    m.column = "(row count)";
                    m.value_a = std::to_string(ta.rows.size());
                    m.value_b = std::to_string(tb.rows.size());
                }
                a.mismatches.push_back(std::move(m));
                break;
            }
        }
    }
    a.pass = a.mismatches.empty();
    for (std::size_t k = 1; k < a.runs.size(); ++k)
        a.pass = a.pass && a.runs[k].digest == a.runs[0].digest;
    return a;
}

nlohmann::json to_json(AuditReport const& a)
{
    nlohmann::json runs = nlohmann::json::array();
    for (auto const& r : a.runs)
        runs.push_back({{"workers", r.workers}, {"digest", r.digest}});
    nlohmann::json mm = nlohmann::json::array();
    for (auto const& m : a.mismatches)
        mm.push_back({{"run_a", m.run_a},
                      {"run_b", m.run_b},
                      {"table", m.table},
                      {"line", m.line},
                      {"record", m.record},
                      {"column", m.column},
                      {"value_a", m.value_a},
                      {"value_b", m.value_b}});
    return {{"verdict", a.pass ? "PASS" : "FAIL"},
            {"engine_version", a.engine_version},
            {"config_hash", a.config_hash},
            {"runs", runs},
            {"mismatches", mm}};
}

}  // namespace lgm::harness
