#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "lgm/gmrf.hpp"
#include "lgm/laplace.hpp"
#include "lgm/mcmc.hpp"
#include "lgm/models.hpp"

namespace lgm::harness {

enum class StudyKind
{
    PoissonStudy,
    BymStudy,
    SelectionStudy,
    ZinbStudy,
};

std::string to_string(StudyKind k);
StudyKind study_kind_from_string(std::string const& s);

enum class Scale
{
    Desk,
    Paper,
};

std::string to_string(Scale s);
Scale scale_from_string(std::string const& s);

struct Generating
{
    double intercept = 0.1;
    double slope = 0.05;
    double prec_eps = 1.0;
    double prec_mu = 1.0;
    // Zero-inflated counts.
    double zinb_intercept = -7.0;
    std::vector<double> zinb_slopes = {0.3, -0.2, 0.15, 0.0, 0.1};
    double p_zero = 0.3;
    double size = 2.0;
};

struct StudyConfig
{
    StudyKind kind = StudyKind::PoissonStudy;
    std::string id = "poisson";
    std::size_t n_datasets = 20;
    std::size_t lattice_rows = 5;  // areas = rows x cols; also the Poisson sample size
    std::size_t lattice_cols = 10;
    std::size_t zinb_n = 500;
    std::uint64_t seed = 20210701;
    std::size_t workers = 1;
    Generating generating;
    // Optional CSV with columns x,total replacing the synthetic covariates.
    std::string covariate_csv;
    // Sets every iid effect to zero.
    bool zero_noise = false;

    double poisson_loggamma_b = 5e-5;
    double bym_loggamma_b = 5e-4;
    models::GammaConvention loggamma_convention = models::GammaConvention::Rate;
    gmrf::IcarExponent icar_exponent = gmrf::IcarExponent::AsPrinted;

    laplace::Strategy strategy = laplace::Strategy::FullLaplace;
    laplace::LaplaceConfig laplace;
    // Restricts latent marginals to the fixed effects when the Laplace
    // config does not name a subset.
    bool fixed_effects_only = true;
    mcmc::ChainConfig chain;

    std::size_t n_areas() const { return lattice_rows * lattice_cols; }
    void validate() const;

    static StudyConfig defaults(StudyKind kind, Scale scale);
};

nlohmann::json to_json(StudyConfig const& c);
// Keys absent from `j` keep the values of `base`.
StudyConfig study_config_from_json(nlohmann::json const& j, StudyConfig base);

// FNV-1a over the canonical JSON of the config without worker counts.
std::uint64_t config_hash(StudyConfig const& c);
std::uint64_t fnv1a(std::string const& bytes);

// Fixed design shared by every dataset of a study.
struct Covariates
{
    std::vector<double> x;
    std::vector<double> total;
};

Covariates study_covariates(StudyConfig const& c);
gmrf::AdjacencyGraph study_graph(StudyConfig const& c);

std::vector<models::Dataset> generate_poisson_data(StudyConfig const& c);
std::vector<models::Dataset> generate_bym_data(StudyConfig const& c, gmrf::AdjacencyGraph const& graph);
std::vector<models::Dataset> generate_zinb_data(StudyConfig const& c);
// Datasets a study fits, in index order.
std::vector<models::Dataset> generate_study_data(StudyConfig const& c);

void write_dataset_csv(models::Dataset const& d, std::string const& path);

struct ParameterRow
{
    std::string study;
    std::string dataset;
    std::string model;
    std::string parameter;
    double laplace_mean = 0.0;
    double laplace_sd = 0.0;
    double laplace_q025 = 0.0;
    double laplace_q50 = 0.0;
    double laplace_q975 = 0.0;
    double mcmc_mean = 0.0;
    double mcmc_sd = 0.0;
    double mcmc_q025 = 0.0;
    double mcmc_q50 = 0.0;
    double mcmc_q975 = 0.0;
    double mcmc_ess = 0.0;
    double pe = 0.0;
    std::string pe_class;
    std::optional<double> generating;
    std::optional<double> pc_laplace;
    std::optional<double> pc_mcmc;
    std::string status;  // MCMC verdict

    friend bool operator==(ParameterRow const&, ParameterRow const&) = default;
};

struct SelectionRow
{
    std::string study;
    std::string dataset;
    std::string generating_model;
    double waic_laplace_poisson = 0.0;
    double waic_laplace_bym = 0.0;
    double waic_mcmc_poisson = 0.0;
    double waic_mcmc_bym = 0.0;
    std::string selected_laplace;
    std::string selected_mcmc;
    bool tie_laplace = false;
    bool tie_mcmc = false;
    bool correct_laplace = false;
    bool correct_mcmc = false;

    friend bool operator==(SelectionRow const&, SelectionRow const&) = default;
};

struct WaicDifferenceRow
{
    std::string study;
    std::string dataset;
    std::string generating_model;
    std::string model;
    double waic_laplace = 0.0;
    double waic_mcmc = 0.0;
    double difference = 0.0;  // laplace - mcmc
    bool correct_laplace = false;
    bool correct_mcmc = false;

    friend bool operator==(WaicDifferenceRow const&, WaicDifferenceRow const&) = default;
};

struct RateRatioRow
{
    std::string study;
    std::string dataset;
    std::string engine;
    std::string covariate;
    double ratio = 1.0;
    double mean = 1.0;
    double lo = 1.0;
    double hi = 1.0;
    bool significant = false;
    double generating = 0.0;

    friend bool operator==(RateRatioRow const&, RateRatioRow const&) = default;
};

struct AgreementRow
{
    std::string study;
    std::string dataset;
    std::string covariate;
    bool significant_laplace = false;
    bool significant_mcmc = false;
    bool same_significance = false;
    bool same_direction = false;

    friend bool operator==(AgreementRow const&, AgreementRow const&) = default;
};

struct FailureRow
{
    std::string study;
    std::string dataset;
    std::string model;
    std::string engine;
    std::string cause;
    std::string detail;

    friend bool operator==(FailureRow const&, FailureRow const&) = default;
};

struct DatasetRow
{
    std::string study;
    std::string dataset;

    friend bool operator==(DatasetRow const&, DatasetRow const&) = default;
};

struct ComparisonReport
{
    std::vector<ParameterRow> parameters;
    std::vector<SelectionRow> selection;
    std::vector<WaicDifferenceRow> waic_differences;
    std::vector<RateRatioRow> rate_ratios;
    std::vector<AgreementRow> agreement;
    std::vector<FailureRow> failures;
    // Every dataset the studies generated, in order.
    std::vector<DatasetRow> datasets;

    void append(ComparisonReport const& other);
    friend bool operator==(ComparisonReport const&, ComparisonReport const&) = default;
};

// Poisson or BYM study: both engines per dataset, PE and PC per tracked
// parameter. Failed fits go to the failure ledger.
ComparisonReport run_paired_study(StudyConfig const& c);
ComparisonReport run_selection_study(StudyConfig const& c);
ComparisonReport run_zinb_study(StudyConfig const& c);
ComparisonReport run_study(StudyConfig const& c);

// A full pipeline is a list of studies run in order.
struct PipelineConfig
{
    std::vector<StudyConfig> studies;

    static PipelineConfig defaults(Scale scale, std::uint64_t seed);
};

PipelineConfig pipeline_from_json(nlohmann::json const& j, Scale scale, std::uint64_t seed);
nlohmann::json to_json(PipelineConfig const& p);
ComparisonReport run_pipeline(PipelineConfig const& p, std::size_t workers);

// CSV tables keyed by file stem, in a fixed order.
struct Table
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::vector<std::pair<std::string, Table>> report_tables(ComparisonReport const& r);
ComparisonReport report_from_tables(std::map<std::string, Table> const& tables);
nlohmann::json to_json(ComparisonReport const& r);

std::string format_double(double v);
std::string to_csv(Table const& t);
Table parse_csv(std::string const& text);

// Writes <dir>/<stem>.csv for every table and <dir>/report.json.
std::vector<std::string> emit_report(ComparisonReport const& r, std::string const& dir, bool csv = true, bool json = true);
std::map<std::string, Table> read_report_dir(std::string const& dir);

struct Mismatch
{
    std::size_t run_a = 0;
    std::size_t run_b = 0;
    std::string table;
    std::size_t line = 0;  // 1-based, header is line 1
    std::string record;
    std::string column;
    std::string value_a;
    std::string value_b;
};

struct AuditRun
{
    std::size_t workers = 1;
    std::string digest;  // FNV-1a of the serialized report, hex
};

struct AuditReport
{
    bool pass = true;
    std::vector<AuditRun> runs;
    std::vector<Mismatch> mismatches;
    std::string engine_version;
    std::string config_hash;
};

struct AuditOptions
{
    std::vector<std::size_t> worker_counts = {1, 1, 4, 4};
    // Shuffles mixture accumulation order in every Laplace fit.
    bool inject_nondeterminism = false;
};

AuditReport reproducibility_audit(PipelineConfig const& p, AuditOptions const& options = {});
nlohmann::json to_json(AuditReport const& a);

}  // namespace lgm::harness
