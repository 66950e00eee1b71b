// lgmbench: simulation studies comparing the nested Laplace engine with MCMC.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "lgm/harness.hpp"

namespace fs = std::filesystem;
using namespace lgm;

namespace {

struct Options
{
    std::string config;
    std::string out = "lgmbench-out";
    std::string scale = "desk";
    std::uint64_t seed = 20210701;
    std::size_t workers = 1;
    bool inject = false;
};

harness::PipelineConfig load(Options const& o)
{
    auto scale = harness::scale_from_string(o.scale);
    if (o.config.empty())
        return harness::PipelineConfig::defaults(scale, o.seed);
    std::ifstream in(o.config);
    if (!in)
        throw std::runtime_error("cannot open config " + o.config);
    auto j = nlohmann::json::parse(in);
    return harness::pipeline_from_json(j, scale, o.seed);
}

// Studies of the requested kinds; defaults fill in kinds the config omits.
harness::PipelineConfig select_kinds(Options const& o, std::vector<harness::StudyKind> const& kinds)
{
    auto all = load(o);
    harness::PipelineConfig p;
    for (auto k : kinds)
    {
        bool found = false;
        for (auto const& c : all.studies)
            if (c.kind == k)
                p.studies.push_back(c), found = true;
        if (!found)
        {
            auto c = harness::StudyConfig::defaults(k, harness::scale_from_string(o.scale));
            c.seed = o.seed;
            p.studies.push_back(c);
        }
    }
    return p;
}

int run_studies(Options const& o, harness::PipelineConfig const& p)
{
    auto report = harness::run_pipeline(p, o.workers);
    auto files = harness::emit_report(report, o.out);
    std::size_t fitted = 0;
    for (auto const& d : report.datasets)
    {
        bool failed = false;
        for (auto const& f : report.failures)
            failed = failed || (f.study == d.study && f.dataset == d.dataset);
        fitted += failed ? 0 : 1;
    }
    std::printf("%zu datasets, %zu fitted by both engines, %zu failures\n", report.datasets.size(), fitted,
                report.failures.size());
    for (auto const& f : files)
        std::printf("wrote %s\n", f.c_str());
    return 0;
}

int generate(Options const& o)
{
    auto p = load(o);
    for (auto const& c : p.studies)
    {
        auto dir = fs::path(o.out) / "data" / c.id;
        fs::create_directories(dir);
        auto data = harness::generate_study_data(c);
        for (auto const& d : data)
            harness::write_dataset_csv(d, (dir / (d.id + ".csv")).string());
        if (c.kind != harness::StudyKind::ZinbStudy)
        {
            std::ofstream g(dir / "graph.txt");
            gmrf::write_edge_list(g, harness::study_graph(c));
        }
        std::printf("%s: %zu datasets in %s\n", c.id.c_str(), data.size(), dir.string().c_str());
    }
    std::ofstream cfg(fs::path(o.out) / "config.json");
    cfg << harness::to_json(p).dump(2) << "\n";
    return 0;
}

int audit(Options const& o)
{
    auto p = load(o);
    harness::AuditOptions opts;
    opts.inject_nondeterminism = o.inject;
    auto a = harness::reproducibility_audit(p, opts);
    fs::create_directories(o.out);
    auto path = fs::path(o.out) / "audit.json";
    std::ofstream out(path);
    out << harness::to_json(a).dump(2) << "\n";
    std::printf("audit %s (config %s, %s)\n", a.pass ? "PASS" : "FAIL", a.config_hash.c_str(), a.engine_version.c_str());
    for (auto const& r : a.runs)
        std::printf("  workers=%zu digest=%s\n", r.workers, r.digest.c_str());
    for (auto const& m : a.mismatches)
        std::printf("  run %zu vs %zu: %s line %zu [%s] column %s: %s != %s\n", m.run_a, m.run_b, m.table.c_str(),
                    m.line, m.record.c_str(), m.column.c_str(), m.value_a.c_str(), m.value_b.c_str());
    std::printf("wrote %s\n", path.string().c_str());
    return a.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Nested Laplace vs MCMC benchmarking harness"};
    app.fallthrough();
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "JSON study configuration")->check(CLI::ExistingFile);
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--scale", o.scale, "Default sizes")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--seed", o.seed, "Master seed");
    app.add_option("--workers", o.workers, "Dataset-level worker threads")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("generate", "Write the simulated datasets as CSV");
    auto* run = app.add_subcommand("run", "Paired Poisson and BYM studies");
    auto* sel = app.add_subcommand("select", "WAIC model-selection study");
    auto* zinb = app.add_subcommand("zinb", "Zero-inflated negative binomial rate-ratio study");
    auto* aud = app.add_subcommand("audit", "Byte-level reproducibility audit across worker counts");
    aud->add_flag("--inject-nondeterminism", o.inject, "Shuffle mixture reduction order");
    auto* rep = app.add_subcommand("report", "Run every configured study and emit one report");

    CLI11_PARSE(app, argc, argv);
    try
    {
        using K = harness::StudyKind;
        if (gen->parsed())
            return generate(o);
        if (run->parsed())
            return run_studies(o, select_kinds(o, {K::PoissonStudy, K::BymStudy}));
        if (sel->parsed())
            return run_studies(o, select_kinds(o, {K::SelectionStudy}));
        if (zinb->parsed())
            return run_studies(o, select_kinds(o, {K::ZinbStudy}));
        if (aud->parsed())
            return audit(o);
        if (rep->parsed())
            return run_studies(o, load(o));
    }
    catch (std::exception const& e)
    {
        std::fprintf(stderr, "lgmbench: %s\n", e.what());
        return 2;
    }
    return 0;
}
