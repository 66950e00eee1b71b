#include "lgm/gmrf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "lgm/errors.hpp"

namespace lgm::gmrf {

AdjacencyGraph::AdjacencyGraph(std::size_t n_nodes) : neighbors_(n_nodes) {}

void AdjacencyGraph::add_edge(std::size_t i, std::size_t j)
{
    if (i >= n_nodes() || j >= n_nodes())
        throw std::invalid_argument("edge endpoint out of range: " + std::to_string(i) + " "
                                    + std::to_string(j));
    if (i == j)
        throw std::invalid_argument("self-loop at node " + std::to_string(i));
    auto const& ni = neighbors_[i];
    if (std::find(ni.begin(), ni.end(), j) != ni.end())
        throw std::invalid_argument("duplicate edge " + std::to_string(i) + " "
                                    + std::to_string(j));
    edges_.push_back({std::min(i, j), std::max(i, j)});
    neighbors_[i].push_back(j);
    neighbors_[j].push_back(i);
}

AdjacencyGraph AdjacencyGraph::relabeled(std::vector<std::size_t> const& perm) const
{
    if (perm.size() != n_nodes())
        throw DimensionError("permutation size does not match node count");
    AdjacencyGraph out(n_nodes());
    for (auto const& e : edges_)
        out.add_edge(perm.at(e.a), perm.at(e.b));
    return out;
}

AdjacencyGraph path_graph(std::size_t n)
{
    AdjacencyGraph g(n);
    for (std::size_t i = 0; i + 1 < n; ++i)
        g.add_edge(i, i + 1);
    return g;
}

AdjacencyGraph cycle_graph(std::size_t n)
{
    if (n < 3)
        throw std::invalid_argument("cycle graph needs at least 3 nodes");
    AdjacencyGraph g = path_graph(n);
    g.add_edge(n - 1, 0);
    return g;
}

AdjacencyGraph lattice_graph(std::size_t rows, std::size_t cols)
{
    AdjacencyGraph g(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
    {
        for (std::size_t c = 0; c < cols; ++c)
        {
            std::size_t id = r * cols + c;
            if (c + 1 < cols)
                g.add_edge(id, id + 1);
            if (r + 1 < rows)
                g.add_edge(id, id + cols);
        }
    }
    return g;
}

AdjacencyGraph read_edge_list(std::istream& in, std::optional<std::size_t> n_nodes)
{
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t max_index = 0;
    bool any = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#')
            continue;
        std::istringstream fields(line);
        long long i = -1;
        long long j = -1;
        if (!(fields >> i >> j) || i < 0 || j < 0)
            throw std::invalid_argument("malformed edge on line " + std::to_string(line_no));
        pairs.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        max_index = std::max({max_index, pairs.back().first, pairs.back().second});
        any = true;
    }
    std::size_t n = n_nodes.value_or(any ? max_index + 1 : 0);
    AdjacencyGraph g(n);
    for (auto [i, j] : pairs)
        g.add_edge(i, j);
    return g;
}

AdjacencyGraph read_edge_list_file(std::string const& path, std::optional<std::size_t> n_nodes)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open edge list " + path);
    return read_edge_list(in, n_nodes);
}

void write_edge_list(std::ostream& out, AdjacencyGraph const& graph)
{
    out << "# nodes " << graph.n_nodes() << '\n';
    for (auto const& e : graph.edges())
        out << e.a << ' ' << e.b << '\n';
}

SparseSymMatrix::SparseSymMatrix(std::size_t dimension) : dim_(dimension)
{
    if (dimension == 0)
        throw DimensionError("SparseSymMatrix dimension must be at least 1");
}

SparseSymMatrix SparseSymMatrix::from_triplets(std::size_t dimension, std::vector<Entry> entries)
{
    SparseSymMatrix m(dimension);
    for (auto& e : entries)
    {
        if (e.row >= dimension || e.col >= dimension)
            throw DimensionError("matrix entry out of range");
        if (e.row > e.col)
            std::swap(e.row, e.col);
    }
    std::stable_sort(entries.begin(), entries.end(), [](Entry const& l, Entry const& r) {
        return l.row != r.row ? l.row < r.row : l.col < r.col;
    });
    for (auto const& e : entries)
    {
        if (!m.entries_.empty() && m.entries_.back().row == e.row && m.entries_.back().col == e.col)
            m.entries_.back().value += e.value;
        else
            m.entries_.push_back(e);
    }
    std::erase_if(m.entries_, [](Entry const& e) { return e.value == 0.0; });
    return m;
}

SparseSymMatrix SparseSymMatrix::from_dense(Eigen::MatrixXd const& d)
{
    if (d.rows() != d.cols())
        throw DimensionError("dense matrix is not square");
    std::vector<Entry> entries;
    for (Eigen::Index r = 0; r < d.rows(); ++r)
        for (Eigen::Index c = r; c < d.cols(); ++c)
            if (d(r, c) != 0.0)
                entries.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(c), d(r, c)});
    return from_triplets(static_cast<std::size_t>(d.rows()), std::move(entries));
}

Eigen::MatrixXd SparseSymMatrix::to_dense() const
{
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(dim_, dim_);
    for (auto const& e : entries_)
    {
        d(e.row, e.col) = e.value;
        d(e.col, e.row) = e.value;
    }
    return d;
}

Eigen::SparseMatrix<double> SparseSymMatrix::to_sparse() const
{
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(2 * entries_.size());
    for (auto const& e : entries_)
    {
        t.emplace_back(e.row, e.col, e.value);
        if (e.row != e.col)
            t.emplace_back(e.col, e.row, e.value);
    }
    Eigen::SparseMatrix<double> s(dim_, dim_);
    s.setFromTriplets(t.begin(), t.end());
    return s;
}

double SparseSymMatrix::quadratic_form(Eigen::VectorXd const& x) const
{
    if (static_cast<std::size_t>(x.size()) != dim_)
        throw DimensionError("quadratic form: vector size mismatch");
    double q = 0.0;
    for (auto const& e : entries_)
        q += (e.row == e.col ? 1.0 : 2.0) * e.value * x[e.row] * x[e.col];
    return q;
}

Eigen::VectorXd SparseSymMatrix::multiply(Eigen::VectorXd const& x) const
{
    if (static_cast<std::size_t>(x.size()) != dim_)
        throw DimensionError("multiply: vector size mismatch");
    Eigen::VectorXd y = Eigen::VectorXd::Zero(dim_);
    for (auto const& e : entries_)
    {
        y[e.row] += e.value * x[e.col];
        if (e.row != e.col)
            y[e.col] += e.value * x[e.row];
    }
    return y;
}

SparseSymMatrix SparseSymMatrix::scaled(double factor) const
{
    std::vector<Entry> entries = entries_;
    for (auto& e : entries)
        e.value *= factor;
    return from_triplets(dim_, std::move(entries));
}

SparseSymMatrix graph_laplacian(AdjacencyGraph const& graph)
{
    std::size_t n = std::max<std::size_t>(graph.n_nodes(), 1);
    std::vector<SparseSymMatrix::Entry> entries;
    for (std::size_t i = 0; i < graph.n_nodes(); ++i)
        entries.push_back({i, i, static_cast<double>(graph.degree(i))});
    for (auto const& e : graph.edges())
        entries.push_back({e.a, e.b, -1.0});
    return SparseSymMatrix::from_triplets(n, std::move(entries));
}

std::vector<std::size_t> component_labels(AdjacencyGraph const& graph)
{
    std::size_t n = graph.n_nodes();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t i) {
        while (parent[i] != i)
        {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    };
    for (auto const& e : graph.edges())
    {
        auto ra = find(e.a);
        auto rb = find(e.b);
        if (ra != rb)
            parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    // Relabel roots densely in order of first appearance.
    std::vector<std::size_t> label(n);
    std::vector<std::size_t> root_label(n, n);
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i)
    {
        auto r = find(i);
        if (root_label[r] == n)
            root_label[r] = next++;
        label[i] = root_label[r];
    }
    return label;
}

std::size_t connected_components(AdjacencyGraph const& graph)
{
    auto labels = component_labels(graph);
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

std::string to_string(IcarConstraint c)
{
    switch (c)
    {
    case IcarConstraint::None: return "none";
    case IcarConstraint::SumToZeroKriging: return "sum_to_zero_kriging";
    case IcarConstraint::SumToZeroCentering: return "sum_to_zero_centering";
    }
    return "unknown";
}

IcarConstraint icar_constraint_from_string(std::string const& s)
{
    if (s == "none")
        return IcarConstraint::None;
    if (s == "sum_to_zero_kriging" || s == "kriging")
        return IcarConstraint::SumToZeroKriging;
    if (s == "sum_to_zero_centering" || s == "centering")
        return IcarConstraint::SumToZeroCentering;
    throw std::invalid_argument("unknown ICAR constraint: " + s);
}

std::string to_string(IcarExponent e)
{
    return e == IcarExponent::AsPrinted ? "as_printed" : "halved";
}

IcarExponent icar_exponent_from_string(std::string const& s)
{
    if (s == "as_printed")
        return IcarExponent::AsPrinted;
    if (s == "halved")
        return IcarExponent::Halved;
    throw std::invalid_argument("unknown ICAR exponent convention: " + s);
}

IcarSpec::IcarSpec(AdjacencyGraph graph, double tau, IcarConstraint constraint, IcarExponent exponent)
    : graph_(std::move(graph)), tau_(tau), k_(connected_components(graph_)),
      constraint_(constraint), exponent_(exponent)
{
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw std::invalid_argument("ICAR precision must be positive and finite");
    if (graph_.n_nodes() == 0)
        throw std::invalid_argument("ICAR graph has no nodes");
}

double icar_quadratic_form(Eigen::VectorXd const& mu, AdjacencyGraph const& graph)
{
    if (static_cast<std::size_t>(mu.size()) != graph.n_nodes())
        throw DimensionError("ICAR field length does not match node count");
    double q = 0.0;
    for (auto const& e : graph.edges())
    {
        double d = mu[e.a] - mu[e.b];
        q += d * d;
    }
    return q;
}

double icar_log_tau_coefficient(std::size_t n, std::size_t k, IcarExponent exponent)
{
    double c = static_cast<double>(n - k);
    return exponent == IcarExponent::AsPrinted ? c : 0.5 * c;
}

double icar_log_density(Eigen::VectorXd const& mu, IcarSpec const& spec)
{
    double q = icar_quadratic_form(mu, spec.graph());
    double c = icar_log_tau_coefficient(spec.graph().n_nodes(), spec.components(), spec.exponent());
    return c * std::log(spec.tau()) - 0.5 * spec.tau() * q;
}

Eigen::MatrixXd sum_to_zero_constraints(AdjacencyGraph const& graph)
{
    auto labels = component_labels(graph);
    std::size_t k = connected_components(graph);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, graph.n_nodes());
    for (std::size_t i = 0; i < labels.size(); ++i)
        a(labels[i], i) = 1.0;
    return a;
}

Eigen::VectorXd kriging_correct(Eigen::VectorXd const& x,
                                Eigen::MatrixXd const& sigma_at,
                                Eigen::MatrixXd const& a,
                                Eigen::VectorXd const& rhs)
{
    if (a.rows() == 0)
        return x;
    Eigen::MatrixXd w = a * sigma_at;
    Eigen::LLT<Eigen::MatrixXd> llt(w);
    if (llt.info() != Eigen::Success)
        throw ConstraintError("constraint system A Sigma A' is not positive definite");
    Eigen::VectorXd d = llt.matrixL().toDenseMatrix().diagonal();
    if (d.minCoeff() <= 1e-8 * d.maxCoeff())
        throw ConstraintError("constraint system A Sigma A' is numerically singular");
    Eigen::VectorXd out = x - sigma_at * llt.solve(a * x - rhs);
    out -= sigma_at * llt.solve(a * out - rhs);
    return out;
}

KrigingSampler::KrigingSampler(IcarSpec const& spec) : n_(spec.graph().n_nodes())
{
    if (spec.constraint() != IcarConstraint::SumToZeroKriging)
        throw std::invalid_argument("kriging sampler requires the SumToZeroKriging constraint");
    Eigen::MatrixXd q = graph_laplacian(spec.graph()).to_dense() * spec.tau();
    a_ = sum_to_zero_constraints(spec.graph());
    double mean_diag = q.diagonal().mean();
    // Isolated nodes give a zero diagonal; fall back to tau as the scale.
    double jitter = null_space_jitter * (mean_diag > 0.0 ? mean_diag : spec.tau());
    // Projection onto the null space of Q: one normalised indicator per component.
    for (Eigen::Index c = 0; c < a_.rows(); ++c)
    {
        Eigen::VectorXd v = a_.row(c).transpose();
        q += (jitter / v.sum()) * v * v.transpose();
    }
    Eigen::LLT<Eigen::MatrixXd> llt(q);
    if (llt.info() != Eigen::Success)
        throw ConstraintError("regularised ICAR precision is not positive definite");
    chol_upper_ = llt.matrixU();
    sigma_at_ = llt.solve(a_.transpose());
}

Eigen::VectorXd KrigingSampler::draw(RngStream& rng) const
{
    Eigen::VectorXd z(n_);
    for (std::size_t i = 0; i < n_; ++i)
        z[i] = rng.normal();
    // x ~ N(0, (U'U)^{-1}) from U x = z.
    Eigen::VectorXd x = chol_upper_.triangularView<Eigen::Upper>().solve(z);
    return kriging_correct(x, sigma_at_, a_, Eigen::VectorXd::Zero(a_.rows()));
}

Eigen::VectorXd sample_icar_kriging(IcarSpec const& spec, RngStream& rng)
{
    return KrigingSampler(spec).draw(rng);
}

std::string to_string(Propriety const& p)
{
    if (p.proper())
        return "Proper";
    return "RankDeficient(" + std::to_string(p.deficiency) + ")";
}

Propriety propriety_check(Eigen::MatrixXd const& precision,
                          Eigen::MatrixXd const& constraints,
                          double rel_tol)
{
    Eigen::Index n = precision.rows();
    if (precision.cols() != n)
        throw DimensionError("precision matrix is not square");
    Eigen::MatrixXd restricted;
    if (constraints.rows() == 0)
    {
        restricted = precision;
    }
    else
    {
        if (constraints.cols() != n)
            throw DimensionError("constraint rows do not match precision dimension");
        // Orthonormal basis of null(A) from the trailing columns of a full QR of A'.
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(constraints.transpose());
        Eigen::Index rank = qr.rank();
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
        Eigen::MatrixXd basis = q.rightCols(n - rank);
        restricted = basis.transpose() * precision * basis;
    }
    Propriety out;
    if (restricted.rows() == 0)
        return out;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(restricted, Eigen::EigenvaluesOnly);
    auto const& ev = eig.eigenvalues();
    out.min_eigenvalue = ev.minCoeff();
    out.max_eigenvalue = ev.maxCoeff();
    double threshold = rel_tol * std::max(out.max_eigenvalue, 0.0);
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev[i] <= threshold)
            ++out.deficiency;
    out.status = out.deficiency == 0 ? Propriety::Status::Proper : Propriety::Status::RankDeficient;
    return out;
}

Propriety propriety_check(SparseSymMatrix const& precision,
                          Eigen::MatrixXd const& constraints,
                          double rel_tol)
{
    return propriety_check(precision.to_dense(), constraints, rel_tol);
}

}  // namespace lgm::gmrf
