#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "lgm/rng.hpp"

namespace lgm::gmrf {

struct Edge
{
    std::size_t a;  // a < b
    std::size_t b;
    friend bool operator==(Edge const&, Edge const&) = default;
};

// Undirected simple graph over areal units. Edges are stored once with the
// smaller endpoint first, in insertion order.
class AdjacencyGraph
{
  public:
    explicit AdjacencyGraph(std::size_t n_nodes);

    // Throws std::invalid_argument for self-loops, out-of-range endpoints
    // and duplicates (in either orientation).
    void add_edge(std::size_t i, std::size_t j);

    std::size_t n_nodes() const { return neighbors_.size(); }
    std::vector<Edge> const& edges() const { return edges_; }
    std::vector<std::size_t> const& neighbors(std::size_t i) const { return neighbors_.at(i); }
    std::size_t degree(std::size_t i) const { return neighbors_.at(i).size(); }

    // Same graph with node i renamed to perm[i].
    AdjacencyGraph relabeled(std::vector<std::size_t> const& perm) const;

  private:
    std::vector<Edge> edges_;
    std::vector<std::vector<std::size_t>> neighbors_;
};

AdjacencyGraph path_graph(std::size_t n);
AdjacencyGraph cycle_graph(std::size_t n);
// rows x cols rook-adjacency lattice, node id = r * cols + c.
AdjacencyGraph lattice_graph(std::size_t rows, std::size_t cols);

// Edge-list text: one "i j" pair per line, 0-indexed. Blank lines and lines
// starting with '#' are skipped. Node count is max index + 1 unless given.
AdjacencyGraph read_edge_list(std::istream& in, std::optional<std::size_t> n_nodes = {});
AdjacencyGraph read_edge_list_file(std::string const& path,
                                   std::optional<std::size_t> n_nodes = {});
void write_edge_list(std::ostream& out, AdjacencyGraph const& graph);

// Symmetric matrix kept as a sorted upper-triangle coordinate list.
class SparseSymMatrix
{
  public:
    struct Entry
    {
        std::size_t row;  // row <= col
        std::size_t col;
        double value;
    };

    explicit SparseSymMatrix(std::size_t dimension);

    // Entries may address either triangle; duplicates are summed and exact
    // zeros are dropped.
    static SparseSymMatrix from_triplets(std::size_t dimension, std::vector<Entry> entries);
    static SparseSymMatrix from_dense(Eigen::MatrixXd const& m);

    std::size_t dimension() const { return dim_; }
    std::vector<Entry> const& entries() const { return entries_; }

    Eigen::MatrixXd to_dense() const;
    Eigen::SparseMatrix<double> to_sparse() const;
    double quadratic_form(Eigen::VectorXd const& x) const;
    Eigen::VectorXd multiply(Eigen::VectorXd const& x) const;
    SparseSymMatrix scaled(double factor) const;

  private:
    std::size_t dim_;
    std::vector<Entry> entries_;
};

// Q = D - A.
SparseSymMatrix graph_laplacian(AdjacencyGraph const& graph);

std::vector<std::size_t> component_labels(AdjacencyGraph const& graph);
std::size_t connected_components(AdjacencyGraph const& graph);

enum class IcarConstraint
{
    None,
    SumToZeroKriging,
    SumToZeroCentering,
};

// Exponent of tau in the ICAR normalising factor: (n - k) or (n - k) / 2.
enum class IcarExponent
{
    AsPrinted,
    Halved,
};

std::string to_string(IcarConstraint c);
IcarConstraint icar_constraint_from_string(std::string const& s);
std::string to_string(IcarExponent e);
IcarExponent icar_exponent_from_string(std::string const& s);

class IcarSpec
{
  public:
    IcarSpec(AdjacencyGraph graph,
             double tau,
             IcarConstraint constraint = IcarConstraint::None,
             IcarExponent exponent = IcarExponent::AsPrinted);

    AdjacencyGraph const& graph() const { return graph_; }
    double tau() const { return tau_; }
    std::size_t components() const { return k_; }
    IcarConstraint constraint() const { return constraint_; }
    IcarExponent exponent() const { return exponent_; }

  private:
    AdjacencyGraph graph_;
    double tau_;
    std::size_t k_;
    IcarConstraint constraint_;
    IcarExponent exponent_;
};

// sum over edges of (mu_i - mu_j)^2, accumulated in edge order.
double icar_quadratic_form(Eigen::VectorXd const& mu, AdjacencyGraph const& graph);

// Coefficient c such that the ICAR log density is c * log(tau) - tau/2 * mu'Q mu.
double icar_log_tau_coefficient(std::size_t n, std::size_t k, IcarExponent exponent);

double icar_log_density(Eigen::VectorXd const& mu, IcarSpec const& spec);

// One all-ones row per connected component (k x n).
Eigen::MatrixXd sum_to_zero_constraints(AdjacencyGraph const& graph);

// x - Sigma A' (A Sigma A')^{-1} (A x - rhs), with Sigma A' supplied. A second
// correction pass removes the round-off left by large null-space components.
// Throws ConstraintError when A Sigma A' is singular.
Eigen::VectorXd kriging_correct(Eigen::VectorXd const& x,
                                Eigen::MatrixXd const& sigma_at,
                                Eigen::MatrixXd const& a,
                                Eigen::VectorXd const& rhs);

// Draws from the ICAR prior under sum-to-zero constraints by conditioning by
// kriging. The factorisation is done once per sampler.
class KrigingSampler
{
  public:
    explicit KrigingSampler(IcarSpec const& spec);

    Eigen::VectorXd draw(RngStream& rng) const;

    // Relative jitter applied to the null space of Q before factorising.
    static constexpr double null_space_jitter = 1e-8;

  private:
    std::size_t n_;
    Eigen::MatrixXd chol_upper_;  // U with U'U = tau Q + jitter * P_null
    Eigen::MatrixXd a_;
    Eigen::MatrixXd sigma_at_;
};

Eigen::VectorXd sample_icar_kriging(IcarSpec const& spec, RngStream& rng);

struct Propriety
{
    enum class Status
    {
        Proper,
        RankDeficient,
    };
    Status status = Status::Proper;
    std::size_t deficiency = 0;
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;

    bool proper() const { return status == Status::Proper; }
};

std::string to_string(Propriety const& p);

// Positive definiteness of `precision` restricted to {x : A x = 0}.
// Eigenvalues at or below rel_tol * largest count as deficient.
Propriety propriety_check(SparseSymMatrix const& precision,
                          Eigen::MatrixXd const& constraints,
                          double rel_tol = 1e-10);
Propriety propriety_check(Eigen::MatrixXd const& precision,
                          Eigen::MatrixXd const& constraints,
                          double rel_tol = 1e-10);

}  // namespace lgm::gmrf
