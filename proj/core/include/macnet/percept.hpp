#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace macnet {

// Pooled yes/no similarity counts per unordered category pair.
struct SimilarityJudgments {
    struct Entry {
        int a = 0;
        int b = 0;
        int64_t yes = 0;
        int64_t no = 0;
    };
    int categories = 0;
    std::vector<Entry> entries;
};

struct PerceptualDistanceMatrix {
    int k = 0;
    std::vector<double> d;  // k*k row-major

    double at(int i, int j) const { return d[static_cast<size_t>(i) * k + j]; }
    double& at(int i, int j) { return d[static_cast<size_t>(i) * k + j]; }
    void validate() const;  // symmetric, zero diagonal, entries in [0,1]
};

struct CategoryAttributeMatrix {
    int k = 0;
    int m = 0;
    std::vector<double> a;  // k*m row-major

    double at(int i, int j) const { return a[static_cast<size_t>(i) * m + j]; }
    double& at(int i, int j) { return a[static_cast<size_t>(i) * m + j]; }
    std::vector<double> row(int i) const {
        return {a.begin() + static_cast<size_t>(i) * m, a.begin() + static_cast<size_t>(i + 1) * m};
    }
    CategoryAttributeMatrix without_row(int row) const;
    void validate() const;  // entries in [0,1]
};

struct BetaParams {
    double a = 0.5;
    double b = 0.5;
    void validate() const;
};

// Strictly increasing points inside (0,1).
struct DensityGrid {
    std::vector<double> points;

    // n midpoints {(2i-1)/(2n)}
    static DensityGrid midpoints(int n);
    void validate() const;
};

struct DensityEstimate {
    double bandwidth = 0.0;
    double floor = 1e-6;
    std::vector<double> q;  // one value per grid point
};

// D[k][l] = no/(yes+no) over pooled (k,l)+(l,k) judgments; diagonal forced 0.
// Every unordered pair k<l must be present.
PerceptualDistanceMatrix build_distance_matrix(const SimilarityJudgments& judgments);

// Standard Beta(a,b) density. p must lie strictly inside (0,1).
double beta_pdf(double p, const BetaParams& beta);

// Silverman's rule: max(0.9*min(sigma, IQR/1.34)*n^(-1/5), 0.01).
double silverman_bandwidth(const std::vector<double>& samples);

// Gaussian-kernel density on the grid, floored at `floor`. bandwidth <= 0
// selects Silverman's rule. Needs >= 2 samples.
DensityEstimate kde_eval(const std::vector<double>& samples, const DensityGrid& grid,
                         double bandwidth = 0.0, double floor = 1e-6);

// sum_p beta(p) ln(beta(p)/q(p)), the unnormalized discretized divergence.
// May be negative for pathological q; reported as computed.
double kl_beta_vs_kde(const DensityGrid& grid, const BetaParams& beta,
                      const std::vector<double>& q);

struct EmbedConfig {
    int restarts = 8;
    int iterations = 2000;
    double step = 0.05;
    double gamma = 0.01;      // weight of the Beta-prior column regularizer
    double polish_frac = 0.25;  // trailing fraction of iterations run with gamma = 0
    BetaParams beta;
    DensityGrid grid = DensityGrid::midpoints(32);
    uint64_t seed = 0;
    int threads = 1;
    // observer for accepted iterates: (restart, gamma in effect, objective)
    std::function<void(int, double, double)> on_accept;
};

struct EmbedResult {
    CategoryAttributeMatrix a;
    double objective = 0.0;       // E(A) at the returned iterate (polish phase: pairwise only)
    double pairwise_error = 0.0;  // sum_{k<l} (|a_k-a_l|/sqrt(M) - D_kl)^2
    double pairwise_rmse = 0.0;   // over the K(K-1)/2 pairs
    int best_restart = -1;
};

// Projected gradient descent over R restarts minimizing
//   E(A) = sum_{k<l} (||a_k - a_l||_2/sqrt(M) - D_kl)^2
//          + gamma * sum_m kl_beta_vs_kde(column m)
// with entries projected into [0,1]. Steps that would increase the phase
// objective are rejected. The trailing polish fraction of each restart drops
// the gamma term so exactly-embeddable distance matrices are recovered to
// numerical accuracy. Deterministic given (D, M, seed); ties between restarts
// go to the lowest index.
EmbedResult solve_category_attribute_matrix(const PerceptualDistanceMatrix& d, int m,
                                            const EmbedConfig& cfg);

double pairwise_embedding_error(const PerceptualDistanceMatrix& d,
                                const CategoryAttributeMatrix& a);

// CSV with a `# K=<k> M=<m>` header line; one matrix row per line.
void save_matrix_csv(const std::filesystem::path& path, int k, int m,
                     const std::vector<double>& values);
void save_distance_csv(const std::filesystem::path& path, const PerceptualDistanceMatrix& d);
void save_attribute_csv(const std::filesystem::path& path, const CategoryAttributeMatrix& a);
PerceptualDistanceMatrix load_distance_csv(const std::filesystem::path& path);
CategoryAttributeMatrix load_attribute_csv(const std::filesystem::path& path);

// JSON list of {"a": int, "b": int, "yes": int, "no": int}.
void save_judgments_json(const std::filesystem::path& path, const SimilarityJudgments& j);
SimilarityJudgments load_judgments_json(const std::filesystem::path& path);

}  // namespace macnet
