#include "macnet/percept.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "macnet/rng.hpp"
#include "json.hpp"

namespace macnet {

void PerceptualDistanceMatrix::validate() const {
    if (k < 1 || d.size() != static_cast<size_t>(k) * k)
        throw std::invalid_argument("distance matrix storage does not match K");
    for (int i = 0; i < k; ++i) {
        if (at(i, i) != 0.0) throw std::invalid_argument("distance matrix diagonal must be zero");
        for (int j = 0; j < k; ++j) {
            const double v = at(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument("distance matrix entries must lie in [0,1]");
            if (v != at(j, i)) throw std::invalid_argument("distance matrix must be symmetric");
        }
    }
}

CategoryAttributeMatrix CategoryAttributeMatrix::without_row(int row) const {
    if (row < 0 || row >= k) throw std::invalid_argument("without_row: row out of range");
    CategoryAttributeMatrix out;
    out.k = k - 1;
    out.m = m;
    out.a.reserve(static_cast<size_t>(out.k) * m);
    for (int i = 0; i < k; ++i) {
        if (i == row) continue;
        out.a.insert(out.a.end(), a.begin() + static_cast<size_t>(i) * m,
                     a.begin() + static_cast<size_t>(i + 1) * m);
    }
    return out;
}

void CategoryAttributeMatrix::validate() const {
    if (k < 1 || m < 1 || a.size() != static_cast<size_t>(k) * m)
        throw std::invalid_argument("attribute matrix storage does not match K,M");
    for (double v : a)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("attribute matrix entries must lie in [0,1]");
}

void BetaParams::validate() const {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("Beta parameters must be positive");
}

DensityGrid DensityGrid::midpoints(int n) {
    if (n < 1) throw std::invalid_argument("grid needs at least one point");
    DensityGrid g;
    g.points.resize(n);
    for (int i = 0; i < n; ++i) g.points[i] = (2.0 * i + 1.0) / (2.0 * n);
    return g;
}

void DensityGrid::validate() const {
    if (points.empty()) throw std::invalid_argument("density grid is empty");
    double prev = 0.0;
    for (double p : points) {
        if (!(p > 0.0 && p < 1.0))
            throw std::invalid_argument("grid points must lie strictly inside (0,1)");
        if (p <= prev) throw std::invalid_argument("grid points must be strictly increasing");
        prev = p;
    }
}

PerceptualDistanceMatrix build_distance_matrix(const SimilarityJudgments& judgments) {
    const int k = judgments.categories;
    if (k < 1) throw std::invalid_argument("judgments must declare a positive category count");
    std::vector<int64_t> yes(static_cast<size_t>(k) * k, 0), no(static_cast<size_t>(k) * k, 0);
    for (const auto& e : judgments.entries) {
        if (e.a < 0 || e.a >= k || e.b < 0 || e.b >= k)
            throw std::invalid_argument("judgment references category outside [0," +
                                        std::to_string(k - 1) + "]");
        if (e.yes < 0 || e.no < 0) throw std::invalid_argument("judgment counts must be non-negative");
        // pool (a,b) with (b,a)
        const int lo = std::min(e.a, e.b), hi = std::max(e.a, e.b);
        yes[static_cast<size_t>(lo) * k + hi] += e.yes;
        no[static_cast<size_t>(lo) * k + hi] += e.no;
    }
    PerceptualDistanceMatrix d;
    d.k = k;
    d.d.assign(static_cast<size_t>(k) * k, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            const int64_t y = yes[static_cast<size_t>(i) * k + j];
            const int64_t n = no[static_cast<size_t>(i) * k + j];
            if (y + n < 1)
                throw std::invalid_argument("no judgments for category pair (" + std::to_string(i) +
                                            "," + std::to_string(j) + ")");
            const double v = static_cast<double>(n) / static_cast<double>(y + n);
            d.at(i, j) = v;
            d.at(j, i) = v;
        }
    d.validate();
    return d;
}

double beta_pdf(double p, const BetaParams& beta) {
    beta.validate();
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("beta_pdf requires p strictly inside (0,1)");
    const double log_b = std::lgamma(beta.a) + std::lgamma(beta.b) - std::lgamma(beta.a + beta.b);
    return std::exp((beta.a - 1.0) * std::log(p) + (beta.b - 1.0) * std::log(1.0 - p) - log_b);
}

double silverman_bandwidth(const std::vector<double>& samples) {
    const size_t n = samples.size();
    if (n < 2) throw std::invalid_argument("bandwidth needs at least 2 samples");
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : samples) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
    const double sigma = std::sqrt(var);

    std::vector<double> sorted(samples);
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(n - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - static_cast<double>(lo);
        return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    const double spread = std::min(sigma, iqr / 1.34);
    return std::max(0.9 * spread * std::pow(static_cast<double>(n), -0.2), 0.01);
}

DensityEstimate kde_eval(const std::vector<double>& samples, const DensityGrid& grid,
                         double bandwidth, double floor) {
    grid.validate();
    if (samples.size() < 2)
        throw std::invalid_argument("kde_eval needs at least 2 samples, got " +
                                    std::to_string(samples.size()));
    DensityEstimate est;
    est.bandwidth = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(samples);
    est.floor = floor;
    est.q.resize(grid.points.size());
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    const double norm = 1.0 / (static_cast<double>(samples.size()) * est.bandwidth);
    for (size_t p = 0; p < grid.points.size(); ++p) {
        double q = 0.0;
        for (double s : samples) {
            const double z = (grid.points[p] - s) / est.bandwidth;
            q += inv_sqrt2pi * std::exp(-0.5 * z * z);
        }
        est.q[p] = std::max(q * norm, floor);
    }
    return est;
}

double kl_beta_vs_kde(const DensityGrid& grid, const BetaParams& beta,
                      const std::vector<double>& q) {
    grid.validate();
    if (q.size() != grid.points.size())
        throw std::invalid_argument("kl_beta_vs_kde: q length does not match grid");
    for (double v : q)
        if (!(v > 0.0)) throw std::invalid_argument("kl_beta_vs_kde: q must be strictly positive");
    double d = 0.0;
    for (size_t i = 0; i < q.size(); ++i) {
        const double b = beta_pdf(grid.points[i], beta);
        d += b * (std::log(b) - std::log(q[i]));
    }
    return d;
}

double pairwise_embedding_error(const PerceptualDistanceMatrix& d,
                                const CategoryAttributeMatrix& a) {
    if (a.k != d.k) throw std::invalid_argument("pairwise_embedding_error: K mismatch");
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(a.m));
    double err = 0.0;
    for (int i = 0; i < a.k; ++i)
        for (int j = i + 1; j < a.k; ++j) {
            double s = 0.0;
            for (int c = 0; c < a.m; ++c) {
                const double diff = a.at(i, c) - a.at(j, c);
                s += diff * diff;
            }
            const double r = std::sqrt(s) * inv_sqrt_m - d.at(i, j);
            err += r * r;
        }
    return err;
}

namespace {

struct SolverGrids {
    std::vector<double> beta_vals;  // beta pdf at grid points
};

// Objective and gradient at A for one phase. gamma == 0 skips the KDE term.
double embed_objective(const PerceptualDistanceMatrix& d, const CategoryAttributeMatrix& a,
                       double gamma, const BetaParams& beta, const DensityGrid& grid) {
    double e = pairwise_embedding_error(d, a);
    if (gamma > 0.0) {
        std::vector<double> col(a.k);
        for (int m = 0; m < a.m; ++m) {
            for (int i = 0; i < a.k; ++i) col[i] = a.at(i, m);
            const auto est = kde_eval(col, grid);
            e += gamma * kl_beta_vs_kde(grid, beta, est.q);
        }
    }
    return e;
}

void embed_gradient(const PerceptualDistanceMatrix& d, const CategoryAttributeMatrix& a,
                    double gamma, const DensityGrid& grid, const SolverGrids& sg,
                    std::vector<double>& grad) {
    grad.assign(a.a.size(), 0.0);
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(a.m));
    for (int i = 0; i < a.k; ++i)
        for (int j = i + 1; j < a.k; ++j) {
            double s = 0.0;
            for (int c = 0; c < a.m; ++c) {
                const double diff = a.at(i, c) - a.at(j, c);
                s += diff * diff;
            }
            const double norm = std::sqrt(s);
            if (norm == 0.0) continue;  // subgradient 0 at coincident rows
            const double r = norm * inv_sqrt_m - d.at(i, j);
            const double coef = 2.0 * r * inv_sqrt_m / norm;
            for (int c = 0; c < a.m; ++c) {
                const double diff = a.at(i, c) - a.at(j, c);
                grad[static_cast<size_t>(i) * a.m + c] += coef * diff;
                grad[static_cast<size_t>(j) * a.m + c] -= coef * diff;
            }
        }
    if (gamma > 0.0) {
        constexpr double inv_sqrt2pi = 0.3989422804014327;
        std::vector<double> col(a.k);
        const int np = static_cast<int>(grid.points.size());
        for (int m = 0; m < a.m; ++m) {
            for (int i = 0; i < a.k; ++i) col[i] = a.at(i, m);
            const auto est = kde_eval(col, grid);
            const double h = est.bandwidth;
            const double inv_nh2 = 1.0 / (static_cast<double>(a.k) * h * h);
            for (int p = 0; p < np; ++p) {
                if (est.q[p] <= est.floor) continue;  // floored: flat
                const double dkl_dq = -sg.beta_vals[p] / est.q[p];
                for (int i = 0; i < a.k; ++i) {
                    const double z = (grid.points[p] - col[i]) / h;
                    const double dq_dx = z * inv_sqrt2pi * std::exp(-0.5 * z * z) * inv_nh2;
                    grad[static_cast<size_t>(i) * a.m + m] += gamma * dkl_dq * dq_dx;
                }
            }
        }
    }
}

}  // namespace

EmbedResult solve_category_attribute_matrix(const PerceptualDistanceMatrix& d, int m,
                                            const EmbedConfig& cfg) {
    d.validate();
    if (m < 1) throw std::invalid_argument("attribute count M must be >= 1");
    cfg.beta.validate();
    cfg.grid.validate();
    if (cfg.restarts < 1 || cfg.iterations < 1)
        throw std::invalid_argument("solver needs at least one restart and one iteration");

    SolverGrids sg;
    sg.beta_vals.resize(cfg.grid.points.size());
    for (size_t p = 0; p < cfg.grid.points.size(); ++p)
        sg.beta_vals[p] = beta_pdf(cfg.grid.points[p], cfg.beta);

    const int polish_start =
        cfg.iterations - static_cast<int>(cfg.polish_frac * static_cast<double>(cfg.iterations));

    EmbedResult best;
    double best_obj = 0.0;
    std::vector<double> grad;
    for (int r = 0; r < cfg.restarts; ++r) {
        CategoryAttributeMatrix a;
        a.k = d.k;
        a.m = m;
        a.a.resize(static_cast<size_t>(d.k) * m);
        auto eng = named_engine(cfg.seed, "embed-restart-" + std::to_string(r));
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        for (double& v : a.a) v = uni(eng);

        double gamma = cfg.gamma;
        double cur = embed_objective(d, a, gamma, cfg.beta, cfg.grid);
        if (cfg.on_accept) cfg.on_accept(r, gamma, cur);
        for (int it = 0; it < cfg.iterations; ++it) {
            if (it == polish_start && gamma != 0.0) {
                gamma = 0.0;
                cur = embed_objective(d, a, gamma, cfg.beta, cfg.grid);
                if (cfg.on_accept) cfg.on_accept(r, gamma, cur);
            }
            embed_gradient(d, a, gamma, cfg.grid, sg, grad);
            CategoryAttributeMatrix cand = a;
            for (size_t i = 0; i < cand.a.size(); ++i)
                cand.a[i] = std::clamp(cand.a[i] - cfg.step * grad[i], 0.0, 1.0);
            const double cand_obj = embed_objective(d, cand, gamma, cfg.beta, cfg.grid);
            if (cand_obj <= cur) {
                a = std::move(cand);
                cur = cand_obj;
                if (cfg.on_accept) cfg.on_accept(r, gamma, cur);
            }
        }
        if (best.best_restart < 0 || cur < best_obj) {
            best_obj = cur;
            best.a = a;
            best.best_restart = r;
        }
    }
    best.objective = best_obj;
    best.pairwise_error = pairwise_embedding_error(d, best.a);
    const int pairs = d.k * (d.k - 1) / 2;
    best.pairwise_rmse = pairs > 0 ? std::sqrt(best.pairwise_error / pairs) : 0.0;
    return best;
}

namespace {

void write_matrix(const std::filesystem::path& path, int k, int m,
                  const std::vector<double>& values) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# K=" << k << " M=" << m << "\n";
    char buf[32];
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < m; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", values[static_cast<size_t>(i) * m + j]);
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
}

std::tuple<int, int, std::vector<double>> read_matrix(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string header;
    std::getline(in, header);
    int k = 0, m = 0;
    if (std::sscanf(header.c_str(), "# K=%d M=%d", &k, &m) != 2 || k < 1 || m < 1)
        throw std::runtime_error(path.string() + ": bad matrix header '" + header + "'");
    std::vector<double> values;
    values.reserve(static_cast<size_t>(k) * m);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
    }
    if (values.size() != static_cast<size_t>(k) * m)
        throw std::runtime_error(path.string() + ": expected " + std::to_string(k * m) +
                                 " values, got " + std::to_string(values.size()));
    return {k, m, std::move(values)};
}

}  // namespace

void save_matrix_csv(const std::filesystem::path& path, int k, int m,
                     const std::vector<double>& values) {
    write_matrix(path, k, m, values);
}

void save_distance_csv(const std::filesystem::path& path, const PerceptualDistanceMatrix& d) {
    write_matrix(path, d.k, d.k, d.d);
}

void save_attribute_csv(const std::filesystem::path& path, const CategoryAttributeMatrix& a) {
    write_matrix(path, a.k, a.m, a.a);
}

PerceptualDistanceMatrix load_distance_csv(const std::filesystem::path& path) {
    auto [k, m, values] = read_matrix(path);
    if (k != m) throw std::runtime_error(path.string() + ": distance matrix must be square");
    PerceptualDistanceMatrix d;
    d.k = k;
    d.d = std::move(values);
    d.validate();
    return d;
}

CategoryAttributeMatrix load_attribute_csv(const std::filesystem::path& path) {
    auto [k, m, values] = read_matrix(path);
    CategoryAttributeMatrix a;
    a.k = k;
    a.m = m;
    a.a = std::move(values);
    a.validate();
    return a;
}

void save_judgments_json(const std::filesystem::path& path, const SimilarityJudgments& j) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : j.entries)
        arr.push_back({{"a", e.a}, {"b", e.b}, {"yes", e.yes}, {"no", e.no}});
    nlohmann::json doc = {{"categories", j.categories}, {"judgments", arr}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << "\n";
}

SimilarityJudgments load_judgments_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    nlohmann::json doc = nlohmann::json::parse(in);
    SimilarityJudgments j;
    j.categories = doc.at("categories").get<int>();
    for (const auto& e : doc.at("judgments")) {
        SimilarityJudgments::Entry entry;
        entry.a = e.at("a").get<int>();
        entry.b = e.at("b").get<int>();
        entry.yes = e.at("yes").get<int64_t>();
        entry.no = e.at("no").get<int64_t>();
        j.entries.push_back(entry);
    }
    return j;
}

}  // namespace macnet
