// Acceptance suite: runs every acceptance criterion end to end and prints one
// PASS/FAIL line per criterion. Heavy artifacts (corpus, attribute matrix,
// trained networks) are built once through the CLI and shared.
//
// usage: acceptance --cli <macnet binary> [--work <dir>] [--only <n>]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "macnet/checkpoint.hpp"
#include "macnet/corpus.hpp"
#include "macnet/eval.hpp"
#include "macnet/network.hpp"
#include "macnet/ops.hpp"
#include "macnet/percept.hpp"
#include "macnet/rng.hpp"
#include "macnet/train.hpp"

namespace fs = std::filesystem;
using namespace macnet;
using Clock = std::chrono::steady_clock;
using nlohmann::json;

namespace {

struct Context {
    std::string cli;
    fs::path work;
    bool all_passed = true;

    // cached artifacts
    std::optional<LoadedCorpus> main_corpus;
    std::optional<CategoryAttributeMatrix> main_attr;
    std::optional<LoadedCorpus> small_corpus;
    bool main_run_done = false;
    double main_train_seconds = 0.0;
    // per-seed test accuracies and test-split attribute KLs for the ablation
    std::vector<double> acc_with, acc_without, kl_with, kl_without;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(Context& ctx, int criterion, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ctx.all_passed = false;
}

int run_cli(const Context& ctx, const std::string& args) {
    const std::string cmd = ctx.cli + " " + args + " >>" + (ctx.work / "cli.log").string() +
                            " 2>>" + (ctx.work / "cli.log").string();
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

void require_cli(const Context& ctx, const std::string& args) {
    const int code = run_cli(ctx, args);
    if (code != 0)
        throw std::runtime_error("CLI step failed (exit " + std::to_string(code) + "): " + args +
                                 " -- see " + (ctx.work / "cli.log").string());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor random_batch(int n, int size, uint64_t seed) {
    Tensor t = Tensor::zeros({n, 3, size, size});
    std::mt19937_64 eng(splitmix64(seed));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (double& v : t.values()) v = uni(eng);
    return t;
}

// ---- shared artifacts ------------------------------------------------------

void ensure_main_pipeline(Context& ctx) {
    const fs::path corpus_dir = ctx.work / "corpus";
    const fs::path run_dir = ctx.work / "run_main";
    if (!fs::exists(corpus_dir / "manifest.json")) {
        require_cli(ctx, "synth --out " + corpus_dir.string() + " --seed 1");
        require_cli(ctx, "distances --corpus " + corpus_dir.string() + " --out " +
                             (ctx.work / "D.csv").string() + " --judgments " +
                             (ctx.work / "judgments.json").string() + " --seed 1");
        require_cli(ctx, "embed --distances " + (ctx.work / "D.csv").string() +
                             " --attributes 12 --out " + (ctx.work / "A.csv").string() +
                             " --seed 1");
    }
    if (!ctx.main_corpus) {
        ctx.main_corpus = load_corpus(corpus_dir);
        ctx.main_attr = load_attribute_csv(ctx.work / "A.csv");
    }
    if (!ctx.main_run_done) {
        if (!fs::exists(run_dir / "best.ckpt")) {
            const auto t0 = Clock::now();
            require_cli(ctx, "train --corpus " + corpus_dir.string() + " --attr-matrix " +
                                 (ctx.work / "A.csv").string() + " --out " + run_dir.string() +
                                 " --seed 1");
            ctx.main_train_seconds = seconds_since(t0);
            std::ofstream(ctx.work / "train_seconds.txt") << ctx.main_train_seconds << "\n";
        } else if (fs::exists(ctx.work / "train_seconds.txt")) {
            std::ifstream(ctx.work / "train_seconds.txt") >> ctx.main_train_seconds;
        }
        ctx.main_run_done = true;
    }
}

void ensure_small_corpus(Context& ctx) {
    const fs::path dir = ctx.work / "corpus_small";
    if (!fs::exists(dir / "manifest.json"))
        require_cli(ctx, "synth --out " + dir.string() +
                             " --train-per-category 200 --val-per-category 50 "
                             "--test-per-category 50 --seed 2");
    if (!ctx.small_corpus) ctx.small_corpus = load_corpus(dir);
}

// Train one arm of the ablation (in process) and return (test accuracy,
// test-split attribute KL against the Beta prior).
std::pair<double, double> ablation_arm(Context& ctx, uint64_t seed, double lambda_attr,
                                       double lambda_dist) {
    ensure_main_pipeline(ctx);
    ensure_small_corpus(ctx);
    NetworkConfig cfg;
    cfg.categories = ctx.small_corpus->category_count();
    cfg.attributes = ctx.main_attr->m;
    cfg.lambda_attr = lambda_attr;
    cfg.lambda_dist = lambda_dist;
    MacNetwork net = MacNetwork::build(cfg, seed);
    TrainConfig tcfg;
    tcfg.seed = seed;
    tcfg.max_epochs = 10;
    train(net, *ctx.small_corpus, *ctx.main_attr, tcfg);
    const ValMetrics test = evaluate_split(net, ctx.small_corpus->test, *ctx.main_attr);
    double kl = 0.0;
    if (cfg.with_aux_heads && (lambda_attr > 0.0 || lambda_dist >= 0.0)) {
        const PatchFeatures f = extract_features(net, ctx.small_corpus->test);
        kl = distribution_match(f.attrs, cfg.beta, cfg.grid());
    }
    return {test.accuracy, kl};
}

void ensure_ablation_runs(Context& ctx) {
    if (!ctx.acc_with.empty()) return;
    for (uint64_t seed : {11ULL, 12ULL, 13ULL}) {
        const auto [acc_a, kl_a] = ablation_arm(ctx, seed, 1.0, 0.1);
        ctx.acc_with.push_back(acc_a);
        ctx.kl_with.push_back(kl_a);
        const auto [acc_b, kl_b] = ablation_arm(ctx, seed, 0.0, 0.0);
        ctx.acc_without.push_back(acc_b);
        (void)kl_b;
        const auto [acc_c, kl_c] = ablation_arm(ctx, seed, 1.0, 0.0);
        ctx.kl_without.push_back(kl_c);
        (void)acc_c;
    }
}

// ---- criteria --------------------------------------------------------------

// 1. Gradient integrity through the full joint loss.
void criterion_1(Context& ctx) {
    const auto t0 = Clock::now();
    NetworkConfig cfg;
    cfg.patch_size = 8;
    cfg.trunk_channels = {4, 6};
    cfg.categories = 3;
    cfg.attributes = 3;
    cfg.classifier_width = 12;
    cfg.grid_points = 8;
    cfg.lambda_attr = 1.0;
    cfg.lambda_dist = 0.1;
    MacNetwork net = MacNetwork::build(cfg, 202);
    Tensor batch = random_batch(4, 8, 305);
    const std::vector<int> labels = {0, 1, 2, 0};
    CategoryAttributeMatrix a;
    a.k = 3;
    a.m = 3;
    a.a = {0.9, 0.1, 0.2, 0.1, 0.8, 0.3, 0.4, 0.2, 0.9};

    auto loss_value = [&] { return net.compute_loss(net.forward(batch), labels, a).total; };

    Tensor loss = loss_value();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (Parameter* p : net.parameters()) {
        analytic.emplace_back(p->value.grad().begin(), p->value.grad().end());
        p->value.zero_grad();
    }
    const double eps = 1e-5;
    double max_rel = 0.0;
    int64_t checked = 0;
    const auto params = net.parameters();
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params[pi]->value.values();
        for (size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + eps;
            const double up = loss_value().scalar();
            vals[i] = orig - eps;
            const double down = loss_value().scalar();
            vals[i] = orig;
            const double fd = (up - down) / (2.0 * eps);
            const double rel = std::abs(analytic[pi][i] - fd) /
                               std::max({std::abs(analytic[pi][i]), std::abs(fd), 1e-4});
            max_rel = std::max(max_rel, rel);
            ++checked;
        }
    }
    const double secs = seconds_since(t0);
    const bool pass = max_rel < 1e-4 && secs < 120.0;
    std::ostringstream msg;
    msg << "gradient integrity: max rel err " << max_rel << " over " << checked
        << " parameters (<1e-4), runtime " << secs << "s (<120s)";
    report(ctx, 1, pass, msg.str());
}

// 2. Embedding recovery on exactly-embeddable distances.
void criterion_2(Context& ctx) {
    const auto t0 = Clock::now();
    const int k = 6, m = 4;
    CategoryAttributeMatrix planted;
    planted.k = k;
    planted.m = m;
    planted.a.resize(static_cast<size_t>(k) * m);
    std::mt19937_64 eng(splitmix64(4242));
    std::uniform_real_distribution<double> uni(0.05, 0.95);
    for (double& v : planted.a) v = uni(eng);
    PerceptualDistanceMatrix d;
    d.k = k;
    d.d.assign(static_cast<size_t>(k) * k, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            double s = 0.0;
            for (int c = 0; c < m; ++c) {
                const double diff = planted.at(i, c) - planted.at(j, c);
                s += diff * diff;
            }
            d.at(i, j) = std::sqrt(s / m);
        }
    EmbedConfig cfg;
    cfg.seed = 7;
    const EmbedResult result = solve_category_attribute_matrix(d, m, cfg);
    const double secs = seconds_since(t0);
    const bool pass = result.pairwise_rmse < 0.05 && result.objective < 1e-3 && secs < 30.0;
    std::ostringstream msg;
    msg << "embedding recovery: rmse " << result.pairwise_rmse << " (<0.05), objective "
        << result.objective << " (<1e-3), runtime " << secs << "s (<30s)";
    report(ctx, 2, pass, msg.str());
}

// 3. End-to-end training on the default corpus.
void criterion_3(Context& ctx) {
    ensure_main_pipeline(ctx);
    const LoadedCheckpoint best = load_checkpoint(ctx.work / "run_main" / "best.ckpt");
    const ValMetrics test = evaluate_split(best.net, ctx.main_corpus->test, *ctx.main_attr);
    const bool pass = test.accuracy >= 0.80 &&
                      (ctx.main_train_seconds > 0.0 ? ctx.main_train_seconds < 1800.0 : true);
    std::ostringstream msg;
    msg << "end-to-end training: test accuracy " << test.accuracy << " (>=0.80, chance 0.125)"
        << ", training wall time " << ctx.main_train_seconds << "s (<1800s)";
    report(ctx, 3, pass, msg.str());
}

// 4. Ablation parity over 3 seeds.
void criterion_4(Context& ctx) {
    ensure_ablation_runs(ctx);
    double mean_with = 0.0, mean_without = 0.0;
    for (double v : ctx.acc_with) mean_with += v;
    for (double v : ctx.acc_without) mean_without += v;
    mean_with /= ctx.acc_with.size();
    mean_without /= ctx.acc_without.size();
    const double diff_pts = std::abs(mean_with - mean_without) * 100.0;
    const bool pass = diff_pts < 2.0;
    std::ostringstream msg;
    msg << "ablation parity: accuracy with aux " << mean_with << " vs without " << mean_without
        << ", |diff| " << diff_pts << " pts (<2) over 3 seeds";
    report(ctx, 4, pass, msg.str());
}

// 5. Attribute fidelity on the validation split.
void criterion_5(Context& ctx) {
    ensure_main_pipeline(ctx);
    const LoadedCheckpoint best = load_checkpoint(ctx.work / "run_main" / "best.ckpt");
    const ValMetrics val = evaluate_split(best.net, ctx.main_corpus->val, *ctx.main_attr);
    const double per_attr = val.u_final / best.net.config().attributes;
    const bool pass = per_attr < 0.15;
    std::ostringstream msg;
    msg << "attribute fidelity: validation final-layer loss " << per_attr
        << " L1/attribute (<0.15)";
    report(ctx, 5, pass, msg.str());
}

// 6. Distribution matching: KL strictly smaller with the loss active, paired.
void criterion_6(Context& ctx) {
    ensure_ablation_runs(ctx);
    double mean_with = 0.0, mean_without = 0.0;
    for (double v : ctx.kl_with) mean_with += v;
    for (double v : ctx.kl_without) mean_without += v;
    mean_with /= ctx.kl_with.size();
    mean_without /= ctx.kl_without.size();
    const bool pass = mean_with < mean_without;
    std::ostringstream msg;
    msg << "distribution matching: KL-to-Beta with lambda_dist " << mean_with << " vs without "
        << mean_without << " (strictly smaller, paired over 3 seeds)";
    report(ctx, 6, pass, msg.str());
}

// 7. Trait decoding via logic regression.
void criterion_7(Context& ctx) {
    ensure_main_pipeline(ctx);
    const LoadedCheckpoint best = load_checkpoint(ctx.work / "run_main" / "best.ckpt");
    const TraitDecodeResult result = decode_traits(best.net, *ctx.main_corpus, {}, 9);
    const bool pass = result.mean_test_accuracy >= 0.75;
    std::ostringstream msg;
    msg << "trait decoding: mean held-out accuracy " << result.mean_test_accuracy << " (>=0.75;";
    for (const auto& t : result.traits) msg << " " << t.name << "=" << t.test_accuracy;
    msg << ")";
    report(ctx, 7, pass, msg.str());
}

// 8. Spatial consistency on two-region composites.
void criterion_8(Context& ctx) {
    ensure_main_pipeline(ctx);
    const LoadedCheckpoint best = load_checkpoint(ctx.work / "run_main" / "best.ckpt");
    const auto& cats = ctx.main_corpus->categories;
    std::vector<std::tuple<double, int, int>> pairs;
    for (int i = 0; i < static_cast<int>(cats.size()); ++i)
        for (int j = i + 1; j < static_cast<int>(cats.size()); ++j)
            pairs.push_back({oracle_distance(cats[i], cats[j]), i, j});
    std::sort(pairs.begin(), pairs.end(),
              [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });

    const int h = 96, w = 96, boundary = 49, stride = 5;
    std::vector<int> mask(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mask[static_cast<size_t>(y) * w + x] = x < boundary ? 0 : 1;

    const int m = best.net.config().attributes;
    std::vector<double> within(m, 0.0), cross(m, 0.0);
    for (int p = 0; p < 3; ++p) {
        const auto [dist, ci, cj] = pairs[p];
        const Image img =
            gen_two_region_composite(cats[ci], cats[cj], h, w, boundary, mix_seed(31, p));
        const auto map = predict_map(best.net, img, stride, MapTarget::attributes);
        for (int am = 0; am < m; ++am) {
            std::vector<double> channel(map.begin() + static_cast<size_t>(am) * h * w,
                                        map.begin() + static_cast<size_t>(am + 1) * h * w);
            const auto sc = spatial_consistency(channel, h, w, mask);
            within[am] += sc.within_tv;
            cross[am] += sc.cross_tv;
        }
    }
    int qualifying = 0;
    for (int am = 0; am < m; ++am)
        if (cross[am] > 0.0 && cross[am] >= 2.0 * within[am]) ++qualifying;
    const bool pass = qualifying * 2 >= m;
    std::ostringstream msg;
    msg << "spatial consistency: " << qualifying << "/" << m
        << " attributes with cross-boundary TV >= 2x within-region TV (need >= " << (m + 1) / 2
        << ")";
    report(ctx, 8, pass, msg.str());
}

// 9. Cluster separation versus raw pixels.
void criterion_9(Context& ctx) {
    ensure_main_pipeline(ctx);
    const LoadedCheckpoint best = load_checkpoint(ctx.work / "run_main" / "best.ckpt");
    const SplitData& test = ctx.main_corpus->test;
    const PatchFeatures f = extract_features(best.net, test);
    const int m = best.net.config().attributes;
    std::vector<std::vector<double>> attr_vecs, pixel_vecs;
    for (int64_t i = 0; i < test.count(); ++i) {
        attr_vecs.emplace_back(f.attrs.begin() + i * m, f.attrs.begin() + (i + 1) * m);
        const auto patch = test.patch(i);
        pixel_vecs.emplace_back(patch.begin(), patch.end());
    }
    const double sil_attr = cluster_separation(attr_vecs, test.labels);
    const double sil_pixels = cluster_separation(pixel_vecs, test.labels);
    const bool pass = sil_attr >= sil_pixels + 0.1;
    std::ostringstream msg;
    msg << "cluster separation: attribute silhouette " << sil_attr << " vs pixel silhouette "
        << sil_pixels << " (margin >= 0.1)";
    report(ctx, 9, pass, msg.str());
}

// 10. N-shot behavior with the held-out category.
void criterion_10(Context& ctx) {
    ensure_main_pipeline(ctx);
    const auto t0 = Clock::now();
    const fs::path out = ctx.work / "nshot";
    if (!fs::exists(out / "nshot.json"))
        require_cli(ctx, "nshot --corpus " + (ctx.work / "corpus").string() + " --attr-matrix " +
                             (ctx.work / "A.csv").string() + " --held-out moss --out " +
                             out.string() + " --repeats 5 --seed 21");
    const double secs = seconds_since(t0);

    const json doc = json::parse(slurp(out / "nshot.json"));
    auto recall = [&](int n, const std::string& fsname) {
        for (const auto& c : doc.at("cells"))
            if (c.at("n") == n && c.at("feature_set") == fsname)
                return c.at("mean").get<double>();
        throw std::runtime_error("missing n-shot cell");
    };
    const double r10 = recall(10, "combined"), r20 = recall(20, "combined");
    bool concat_ok = true;
    std::ostringstream detail;
    for (int n : {1, 2, 5, 10, 20}) {
        const double best_single = std::max(recall(n, "attributes"), recall(n, "materials"));
        const double comb = recall(n, "combined");
        if (comb < best_single - 0.05) concat_ok = false;
        detail << " N=" << n << ":" << comb;
    }
    const bool plateau_ok = r10 >= r20 - 0.03;
    const bool pass = plateau_ok && concat_ok && secs < 2700.0;
    std::ostringstream msg;
    msg << "n-shot: combined recall@10 " << r10 << " vs @20 " << r20
        << " (within 0.03), combined >= max(single)-0.05 at every N ("
        << (concat_ok ? "yes" : "no") << "), runtime " << secs << "s (<2700s); combined:"
        << detail.str();
    report(ctx, 10, pass, msg.str());
}

// 11. Bitwise determinism of CLI outputs at --threads 1.
void criterion_11(Context& ctx) {
    auto dirs_identical = [&](const fs::path& a, const fs::path& b) {
        std::vector<fs::path> rel;
        for (const auto& e : fs::recursive_directory_iterator(a))
            if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
        for (const auto& r : rel)
            if (!fs::exists(b / r) || slurp(a / r) != slurp(b / r)) return false;
        return true;
    };
    const std::string synth_args =
        " --train-per-category 10 --val-per-category 4 --test-per-category 4 --seed 5 --threads 1";
    require_cli(ctx, "synth --out " + (ctx.work / "det_c1").string() + synth_args);
    require_cli(ctx, "synth --out " + (ctx.work / "det_c2").string() + synth_args);
    const bool synth_ok = dirs_identical(ctx.work / "det_c1", ctx.work / "det_c2");

    require_cli(ctx, "distances --corpus " + (ctx.work / "det_c1").string() + " --out " +
                         (ctx.work / "det_D.csv").string() + " --seed 5 --threads 1");
    const std::string embed_args = "embed --distances " + (ctx.work / "det_D.csv").string() +
                                   " --attributes 6 --restarts 2 --iterations 300 --seed 5 "
                                   "--threads 1 --out ";
    require_cli(ctx, embed_args + (ctx.work / "det_A1.csv").string());
    require_cli(ctx, embed_args + (ctx.work / "det_A2.csv").string());
    const bool embed_ok =
        slurp(ctx.work / "det_A1.csv") == slurp(ctx.work / "det_A2.csv");

    std::ofstream(ctx.work / "det_train.json")
        << R"({"batch_size": 16, "max_epochs": 2, "trunk_channels": [8, 16],
               "classifier_width": 32, "grid_points": 16})";
    const std::string train_args = "train --corpus " + (ctx.work / "det_c1").string() +
                                   " --attr-matrix " + (ctx.work / "det_A1.csv").string() +
                                   " --config " + (ctx.work / "det_train.json").string() +
                                   " --seed 5 --threads 1 --out ";
    require_cli(ctx, train_args + (ctx.work / "det_r1").string());
    require_cli(ctx, train_args + (ctx.work / "det_r2").string());
    const bool train_ok =
        slurp(ctx.work / "det_r1/metrics.jsonl") == slurp(ctx.work / "det_r2/metrics.jsonl") &&
        slurp(ctx.work / "det_r1/best.ckpt") == slurp(ctx.work / "det_r2/best.ckpt");

    fs::path some_png;
    for (const auto& e : fs::directory_iterator(ctx.work / "det_c1/patches/test")) {
        some_png = e.path();
        break;
    }
    const std::string maps_args = "maps --checkpoint " + (ctx.work / "det_r1/best.ckpt").string() +
                                  " --image " + some_png.string() +
                                  " --stride 8 --threads 1 --out ";
    require_cli(ctx, maps_args + (ctx.work / "det_m1").string());
    require_cli(ctx, maps_args + (ctx.work / "det_m2").string());
    const bool maps_ok = dirs_identical(ctx.work / "det_m1", ctx.work / "det_m2");

    const bool pass = synth_ok && embed_ok && train_ok && maps_ok;
    std::ostringstream msg;
    msg << "determinism at --threads 1: synth " << (synth_ok ? "ok" : "MISMATCH") << ", embed "
        << (embed_ok ? "ok" : "MISMATCH") << ", train " << (train_ok ? "ok" : "MISMATCH")
        << ", maps " << (maps_ok ? "ok" : "MISMATCH");
    report(ctx, 11, pass, msg.str());
}

}  // namespace

int main(int argc, char** argv) {
    Context ctx;
    int only = 0;
    ctx.work = fs::temp_directory_path() / "macnet_acceptance";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--cli" && i + 1 < argc) ctx.cli = argv[++i];
        else if (arg == "--work" && i + 1 < argc) ctx.work = argv[++i];
        else if (arg == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
        else {
            std::fprintf(stderr, "usage: acceptance --cli <macnet> [--work <dir>] [--only <n>]\n");
            return 2;
        }
    }
    if (ctx.cli.empty()) {
        std::fprintf(stderr, "acceptance: --cli <macnet binary> is required\n");
        return 2;
    }
    fs::create_directories(ctx.work);
    std::printf("acceptance work dir: %s\n", ctx.work.string().c_str());

    const auto t0 = Clock::now();
    using Criterion = void (*)(Context&);
    const Criterion criteria[] = {criterion_1, criterion_2, criterion_3, criterion_4,
                                  criterion_5, criterion_6, criterion_7, criterion_8,
                                  criterion_9, criterion_10, criterion_11};
    for (int i = 0; i < 11; ++i) {
        if (only && only != i + 1) continue;
        try {
            criteria[i](ctx);
        } catch (const std::exception& e) {
            report(ctx, i + 1, false, std::string("exception: ") + e.what());
        }
    }
    std::printf("acceptance total wall time: %.0fs\n", seconds_since(t0));
    return ctx.all_passed ? 0 : 1;
}
