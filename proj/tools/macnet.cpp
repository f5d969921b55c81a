// macnet: material attribute-category network pipeline.
//
// Subcommands: synth, distances, embed, train, eval, maps, nshot, traits.
// Exit codes: 0 success, 2 configuration error, 3 data error.
// Seed precedence: --seed flag > MACNET_SEED env > config file > 0.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "macnet/checkpoint.hpp"
#include "macnet/corpus.hpp"
#include "macnet/eval.hpp"
#include "macnet/image.hpp"
#include "macnet/network.hpp"
#include "macnet/percept.hpp"
#include "macnet/rng.hpp"
#include "macnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace macnet;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Strict view over a JSON config file: every key must be declared.
class StrictConfig {
  public:
    StrictConfig() : doc_(json::object()) {}
    explicit StrictConfig(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read config file " + path.string());
        try {
            doc_ = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
        if (!doc_.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
    }

    void check_keys(const std::set<std::string>& allowed) const {
        for (const auto& [key, value] : doc_.items())
            if (!allowed.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }

    template <typename T>
    T get(const std::string& key, T fallback) const {
        if (!doc_.contains(key)) return fallback;
        try {
            return doc_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + key + "' has the wrong type");
        }
    }
    bool has(const std::string& key) const { return doc_.contains(key); }
    const json& raw() const { return doc_; }

  private:
    json doc_;
};

uint64_t resolve_seed(const CLI::Option* seed_opt, uint64_t flag_value, const StrictConfig& cfg) {
    if (seed_opt->count() > 0) return flag_value;
    if (const char* env = std::getenv("MACNET_SEED")) {
        try {
            size_t used = 0;
            const uint64_t v = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument("trailing text");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("MACNET_SEED must be an unsigned integer, got '" +
                              std::string(env) + "'");
        }
    }
    return cfg.get<uint64_t>("seed", 0);
}

void write_echo(const fs::path& out, const json& resolved) {
    fs::path target;
    std::error_code ec;
    if (fs::is_directory(out)) {
        target = out / "config.json";
    } else {
        target = out.parent_path() / (out.stem().string() + ".config.json");
        if (out.parent_path().empty()) target = out.stem().string() + ".config.json";
    }
    std::ofstream f(target);
    if (!f) throw std::runtime_error("cannot write " + target.string());
    f << resolved.dump(2) << "\n";
    (void)ec;
}

std::vector<CategorySpec> categories_from_json(const json& arr) {
    std::vector<CategorySpec> cats;
    for (const auto& j : arr) {
        static const std::set<std::string> allowed = {
            "name",        "hierarchy",       "hue_min",          "hue_max",
            "saturation",  "value",           "stripe_freq",      "stripe_angle_deg",
            "speckle_density", "roughness",   "gloss_density",    "fuzz_radius"};
        for (const auto& [key, value] : j.items())
            if (!allowed.count(key)) throw ConfigError("unknown category key '" + key + "'");
        CategorySpec s;
        s.name = j.at("name").get<std::string>();
        const auto h = j.value("hierarchy", std::vector<std::string>{"top", "mid", s.name});
        if (h.size() != 3) throw ConfigError("category hierarchy must have exactly 3 levels");
        s.hierarchy = {h[0], h[1], h[2]};
        s.hue_min = j.value("hue_min", 0.0);
        s.hue_max = j.value("hue_max", s.hue_min);
        s.saturation = j.value("saturation", 0.5);
        s.value = j.value("value", 0.6);
        s.stripe_freq = j.value("stripe_freq", 0.0);
        s.stripe_angle_deg = j.value("stripe_angle_deg", 0.0);
        s.speckle_density = j.value("speckle_density", 0.0);
        s.roughness = j.value("roughness", 0.0);
        s.gloss_density = j.value("gloss_density", 0.0);
        s.fuzz_radius = j.value("fuzz_radius", 0.0);
        cats.push_back(std::move(s));
    }
    if (cats.empty()) throw ConfigError("category list is empty");
    return cats;
}

json categories_to_echo(const std::vector<CategorySpec>& cats) {
    json arr = json::array();
    for (const auto& c : cats)
        arr.push_back({{"name", c.name},
                       {"hierarchy", {c.hierarchy[0], c.hierarchy[1], c.hierarchy[2]}},
                       {"hue_min", c.hue_min},
                       {"hue_max", c.hue_max},
                       {"saturation", c.saturation},
                       {"value", c.value},
                       {"stripe_freq", c.stripe_freq},
                       {"stripe_angle_deg", c.stripe_angle_deg},
                       {"speckle_density", c.speckle_density},
                       {"roughness", c.roughness},
                       {"gloss_density", c.gloss_density},
                       {"fuzz_radius", c.fuzz_radius}});
    return arr;
}

int find_category(const std::vector<CategorySpec>& cats, const std::string& name_or_index) {
    for (size_t i = 0; i < cats.size(); ++i)
        if (cats[i].name == name_or_index) return static_cast<int>(i);
    try {
        size_t used = 0;
        const int idx = std::stoi(name_or_index, &used);
        if (used == name_or_index.size() && idx >= 0 && idx < static_cast<int>(cats.size()))
            return idx;
    } catch (const std::exception&) {
    }
    throw ConfigError("unknown category '" + name_or_index + "'");
}

// ---- subcommand state ---------------------------------------------------

struct CommonArgs {
    std::string config_path;
    uint64_t seed = 0;
    int threads = 1;
    CLI::Option* seed_opt = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (unknown keys rejected)");
        seed_opt = cmd->add_option("--seed", seed, "RNG seed (overrides MACNET_SEED and config)");
        cmd->add_option("--threads", threads, "worker threads; 1 is the deterministic reference");
    }
    StrictConfig load(const std::set<std::string>& allowed) {
        StrictConfig cfg =
            config_path.empty() ? StrictConfig() : StrictConfig(fs::path(config_path));
        cfg.check_keys(allowed);
        seed = resolve_seed(seed_opt, seed, cfg);
        if (threads < 1) throw ConfigError("--threads must be >= 1");
        return cfg;
    }
};

NetworkConfig network_config_from(const StrictConfig& cfg, int categories, int attributes,
                                  int patch_size) {
    NetworkConfig net;
    net.patch_size = patch_size;
    net.categories = categories;
    net.attributes = attributes;
    net.trunk_channels = cfg.get<std::vector<int>>("trunk_channels", net.trunk_channels);
    net.lambda_attr = cfg.get<double>("lambda_attr", net.lambda_attr);
    net.lambda_dist = cfg.get<double>("lambda_dist", net.lambda_dist);
    net.beta.a = cfg.get<double>("beta_a", net.beta.a);
    net.beta.b = cfg.get<double>("beta_b", net.beta.b);
    net.grid_points = cfg.get<int>("grid_points", net.grid_points);
    net.kde_bandwidth = cfg.get<double>("kde_bandwidth", net.kde_bandwidth);
    const std::string mode = cfg.get<std::string>("dist_mode", "pooled");
    if (mode != "pooled" && mode != "per_attribute")
        throw ConfigError("dist_mode must be 'pooled' or 'per_attribute'");
    net.dist_mode = mode == "pooled" ? DistLossMode::pooled : DistLossMode::per_attribute;
    net.classifier_width = cfg.get<int>("classifier_width", net.classifier_width);
    net.with_aux_heads = cfg.get<bool>("with_aux_heads", true);
    return net;
}

json network_echo(const NetworkConfig& net) { return json::parse(network_config_to_json(net)); }

const std::set<std::string> kNetworkKeys = {"trunk_channels", "lambda_attr", "lambda_dist",
                                            "beta_a",         "beta_b",      "grid_points",
                                            "kde_bandwidth",  "dist_mode",   "classifier_width",
                                            "with_aux_heads"};

const std::set<std::string> kTrainKeys = {"batch_size",     "learning_rate", "momentum",
                                          "weight_decay",   "lr_decay_factor", "lr_floor",
                                          "max_epochs"};

TrainConfig train_config_from(const StrictConfig& cfg, uint64_t seed) {
    TrainConfig t;
    t.batch_size = cfg.get<int>("batch_size", t.batch_size);
    t.learning_rate = cfg.get<double>("learning_rate", t.learning_rate);
    t.momentum = cfg.get<double>("momentum", t.momentum);
    t.weight_decay = cfg.get<double>("weight_decay", t.weight_decay);
    t.lr_decay_factor = cfg.get<double>("lr_decay_factor", t.lr_decay_factor);
    t.lr_floor = cfg.get<double>("lr_floor", t.lr_floor);
    t.max_epochs = cfg.get<int>("max_epochs", t.max_epochs);
    t.seed = seed;
    return t;
}

json train_echo(const TrainConfig& t) {
    return {{"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"lr_decay_factor", t.lr_decay_factor},
            {"lr_floor", t.lr_floor},
            {"max_epochs", t.max_epochs},
            {"seed", t.seed}};
}

// ---- subcommands ---------------------------------------------------------

int run_synth(CommonArgs& common, const std::string& out, int train_n, int val_n, int test_n,
              int patch, const CLI::App* cmd) {
    static const std::set<std::string> keys = {"seed",       "threads",
                                               "train_per_category", "val_per_category",
                                               "test_per_category",  "patch_size",
                                               "categories"};
    StrictConfig cfg = common.load(keys);
    CorpusConfig corpus;
    corpus.seed = common.seed;
    corpus.threads = common.threads;
    corpus.train_per_category =
        cmd->count("--train-per-category") ? train_n : cfg.get<int>("train_per_category", 400);
    corpus.val_per_category =
        cmd->count("--val-per-category") ? val_n : cfg.get<int>("val_per_category", 100);
    corpus.test_per_category =
        cmd->count("--test-per-category") ? test_n : cfg.get<int>("test_per_category", 100);
    corpus.patch_size = cmd->count("--patch-size") ? patch : cfg.get<int>("patch_size", 32);
    if (cfg.has("categories")) corpus.categories = categories_from_json(cfg.raw().at("categories"));

    fs::create_directories(out);
    gen_corpus(corpus, out);
    write_echo(out, json{{"command", "synth"},
                         {"seed", corpus.seed},
                         {"threads", corpus.threads},
                         {"train_per_category", corpus.train_per_category},
                         {"val_per_category", corpus.val_per_category},
                         {"test_per_category", corpus.test_per_category},
                         {"patch_size", corpus.patch_size},
                         {"categories", categories_to_echo(corpus.categories)}});
    std::cout << "wrote corpus with " << corpus.categories.size() << " categories to " << out
              << "\n";
    return 0;
}

int run_distances(CommonArgs& common, const std::string& corpus_dir, const std::string& out,
                  int annotators, double noise, const std::string& judgments_out,
                  const CLI::App* cmd) {
    static const std::set<std::string> keys = {"seed", "threads", "annotators", "noise"};
    StrictConfig cfg = common.load(keys);
    const int ann = cmd->count("--annotators") ? annotators : cfg.get<int>("annotators", 50);
    const double ns = cmd->count("--noise") ? noise : cfg.get<double>("noise", 0.1);

    const CorpusManifest manifest = load_manifest(fs::path(corpus_dir) / "manifest.json");
    const SimilarityJudgments judgments =
        oracle_judgments(manifest.categories, ann, ns, common.seed);
    const PerceptualDistanceMatrix d = build_distance_matrix(judgments);
    save_distance_csv(out, d);
    if (!judgments_out.empty()) save_judgments_json(judgments_out, judgments);
    write_echo(out, json{{"command", "distances"},
                         {"seed", common.seed},
                         {"threads", common.threads},
                         {"corpus", corpus_dir},
                         {"annotators", ann},
                         {"noise", ns}});
    std::cout << "wrote " << d.k << "x" << d.k << " distance matrix to " << out << "\n";
    return 0;
}

int run_embed(CommonArgs& common, const std::string& distances, int attributes,
              const std::string& out, const CLI::App* cmd, int restarts, int iterations,
              double step, double gamma, double beta_a, double beta_b, int grid_points) {
    static const std::set<std::string> keys = {"seed",   "threads",    "attributes", "restarts",
                                               "iterations", "step",   "gamma",      "beta_a",
                                               "beta_b", "grid_points"};
    StrictConfig cfg = common.load(keys);
    EmbedConfig ec;
    ec.seed = common.seed;
    ec.threads = common.threads;
    ec.restarts = cmd->count("--restarts") ? restarts : cfg.get<int>("restarts", ec.restarts);
    ec.iterations =
        cmd->count("--iterations") ? iterations : cfg.get<int>("iterations", ec.iterations);
    ec.step = cmd->count("--step") ? step : cfg.get<double>("step", ec.step);
    ec.gamma = cmd->count("--gamma") ? gamma : cfg.get<double>("gamma", ec.gamma);
    ec.beta.a = cmd->count("--beta-a") ? beta_a : cfg.get<double>("beta_a", ec.beta.a);
    ec.beta.b = cmd->count("--beta-b") ? beta_b : cfg.get<double>("beta_b", ec.beta.b);
    const int gp = cmd->count("--grid-points") ? grid_points : cfg.get<int>("grid_points", 32);
    ec.grid = DensityGrid::midpoints(gp);
    const int m = cmd->count("--attributes") ? attributes : cfg.get<int>("attributes", 12);

    const PerceptualDistanceMatrix d = load_distance_csv(distances);
    const EmbedResult result = solve_category_attribute_matrix(d, m, ec);
    save_attribute_csv(out, result.a);
    write_echo(out, json{{"command", "embed"},
                         {"seed", ec.seed},
                         {"threads", ec.threads},
                         {"distances", distances},
                         {"attributes", m},
                         {"restarts", ec.restarts},
                         {"iterations", ec.iterations},
                         {"step", ec.step},
                         {"gamma", ec.gamma},
                         {"beta_a", ec.beta.a},
                         {"beta_b", ec.beta.b},
                         {"grid_points", gp},
                         {"objective", result.objective},
                         {"pairwise_rmse", result.pairwise_rmse},
                         {"best_restart", result.best_restart}});
    std::cout << "objective " << result.objective << " pairwise_rmse " << result.pairwise_rmse
              << " restart " << result.best_restart << "\n";
    return 0;
}

int run_train(CommonArgs& common, const std::string& corpus_dir, const std::string& attr_csv,
              const std::string& out, const std::string& resume, const CLI::App* cmd,
              int max_epochs, double lambda_attr, double lambda_dist) {
    std::set<std::string> keys = {"seed", "threads"};
    keys.insert(kNetworkKeys.begin(), kNetworkKeys.end());
    keys.insert(kTrainKeys.begin(), kTrainKeys.end());
    StrictConfig cfg = common.load(keys);

    const LoadedCorpus corpus = load_corpus(corpus_dir);
    const CategoryAttributeMatrix a = load_attribute_csv(attr_csv);
    if (a.k != corpus.category_count())
        throw std::runtime_error("attribute matrix has " + std::to_string(a.k) +
                                 " rows, corpus has " + std::to_string(corpus.category_count()) +
                                 " categories");

    NetworkConfig net_cfg =
        network_config_from(cfg, corpus.category_count(), a.m, corpus.train.patch_size);
    if (cmd->count("--lambda-attr")) net_cfg.lambda_attr = lambda_attr;
    if (cmd->count("--lambda-dist")) net_cfg.lambda_dist = lambda_dist;
    TrainConfig train_cfg = train_config_from(cfg, common.seed);
    if (cmd->count("--max-epochs")) train_cfg.max_epochs = max_epochs;

    fs::create_directories(out);
    MacNetwork net = MacNetwork::build(net_cfg, common.seed);

    std::ofstream metrics(fs::path(out) / "metrics.jsonl",
                          resume.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) throw std::runtime_error("cannot write metrics.jsonl under " + out);
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& rec) {
        metrics << rec.to_jsonl() << "\n";
        metrics.flush();
        std::cout << "epoch " << rec.epoch << " lr " << rec.learning_rate << " val_acc "
                  << rec.val_accuracy << "\n";
    };

    write_echo(out, json{{"command", "train"},
                         {"seed", common.seed},
                         {"threads", common.threads},
                         {"corpus", corpus_dir},
                         {"attr_matrix", attr_csv},
                         {"network", network_echo(net_cfg)},
                         {"train", train_echo(train_cfg)}});

    const TrainResult result =
        train(net, corpus, a, train_cfg, hooks, fs::path(out),
              resume.empty() ? std::nullopt : std::optional<fs::path>(resume));

    std::cout << "best epoch " << result.best_epoch << " val_accuracy "
              << result.best_val_accuracy << "\n";
    return 0;
}

int run_eval(CommonArgs& common, const std::string& corpus_dir, const std::string& ckpt,
             const std::string& attr_csv, const std::string& out, const std::string& split) {
    static const std::set<std::string> keys = {"seed", "threads"};
    common.load(keys);

    const LoadedCorpus corpus = load_corpus(corpus_dir);
    const CategoryAttributeMatrix a = load_attribute_csv(attr_csv);
    const LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const MacNetwork& net = loaded.net;
    const SplitData& data = split == "val"     ? corpus.val
                            : split == "train" ? corpus.train
                            : split == "test"  ? corpus.test
                                               : throw ConfigError("unknown split '" + split + "'");

    const ValMetrics metrics = evaluate_split(net, data, a);

    // silhouette: final attributes vs raw pixels, per category
    const PatchFeatures features = extract_features(net, data);
    std::vector<std::vector<double>> attr_vecs, pixel_vecs;
    const int m = net.config().attributes;
    for (int64_t i = 0; i < data.count(); ++i) {
        if (net.config().with_aux_heads)
            attr_vecs.emplace_back(features.attrs.begin() + i * m,
                                   features.attrs.begin() + (i + 1) * m);
        const auto patch = data.patch(i);
        pixel_vecs.emplace_back(patch.begin(), patch.end());
    }
    const double sil_pixels = cluster_separation(pixel_vecs, data.labels);
    const double sil_attrs =
        net.config().with_aux_heads ? cluster_separation(attr_vecs, data.labels) : 0.0;

    // distribution match on held-out attribute values (Silverman KDE)
    double dist_kl = 0.0;
    if (net.config().with_aux_heads)
        dist_kl = distribution_match(features.attrs, net.config().beta, net.config().grid());

    // spatial consistency over the three most-distant category pairs
    json spatial = json::array();
    if (net.config().with_aux_heads && corpus.category_count() >= 2) {
        std::vector<std::tuple<double, int, int>> pairs;
        for (int i = 0; i < corpus.category_count(); ++i)
            for (int j = i + 1; j < corpus.category_count(); ++j)
                pairs.push_back({oracle_distance(corpus.categories[i], corpus.categories[j]), i, j});
        std::sort(pairs.begin(), pairs.end(),
                  [](const auto& x, const auto& y) { return std::get<0>(x) > std::get<0>(y); });
        const int take = std::min<int>(3, static_cast<int>(pairs.size()));
        const int h = 96, w = 96, boundary = 49, stride = 5;
        std::vector<int> mask(static_cast<size_t>(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) mask[static_cast<size_t>(y) * w + x] = x < boundary ? 0 : 1;
        for (int p = 0; p < take; ++p) {
            const auto [dist, ci, cj] = pairs[p];
            const Image img = gen_two_region_composite(corpus.categories[ci],
                                                       corpus.categories[cj], h, w, boundary,
                                                       mix_seed(common.seed, 300 + p));
            const auto map = predict_map(net, img, stride, MapTarget::attributes, common.threads);
            json per_attr = json::array();
            int pass = 0;
            for (int am = 0; am < m; ++am) {
                std::vector<double> channel(map.begin() + static_cast<size_t>(am) * h * w,
                                            map.begin() + static_cast<size_t>(am + 1) * h * w);
                const auto sc = spatial_consistency(channel, h, w, mask);
                per_attr.push_back({{"attribute", am},
                                    {"within_tv", sc.within_tv},
                                    {"cross_tv", sc.cross_tv}});
                if (sc.cross_tv >= 2.0 * sc.within_tv && sc.cross_tv > 0.0) ++pass;
            }
            spatial.push_back({{"left", corpus.categories[ci].name},
                               {"right", corpus.categories[cj].name},
                               {"attributes_with_2x_cross", pass},
                               {"per_attribute", per_attr}});
        }
    }

    json report = {{"split", split},
                   {"accuracy", metrics.accuracy},
                   {"cross_entropy", metrics.cross_entropy},
                   {"u_final", metrics.u_final},
                   {"u_final_per_attribute", metrics.u_final / std::max(1, m)},
                   {"d", metrics.d},
                   {"distribution_kl", dist_kl},
                   {"silhouette_attributes", sil_attrs},
                   {"silhouette_pixels", sil_pixels},
                   {"spatial", spatial}};
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << report.dump(2) << "\n";
    write_echo(out, json{{"command", "eval"},
                         {"seed", common.seed},
                         {"threads", common.threads},
                         {"corpus", corpus_dir},
                         {"checkpoint", ckpt},
                         {"attr_matrix", attr_csv},
                         {"split", split}});
    std::cout << "accuracy " << metrics.accuracy << " u_final " << metrics.u_final << " to " << out
              << "\n";
    return 0;
}

int run_maps(CommonArgs& common, const std::string& ckpt, const std::string& image_path,
             const std::string& out, int stride, const std::string& target) {
    static const std::set<std::string> keys = {"seed", "threads"};
    common.load(keys);
    if (target != "attributes" && target != "materials" && target != "both")
        throw ConfigError("--target must be attributes, materials, or both");

    const LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Image img = load_png(image_path);
    fs::create_directories(out);

    auto emit = [&](MapTarget t, const std::string& prefix, int channels) {
        const auto map = predict_map(loaded.net, img, stride, t, common.threads);
        for (int c = 0; c < channels; ++c) {
            const std::vector<double> channel(map.begin() + static_cast<size_t>(c) * img.height * img.width,
                                              map.begin() + static_cast<size_t>(c + 1) * img.height * img.width);
            save_heatmap_png(fs::path(out) / (prefix + std::to_string(c) + ".png"), channel,
                             img.height, img.width);
            save_map_csv(fs::path(out) / (prefix + std::to_string(c) + ".csv"), channel,
                         img.height, img.width);
        }
    };
    if (target != "materials") emit(MapTarget::attributes, "attr_", loaded.net.config().attributes);
    if (target != "attributes") emit(MapTarget::materials, "cat_", loaded.net.config().categories);

    write_echo(out, json{{"command", "maps"},
                         {"seed", common.seed},
                         {"threads", common.threads},
                         {"checkpoint", ckpt},
                         {"image", image_path},
                         {"stride", stride},
                         {"target", target}});
    std::cout << "wrote maps for " << image_path << " to " << out << "\n";
    return 0;
}

int run_nshot(CommonArgs& common, const std::string& corpus_dir, const std::string& attr_csv,
              const std::string& held_out_arg, const std::string& out, const std::string& ckpt,
              const CLI::App* cmd, int repeats, int max_epochs) {
    std::set<std::string> keys = {"seed",    "threads", "repeats",          "shots",
                                  "patches_per_image", "pool_images",      "test_images",
                                  "canvas_size",       "svm_c",            "svm_epochs"};
    keys.insert(kNetworkKeys.begin(), kNetworkKeys.end());
    keys.insert(kTrainKeys.begin(), kTrainKeys.end());
    StrictConfig cfg = common.load(keys);

    const LoadedCorpus full = load_corpus(corpus_dir);
    const CategoryAttributeMatrix a = load_attribute_csv(attr_csv);
    const int held_out = find_category(full.categories, held_out_arg);
    const LoadedCorpus seen = drop_category(full, held_out);
    const CategoryAttributeMatrix a_cut = a.without_row(held_out);

    fs::create_directories(out);
    std::optional<MacNetwork> net;
    if (!ckpt.empty()) {
        net.emplace(load_checkpoint(ckpt).net);
        if (net->config().categories != seen.category_count())
            throw std::runtime_error("checkpoint was not trained with the held-out category "
                                     "absent");
    } else {
        NetworkConfig net_cfg = network_config_from(cfg, seen.category_count(), a.m,
                                                    seen.train.patch_size);
        TrainConfig train_cfg = train_config_from(cfg, common.seed);
        if (cmd->count("--max-epochs")) train_cfg.max_epochs = max_epochs;
        net.emplace(MacNetwork::build(net_cfg, common.seed));
        const TrainResult result = train(*net, seen, a_cut, train_cfg);
        save_checkpoint(fs::path(out) / "heldout.ckpt", *net);
        std::cout << "held-out training: best epoch " << result.best_epoch << " val_accuracy "
                  << result.best_val_accuracy << "\n";
    }

    NShotConfig ncfg;
    ncfg.seed = common.seed;
    ncfg.repeats = cmd->count("--repeats") ? repeats : cfg.get<int>("repeats", ncfg.repeats);
    ncfg.shots = cfg.get<std::vector<int>>("shots", ncfg.shots);
    ncfg.patches_per_image = cfg.get<int>("patches_per_image", ncfg.patches_per_image);
    ncfg.pool_images = cfg.get<int>("pool_images", ncfg.pool_images);
    ncfg.test_images = cfg.get<int>("test_images", ncfg.test_images);
    ncfg.canvas_size = cfg.get<int>("canvas_size", ncfg.canvas_size);
    ncfg.svm_c = cfg.get<double>("svm_c", ncfg.svm_c);
    ncfg.svm_epochs = cfg.get<int>("svm_epochs", ncfg.svm_epochs);

    const NShotReport report = nshot_eval(*net, full.categories, held_out, seen, ncfg);
    save_nshot_json(fs::path(out) / "nshot.json", report);
    save_nshot_csv(fs::path(out) / "nshot.csv", report);
    write_echo(out, json{{"command", "nshot"},
                         {"seed", common.seed},
                         {"threads", common.threads},
                         {"corpus", corpus_dir},
                         {"attr_matrix", attr_csv},
                         {"held_out", report.held_out_name},
                         {"repeats", ncfg.repeats},
                         {"checkpoint", ckpt}});
    std::cout << "wrote n-shot report for held-out '" << report.held_out_name << "' to " << out
              << "\n";
    return 0;
}

int run_traits(CommonArgs& common, const std::string& corpus_dir, const std::string& ckpt,
               const std::string& out, const CLI::App* cmd, int proposals, int max_leaves) {
    static const std::set<std::string> keys = {"seed", "threads", "proposals", "max_leaves"};
    StrictConfig cfg = common.load(keys);
    AnnealConfig anneal;
    anneal.proposals =
        cmd->count("--proposals") ? proposals : cfg.get<int>("proposals", anneal.proposals);
    anneal.max_leaves =
        cmd->count("--max-leaves") ? max_leaves : cfg.get<int>("max_leaves", anneal.max_leaves);

    const LoadedCorpus corpus = load_corpus(corpus_dir);
    const LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const TraitDecodeResult result = decode_traits(loaded.net, corpus, anneal, common.seed);

    json traits = json::array();
    for (const auto& t : result.traits)
        traits.push_back({{"trait", t.name},
                          {"train_accuracy", t.train_accuracy},
                          {"test_accuracy", t.test_accuracy},
                          {"expression", t.expression}});
    json report = {{"mean_test_accuracy", result.mean_test_accuracy}, {"traits", traits}};
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << report.dump(2) << "\n";
    write_echo(out, json{{"command", "traits"},
                         {"seed", common.seed},
                         {"threads", common.threads},
                         {"corpus", corpus_dir},
                         {"checkpoint", ckpt},
                         {"proposals", anneal.proposals},
                         {"max_leaves", anneal.max_leaves}});
    std::cout << "mean trait accuracy " << result.mean_test_accuracy << " to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"material attribute-category network pipeline"};
    app.require_subcommand(1);

    CommonArgs synth_common, dist_common, embed_common, train_common, eval_common, maps_common,
        nshot_common, traits_common;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic material patch corpus");
    std::string synth_out;
    int synth_train = 400, synth_val = 100, synth_test = 100, synth_patch = 32;
    synth->add_option("--out", synth_out, "corpus output directory")->required();
    synth->add_option("--train-per-category", synth_train, "training patches per category");
    synth->add_option("--val-per-category", synth_val, "validation patches per category");
    synth->add_option("--test-per-category", synth_test, "test patches per category");
    synth->add_option("--patch-size", synth_patch, "square patch extent in pixels");
    synth_common.attach(synth);

    // distances
    auto* dist = app.add_subcommand("distances",
                                    "simulate similarity judgments and build the distance matrix");
    std::string dist_corpus, dist_out, dist_judgments;
    int dist_annotators = 50;
    double dist_noise = 0.1;
    dist->add_option("--corpus", dist_corpus, "corpus directory (categories from manifest)")
        ->required();
    dist->add_option("--out", dist_out, "distance matrix CSV path")->required();
    dist->add_option("--annotators", dist_annotators, "simulated annotators per category pair");
    dist->add_option("--noise", dist_noise, "annotator noise amplitude in [0,0.5)");
    dist->add_option("--judgments", dist_judgments, "also write raw judgments JSON here");
    dist_common.attach(dist);

    // embed
    auto* embed = app.add_subcommand("embed", "solve the category-attribute matrix from distances");
    std::string embed_distances, embed_out;
    int embed_m = 12, embed_restarts = 8, embed_iters = 2000, embed_grid = 32;
    double embed_step = 0.05, embed_gamma = 0.01, embed_ba = 0.5, embed_bb = 0.5;
    embed->add_option("--distances", embed_distances, "distance matrix CSV")->required();
    embed->add_option("--attributes", embed_m, "number of attributes M");
    embed->add_option("--out", embed_out, "attribute matrix CSV path")->required();
    embed->add_option("--restarts", embed_restarts, "random restarts");
    embed->add_option("--iterations", embed_iters, "projected-gradient iterations per restart");
    embed->add_option("--step", embed_step, "projected-gradient step size");
    embed->add_option("--gamma", embed_gamma, "Beta-prior column regularizer weight");
    embed->add_option("--beta-a", embed_ba, "Beta prior shape a");
    embed->add_option("--beta-b", embed_bb, "Beta prior shape b");
    embed->add_option("--grid-points", embed_grid, "density grid resolution");
    embed_common.attach(embed);

    // train
    auto* trainc = app.add_subcommand("train", "train the network on a corpus");
    std::string train_corpus, train_attr, train_out, train_resume;
    int train_max_epochs = 60;
    double train_lattr = 1.0, train_ldist = 0.1;
    trainc->add_option("--corpus", train_corpus, "corpus directory")->required();
    trainc->add_option("--attr-matrix", train_attr, "category-attribute matrix CSV")->required();
    trainc->add_option("--out", train_out, "run output directory")->required();
    trainc->add_option("--resume", train_resume, "resume from a training checkpoint (last.ckpt)");
    trainc->add_option("--max-epochs", train_max_epochs, "epoch budget");
    trainc->add_option("--lambda-attr", train_lattr, "weight of the per-layer attribute losses");
    trainc->add_option("--lambda-dist", train_ldist, "weight of the distribution loss");
    train_common.attach(trainc);

    // eval
    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
    std::string eval_corpus, eval_ckpt, eval_attr, eval_out, eval_split = "test";
    evalc->add_option("--corpus", eval_corpus, "corpus directory")->required();
    evalc->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    evalc->add_option("--attr-matrix", eval_attr, "category-attribute matrix CSV")->required();
    evalc->add_option("--out", eval_out, "report JSON path")->required();
    evalc->add_option("--split", eval_split, "corpus split: train, val, or test");
    eval_common.attach(evalc);

    // maps
    auto* maps = app.add_subcommand("maps", "sliding-window attribute and material maps");
    std::string maps_ckpt, maps_image, maps_out, maps_target = "both";
    int maps_stride = 4;
    maps->add_option("--checkpoint", maps_ckpt, "checkpoint file")->required();
    maps->add_option("--image", maps_image, "input PNG image")->required();
    maps->add_option("--out", maps_out, "output directory for PNG heatmaps and CSV")->required();
    maps->add_option("--stride", maps_stride, "window stride in pixels");
    maps->add_option("--target", maps_target, "attributes, materials, or both");
    maps_common.attach(maps);

    // nshot
    auto* nshot = app.add_subcommand("nshot", "unseen-category N-shot study");
    std::string nshot_corpus, nshot_attr, nshot_held, nshot_out, nshot_ckpt;
    int nshot_repeats = 5, nshot_max_epochs = 60;
    nshot->add_option("--corpus", nshot_corpus, "full corpus directory")->required();
    nshot->add_option("--attr-matrix", nshot_attr, "full category-attribute matrix CSV")
        ->required();
    nshot->add_option("--held-out", nshot_held, "held-out category name or index")->required();
    nshot->add_option("--out", nshot_out, "output directory")->required();
    nshot->add_option("--checkpoint", nshot_ckpt,
                      "reuse a network already trained without the held-out category");
    nshot->add_option("--repeats", nshot_repeats, "repeats per (N, feature set) cell");
    nshot->add_option("--max-epochs", nshot_max_epochs, "epoch budget for held-out training");
    nshot_common.attach(nshot);

    // traits
    auto* traits = app.add_subcommand("traits", "logic regression from attributes to traits");
    std::string traits_corpus, traits_ckpt, traits_out;
    int traits_proposals = 20000, traits_leaves = 8;
    traits->add_option("--corpus", traits_corpus, "corpus directory")->required();
    traits->add_option("--checkpoint", traits_ckpt, "checkpoint file")->required();
    traits->add_option("--out", traits_out, "report JSON path")->required();
    traits->add_option("--proposals", traits_proposals, "annealing proposals");
    traits->add_option("--max-leaves", traits_leaves, "leaf budget per tree");
    traits_common.attach(traits);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "macnet: error: config: " << e.what() << "\n";
        return 2;
    }

    try {
        if (synth->parsed())
            return run_synth(synth_common, synth_out, synth_train, synth_val, synth_test,
                             synth_patch, synth);
        if (dist->parsed())
            return run_distances(dist_common, dist_corpus, dist_out, dist_annotators, dist_noise,
                                 dist_judgments, dist);
        if (embed->parsed())
            return run_embed(embed_common, embed_distances, embed_m, embed_out, embed,
                             embed_restarts, embed_iters, embed_step, embed_gamma, embed_ba,
                             embed_bb, embed_grid);
        if (trainc->parsed())
            return run_train(train_common, train_corpus, train_attr, train_out, train_resume,
                             trainc, train_max_epochs, train_lattr, train_ldist);
        if (evalc->parsed())
            return run_eval(eval_common, eval_corpus, eval_ckpt, eval_attr, eval_out, eval_split);
        if (maps->parsed())
            return run_maps(maps_common, maps_ckpt, maps_image, maps_out, maps_stride,
                            maps_target);
        if (nshot->parsed())
            return run_nshot(nshot_common, nshot_corpus, nshot_attr, nshot_held, nshot_out,
                             nshot_ckpt, nshot, nshot_repeats, nshot_max_epochs);
        if (traits->parsed())
            return run_traits(traits_common, traits_corpus, traits_ckpt, traits_out, traits,
                              traits_proposals, traits_leaves);
    } catch (const ConfigError& e) {
        std::cerr << "macnet: error: config: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "macnet: error: config: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "macnet: error: data: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
