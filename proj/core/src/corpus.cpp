#include "macnet/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "macnet/rng.hpp"
#include "json.hpp"

namespace macnet {

namespace {

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    h = h - std::floor(h);  // wrap hue
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r1 = c; g1 = x; break;
        case 1: r1 = x; g1 = c; break;
        case 2: g1 = c; b1 = x; break;
        case 3: g1 = x; b1 = c; break;
        case 4: r1 = x; b1 = c; break;
        default: r1 = c; b1 = x; break;
    }
    const double m = v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

// Bilinearly interpolated lattice noise in [-1,1], two octaves.
struct ValueNoise {
    int cells;
    std::vector<double> lattice;

    ValueNoise(std::mt19937_64& eng, int cells_) : cells(cells_) {
        std::uniform_real_distribution<double> uni(-1.0, 1.0);
        lattice.resize(static_cast<size_t>(cells + 1) * (cells + 1));
        for (double& v : lattice) v = uni(eng);
    }
    double sample(double u, double v) const {
        const double x = u * cells, y = v * cells;
        const int x0 = std::min(static_cast<int>(x), cells - 1);
        const int y0 = std::min(static_cast<int>(y), cells - 1);
        const double fx = x - x0, fy = y - y0;
        auto at = [&](int yy, int xx) { return lattice[static_cast<size_t>(yy) * (cells + 1) + xx]; };
        const double top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx;
        const double bot = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx;
        return top * (1 - fy) + bot * fy;
    }
};

void box_blur_pass(Image& img) {
    Image out = Image::zeros(img.height, img.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double sum = 0.0;
                int count = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) continue;
                        sum += img.at(c, yy, xx);
                        ++count;
                    }
                out.at(c, y, x) = sum / count;
            }
    img = std::move(out);
}

}  // namespace

std::array<uint8_t, kTraitCount> CategorySpec::traits() const {
    const auto& t = kTraitThresholds;
    return {
        static_cast<uint8_t>(stripe_freq >= t.stripe_freq_min),
        static_cast<uint8_t>(gloss_density >= t.gloss_min),
        static_cast<uint8_t>(roughness >= t.roughness_min),
        static_cast<uint8_t>(fuzz_radius >= t.fuzz_min),
        static_cast<uint8_t>(saturation >= t.saturation_min),
        static_cast<uint8_t>(roughness <= t.roughness_smooth_max),
    };
}

std::vector<double> CategorySpec::feature_vector() const {
    double r, g, b;
    hsv_to_rgb(0.5 * (hue_min + hue_max), saturation, value, r, g, b);
    return {r,
            g,
            b,
            std::min(stripe_freq / 10.0, 1.0),
            speckle_density,
            std::min(roughness / 0.5, 1.0),
            gloss_density,
            std::min(fuzz_radius / 2.0, 1.0)};
}

std::vector<CategorySpec> default_categories() {
    auto cat = [](const char* name, const char* top, const char* mid, double hue_min,
                  double hue_max, double sat, double val, double stripes, double angle,
                  double speckle, double rough, double gloss, double fuzz) {
        CategorySpec s;
        s.name = name;
        s.hierarchy = {top, mid, name};
        s.hue_min = hue_min;
        s.hue_max = hue_max;
        s.saturation = sat;
        s.value = val;
        s.stripe_freq = stripes;
        s.stripe_angle_deg = angle;
        s.speckle_density = speckle;
        s.roughness = rough;
        s.gloss_density = gloss;
        s.fuzz_radius = fuzz;
        return s;
    };
    return {
        cat("brushed_metal", "hard", "metal", 0.55, 0.60, 0.15, 0.65, 6, 0, 0.02, 0.05, 0.25, 0),
        cat("chrome", "hard", "metal", 0.55, 0.58, 0.05, 0.80, 0, 0, 0.00, 0.02, 0.80, 0),
        cat("granite", "hard", "stone", 0.07, 0.10, 0.18, 0.55, 0, 0, 0.60, 0.35, 0.05, 0),
        cat("marble", "hard", "stone", 0.12, 0.15, 0.08, 0.90, 2, 30, 0.05, 0.05, 0.40, 0),
        cat("weave", "soft", "fabric", 0.85, 0.95, 0.70, 0.60, 8, 45, 0.10, 0.25, 0.00, 1),
        cat("fleece", "soft", "fabric", 0.05, 0.12, 0.65, 0.70, 0, 0, 0.05, 0.30, 0.00, 2),
        cat("moss", "soft", "organic", 0.28, 0.38, 0.60, 0.45, 0, 0, 0.30, 0.40, 0.00, 2),
        cat("lichen", "soft", "organic", 0.40, 0.50, 0.40, 0.60, 0, 0, 0.40, 0.20, 0.10, 1),
    };
}

Image gen_patch(const CategorySpec& spec, uint64_t seed, int size) {
    if (size < 4) throw std::invalid_argument("patch size too small");
    std::mt19937_64 eng(splitmix64(seed));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    const double hue = spec.hue_min + (spec.hue_max - spec.hue_min) * uni(eng);
    const double sat = spec.saturation * (0.9 + 0.2 * uni(eng));
    const double val = spec.value * (0.9 + 0.2 * uni(eng));
    double r, g, b;
    hsv_to_rgb(hue, std::min(sat, 1.0), std::min(val, 1.0), r, g, b);

    Image img = Image::zeros(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            img.at(0, y, x) = r;
            img.at(1, y, x) = g;
            img.at(2, y, x) = b;
        }

    if (spec.stripe_freq > 0.0) {
        const double phase = 2.0 * std::numbers::pi * uni(eng);
        const double theta = spec.stripe_angle_deg * std::numbers::pi / 180.0;
        const double ct = std::cos(theta), st = std::sin(theta);
        const double amp = 0.25;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double proj = (x * ct + y * st) / size;
                const double f = 1.0 + amp * std::sin(2.0 * std::numbers::pi * spec.stripe_freq * proj + phase);
                for (int c = 0; c < 3; ++c) img.at(c, y, x) *= f;
            }
    }

    if (spec.speckle_density > 0.0) {
        const int count = static_cast<int>(std::lround(spec.speckle_density * size * size / 4.0));
        for (int i = 0; i < count; ++i) {
            const int x = std::min(static_cast<int>(uni(eng) * size), size - 1);
            const int y = std::min(static_cast<int>(uni(eng) * size), size - 1);
            const double f = 0.45 + 1.1 * uni(eng);  // darken or brighten
            for (int c = 0; c < 3; ++c) img.at(c, y, x) *= f;
        }
    }

    if (spec.gloss_density > 0.0) {
        const int count = std::max(1, static_cast<int>(std::lround(spec.gloss_density * size * size / 64.0)));
        for (int i = 0; i < count; ++i) {
            const double cx = uni(eng) * size, cy = uni(eng) * size;
            const double sigma = 1.0 + 1.5 * uni(eng);
            const double amp = 0.4 + 0.4 * uni(eng);
            const int radius = static_cast<int>(3.0 * sigma) + 1;
            for (int y = std::max(0, static_cast<int>(cy) - radius);
                 y < std::min(size, static_cast<int>(cy) + radius + 1); ++y)
                for (int x = std::max(0, static_cast<int>(cx) - radius);
                     x < std::min(size, static_cast<int>(cx) + radius + 1); ++x) {
                    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    const double w = amp * std::exp(-0.5 * d2 / (sigma * sigma));
                    for (int c = 0; c < 3; ++c)
                        img.at(c, y, x) += w * (1.0 - img.at(c, y, x));  // toward white
                }
        }
    }

    if (spec.roughness > 0.0) {
        ValueNoise coarse(eng, 8), fine(eng, 16);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double u = (x + 0.5) / size, v = (y + 0.5) / size;
                const double n = 0.7 * coarse.sample(u, v) + 0.3 * fine.sample(u, v);
                const double f = 1.0 + spec.roughness * 1.6 * n;
                for (int c = 0; c < 3; ++c) img.at(c, y, x) *= f;
            }
    }

    for (int pass = 0; pass < static_cast<int>(spec.fuzz_radius); ++pass) box_blur_pass(img);

    for (double& p : img.pixels) p = std::clamp(p, 0.0, 1.0);
    return img;
}

Image gen_two_region_composite(const CategorySpec& left, const CategorySpec& right, int height,
                               int width, int boundary_x, uint64_t seed) {
    if (boundary_x <= 0 || boundary_x >= width)
        throw std::invalid_argument("composite boundary must fall inside the image");
    const int size = std::max(height, width);
    const Image a = gen_patch(left, mix_seed(seed, 0), size);
    const Image b = gen_patch(right, mix_seed(seed, 1), size);
    Image img = Image::zeros(height, width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) img.at(c, y, x) = (x < boundary_x ? a : b).at(c, y, x);
    return img;
}

const std::vector<ManifestEntry>& CorpusManifest::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

namespace {

nlohmann::json spec_to_json(const CategorySpec& s) {
    const auto traits = s.traits();
    nlohmann::json t;
    for (int i = 0; i < kTraitCount; ++i) t[kTraitNames[i]] = static_cast<int>(traits[i]);
    return {{"name", s.name},
            {"hierarchy", {s.hierarchy[0], s.hierarchy[1], s.hierarchy[2]}},
            {"hue_min", s.hue_min},
            {"hue_max", s.hue_max},
            {"saturation", s.saturation},
            {"value", s.value},
            {"stripe_freq", s.stripe_freq},
            {"stripe_angle_deg", s.stripe_angle_deg},
            {"speckle_density", s.speckle_density},
            {"roughness", s.roughness},
            {"gloss_density", s.gloss_density},
            {"fuzz_radius", s.fuzz_radius},
            {"traits", t}};
}

CategorySpec spec_from_json(const nlohmann::json& j) {
    CategorySpec s;
    s.name = j.at("name").get<std::string>();
    const auto& h = j.at("hierarchy");
    s.hierarchy = {h.at(0).get<std::string>(), h.at(1).get<std::string>(),
                   h.at(2).get<std::string>()};
    s.hue_min = j.at("hue_min").get<double>();
    s.hue_max = j.at("hue_max").get<double>();
    s.saturation = j.at("saturation").get<double>();
    s.value = j.at("value").get<double>();
    s.stripe_freq = j.at("stripe_freq").get<double>();
    s.stripe_angle_deg = j.at("stripe_angle_deg").get<double>();
    s.speckle_density = j.at("speckle_density").get<double>();
    s.roughness = j.at("roughness").get<double>();
    s.gloss_density = j.at("gloss_density").get<double>();
    s.fuzz_radius = j.at("fuzz_radius").get<double>();
    return s;
}

nlohmann::json entries_to_json(const std::vector<ManifestEntry>& entries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json t = nlohmann::json::array();
        for (auto b : e.traits) t.push_back(static_cast<int>(b));
        arr.push_back({{"file", e.file}, {"label", e.label}, {"seed", e.seed}, {"traits", t}});
    }
    return arr;
}

std::vector<ManifestEntry> entries_from_json(const nlohmann::json& arr) {
    std::vector<ManifestEntry> out;
    for (const auto& j : arr) {
        ManifestEntry e;
        e.file = j.at("file").get<std::string>();
        e.label = j.at("label").get<int>();
        e.seed = j.at("seed").get<uint64_t>();
        const auto& t = j.at("traits");
        for (int i = 0; i < kTraitCount; ++i) e.traits[i] = static_cast<uint8_t>(t.at(i).get<int>());
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

void save_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& c : manifest.categories) cats.push_back(spec_to_json(c));
    nlohmann::json doc = {{"seed", manifest.seed},
                          {"trait_table_version", manifest.trait_table_version},
                          {"categories", cats},
                          {"splits",
                           {{"train", entries_to_json(manifest.train)},
                            {"val", entries_to_json(manifest.val)},
                            {"test", entries_to_json(manifest.test)}}}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << "\n";
}

CorpusManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    nlohmann::json doc = nlohmann::json::parse(in);
    CorpusManifest m;
    m.seed = doc.at("seed").get<uint64_t>();
    m.trait_table_version = doc.at("trait_table_version").get<std::string>();
    for (const auto& c : doc.at("categories")) m.categories.push_back(spec_from_json(c));
    m.train = entries_from_json(doc.at("splits").at("train"));
    m.val = entries_from_json(doc.at("splits").at("val"));
    m.test = entries_from_json(doc.at("splits").at("test"));
    return m;
}

CorpusManifest gen_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir) {
    if (cfg.categories.empty()) throw std::invalid_argument("corpus needs at least one category");
    if (cfg.train_per_category < 1 || cfg.val_per_category < 1 || cfg.test_per_category < 1)
        throw std::invalid_argument("per-split counts must be >= 1");

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "patches", ec);
    for (const char* split : {"train", "val", "test"})
        std::filesystem::create_directories(out_dir / "patches" / split, ec);
    if (!std::filesystem::exists(out_dir / "patches"))
        throw std::runtime_error("cannot create corpus directory " + out_dir.string());

    CorpusManifest manifest;
    manifest.seed = cfg.seed;
    manifest.trait_table_version = kTraitTableVersion;
    manifest.categories = cfg.categories;

    struct Job {
        std::string split;
        int label;
        uint64_t patch_seed;
        std::filesystem::path path;
    };
    std::vector<Job> jobs;
    uint64_t index = 0;
    auto add_split = [&](const char* split, int per_cat, std::vector<ManifestEntry>& entries) {
        for (int label = 0; label < static_cast<int>(cfg.categories.size()); ++label)
            for (int i = 0; i < per_cat; ++i) {
                // global index keeps splits disjoint by construction
                const uint64_t patch_seed = mix_seed(cfg.seed, index++);
                ManifestEntry e;
                e.label = label;
                e.seed = patch_seed;
                e.traits = cfg.categories[label].traits();
                e.file = std::string("patches/") + split + "/" + std::to_string(label) + "_" +
                         std::to_string(patch_seed) + ".png";
                jobs.push_back({split, label, patch_seed, out_dir / e.file});
                entries.push_back(std::move(e));
            }
    };
    add_split("train", cfg.train_per_category, manifest.train);
    add_split("val", cfg.val_per_category, manifest.val);
    add_split("test", cfg.test_per_category, manifest.test);

    auto run_range = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            const Job& job = jobs[i];
            save_png(job.path, gen_patch(cfg.categories[job.label], job.patch_seed, cfg.patch_size));
        }
    };
    const int threads = std::max(1, cfg.threads);
    if (threads == 1) {
        run_range(0, jobs.size());
    } else {
        std::vector<std::thread> pool;
        const size_t chunk = (jobs.size() + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const size_t begin = std::min(jobs.size(), t * chunk);
            const size_t end = std::min(jobs.size(), begin + chunk);
            if (begin < end) pool.emplace_back(run_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    save_manifest(out_dir / "manifest.json", manifest);
    return manifest;
}

double oracle_distance(const CategorySpec& a, const CategorySpec& b) {
    const auto fa = a.feature_vector();
    const auto fb = b.feature_vector();
    double s = 0.0;
    for (size_t i = 0; i < fa.size(); ++i) s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
    return std::sqrt(s / static_cast<double>(fa.size()));
}

SimilarityJudgments oracle_judgments(const std::vector<CategorySpec>& categories, int annotators,
                                     double noise, uint64_t seed) {
    if (annotators < 1) throw std::invalid_argument("need at least one annotator");
    if (noise < 0.0 || noise >= 0.5) throw std::invalid_argument("noise must lie in [0, 0.5)");
    const int k = static_cast<int>(categories.size());
    SimilarityJudgments j;
    j.categories = k;
    for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b) {
            const double delta = oracle_distance(categories[a], categories[b]);
            auto eng = named_engine(seed, "judge-" + std::to_string(a) + "-" + std::to_string(b));
            std::uniform_real_distribution<double> uni(-noise, noise);
            SimilarityJudgments::Entry e;
            e.a = a;
            e.b = b;
            for (int i = 0; i < annotators; ++i) {
                const double p_no = std::clamp(delta + (noise > 0.0 ? uni(eng) : 0.0), 0.0, 1.0);
                std::uniform_real_distribution<double> coin(0.0, 1.0);
                if (coin(eng) < p_no)
                    ++e.no;
                else
                    ++e.yes;
            }
            j.entries.push_back(e);
        }
    return j;
}

}  // namespace macnet
