#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "macnet/image.hpp"
#include "macnet/percept.hpp"

namespace macnet {

inline constexpr int kTraitCount = 6;
inline constexpr std::array<const char*, kTraitCount> kTraitNames = {
    "striped", "shiny", "rough", "fuzzy", "colorful", "smooth"};

// Versioned trait thresholds. Changing any of these is a breaking data change.
inline constexpr const char* kTraitTableVersion = "v1";
struct TraitThresholds {
    double stripe_freq_min = 2.0;    // striped
    double gloss_min = 0.3;          // shiny
    double roughness_min = 0.2;      // rough
    double fuzz_min = 1.0;           // fuzzy
    double saturation_min = 0.45;    // colorful
    double roughness_smooth_max = 0.08;  // smooth
};
inline constexpr TraitThresholds kTraitThresholds{};

struct CategorySpec {
    std::string name;
    std::array<std::string, 3> hierarchy;  // top / mid / fine

    double hue_min = 0.0;
    double hue_max = 0.0;
    double saturation = 0.5;
    double value = 0.6;
    double stripe_freq = 0.0;  // cycles per patch; 0 disables stripes
    double stripe_angle_deg = 0.0;
    double speckle_density = 0.0;   // in [0,1]
    double roughness = 0.0;         // noise amplitude in [0,0.5]
    double gloss_density = 0.0;     // in [0,1]
    double fuzz_radius = 0.0;       // blur passes, integer-valued

    std::array<uint8_t, kTraitCount> traits() const;
    // Appearance features used by the simulated annotator oracle: mean base
    // RGB plus normalized texture parameters, each in [0,1].
    std::vector<double> feature_vector() const;
};

// The 8 shipped categories (2 top families x 2 mids x 2 fine leaves). The
// fine-level name is the training label.
std::vector<CategorySpec> default_categories();

struct ManifestEntry {
    std::string file;  // relative to the corpus root
    int label = 0;
    uint64_t seed = 0;
    std::array<uint8_t, kTraitCount> traits{};
};

struct CorpusManifest {
    uint64_t seed = 0;
    std::string trait_table_version;
    std::vector<CategorySpec> categories;
    std::vector<ManifestEntry> train, val, test;

    const std::vector<ManifestEntry>& split(const std::string& name) const;
};

struct CorpusConfig {
    std::vector<CategorySpec> categories = default_categories();
    int train_per_category = 400;
    int val_per_category = 100;
    int test_per_category = 100;
    int patch_size = 32;
    uint64_t seed = 0;
    int threads = 1;
};

// Procedural texture patch, deterministic in (spec, seed). Composition:
// base color field, stripes, speckle, gloss blobs, roughness noise, fuzz
// blur, clamp to [0,1].
Image gen_patch(const CategorySpec& spec, uint64_t seed, int size = 32);

// Writes patches/<split>/<label>_<seed>.png plus manifest.json.
// Regeneration with the same config is byte-identical.
CorpusManifest gen_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

void save_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
CorpusManifest load_manifest(const std::filesystem::path& path);

// Closed-form dissimilarity the simulated annotators perceive.
double oracle_distance(const CategorySpec& a, const CategorySpec& b);

// Each simulated annotator answers "no" with probability
// clamp01(delta_kl + uniform(-noise, noise)). One pooled entry per unordered
// pair. Deterministic given seed.
SimilarityJudgments oracle_judgments(const std::vector<CategorySpec>& categories, int annotators,
                                     double noise, uint64_t seed);

// Two textures side by side with a vertical boundary; region 0 is x <
// boundary_x. Used for spatial-consistency probes.
Image gen_two_region_composite(const CategorySpec& left, const CategorySpec& right, int height,
                               int width, int boundary_x, uint64_t seed);

}  // namespace macnet
