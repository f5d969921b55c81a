#include "macnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace macnet {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'C', 'C', 'N', 'N', '0', '1'};

void write_f64_le(std::ofstream& out, const double* data, size_t count) {
    // this build targets little-endian hosts; written as raw IEEE754
    static_assert(std::endian::native == std::endian::little, "big-endian host unsupported");
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
}

nlohmann::json config_json(const NetworkConfig& cfg) {
    return {{"patch_size", cfg.patch_size},
            {"trunk_channels", cfg.trunk_channels},
            {"categories", cfg.categories},
            {"attributes", cfg.attributes},
            {"lambda_attr", cfg.lambda_attr},
            {"lambda_dist", cfg.lambda_dist},
            {"beta_a", cfg.beta.a},
            {"beta_b", cfg.beta.b},
            {"grid_points", cfg.grid_points},
            {"kde_bandwidth", cfg.kde_bandwidth},
            {"dist_mode", cfg.dist_mode == DistLossMode::pooled ? "pooled" : "per_attribute"},
            {"classifier_width", cfg.classifier_width},
            {"with_aux_heads", cfg.with_aux_heads}};
}

NetworkConfig config_from(const nlohmann::json& j) {
    NetworkConfig cfg;
    cfg.patch_size = j.at("patch_size").get<int>();
    cfg.trunk_channels = j.at("trunk_channels").get<std::vector<int>>();
    cfg.categories = j.at("categories").get<int>();
    cfg.attributes = j.at("attributes").get<int>();
    cfg.lambda_attr = j.at("lambda_attr").get<double>();
    cfg.lambda_dist = j.at("lambda_dist").get<double>();
    cfg.beta.a = j.at("beta_a").get<double>();
    cfg.beta.b = j.at("beta_b").get<double>();
    cfg.grid_points = j.at("grid_points").get<int>();
    cfg.kde_bandwidth = j.at("kde_bandwidth").get<double>();
    cfg.dist_mode = j.at("dist_mode").get<std::string>() == "pooled" ? DistLossMode::pooled
                                                                     : DistLossMode::per_attribute;
    cfg.classifier_width = j.at("classifier_width").get<int>();
    cfg.with_aux_heads = j.at("with_aux_heads").get<bool>();
    cfg.validate();
    return cfg;
}

}  // namespace

std::string network_config_to_json(const NetworkConfig& cfg) { return config_json(cfg).dump(); }

NetworkConfig network_config_from_json(const std::string& json_text) {
    return config_from(nlohmann::json::parse(json_text));
}

void save_checkpoint(const std::filesystem::path& path, const MacNetwork& net,
                     const CheckpointExtra& extra) {
    nlohmann::json tensors = nlohmann::json::array();
    uint64_t offset = 0;
    auto add_entry = [&](const std::string& name, const Shape& shape, size_t count) {
        tensors.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
        offset += count * 8;
    };
    for (const Parameter* p : net.parameters())
        add_entry(p->name, p->value.shape(), static_cast<size_t>(p->value.size()));
    for (const auto& [name, data] : extra.tensors)
        add_entry(name, {static_cast<int64_t>(data.size())}, data.size());

    nlohmann::json header = {{"config", config_json(net.config())}, {"tensors", tensors}};
    header["state"] = extra.state_json.empty() ? nlohmann::json::object()
                                               : nlohmann::json::parse(extra.state_json);
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, 8);
    const uint32_t len = static_cast<uint32_t>(header_text.size());
    static_assert(std::endian::native == std::endian::little);
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const Parameter* p : net.parameters())
        write_f64_le(out, p->value.values().data(), static_cast<size_t>(p->value.size()));
    for (const auto& [name, data] : extra.tensors) write_f64_le(out, data.data(), data.size());
    if (!out) throw std::runtime_error("failed while writing " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error(path.string() + " is not a MACCNN01 checkpoint");
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string header_text(len, '\0');
    in.read(header_text.data(), len);
    if (!in) throw std::runtime_error(path.string() + ": truncated header");
    nlohmann::json header = nlohmann::json::parse(header_text);

    LoadedCheckpoint result{MacNetwork::build(config_from(header.at("config")), 0), {}, "{}"};
    result.state_json = header.at("state").dump();

    const std::streampos payload_start = in.tellg();
    for (const auto& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const Shape shape = t.at("shape").get<Shape>();
        const uint64_t offset = t.at("offset").get<uint64_t>();
        const size_t count = static_cast<size_t>(numel(shape));
        std::vector<double> data(count);
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 8));
        if (!in) throw std::runtime_error(path.string() + ": truncated tensor " + name);
        if (Parameter* p = result.net.find_parameter(name)) {
            if (p->value.shape() != shape)
                throw std::runtime_error(path.string() + ": tensor " + name + " has shape " +
                                         shape_str(shape) + ", network expects " +
                                         shape_str(p->value.shape()));
            std::copy(data.begin(), data.end(), p->value.values().begin());
        } else {
            result.extra_tensors.emplace(name, std::move(data));
        }
    }
    return result;
}

}  // namespace macnet
