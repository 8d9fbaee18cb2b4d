#include "pytf/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "pytf/config.hpp"
#include "pytf/sha256.hpp"

namespace pytf {

namespace {

std::map<std::string, Tensor> index_entries(std::vector<NamedTensor>&& entries) {
    std::map<std::string, Tensor> by_name;
    for (NamedTensor& e : entries) {
        if (!by_name.emplace(e.name, std::move(e.tensor)).second)
            throw std::runtime_error("checkpoint: duplicate tensor '" + e.name + "'");
    }
    return by_name;
}

LoadedCheckpoint load_impl(const std::string& path, const BackboneConfig& cfg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");

    std::array<uint8_t, 32> stored{};
    is.read(reinterpret_cast<char*>(stored.data()), 32);
    if (is.gcount() != 32)
        throw std::runtime_error("checkpoint: truncated at offset " + std::to_string(is.gcount()) +
                                 " while reading the config fingerprint");

    LoadedCheckpoint out{build_backbone<float>(cfg), {}};
    auto by_name = index_entries(read_container(is));

    const std::array<uint8_t, 32> expect = config_fingerprint(cfg);
    if (stored != expect) {
        // Try to localize the mismatch by comparing parameter shapes.
        std::string detail;
        visit_params(out.model, [&](const std::string& name, Tensor& t, ParamKind) {
            if (!detail.empty()) return;
            auto it = by_name.find(name);
            if (it == by_name.end())
                detail = "; checkpoint is missing '" + name + "'";
            else if (it->second.shape != t.shape)
                detail = "; '" + name + "' has shape " + shape_str(it->second.shape) +
                         ", config expects " + shape_str(t.shape);
        });
        throw std::runtime_error("checkpoint: config fingerprint mismatch (file " +
                                 hex_digest(stored).substr(0, 16) + "..., config " +
                                 hex_digest(expect).substr(0, 16) + "...)" + detail);
    }

    visit_params(out.model, [&](const std::string& name, Tensor& t, ParamKind) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape != t.shape)
            throw std::runtime_error("checkpoint: '" + name + "' has shape " +
                                     shape_str(it->second.shape) + ", model expects " +
                                     shape_str(t.shape));
        t = std::move(it->second);
        by_name.erase(it);
    });
    out.extras = std::move(by_name);
    return out;
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path, const std::vector<NamedTensor>& extras) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    const std::array<uint8_t, 32> fp = config_fingerprint(model.cfg);
    os.write(reinterpret_cast<const char*>(fp.data()), 32);
    std::vector<NamedTensor> entries;
    visit_params(model, [&](const std::string& name, Tensor& t, ParamKind) {
        entries.push_back({name, t});
    });
    for (const NamedTensor& e : extras) entries.push_back(e);
    write_container(os, entries);
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Model load_checkpoint(const std::string& path, const BackboneConfig& cfg) {
    LoadedCheckpoint lc = load_impl(path, cfg);
    if (!lc.extras.empty())
        throw std::runtime_error("checkpoint: unexpected tensor '" + lc.extras.begin()->first + "'");
    return std::move(lc.model);
}

LoadedCheckpoint load_checkpoint_with_extras(const std::string& path, const BackboneConfig& cfg) {
    return load_impl(path, cfg);
}

}  // namespace pytf
