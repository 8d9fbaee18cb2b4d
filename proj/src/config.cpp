#include "pytf/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "pytf/sha256.hpp"

namespace pytf {

namespace {

std::string fmt_int(int64_t v) { return std::to_string(v); }

// Shortest round-trip representation, locale-independent.
std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
    int64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw std::invalid_argument("config: key '" + key + "': invalid integer '" + v + "'");
    return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw std::invalid_argument("config: key '" + key + "': invalid unsigned integer '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw std::invalid_argument("config: key '" + key + "': invalid number '" + v + "'");
    return out;
}

}  // namespace

std::string BackboneConfig::canonical_text() const {
    std::ostringstream os;
    os << "input_channels = " << fmt_int(input_channels) << "\n";
    os << "image_size = " << fmt_int(image_h) << ", " << fmt_int(image_w) << "\n";
    os << "class_token_stage = " << fmt_int(class_token_stage) << "\n";
    os << "seed = " << seed << "\n";
    for (size_t k = 0; k < 4; ++k) {
        const std::string p = "stage" + std::to_string(k + 1) + ".";
        const StageConfig& s = stages[k];
        os << p << "reduction_ratio = " << fmt_int(s.reduction_ratio) << "\n";
        os << p << "dilations = ";
        for (size_t j = 0; j < s.dilations.size(); ++j) os << (j ? ", " : "") << fmt_int(s.dilations[j]);
        os << "\n";
        os << p << "dim_out = " << fmt_int(s.dim_out) << "\n";
        os << p << "num_heads = " << fmt_int(s.num_heads) << "\n";
        os << p << "nb_depth = " << fmt_int(s.nb_depth) << "\n";
        os << p << "ffn_expansion = " << fmt_double(s.ffn_expansion) << "\n";
    }
    return os.str();
}

BackboneConfig BackboneConfig::default_config() {
    BackboneConfig cfg;
    cfg.input_channels = 3;
    cfg.image_h = cfg.image_w = 256;
    cfg.class_token_stage = 3;
    cfg.seed = 42;
    const int64_t dims[4] = {64, 128, 256, 512};
    const int64_t heads[4] = {1, 2, 4, 8};
    const int64_t depths[4] = {2, 2, 6, 2};
    const std::vector<std::vector<int64_t>> dil = {{1, 2, 3, 4}, {1, 2, 3, 4}, {1, 2}, {1, 2}};
    for (size_t k = 0; k < 4; ++k) {
        StageConfig& s = cfg.stages[k];
        s.reduction_ratio = k == 0 ? 4 : 2;
        s.dilations = dil[k];
        s.dim_in = k == 0 ? cfg.input_channels : dims[k - 1];
        s.dim_out = dims[k];
        s.num_heads = heads[k];
        s.nb_depth = depths[k];
        s.ffn_expansion = 4.0;
    }
    return cfg;
}

BackboneConfig parse_config_text(const std::string& text) {
    BackboneConfig cfg = BackboneConfig::default_config();
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));

        if (key == "input_channels") {
            cfg.input_channels = parse_int(key, val);
        } else if (key == "image_size") {
            auto parts = split_list(val);
            if (parts.size() == 1) {
                cfg.image_h = cfg.image_w = parse_int(key, parts[0]);
            } else if (parts.size() == 2) {
                cfg.image_h = parse_int(key, parts[0]);
                cfg.image_w = parse_int(key, parts[1]);
            } else {
                throw std::invalid_argument("config: image_size wants 1 or 2 values");
            }
        } else if (key == "class_token_stage") {
            cfg.class_token_stage = parse_int(key, val);
        } else if (key == "seed") {
            cfg.seed = parse_u64(key, val);
        } else if (key.rfind("stage", 0) == 0 && key.size() > 6 && key[6] == '.') {
            const int stage = key[5] - '0';
            if (stage < 1 || stage > 4)
                throw std::invalid_argument("config: unknown key '" + key + "'");
            StageConfig& s = cfg.stages[static_cast<size_t>(stage - 1)];
            const std::string field = key.substr(7);
            if (field == "reduction_ratio") {
                s.reduction_ratio = parse_int(key, val);
            } else if (field == "dilations") {
                s.dilations.clear();
                for (const std::string& d : split_list(val)) s.dilations.push_back(parse_int(key, d));
            } else if (field == "dim_out") {
                s.dim_out = parse_int(key, val);
            } else if (field == "num_heads") {
                s.num_heads = parse_int(key, val);
            } else if (field == "nb_depth") {
                s.nb_depth = parse_int(key, val);
            } else if (field == "ffn_expansion") {
                s.ffn_expansion = parse_double(key, val);
            } else {
                throw std::invalid_argument("config: unknown key '" + key + "'");
            }
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    // dim_in chains from the previous stage.
    for (size_t k = 0; k < 4; ++k)
        cfg.stages[k].dim_in = k == 0 ? cfg.input_channels : cfg.stages[k - 1].dim_out;
    cfg.validate();
    return cfg;
}

BackboneConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

void save_config_file(const BackboneConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot open '" + path + "' for writing");
    os << cfg.canonical_text();
}

std::array<uint8_t, 32> config_fingerprint(const BackboneConfig& cfg) {
    return Sha256::hash(cfg.canonical_text());
}

}  // namespace pytf
