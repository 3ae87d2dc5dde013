#include "melstyle/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "melstyle/common.hpp"

namespace melstyle::io {

namespace {

constexpr uint32_t kVersion = 1;

void wr(std::ofstream& f, const void* p, size_t n) {
    f.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

template <typename T>
void wr_val(std::ofstream& f, T v) {
    wr(f, &v, sizeof(T));
}

void wr_str(std::ofstream& f, const std::string& s) {
    wr_val(f, uint32_t(s.size()));
    wr(f, s.data(), s.size());
}

void rd(std::ifstream& f, void* p, size_t n) {
    f.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (!f) throw IoError("truncated block file");
}

template <typename T>
T rd_val(std::ifstream& f) {
    T v;
    rd(f, &v, sizeof(T));
    return v;
}

std::string rd_str(std::ifstream& f) {
    uint32_t n = rd_val<uint32_t>(f);
    if (n > (1u << 20)) throw IoError("unreasonable name length in block file");
    std::string s(n, '\0');
    rd(f, s.data(), n);
    return s;
}

}  // namespace

void NamedBlocks::write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write block file: " + path);
    f.write("MSCK", 4);
    wr_val(f, kVersion);
    wr_val(f, uint32_t(tensors.size() + scalars_u64.size() + scalars_f64.size()));
    for (const auto& [name, t] : tensors) {
        wr_val(f, uint8_t(0));
        wr_str(f, name);
        wr_val(f, uint32_t(t.shape.size()));
        for (int d : t.shape) wr_val(f, uint32_t(d));
        wr(f, t.v.data(), t.v.size() * sizeof(float));
    }
    for (const auto& [name, v] : scalars_u64) {
        wr_val(f, uint8_t(1));
        wr_str(f, name);
        wr_val(f, v);
    }
    for (const auto& [name, v] : scalars_f64) {
        wr_val(f, uint8_t(2));
        wr_str(f, name);
        wr_val(f, v);
    }
    if (!f) throw IoError("short write: " + path);
}

NamedBlocks NamedBlocks::read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open block file: " + path);
    char magic[4];
    rd(f, magic, 4);
    if (std::memcmp(magic, "MSCK", 4) != 0)
        throw IoError("not a block file: " + path);
    const uint32_t version = rd_val<uint32_t>(f);
    if (version != kVersion) throw IoError("unsupported block file version");
    const uint32_t count = rd_val<uint32_t>(f);

    NamedBlocks nb;
    for (uint32_t i = 0; i < count; ++i) {
        const uint8_t kind = rd_val<uint8_t>(f);
        const std::string name = rd_str(f);
        if (kind == 0) {
            const uint32_t rank = rd_val<uint32_t>(f);
            if (rank > 8) throw IoError("unreasonable tensor rank");
            std::vector<int> shape;
            long long n = 1;
            for (uint32_t r = 0; r < rank; ++r) {
                int d = int(rd_val<uint32_t>(f));
                shape.push_back(d);
                n *= d;
            }
            TenF t(shape);
            rd(f, t.v.data(), size_t(n) * sizeof(float));
            nb.tensors.emplace(name, std::move(t));
        } else if (kind == 1) {
            nb.scalars_u64.emplace(name, rd_val<uint64_t>(f));
        } else if (kind == 2) {
            nb.scalars_f64.emplace(name, rd_val<double>(f));
        } else {
            throw IoError("unknown block kind in " + path);
        }
    }
    return nb;
}

void store_params(NamedBlocks& nb, const std::string& prefix,
                  nn::ParamSet<float>& ps, bool with_opt_state) {
    for (auto* p : ps.all()) {
        nb.tensors[prefix + "." + p->name] = p->value;
        if (with_opt_state && p->adam_m.v.size() == p->value.v.size()) {
            nb.tensors[prefix + ".adam_m." + p->name] = p->adam_m;
            nb.tensors[prefix + ".adam_v." + p->name] = p->adam_v;
        }
    }
}

void load_params(const NamedBlocks& nb, const std::string& prefix,
                 nn::ParamSet<float>& ps, bool with_opt_state) {
    for (auto* p : ps.all()) {
        auto it = nb.tensors.find(prefix + "." + p->name);
        if (it == nb.tensors.end())
            throw IoError("missing parameter block: " + prefix + "." + p->name);
        if (it->second.shape != p->value.shape)
            throw IoError("shape mismatch for parameter: " + p->name);
        p->value = it->second;
        if (with_opt_state) {
            auto im = nb.tensors.find(prefix + ".adam_m." + p->name);
            auto iv = nb.tensors.find(prefix + ".adam_v." + p->name);
            if (im != nb.tensors.end() && iv != nb.tensors.end()) {
                p->adam_m = im->second;
                p->adam_v = iv->second;
            }
        }
    }
}

}  // namespace melstyle::io
