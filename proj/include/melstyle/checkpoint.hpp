#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "melstyle/nn.hpp"
#include "melstyle/tensor.hpp"

namespace melstyle::io {

// Versioned binary container of named blocks (f32 tensors plus u64/f64
// scalars). Checkpoints and inversion artifacts share this format; a JSON
// sidecar carries the human-readable config next to each file.
struct NamedBlocks {
    std::map<std::string, TenF> tensors;
    std::map<std::string, uint64_t> scalars_u64;
    std::map<std::string, double> scalars_f64;

    void write(const std::string& path) const;
    static NamedBlocks read(const std::string& path);

    bool has_tensor(const std::string& name) const {
        return tensors.find(name) != tensors.end();
    }
};

// copy all parameters of a set into blocks under `prefix.` (values only,
// or including optimizer state for resumable training snapshots)
void store_params(NamedBlocks& nb, const std::string& prefix,
                  nn::ParamSet<float>& ps, bool with_opt_state = false);

// load values (and optimizer state when present) back; shapes must match
void load_params(const NamedBlocks& nb, const std::string& prefix,
                 nn::ParamSet<float>& ps, bool with_opt_state = false);

}  // namespace melstyle::io
