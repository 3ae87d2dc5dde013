#pragma once

#include <string>
#include <vector>

#include "melstyle/diffusion.hpp"

namespace melstyle::cli {

// One source of truth per run: defaults < config file < command-line
// overrides, resolved and written next to every command's outputs.
struct RunConfig {
    diff::ModelConfig model;

    int pretrain_epochs = 60;
    int pretrain_batch = 4;
    double pretrain_lr = 1e-4;
    double p_uncond = 0.1;
    int pretrain_save_every = 500;

    double invert_lr = 0.001;
    int invert_steps = 1500;
    int invert_batch = 1;

    double strength = 0.65;
    double scale = 4.0;
    int steps = 50;

    int n_content = 179;
    int n_style = 74;

    std::string out_dir = "runs";
    std::string corpus_dir = "corpus";

    uint64_t seed = 42;

    static RunConfig defaults() { return RunConfig{}; }
    static RunConfig from_file(const std::string& path);

    // dotted-key assignment; throws ConfigError naming unknown keys
    void apply(const std::string& key, const std::string& value);
    void apply_override(const std::string& key_eq_value);

    // re-derive dependent fields and check ranges
    void normalize();
    void validate() const;

    std::string resolved_text() const;  // loadable as a config file
    void write_resolved(const std::string& path) const;
    uint64_t hash() const;

    Rng substream(const std::string& name) const {
        return Rng::substream(seed, name);
    }
};

}  // namespace melstyle::cli
