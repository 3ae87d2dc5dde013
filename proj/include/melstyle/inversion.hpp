#pragma once

#include <string>
#include <vector>

#include "melstyle/diffusion.hpp"

namespace melstyle::inversion {

struct InversionConfig {
    double lr = 0.001;
    int max_steps = 1500;
    int batch_size = 1;
    int eval_every = 100;
    uint64_t seed = 0;
    bool train_tve = true;  // false: fixed-embedding inversion (plain TI arm)
};

// Learned pseudo-word: TVE weights plus the initial placeholder embedding,
// trained through the frozen backbone.
struct InversionArtifact {
    text::TveConfig tve_cfg;
    nn::ParamSet<float> ps;
    text::Tve<float> tve;
    ad::Param<float>* v_o_star = nullptr;
    bool use_tve = true;  // false: the "*" row is v_o_star itself
    uint64_t source_model_hash = 0;
    std::vector<std::string> style_clip_ids;
    std::vector<float> loss_curve;
    double final_loss = 0.0;

    static InversionArtifact create(const diff::Checkpoint& ckpt, uint64_t seed,
                                    bool use_tve = true);
    void save(const std::string& path) const;
    static InversionArtifact load(const std::string& path);

    // pseudo-word embedding at timestep t
    TenF star_embedding(double t) const;
    // conditions for the prompt "*" under this artifact (re-queried per t)
    text::ConditionSet conditions(const diff::Checkpoint& ckpt, double t) const;
    diff::CondFn cond_fn(const diff::Checkpoint& ckpt) const;
};

// Optimize the pseudo-word on 1-5 style clips through the frozen model.
InversionArtifact invert_style(const std::vector<dsp::MelSpectrogram>& style_clips,
                               const diff::Checkpoint& ckpt,
                               const InversionConfig& cfg,
                               std::vector<std::string> clip_ids = {});

struct Trajectory {
    std::vector<double> ts;  // T' sample points
    Ten<double> rows;        // T' x d embeddings
    Ten<double> cosine;      // T' x T' similarity
};

Trajectory embedding_trajectory(const InversionArtifact& a, int n_points = 32,
                                int T = 0);
void save_trajectory_csv(const std::string& path, const Trajectory& t);
void save_trajectory_png(const std::string& path, const Trajectory& t);

// DDIM generation from pure noise with the prompt "*"
dsp::MelSpectrogram reconstruct(const InversionArtifact& a,
                                const diff::Checkpoint& ckpt, uint64_t seed,
                                double guidance_scale = 4.0, int n_steps = 50);

// generation from pure noise with an arbitrary caption (no pseudo-word)
dsp::MelSpectrogram generate(const diff::Checkpoint& ckpt,
                             const std::string& caption, uint64_t seed,
                             double guidance_scale = 4.0, int n_steps = 50);

// latent -> clamped mel matrix (decodes through the codec)
dsp::MelSpectrogram latent_to_mel(const TenF& z, const diff::Checkpoint& ckpt);

}  // namespace melstyle::inversion
