#pragma once

#include <optional>

#include "melstyle/inversion.hpp"

namespace melstyle::stylize {

struct StylizationRequest {
    dsp::MelSpectrogram content;  // any frame count >= 1
    double strength = 0.65;
    double scale = 4.0;
    int n_steps = 50;
    uint64_t seed = 0;
    bool bias_reduced = true;
    bool render_audio = true;      // skip Griffin-Lim for metric-only runs
    bool keep_intermediates = false;
};

struct StylizationResult {
    dsp::MelSpectrogram mel;
    Waveform wav;  // empty when render_audio is false
    int t_p = 0;
    // request echo for reproducibility
    double strength = 0.0;
    double scale = 0.0;
    int n_steps = 0;
    uint64_t seed = 0;
    bool bias_reduced = true;
    // first-window intermediates when requested
    std::optional<TenF> m_cn, eps_hat, m_hat_cn;

    std::string params_json() const;
};

// noising entry point: t_p = round(T * strength), M_cn = q_sample(z_c, t_p, eps)
std::pair<TenF, int> partial_diffuse(const TenF& z_c, double strength,
                                     const diff::NoiseSchedule& s, uint64_t seed);

// single guided prediction on M_cn, then the diffusion closed form re-applied
// to the clean latent with the predicted noise in place of the random draw
std::pair<TenF, TenF> determined_diffuse(const TenF& z_c, const TenF& m_cn,
                                         int t_p, const text::ConditionSet& cond,
                                         const text::ConditionSet& uncond,
                                         double scale, const diff::EpsPairFn& model,
                                         const diff::NoiseSchedule& s,
                                         bool* skipped = nullptr);

// full pipeline: partial diffusion, optional determined diffusion, DDIM
// denoising under the pseudo-word, Griffin-Lim render
StylizationResult run(const StylizationRequest& req,
                      const inversion::InversionArtifact& artifact,
                      const diff::Checkpoint& ckpt);

// phase stream used for the audio render; exposed so tests can reproduce it
uint64_t stylize_gl_seed(uint64_t request_seed, int window_index = 0);

}  // namespace melstyle::stylize
