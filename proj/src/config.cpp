#include "melstyle/config.hpp"

#include <fstream>
#include <sstream>

namespace melstyle::cli {

namespace {

int to_int(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    }
}

uint64_t to_u64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ConfigError("key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) out.push_back(to_int(part, key));
    if (out.empty()) throw ConfigError("key '" + key + "' expects a list");
    return out;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
    auto& d = model.dsp;
    auto& u = model.unet;
    auto& e = model.enc;
    auto& t = model.tve;
    auto& s = model.sched;
    auto& c = model.codec;

    if (key == "dsp.sample_rate") d.sample_rate = to_int(value, key);
    else if (key == "dsp.n_fft") d.n_fft = to_int(value, key);
    else if (key == "dsp.hop") d.hop = to_int(value, key);
    else if (key == "dsp.n_mels") d.n_mels = to_int(value, key);
    else if (key == "dsp.fmin") d.fmin = to_double(value, key);
    else if (key == "dsp.fmax") d.fmax = to_double(value, key);
    else if (key == "dsp.log_floor") d.log_floor = to_double(value, key);
    else if (key == "dsp.p_ref") d.p_ref = to_double(value, key);
    else if (key == "dsp.gl_iters") d.gl_iters = to_int(value, key);
    else if (key == "model.frames") model.frames = to_int(value, key);
    else if (key == "model.widths") u.widths = to_int_list(value, key);
    else if (key == "model.t_embed_dim") u.t_embed_dim = to_int(value, key);
    else if (key == "model.gn_groups") u.gn_groups = to_int(value, key);
    else if (key == "model.attn_heads") u.attn_heads = to_int(value, key);
    else if (key == "enc.d") e.d = to_int(value, key);
    else if (key == "enc.layers") e.n_layers = to_int(value, key);
    else if (key == "enc.heads") e.n_heads = to_int(value, key);
    else if (key == "enc.max_len") e.max_len = to_int(value, key);
    else if (key == "enc.mlp_ratio") e.mlp_ratio = to_int(value, key);
    else if (key == "tve.groups") t.groups = to_int(value, key);
    else if (key == "tve.stacks") t.n_stacks = to_int(value, key);
    else if (key == "tve.mlp_hidden") t.mlp_hidden = to_int(value, key);
    else if (key == "sched.T") s.T = to_int(value, key);
    else if (key == "sched.beta_start") s.beta_start = to_double(value, key);
    else if (key == "sched.beta_end") s.beta_end = to_double(value, key);
    else if (key == "codec.learned") c.learned = to_bool(value, key);
    else if (key == "codec.latent_ch") c.latent_ch = to_int(value, key);
    else if (key == "codec.hidden") c.hidden = to_int(value, key);
    else if (key == "pretrain.epochs") pretrain_epochs = to_int(value, key);
    else if (key == "pretrain.batch") pretrain_batch = to_int(value, key);
    else if (key == "pretrain.lr") pretrain_lr = to_double(value, key);
    else if (key == "pretrain.p_uncond") p_uncond = to_double(value, key);
    else if (key == "pretrain.save_every") pretrain_save_every = to_int(value, key);
    else if (key == "invert.lr") invert_lr = to_double(value, key);
    else if (key == "invert.steps") invert_steps = to_int(value, key);
    else if (key == "invert.batch") invert_batch = to_int(value, key);
    else if (key == "stylize.strength") strength = to_double(value, key);
    else if (key == "stylize.scale") scale = to_double(value, key);
    else if (key == "stylize.steps") steps = to_int(value, key);
    else if (key == "corpus.n_content") n_content = to_int(value, key);
    else if (key == "corpus.n_style") n_style = to_int(value, key);
    else if (key == "paths.out_dir") out_dir = value;
    else if (key == "paths.corpus_dir") corpus_dir = value;
    else if (key == "seed") seed = to_u64(value, key);
    else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_override(const std::string& key_eq_value) {
    auto pos = key_eq_value.find('=');
    if (pos == std::string::npos)
        throw ConfigError("override must be key=value, got '" + key_eq_value + "'");
    apply(trim(key_eq_value.substr(0, pos)), trim(key_eq_value.substr(pos + 1)));
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    RunConfig cfg = defaults();
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("malformed line " + std::to_string(lineno) + " in " +
                              path);
        cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.normalize();
    return cfg;
}

void RunConfig::normalize() {
    // dependent fields: one embedding width everywhere, codec drives the
    // denoiser input geometry
    model.tve.d = model.enc.d;
    model.tve.t_embed_dim = model.enc.d;
    model.tve.mlp_hidden = std::max(model.tve.mlp_hidden, 8);
    model.unet.cond_dim = model.enc.d;
    model.unet.in_ch = model.codec.learned ? model.codec.latent_ch : 1;
    model.unet.base =
        model.frames / (model.codec.learned ? 4 : 1);
    model.enc.vocab_size = int(text::Vocabulary::standard().size());
}

void RunConfig::validate() const {
    model.dsp.validate();
    if (model.frames < 8 || model.frames % 4 != 0)
        throw ConfigError("model.frames must be a multiple of 4, >= 8");
    if (model.unet.widths.size() != 3)
        throw ConfigError("model.widths expects exactly 3 entries");
    if (model.enc.d % model.tve.groups != 0)
        throw ConfigError("tve.groups must divide enc.d");
    if (model.enc.d % model.enc.n_heads != 0)
        throw ConfigError("enc.heads must divide enc.d");
    if (model.sched.T < 2) throw ConfigError("sched.T must be >= 2");
    if (!(strength >= 0.0 && strength <= 1.0))
        throw ConfigError("stylize.strength must lie in [0,1]");
    if (scale < 0.0) throw ConfigError("stylize.scale must be >= 0");
    if (steps < 1) throw ConfigError("stylize.steps must be >= 1");
    if (pretrain_batch < 1 || invert_batch < 1)
        throw ConfigError("batch sizes must be >= 1");
    if (!(pretrain_lr > 0) || !(invert_lr > 0))
        throw ConfigError("learning rates must be positive");
    if (!(p_uncond >= 0.0 && p_uncond < 1.0))
        throw ConfigError("pretrain.p_uncond must lie in [0,1)");
    if (n_content < 1 || n_style < 1)
        throw ConfigError("corpus counts must be >= 1");
}

std::string RunConfig::resolved_text() const {
    std::ostringstream o;
    const auto& d = model.dsp;
    const auto& u = model.unet;
    const auto& e = model.enc;
    const auto& t = model.tve;
    const auto& s = model.sched;
    const auto& c = model.codec;
    o << "dsp.sample_rate = " << d.sample_rate << "\n";
    o << "dsp.n_fft = " << d.n_fft << "\n";
    o << "dsp.hop = " << d.hop << "\n";
    o << "dsp.n_mels = " << d.n_mels << "\n";
    o << "dsp.fmin = " << d.fmin << "\n";
    o << "dsp.fmax = " << d.fmax << "\n";
    o << "dsp.log_floor = " << d.log_floor << "\n";
    o << "dsp.p_ref = " << d.p_ref << "\n";
    o << "dsp.gl_iters = " << d.gl_iters << "\n";
    o << "model.frames = " << model.frames << "\n";
    o << "model.widths = " << u.widths[0] << "," << u.widths[1] << "," << u.widths[2]
      << "\n";
    o << "model.t_embed_dim = " << u.t_embed_dim << "\n";
    o << "model.gn_groups = " << u.gn_groups << "\n";
    o << "model.attn_heads = " << u.attn_heads << "\n";
    o << "enc.d = " << e.d << "\n";
    o << "enc.layers = " << e.n_layers << "\n";
    o << "enc.heads = " << e.n_heads << "\n";
    o << "enc.max_len = " << e.max_len << "\n";
    o << "enc.mlp_ratio = " << e.mlp_ratio << "\n";
    o << "tve.groups = " << t.groups << "\n";
    o << "tve.stacks = " << t.n_stacks << "\n";
    o << "tve.mlp_hidden = " << t.mlp_hidden << "\n";
    o << "sched.T = " << s.T << "\n";
    o << "sched.beta_start = " << s.beta_start << "\n";
    o << "sched.beta_end = " << s.beta_end << "\n";
    o << "codec.learned = " << (c.learned ? "true" : "false") << "\n";
    o << "codec.latent_ch = " << c.latent_ch << "\n";
    o << "codec.hidden = " << c.hidden << "\n";
    o << "pretrain.epochs = " << pretrain_epochs << "\n";
    o << "pretrain.batch = " << pretrain_batch << "\n";
    o << "pretrain.lr = " << pretrain_lr << "\n";
    o << "pretrain.p_uncond = " << p_uncond << "\n";
    o << "pretrain.save_every = " << pretrain_save_every << "\n";
    o << "invert.lr = " << invert_lr << "\n";
    o << "invert.steps = " << invert_steps << "\n";
    o << "invert.batch = " << invert_batch << "\n";
    o << "stylize.strength = " << strength << "\n";
    o << "stylize.scale = " << scale << "\n";
    o << "stylize.steps = " << steps << "\n";
    o << "corpus.n_content = " << n_content << "\n";
    o << "corpus.n_style = " << n_style << "\n";
    o << "paths.out_dir = " << out_dir << "\n";
    o << "paths.corpus_dir = " << corpus_dir << "\n";
    o << "seed = " << seed << "\n";
    return o.str();
}

void RunConfig::write_resolved(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write resolved config: " + path);
    f << resolved_text();
}

uint64_t RunConfig::hash() const { return Rng::hash_name(resolved_text()); }

}  // namespace melstyle::cli
