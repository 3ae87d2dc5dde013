#include "melstyle/text.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "melstyle/common.hpp"

namespace melstyle::text {

namespace {
const char* kStandardTokens[] = {
    "<pad>", "<bos>", "<eos>", "*",     "a",     "melody", "music",  "bell",
    "pluck", "organ", "chirp", "noiseburst", "chime", "rain",   "soft",   "bright",
    "dark",  "slow",  "fast",  "deep",  "high",  "low",    "wind",   "wood",
    "metal", "glass", "drum",  "string", "horn", "reed",   "brass",  "stone"};
}

Vocabulary Vocabulary::standard() {
    Vocabulary v;
    for (const char* t : kStandardTokens) v.tokens_.push_back(t);
    v.index_specials();
    return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.index_specials();
    return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open vocabulary: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) v.tokens_.push_back(line);
    }
    v.index_specials();
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write vocabulary: " + path);
    for (const auto& t : tokens_) f << t << "\n";
}

void Vocabulary::index_specials() {
    if (tokens_.size() > 64) throw ConfigError("vocabulary larger than 64 tokens");
    pad_ = bos_ = eos_ = star_ = -1;
    for (int i = 0; i < int(tokens_.size()); ++i) {
        if (tokens_[size_t(i)] == "<pad>") pad_ = i;
        if (tokens_[size_t(i)] == "<bos>") bos_ = i;
        if (tokens_[size_t(i)] == "<eos>") eos_ = i;
        if (tokens_[size_t(i)] == "*") star_ = i;
    }
    if (pad_ < 0 || bos_ < 0 || eos_ < 0 || star_ < 0)
        throw ConfigError("vocabulary must define <pad>, <bos>, <eos>, *");
    for (size_t i = 0; i < tokens_.size(); ++i)
        for (size_t j = i + 1; j < tokens_.size(); ++j)
            if (tokens_[i] == tokens_[j])
                throw ConfigError("duplicate vocabulary token: " + tokens_[i]);
}

int Vocabulary::index(const std::string& token) const {
    for (int i = 0; i < int(tokens_.size()); ++i)
        if (tokens_[size_t(i)] == token) return i;
    throw InputError("unknown token: '" + token + "'");
}

bool Vocabulary::has(const std::string& token) const {
    for (const auto& t : tokens_)
        if (t == token) return true;
    return false;
}

const std::string& Vocabulary::token(int idx) const {
    if (idx < 0 || idx >= int(tokens_.size())) throw InputError("token index out of range");
    return tokens_[size_t(idx)];
}

std::vector<int> Vocabulary::encode_caption(const std::string& caption,
                                            int max_len) const {
    std::vector<int> ids;
    ids.push_back(bos_);
    std::istringstream ss(caption);
    std::string word;
    while (ss >> word) ids.push_back(index(word));
    ids.push_back(eos_);
    if (int(ids.size()) > max_len)
        throw InputError("caption longer than max_len: '" + caption + "'");
    while (int(ids.size()) < max_len) ids.push_back(pad_);
    return ids;
}

Ten<double> attention(const Ten<double>& q, const Ten<double>& k,
                      const Ten<double>& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention expects matrices");
    const int nq = q.dim(0), dk = q.dim(1);
    const int nk = k.dim(0), dv = v.dim(1);
    if (k.dim(1) != dk || v.dim(0) != nk)
        throw ShapeError("attention dimension mismatch");

    Ten<double> out({nq, dv});
    const double sc = 1.0 / std::sqrt(double(dk));
    std::vector<double> row(static_cast<size_t>(nk));
    for (int i = 0; i < nq; ++i) {
        double mx = -1e300;
        for (int j = 0; j < nk; ++j) {
            double s = 0.0;
            for (int x = 0; x < dk; ++x)
                s += q.v[size_t(i) * size_t(dk) + size_t(x)] *
                     k.v[size_t(j) * size_t(dk) + size_t(x)];
            row[size_t(j)] = s * sc;
            mx = std::max(mx, row[size_t(j)]);
        }
        double sum = 0.0;
        for (int j = 0; j < nk; ++j) {
            row[size_t(j)] = std::exp(row[size_t(j)] - mx);
            sum += row[size_t(j)];
        }
        for (int j = 0; j < nk; ++j) row[size_t(j)] /= sum;
        for (int x = 0; x < dv; ++x) {
            double acc = 0.0;
            for (int j = 0; j < nk; ++j)
                acc += row[size_t(j)] * v.v[size_t(j) * size_t(dv) + size_t(x)];
            out.v[size_t(i) * size_t(dv) + size_t(x)] = acc;
        }
    }
    return out;
}

int find_star(const std::vector<int>& tokens, int star_id) {
    for (int i = 0; i < int(tokens.size()); ++i)
        if (tokens[size_t(i)] == star_id) return i;
    return -1;
}

TenF tve_forward(const Tve<float>& tve, double t, const ad::Param<float>& v_o_star) {
    ad::Tape<float> tp;
    auto& p = const_cast<ad::Param<float>&>(v_o_star);
    ad::Var out = tve.fwd(tp, t, tp.param(p));
    return tp.val(out);
}

ConditionSet encode_text(const TextEncoder<float>& enc, const Vocabulary& vocab,
                         const std::string& caption, double t,
                         const Tve<float>* tve, const ad::Param<float>* v_o_star) {
    auto tokens = vocab.encode_caption(caption, enc.cfg.max_len);
    const int star_pos = find_star(tokens, vocab.star_id());
    if (star_pos >= 0 && (!tve || !v_o_star))
        throw UsageError("caption contains '*' but no TVE parameters supplied");

    ad::Tape<float> tp;
    ad::Var star{};
    if (star_pos >= 0) {
        auto& p = const_cast<ad::Param<float>&>(*v_o_star);
        star = tve->fwd(tp, t, tp.param(p));
    }
    ad::Var rows = enc.encode(tp, tokens, star_pos, star);
    ConditionSet cs;
    cs.rows = tp.val(rows);
    cs.timestep_dependent = star_pos >= 0;
    return cs;
}

}  // namespace melstyle::text
