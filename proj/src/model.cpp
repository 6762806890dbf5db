#include "popmag/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "popmag/kernels.hpp"

namespace popmag {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kMaskOff = -1e30;  // pre-softmax score of a masked slot

// ----- config / bookkeeping ----------------------------------------------

using ordered_json = nlohmann::ordered_json;

double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1p-53; }

double normal002(std::mt19937_64& rng) {
    const double u1 = double((rng() >> 11) + 1) * 0x1p-53;  // (0, 1]
    const double u2 = uniform01(rng);
    return 0.02 * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

bool is_bias_leaf(const std::string& name) {
    const auto dot = name.rfind('.');
    const std::string leaf = name.substr(dot + 1);
    return leaf == "b" || leaf == "bq" || leaf == "bk" || leaf == "bv" || leaf == "bo" ||
           leaf == "b1" || leaf == "b2";
}

bool is_gain_leaf(const std::string& name) {
    return name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
}

// ----- row/tensor helpers -------------------------------------------------

void add_inplace(Tensor& a, const Tensor& b) {
    assert(a.same_shape(b));
    for (size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

void add_bias_rows(Tensor& x, const Tensor& b) {
    assert(b.rows == 1 && b.cols == x.cols);
    for (int r = 0; r < x.rows; ++r)
        for (int c = 0; c < x.cols; ++c) x[r][c] += b[0][c];
}

void colsum_acc(Tensor& acc, const Tensor& x) {
    assert(acc.rows == 1 && acc.cols == x.cols);
    for (int r = 0; r < x.rows; ++r)
        for (int c = 0; c < x.cols; ++c) acc[0][c] += x[r][c];
}

Tensor take_cols(const Tensor& x, int c0, int n) {
    Tensor out(x.rows, n);
    for (int r = 0; r < x.rows; ++r)
        for (int c = 0; c < n; ++c) out[r][c] = x[r][c0 + c];
    return out;
}

void put_cols(Tensor& x, int c0, const Tensor& sub) {
    for (int r = 0; r < sub.rows; ++r)
        for (int c = 0; c < sub.cols; ++c) x[r][c0 + c] = sub[r][c];
}

// ----- sublayer math ------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out(x.rows, w.cols);
    kernels::matmul(out, x, w);
    add_bias_rows(out, b);
    return out;
}

// Accumulates dW/dB when non-null; returns dX.
Tensor linear_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dW, Tensor* dB) {
    if (dW) kernels::matmul_tn_acc(*dW, x, dy);
    if (dB) colsum_acc(*dB, dy);
    Tensor dx(x.rows, x.cols);
    kernels::matmul_nt(dx, dy, w);
    return dx;
}

struct LNCache {
    Tensor xhat;     // normalized rows
    Tensor inv_std;  // [rows x 1]
};

Tensor ln_fwd(const Tensor& x, const Tensor& g, const Tensor& b, LNCache& c) {
    c.xhat = Tensor(x.rows, x.cols);
    c.inv_std = Tensor(x.rows, 1);
    kernels::layernorm_rows(c.xhat, c.inv_std, x, kLnEps);
    Tensor y(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r)
        for (int j = 0; j < x.cols; ++j) y[r][j] = g[0][j] * c.xhat[r][j] + b[0][j];
    return y;
}

// Accumulates dG/dB when non-null; returns dX.
Tensor ln_bwd(const Tensor& dy, const Tensor& g, const LNCache& c, Tensor* dG, Tensor* dB) {
    const int n = dy.cols;
    Tensor dx(dy.rows, dy.cols);
    for (int r = 0; r < dy.rows; ++r) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < n; ++j) {
            const double dxhat = dy[r][j] * g[0][j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * c.xhat[r][j];
        }
        const double m1 = sum_dxhat / n, m2 = sum_dxhat_xhat / n;
        for (int j = 0; j < n; ++j) {
            const double dxhat = dy[r][j] * g[0][j];
            dx[r][j] = c.inv_std[r][0] * (dxhat - m1 - c.xhat[r][j] * m2);
        }
        if (dG)
            for (int j = 0; j < n; ++j) (*dG)[0][j] += dy[r][j] * c.xhat[r][j];
        if (dB)
            for (int j = 0; j < n; ++j) (*dB)[0][j] += dy[r][j];
    }
    return dx;
}

// Inverted dropout on a sublayer output. Empty mask = identity (p == 0 or no rng).
void dropout_fwd(Tensor& x, double p, std::mt19937_64* rng, Tensor& mask) {
    if (p <= 0.0 || rng == nullptr) return;
    mask = Tensor(x.rows, x.cols);
    const double keep = 1.0 / (1.0 - p);
    for (size_t i = 0; i < x.size(); ++i) {
        mask.data[i] = uniform01(*rng) < p ? 0.0 : keep;
        x.data[i] *= mask.data[i];
    }
}

Tensor dropout_bwd(const Tensor& dy, const Tensor& mask) {
    if (mask.empty()) return dy;
    Tensor dx = dy;
    for (size_t i = 0; i < dx.size(); ++i) dx.data[i] *= mask.data[i];
    return dx;
}

struct AttnCache {
    Tensor Q, K, V;         // [Tq x d], [Tkv x d]
    std::vector<Tensor> P;  // per head, post-softmax [Tq x Tkv]
    Tensor ctx;             // [Tq x d], pre output projection
};

struct AttnP {
    const Tensor &wq, &wk, &wv, &wo, &bq, &bk, &bv, &bo;
};
struct AttnG {
    Tensor *wq, *wk, *wv, *wo, *bq, *bk, *bv, *bo;
};

// q_in/kv_in are the already-normalized inputs. When `causal`, query row i may
// attend kv rows [0, kv_offset + i]; otherwise attention is unrestricted.
Tensor attn_fwd(int heads, const AttnP& p, const Tensor& q_in, const Tensor& kv_in, bool causal,
                int kv_offset, AttnCache& c) {
    const int d = q_in.cols, dh = d / heads;
    const double scale = 1.0 / std::sqrt(double(dh));
    c.Q = linear(q_in, p.wq, p.bq);
    c.K = linear(kv_in, p.wk, p.bk);
    c.V = linear(kv_in, p.wv, p.bv);
    c.P.assign(heads, Tensor());
    c.ctx = Tensor(q_in.rows, d);
    for (int h = 0; h < heads; ++h) {
        const Tensor qh = take_cols(c.Q, h * dh, dh);
        const Tensor kh = take_cols(c.K, h * dh, dh);
        const Tensor vh = take_cols(c.V, h * dh, dh);
        Tensor s(qh.rows, kh.rows);
        kernels::matmul_nt(s, qh, kh);
        for (int i = 0; i < s.rows; ++i) {
            const int limit = causal ? kv_offset + i : s.cols - 1;
            for (int j = 0; j < s.cols; ++j) s[i][j] = j <= limit ? s[i][j] * scale : kMaskOff;
        }
        kernels::softmax_rows(s);
        Tensor ctx_h(qh.rows, dh);
        kernels::matmul(ctx_h, s, vh);
        put_cols(c.ctx, h * dh, ctx_h);
        c.P[h] = std::move(s);
    }
    return linear(c.ctx, p.wo, p.bo);
}

// Returns (dq_in, dkv_in); accumulates weight grads when g is non-null.
std::pair<Tensor, Tensor> attn_bwd(int heads, const AttnP& p, const AttnG* g, const Tensor& q_in,
                                   const Tensor& kv_in, const Tensor& dOut, const AttnCache& c) {
    const int d = q_in.cols, dh = d / heads;
    const double scale = 1.0 / std::sqrt(double(dh));
    const Tensor dctx = linear_bwd(c.ctx, p.wo, dOut, g ? g->wo : nullptr, g ? g->bo : nullptr);
    Tensor dQ(c.Q.rows, d), dK(c.K.rows, d), dV(c.V.rows, d);
    for (int h = 0; h < heads; ++h) {
        const Tensor dctx_h = take_cols(dctx, h * dh, dh);
        const Tensor qh = take_cols(c.Q, h * dh, dh);
        const Tensor kh = take_cols(c.K, h * dh, dh);
        const Tensor vh = take_cols(c.V, h * dh, dh);
        const Tensor& prob = c.P[h];
        Tensor dP(prob.rows, prob.cols);
        kernels::matmul_nt(dP, dctx_h, vh);
        Tensor dvh(vh.rows, dh);
        kernels::matmul_tn_acc(dvh, prob, dctx_h);
        // Softmax backward per row; masked slots carry prob == 0 exactly.
        Tensor dS(prob.rows, prob.cols);
        for (int i = 0; i < prob.rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < prob.cols; ++j) dot += dP[i][j] * prob[i][j];
            for (int j = 0; j < prob.cols; ++j) dS[i][j] = prob[i][j] * (dP[i][j] - dot) * scale;
        }
        Tensor dqh(qh.rows, dh);
        kernels::matmul(dqh, dS, kh);
        Tensor dkh(kh.rows, dh);
        kernels::matmul_tn_acc(dkh, dS, qh);
        put_cols(dQ, h * dh, dqh);
        put_cols(dK, h * dh, dkh);
        put_cols(dV, h * dh, dvh);
    }
    Tensor dq_in = linear_bwd(q_in, p.wq, dQ, g ? g->wq : nullptr, g ? g->bq : nullptr);
    Tensor dkv_in = linear_bwd(kv_in, p.wk, dK, g ? g->wk : nullptr, g ? g->bk : nullptr);
    add_inplace(dkv_in, linear_bwd(kv_in, p.wv, dV, g ? g->wv : nullptr, g ? g->bv : nullptr));
    return {std::move(dq_in), std::move(dkv_in)};
}

// -log softmax(row)[target]; when dlogits is set, adds scale*(softmax - onehot).
double ce_row(const double* row, int n, int target, double* dlogits, double scale) {
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    if (dlogits)
        for (int j = 0; j < n; ++j)
            dlogits[j] += scale * (std::exp(row[j] - lse) - (j == target ? 1.0 : 0.0));
    return lse - row[target];
}

}  // namespace

// ----- errors, config -----------------------------------------------------

non_finite_loss::non_finite_loss(long at_step)
    : model_error("loss became non-finite at step " + std::to_string(at_step)), step(at_step) {}

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw model_error("bad model config: " + what); };
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0) fail("d_model must divide by heads");
    if (enc_layers <= 0 || dec_layers <= 0) fail("layer counts must be positive");
    if (ffn_size <= 0) fail("ffn_size must be positive");
    if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
    if (max_bars < 1) fail("max_bars must be at least 1");
    if (enc_mem_len < 0 || dec_mem_len < 0) fail("memory lengths must be non-negative");
    if (v1 < 2 || v2 < 1 || v3 < 1) fail("vocabulary sizes too small");
}

std::string config_to_json(const ModelConfig& c) {
    ordered_json j;
    j["d_model"] = c.d_model;
    j["enc_layers"] = c.enc_layers;
    j["dec_layers"] = c.dec_layers;
    j["heads"] = c.heads;
    j["ffn_size"] = c.ffn_size;
    j["dropout"] = c.dropout;
    j["max_bars"] = c.max_bars;
    j["enc_mem_len"] = c.enc_mem_len;
    j["dec_mem_len"] = c.dec_mem_len;
    j["v1"] = c.v1;
    j["v2"] = c.v2;
    j["v3"] = c.v3;
    j["sinusoidal_pos"] = c.sinusoidal_pos;
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    const auto j = ordered_json::parse(text);
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.heads = j.value("heads", c.heads);
    c.ffn_size = j.value("ffn_size", c.ffn_size);
    c.dropout = j.value("dropout", c.dropout);
    c.max_bars = j.value("max_bars", c.max_bars);
    c.enc_mem_len = j.value("enc_mem_len", c.enc_mem_len);
    c.dec_mem_len = j.value("dec_mem_len", c.dec_mem_len);
    c.v1 = j.value("v1", c.v1);
    c.v2 = j.value("v2", c.v2);
    c.v3 = j.value("v3", c.v3);
    c.sinusoidal_pos = j.value("sinusoidal_pos", c.sinusoidal_pos);
    c.validate();
    return c;
}

std::map<std::string, long long> param_breakdown(const ModelConfig& c) {
    const long long d = c.d_model, f = c.ffn_size;
    const long long attn = 4 * d * d + 4 * d;
    const long long ln = 2 * d;
    const long long ffn = 2 * d * f + f + d;
    const long long enc_layer = attn + ffn + 2 * ln;
    const long long dec_layer = enc_layer + attn + ln;
    std::map<std::string, long long> out;
    out["embeddings"] = (c.v1 + c.v2 + c.v3 + c.max_bars + 33 + 3) * d;
    // A zero-layer stack degenerates to no block at all (no final norm).
    out["encoder"] = c.enc_layers > 0 ? c.enc_layers * enc_layer + ln : 0;
    out["decoder"] = c.dec_layers > 0 ? c.dec_layers * dec_layer + ln : 0;
    out["heads"] = (d * c.v1 + c.v1) + (d * c.v2 + c.v2) + (d * c.v3 + c.v3);
    out["total"] = out["embeddings"] + out["encoder"] + out["decoder"] + out["heads"];
    return out;
}

long long param_count(const ModelConfig& c) { return param_breakdown(c).at("total"); }

double mean_loss(const std::vector<StepLoss>& losses) {
    if (losses.empty()) return 0.0;
    double s = 0.0;
    for (const auto& l : losses) s += l.total();
    return s / double(losses.size());
}

// ----- parameter registration ---------------------------------------------

Model::Model(ModelConfig config) : cfg(config) {
    cfg.validate();
    const int d = cfg.d_model, f = cfg.ffn_size;
    auto add = [&](const std::string& name, int r, int c) { params.emplace(name, Tensor(r, c)); };
    auto add_ln = [&](const std::string& pfx) {
        add(pfx + ".g", 1, d);
        add(pfx + ".b", 1, d);
    };
    auto add_attn = [&](const std::string& pfx) {
        for (const char* w : {"wq", "wk", "wv", "wo"}) add(pfx + "." + w, d, d);
        for (const char* b : {"bq", "bk", "bv", "bo"}) add(pfx + "." + b, 1, d);
    };
    auto add_ffn = [&](const std::string& pfx) {
        add(pfx + ".w1", d, f);
        add(pfx + ".b1", 1, f);
        add(pfx + ".w2", f, d);
        add(pfx + ".b2", 1, d);
    };

    add("embed.token", cfg.v1, d);
    add("embed.vel", cfg.v2, d);
    add("embed.dur", cfg.v3, d);
    add("embed.bar", cfg.max_bars, d);
    add("embed.pos", 33, d);  // row 0: before any position in the bar
    add("embed.meta", 3, d);
    for (int i = 0; i < cfg.enc_layers; ++i) {
        const std::string pfx = "enc." + std::to_string(i);
        add_ln(pfx + ".ln1");
        add_attn(pfx + ".attn");
        add_ln(pfx + ".ln2");
        add_ffn(pfx + ".ffn");
    }
    add_ln("enc.final_ln");
    for (int i = 0; i < cfg.dec_layers; ++i) {
        const std::string pfx = "dec." + std::to_string(i);
        add_ln(pfx + ".ln1");
        add_attn(pfx + ".self");
        add_ln(pfx + ".ln2");
        add_attn(pfx + ".cross");
        add_ln(pfx + ".ln3");
        add_ffn(pfx + ".ffn");
    }
    add_ln("dec.final_ln");
    add("head.h1.w", d, cfg.v1);
    add("head.h1.b", 1, cfg.v1);
    add("head.h2.w", d, cfg.v2);
    add("head.h2.b", 1, cfg.v2);
    add("head.h3.w", d, cfg.v3);
    add("head.h3.b", 1, cfg.v3);
}

void Model::init_params(uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& [name, t] : params) {
        if (is_gain_leaf(name)) {
            std::fill(t.data.begin(), t.data.end(), 1.0);
        } else if (is_bias_leaf(name)) {
            t.zero();
        } else {
            for (double& v : t.data) v = normal002(rng);
        }
    }
}

ParamMap Model::make_grad_map() const {
    ParamMap g;
    for (const auto& [name, t] : params) g.emplace(name, Tensor(t.rows, t.cols));
    return g;
}

// ----- forward/backward machinery ------------------------------------------

struct Model::Passes {
    const Model& m;
    ParamMap* grads = nullptr;
    std::mt19937_64* rng = nullptr;  // dropout source (training only)

    const Tensor& P(const std::string& n) const { return m.params.at(n); }
    Tensor* G(const std::string& n) const { return grads ? &grads->at(n) : nullptr; }
    AttnP ap(const std::string& pfx) const {
        return {P(pfx + ".wq"), P(pfx + ".wk"), P(pfx + ".wv"), P(pfx + ".wo"),
                P(pfx + ".bq"), P(pfx + ".bk"), P(pfx + ".bv"), P(pfx + ".bo")};
    }
    AttnG ag(const std::string& pfx) const {
        return {G(pfx + ".wq"), G(pfx + ".wk"), G(pfx + ".wv"), G(pfx + ".wo"),
                G(pfx + ".bq"), G(pfx + ".bk"), G(pfx + ".bv"), G(pfx + ".bo")};
    }

    // --- embeddings ---
    void embed_row(double* row, int v1, int v2, int v3, int bar, int posrow, TempoClass tempo,
                   int abs_index) const {
        const int d = m.cfg.d_model;
        const Tensor& tok = P("embed.token");
        for (int j = 0; j < d; ++j) row[j] = tok[v1][j];
        if (v2 >= 0) {
            const Tensor &vel = P("embed.vel"), &dur = P("embed.dur");
            for (int j = 0; j < d; ++j) row[j] += vel[v2][j] + dur[v3][j];
        }
        const int barrow = std::min(bar, m.cfg.max_bars) - 1;
        const Tensor &barT = P("embed.bar"), &posT = P("embed.pos"), &metaT = P("embed.meta");
        for (int j = 0; j < d; ++j)
            row[j] += barT[barrow][j] + posT[posrow][j] + metaT[int(tempo)][j];
        if (m.cfg.sinusoidal_pos) {
            for (int j = 0; j < d; j += 2) {
                const double f = double(abs_index) / std::pow(10000.0, double(j) / d);
                row[j] += std::sin(f);
                if (j + 1 < d) row[j + 1] += std::cos(f);
            }
        }
    }

    Tensor embed_segment(const PreparedSeq& s, int lo, int hi) const {
        Tensor x(hi - lo, m.cfg.d_model);
        for (int t = lo; t < hi; ++t)
            embed_row(x[t - lo], s.v1[t], s.v2[t], s.v3[t], s.bar[t], s.posrow[t], s.tempo, t);
        return x;
    }

    void embed_segment_bwd(const PreparedSeq& s, int lo, int hi, const Tensor& dx) const {
        if (!grads) return;
        const int d = m.cfg.d_model;
        Tensor& tok = grads->at("embed.token");
        Tensor& vel = grads->at("embed.vel");
        Tensor& dur = grads->at("embed.dur");
        Tensor& barT = grads->at("embed.bar");
        Tensor& posT = grads->at("embed.pos");
        Tensor& metaT = grads->at("embed.meta");
        for (int t = lo; t < hi; ++t) {
            const double* row = dx[t - lo];
            const int barrow = std::min(s.bar[t], m.cfg.max_bars) - 1;
            for (int j = 0; j < d; ++j) {
                tok[s.v1[t]][j] += row[j];
                if (s.v2[t] >= 0) {
                    vel[s.v2[t]][j] += row[j];
                    dur[s.v3[t]][j] += row[j];
                }
                barT[barrow][j] += row[j];
                posT[s.posrow[t]][j] += row[j];
                metaT[int(s.tempo)][j] += row[j];
            }
        }
    }

    // --- self-attention sublayer (pre-LN, stop-gradient memory) ---
    struct SelfCache {
        Tensor hcat;  // [mem ‖ x]
        LNCache ln;
        Tensor nrm;
        AttnCache attn;
        Tensor drop;
        int mem_rows = 0;
    };

    Tensor self_fwd(const std::string& lnp, const std::string& atp, const Tensor& x,
                    const Tensor& mem, SelfCache& c) const {
        c.mem_rows = mem.rows;
        c.hcat = Tensor::vcat(mem, x);
        c.nrm = ln_fwd(c.hcat, P(lnp + ".g"), P(lnp + ".b"), c.ln);
        const Tensor q_in = c.nrm.slice_rows(c.mem_rows, c.nrm.rows);
        Tensor out = attn_fwd(m.cfg.heads, ap(atp), q_in, c.nrm, true, c.mem_rows, c.attn);
        dropout_fwd(out, m.cfg.dropout, rng, c.drop);
        add_inplace(out, x);
        return out;
    }

    // Gradients flow to all parameters (memory rows included) but not out of
    // the memory rows themselves.
    Tensor self_bwd(const std::string& lnp, const std::string& atp, const SelfCache& c,
                    const Tensor& dy) const {
        const Tensor dout = dropout_bwd(dy, c.drop);
        const Tensor q_in = c.nrm.slice_rows(c.mem_rows, c.nrm.rows);
        const AttnG g = ag(atp);
        auto [dq_in, dkv_in] =
            attn_bwd(m.cfg.heads, ap(atp), grads ? &g : nullptr, q_in, c.nrm, dout, c.attn);
        for (int r = 0; r < dq_in.rows; ++r)
            for (int j = 0; j < dq_in.cols; ++j) dkv_in[c.mem_rows + r][j] += dq_in[r][j];
        const Tensor dhcat = ln_bwd(dkv_in, P(lnp + ".g"), c.ln, G(lnp + ".g"), G(lnp + ".b"));
        Tensor dx = dhcat.slice_rows(c.mem_rows, dhcat.rows);  // memory rows dropped
        add_inplace(dx, dy);                                   // residual
        return dx;
    }

    // --- cross-attention sublayer ---
    // A decoder bar without an encoder bar attends a single all-zero context
    // row (the documented fallback), so the sublayer always runs.
    struct CrossCache {
        bool sentinel = false;
        Tensor zero;  // the fallback context when sentinel
        LNCache ln;
        Tensor nrm;
        AttnCache attn;
        Tensor drop;
    };

    Tensor cross_fwd(const std::string& lnp, const std::string& atp, const Tensor& x,
                     const Tensor* cbar, CrossCache& c) const {
        c.sentinel = cbar == nullptr || cbar->rows == 0;
        if (c.sentinel) c.zero = Tensor(1, m.cfg.d_model);
        const Tensor& kv = c.sentinel ? c.zero : *cbar;
        c.nrm = ln_fwd(x, P(lnp + ".g"), P(lnp + ".b"), c.ln);
        Tensor out = attn_fwd(m.cfg.heads, ap(atp), c.nrm, kv, false, 0, c.attn);
        dropout_fwd(out, m.cfg.dropout, rng, c.drop);
        add_inplace(out, x);
        return out;
    }

    Tensor cross_bwd(const std::string& lnp, const std::string& atp, const CrossCache& c,
                     const Tensor* cbar, const Tensor& dy, Tensor* dcbar) const {
        const Tensor& kv = c.sentinel ? c.zero : *cbar;
        const Tensor dout = dropout_bwd(dy, c.drop);
        const AttnG g = ag(atp);
        auto [dq_in, dkv_in] =
            attn_bwd(m.cfg.heads, ap(atp), grads ? &g : nullptr, c.nrm, kv, dout, c.attn);
        if (!c.sentinel && dcbar) add_inplace(*dcbar, dkv_in);
        Tensor dx = ln_bwd(dq_in, P(lnp + ".g"), c.ln, G(lnp + ".g"), G(lnp + ".b"));
        add_inplace(dx, dy);
        return dx;
    }

    // --- feed-forward sublayer ---
    struct FfnCache {
        LNCache ln;
        Tensor nrm, pre, act, drop;
    };

    Tensor ffn_fwd(const std::string& lnp, const std::string& fpx, const Tensor& x,
                   FfnCache& c) const {
        c.nrm = ln_fwd(x, P(lnp + ".g"), P(lnp + ".b"), c.ln);
        c.pre = linear(c.nrm, P(fpx + ".w1"), P(fpx + ".b1"));
        c.act = Tensor(c.pre.rows, c.pre.cols);
        kernels::gelu(c.act, c.pre);
        Tensor out = linear(c.act, P(fpx + ".w2"), P(fpx + ".b2"));
        dropout_fwd(out, m.cfg.dropout, rng, c.drop);
        add_inplace(out, x);
        return out;
    }

    Tensor ffn_bwd(const std::string& lnp, const std::string& fpx, const FfnCache& c,
                   const Tensor& dy) const {
        const Tensor dout = dropout_bwd(dy, c.drop);
        const Tensor dact = linear_bwd(c.act, P(fpx + ".w2"), dout, G(fpx + ".w2"), G(fpx + ".b2"));
        Tensor dpre(dact.rows, dact.cols);
        kernels::gelu_backward(dpre, dact, c.pre);
        const Tensor dnrm =
            linear_bwd(c.nrm, P(fpx + ".w1"), dpre, G(fpx + ".w1"), G(fpx + ".b1"));
        Tensor dx = ln_bwd(dnrm, P(lnp + ".g"), c.ln, G(lnp + ".g"), G(lnp + ".b"));
        add_inplace(dx, dy);
        return dx;
    }

    // --- encoder segment ---
    struct EncSegCache {
        std::vector<Tensor> xin;  // per-layer segment inputs (memory source)
        std::vector<SelfCache> self;
        std::vector<FfnCache> ffn;
        Tensor xfin;
        LNCache fln;
    };

    Tensor enc_fwd(Tensor x, const std::vector<Tensor>& mems, EncSegCache& c) const {
        const int L = m.cfg.enc_layers;
        c.xin.resize(L);
        c.self.resize(L);
        c.ffn.resize(L);
        for (int l = 0; l < L; ++l) {
            const std::string pfx = "enc." + std::to_string(l);
            c.xin[l] = x;
            x = self_fwd(pfx + ".ln1", pfx + ".attn", x, mems[l], c.self[l]);
            x = ffn_fwd(pfx + ".ln2", pfx + ".ffn", x, c.ffn[l]);
        }
        c.xfin = x;
        return ln_fwd(c.xfin, P("enc.final_ln.g"), P("enc.final_ln.b"), c.fln);
    }

    Tensor enc_bwd(const EncSegCache& c, const Tensor& dC) const {
        Tensor dx =
            ln_bwd(dC, P("enc.final_ln.g"), c.fln, G("enc.final_ln.g"), G("enc.final_ln.b"));
        for (int l = m.cfg.enc_layers - 1; l >= 0; --l) {
            const std::string pfx = "enc." + std::to_string(l);
            dx = ffn_bwd(pfx + ".ln2", pfx + ".ffn", c.ffn[l], dx);
            dx = self_bwd(pfx + ".ln1", pfx + ".attn", c.self[l], dx);
        }
        return dx;
    }

    // --- decoder segment ---
    struct DecSegCache {
        std::vector<Tensor> xin;
        std::vector<SelfCache> self;
        std::vector<CrossCache> cross;
        std::vector<FfnCache> ffn;
        Tensor xfin;
        LNCache fln;
    };

    Tensor dec_fwd(Tensor x, const std::vector<Tensor>& mems, const Tensor* cbar,
                   DecSegCache& c) const {
        const int L = m.cfg.dec_layers;
        c.xin.resize(L);
        c.self.resize(L);
        c.cross.resize(L);
        c.ffn.resize(L);
        for (int l = 0; l < L; ++l) {
            const std::string pfx = "dec." + std::to_string(l);
            c.xin[l] = x;
            x = self_fwd(pfx + ".ln1", pfx + ".self", x, mems[l], c.self[l]);
            x = cross_fwd(pfx + ".ln2", pfx + ".cross", x, cbar, c.cross[l]);
            x = ffn_fwd(pfx + ".ln3", pfx + ".ffn", x, c.ffn[l]);
        }
        c.xfin = x;
        return ln_fwd(c.xfin, P("dec.final_ln.g"), P("dec.final_ln.b"), c.fln);
    }

    Tensor dec_bwd(const DecSegCache& c, const Tensor* cbar, const Tensor& dH,
                   Tensor* dcbar) const {
        Tensor dx =
            ln_bwd(dH, P("dec.final_ln.g"), c.fln, G("dec.final_ln.g"), G("dec.final_ln.b"));
        for (int l = m.cfg.dec_layers - 1; l >= 0; --l) {
            const std::string pfx = "dec." + std::to_string(l);
            dx = ffn_bwd(pfx + ".ln3", pfx + ".ffn", c.ffn[l], dx);
            dx = cross_bwd(pfx + ".ln2", pfx + ".cross", c.cross[l], cbar, dx, dcbar);
            dx = self_bwd(pfx + ".ln1", pfx + ".self", c.self[l], dx);
        }
        return dx;
    }

    // --- output heads over one decoder segment ---
    // H rows cover target steps starting at lo; row i predicts step lo+i+1.
    // inv_n scales dLogits so the accumulated gradient is of the mean step loss.
    void heads_segment(const Tensor& H, const PreparedSeq& tgt, int lo, double inv_n,
                       std::vector<StepLoss>& out, Tensor* dH,
                       Model::ForwardDetail* detail) const {
        const Tensor l1 = linear(H, P("head.h1.w"), P("head.h1.b"));
        const Tensor l2 = linear(H, P("head.h2.w"), P("head.h2.b"));
        const Tensor l3 = linear(H, P("head.h3.w"), P("head.h3.b"));
        Tensor d1(l1.rows, l1.cols), d2(l2.rows, l2.cols), d3(l3.rows, l3.cols);
        const bool want_grads = dH != nullptr && grads != nullptr;
        for (int i = 0; i < H.rows; ++i) {
            const int t = lo + i;
            if (t + 1 >= tgt.steps()) break;  // final step predicts nothing
            StepLoss sl;
            sl.h1 = ce_row(l1[i], l1.cols, tgt.v1[t + 1], want_grads ? d1[i] : nullptr, inv_n);
            if (is_note_id(tgt.v1[t + 1])) {
                sl.note = true;
                sl.h2 = ce_row(l2[i], l2.cols, tgt.v2[t + 1], want_grads ? d2[i] : nullptr, inv_n);
                sl.h3 = ce_row(l3[i], l3.cols, tgt.v3[t + 1], want_grads ? d3[i] : nullptr, inv_n);
            }
            out.push_back(sl);
        }
        if (want_grads) {
            add_inplace(*dH, linear_bwd(H, P("head.h1.w"), d1, G("head.h1.w"), G("head.h1.b")));
            add_inplace(*dH, linear_bwd(H, P("head.h2.w"), d2, G("head.h2.w"), G("head.h2.b")));
            add_inplace(*dH, linear_bwd(H, P("head.h3.w"), d3, G("head.h3.w"), G("head.h3.b")));
        }
        if (detail) {
            for (int i = 0; i < H.rows; ++i) {
                std::copy(l1[i], l1[i] + l1.cols, detail->h1_logits[lo + i]);
                std::copy(l2[i], l2[i] + l2.cols, detail->h2_logits[lo + i]);
                std::copy(l3[i], l3[i] + l3.cols, detail->h3_logits[lo + i]);
            }
        }
    }

    void roll_memory(std::vector<Tensor>& mems, const std::vector<Tensor>& xin, int cap) const {
        for (size_t l = 0; l < mems.size(); ++l)
            mems[l] = Tensor::tail_rows(Tensor::vcat(mems[l], xin[l]), cap);
    }

    // --- the full teacher-forced pass (segment-recurrent, one bar at a time) ---
    std::vector<StepLoss> run_pair(const PreparedSeq& cond, const PreparedSeq& tgt,
                                   Model::ForwardDetail* detail) const {
        std::vector<StepLoss> losses;
        if (tgt.steps() == 0) return losses;
        const double inv_n = tgt.steps() > 1 ? 1.0 / double(tgt.steps() - 1) : 0.0;
        std::vector<Tensor> enc_mems(m.cfg.enc_layers), dec_mems(m.cfg.dec_layers);
        if (detail) {
            detail->h1_logits = Tensor(tgt.steps(), m.cfg.v1);
            detail->h2_logits = Tensor(tgt.steps(), m.cfg.v2);
            detail->h3_logits = Tensor(tgt.steps(), m.cfg.v3);
        }
        for (int i = 0; i < tgt.bars(); ++i) {
            const bool has_cond = i < cond.bars();
            EncSegCache ec;
            Tensor c_bar;
            std::pair<int, int> cseg{0, 0};
            if (has_cond) {
                cseg = cond.segment(i);
                c_bar = enc_fwd(embed_segment(cond, cseg.first, cseg.second), enc_mems, ec);
            }
            const auto [lo, hi] = tgt.segment(i);
            DecSegCache dc;
            const Tensor x0 = embed_segment(tgt, lo, hi);
            const Tensor h = dec_fwd(x0, dec_mems, has_cond ? &c_bar : nullptr, dc);
            Tensor dh(h.rows, h.cols);
            heads_segment(h, tgt, lo, inv_n, losses, grads ? &dh : nullptr, detail);
            if (grads) {
                Tensor dcbar = has_cond ? Tensor(c_bar.rows, c_bar.cols) : Tensor();
                const Tensor dx0 =
                    dec_bwd(dc, has_cond ? &c_bar : nullptr, dh, has_cond ? &dcbar : nullptr);
                embed_segment_bwd(tgt, lo, hi, dx0);
                if (has_cond) {
                    const Tensor dxe = enc_bwd(ec, dcbar);
                    embed_segment_bwd(cond, cseg.first, cseg.second, dxe);
                }
            }
            if (has_cond) roll_memory(enc_mems, ec.xin, m.cfg.enc_mem_len);
            roll_memory(dec_mems, dc.xin, m.cfg.dec_mem_len);
        }
        return losses;
    }
};

// ----- public entry points --------------------------------------------------

std::vector<StepLoss> Model::teacher_forced_pass(const PreparedSeq& cond, const PreparedSeq& tgt,
                                                 ParamMap* grads,
                                                 std::mt19937_64* dropout_rng) const {
    Passes ps{*this, grads, cfg.dropout > 0.0 ? dropout_rng : nullptr};
    return ps.run_pair(cond, tgt, nullptr);
}

Model::ForwardDetail Model::forward_detail(const PreparedSeq& cond, const PreparedSeq& tgt) const {
    Passes ps{*this, nullptr, nullptr};
    ForwardDetail detail;
    detail.losses = ps.run_pair(cond, tgt, &detail);
    return detail;
}

EncodedCondition Model::encode_condition(const PreparedSeq& cond) const {
    Passes ps{*this, nullptr, nullptr};
    EncodedCondition out;
    std::vector<Tensor> mems(cfg.enc_layers);
    for (int i = 0; i < cond.bars(); ++i) {
        Passes::EncSegCache ec;
        const auto [lo, hi] = cond.segment(i);
        out.bars.push_back(ps.enc_fwd(ps.embed_segment(cond, lo, hi), mems, ec));
        ps.roll_memory(mems, ec.xin, cfg.enc_mem_len);
        out.mem_rows_after.push_back(mems.empty() ? 0 : mems[0].rows);
    }
    return out;
}

std::vector<StepLoss> Model::pass_with_frozen_memory(const Model& mem_source,
                                                     const PreparedSeq& cond,
                                                     const PreparedSeq& tgt) const {
    Passes live{*this, nullptr, nullptr};
    Passes frozen{mem_source, nullptr, nullptr};
    std::vector<StepLoss> losses;
    if (tgt.steps() == 0) return losses;
    const double inv_n = tgt.steps() > 1 ? 1.0 / double(tgt.steps() - 1) : 0.0;
    std::vector<Tensor> enc_mems(cfg.enc_layers), dec_mems(cfg.dec_layers);
    for (int i = 0; i < tgt.bars(); ++i) {
        const bool has_cond = i < cond.bars();
        Tensor c_bar, fc_bar;
        if (has_cond) {
            const auto [lo, hi] = cond.segment(i);
            Passes::EncSegCache ec;
            c_bar = live.enc_fwd(live.embed_segment(cond, lo, hi), enc_mems, ec);
            // Memory rolls are fed by the frozen side only, and the frozen
            // stream stays self-consistent (its own encoder contexts).
            Passes::EncSegCache fec;
            fc_bar = frozen.enc_fwd(frozen.embed_segment(cond, lo, hi), enc_mems, fec);
            live.roll_memory(enc_mems, fec.xin, cfg.enc_mem_len);
        }
        const auto [lo, hi] = tgt.segment(i);
        Passes::DecSegCache dc;
        const Tensor h = live.dec_fwd(live.embed_segment(tgt, lo, hi), dec_mems,
                                      has_cond ? &c_bar : nullptr, dc);
        live.heads_segment(h, tgt, lo, inv_n, losses, nullptr, nullptr);
        Passes::DecSegCache fdc;
        frozen.dec_fwd(frozen.embed_segment(tgt, lo, hi), dec_mems, has_cond ? &fc_bar : nullptr,
                       fdc);
        live.roll_memory(dec_mems, fdc.xin, cfg.dec_mem_len);
    }
    return losses;
}

// Single full-context causal pass: no segmentation, no memory caps; cross
// attention is still restricted to the condition rows of each step's bar.
// Serves as the equivalence oracle for the segment-recurrent pass.
std::vector<StepLoss> Model::full_context_pass(const PreparedSeq& cond,
                                               const PreparedSeq& tgt) const {
    Passes ps{*this, nullptr, nullptr};
    std::vector<StepLoss> losses;
    if (tgt.steps() == 0) return losses;

    // Encoder over the whole condition at once.
    Tensor c_full;
    if (cond.steps() > 0) {
        Passes::EncSegCache ec;
        const std::vector<Tensor> no_mem(cfg.enc_layers);
        c_full = ps.enc_fwd(ps.embed_segment(cond, 0, cond.steps()), no_mem, ec);
    }
    // Per-bar views into the encoder output.
    std::vector<Tensor> c_bars;
    for (int i = 0; i < cond.bars(); ++i) {
        const auto [lo, hi] = cond.segment(i);
        c_bars.push_back(c_full.slice_rows(lo, hi));
    }

    // Decoder over the whole target; the cross sublayer runs row by row so
    // each step only sees its own bar's condition rows.
    Tensor x = ps.embed_segment(tgt, 0, tgt.steps());
    const Tensor empty_mem;
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const std::string pfx = "dec." + std::to_string(l);
        Passes::SelfCache sc;
        x = ps.self_fwd(pfx + ".ln1", pfx + ".self", x, empty_mem, sc);
        Tensor after_cross = x;
        for (int t = 0; t < tgt.steps(); ++t) {
            const int bar_idx = tgt.bar[t] - 1;
            const Tensor* cb = bar_idx < int(c_bars.size()) ? &c_bars[bar_idx] : nullptr;
            Passes::CrossCache cc;
            const Tensor row = ps.cross_fwd(pfx + ".ln2", pfx + ".cross", x.slice_rows(t, t + 1),
                                            cb, cc);
            std::copy(row[0], row[0] + row.cols, after_cross[t]);
        }
        x = after_cross;
        Passes::FfnCache fc;
        x = ps.ffn_fwd(pfx + ".ln3", pfx + ".ffn", x, fc);
    }
    LNCache fln;
    const Tensor h = ln_fwd(x, ps.P("dec.final_ln.g"), ps.P("dec.final_ln.b"), fln);
    const double inv_n = tgt.steps() > 1 ? 1.0 / double(tgt.steps() - 1) : 0.0;
    ps.heads_segment(h, tgt, 0, inv_n, losses, nullptr, nullptr);
    return losses;
}

// ----- incremental decoding --------------------------------------------------

struct Model::IncrementalDecoder::Impl {
    const Model& m;
    Model::Passes ps;
    EncodedCondition cond;
    TempoClass tempo;
    int cur_bar = 0;
    int abs_index = 0;

    std::vector<Tensor> mems;                // per layer, capped layer inputs
    std::vector<Tensor> seg_xin;             // per layer, open segment inputs
    std::vector<Tensor> selfK, selfV;        // memory-prefixed keys/values
    std::vector<Tensor> crossK, crossV;      // for the open bar
    const Tensor* cross_bar = nullptr;       // encoder rows of the open bar

    Impl(const Model& model, EncodedCondition c, TempoClass tc)
        : m(model), ps{model, nullptr, nullptr}, cond(std::move(c)), tempo(tc),
          mems(model.cfg.dec_layers), seg_xin(model.cfg.dec_layers),
          selfK(model.cfg.dec_layers), selfV(model.cfg.dec_layers),
          crossK(model.cfg.dec_layers), crossV(model.cfg.dec_layers) {}

    void open_segment(int bar) {
        const int L = m.cfg.dec_layers;
        for (int l = 0; l < L; ++l) {
            mems[l] = Tensor::tail_rows(Tensor::vcat(mems[l], seg_xin[l]), m.cfg.dec_mem_len);
            seg_xin[l] = Tensor();
            const std::string pfx = "dec." + std::to_string(l);
            if (mems[l].rows > 0) {
                LNCache ln;
                const Tensor nrm = ln_fwd(mems[l], ps.P(pfx + ".ln1.g"), ps.P(pfx + ".ln1.b"), ln);
                selfK[l] = linear(nrm, ps.P(pfx + ".self.wk"), ps.P(pfx + ".self.bk"));
                selfV[l] = linear(nrm, ps.P(pfx + ".self.wv"), ps.P(pfx + ".self.bv"));
            } else {
                selfK[l] = Tensor();
                selfV[l] = Tensor();
            }
        }
        cross_bar = bar - 1 < int(cond.bars.size()) ? &cond.bars[bar - 1] : nullptr;
        const Tensor zero(1, m.cfg.d_model);  // fallback context for uncovered bars
        const Tensor& kv = cross_bar ? *cross_bar : zero;
        for (int l = 0; l < L; ++l) {
            const std::string pfx = "dec." + std::to_string(l) + ".cross";
            crossK[l] = linear(kv, ps.P(pfx + ".wk"), ps.P(pfx + ".bk"));
            crossV[l] = linear(kv, ps.P(pfx + ".wv"), ps.P(pfx + ".bv"));
        }
        cur_bar = bar;
    }

    // One attention query row against prebuilt keys/values.
    Tensor attend_row(const Tensor& q, const Tensor& K, const Tensor& V, const Tensor& wo,
                      const Tensor& bo) const {
        const int d = m.cfg.d_model, heads = m.cfg.heads, dh = d / heads;
        const double scale = 1.0 / std::sqrt(double(dh));
        Tensor ctx(1, d);
        for (int h = 0; h < heads; ++h) {
            const Tensor qh = take_cols(q, h * dh, dh);
            const Tensor kh = take_cols(K, h * dh, dh);
            const Tensor vh = take_cols(V, h * dh, dh);
            Tensor s(1, kh.rows);
            kernels::matmul_nt(s, qh, kh);
            for (int j = 0; j < s.cols; ++j) s[0][j] *= scale;
            kernels::softmax_rows(s);
            Tensor ch(1, dh);
            kernels::matmul(ch, s, vh);
            put_cols(ctx, h * dh, ch);
        }
        return linear(ctx, wo, bo);
    }

    HeadLogits step(int v1, int v2, int v3, int bar, int posrow) {
        if (bar != cur_bar) open_segment(bar);
        Tensor x(1, m.cfg.d_model);
        ps.embed_row(x[0], v1, v2, v3, bar, posrow, tempo, abs_index);
        ++abs_index;
        for (int l = 0; l < m.cfg.dec_layers; ++l) {
            const std::string pfx = "dec." + std::to_string(l);
            seg_xin[l] = Tensor::vcat(seg_xin[l], x);
            // Self-attention: project this row, append its key/value, attend
            // over everything cached so far (causality is implicit).
            LNCache ln;
            const Tensor nrm = ln_fwd(x, ps.P(pfx + ".ln1.g"), ps.P(pfx + ".ln1.b"), ln);
            selfK[l] = Tensor::vcat(
                selfK[l], linear(nrm, ps.P(pfx + ".self.wk"), ps.P(pfx + ".self.bk")));
            selfV[l] = Tensor::vcat(
                selfV[l], linear(nrm, ps.P(pfx + ".self.wv"), ps.P(pfx + ".self.bv")));
            const Tensor q = linear(nrm, ps.P(pfx + ".self.wq"), ps.P(pfx + ".self.bq"));
            add_inplace(x, attend_row(q, selfK[l], selfV[l], ps.P(pfx + ".self.wo"),
                                      ps.P(pfx + ".self.bo")));
            LNCache ln2;
            const Tensor nrm2 = ln_fwd(x, ps.P(pfx + ".ln2.g"), ps.P(pfx + ".ln2.b"), ln2);
            const Tensor q2 = linear(nrm2, ps.P(pfx + ".cross.wq"), ps.P(pfx + ".cross.bq"));
            add_inplace(x, attend_row(q2, crossK[l], crossV[l], ps.P(pfx + ".cross.wo"),
                                      ps.P(pfx + ".cross.bo")));
            Model::Passes::FfnCache fc;
            x = ps.ffn_fwd(pfx + ".ln3", pfx + ".ffn", x, fc);
        }
        LNCache fln;
        const Tensor h = ln_fwd(x, ps.P("dec.final_ln.g"), ps.P("dec.final_ln.b"), fln);
        const Tensor l1 = linear(h, ps.P("head.h1.w"), ps.P("head.h1.b"));
        const Tensor l2 = linear(h, ps.P("head.h2.w"), ps.P("head.h2.b"));
        const Tensor l3 = linear(h, ps.P("head.h3.w"), ps.P("head.h3.b"));
        HeadLogits out;
        out.h1.assign(l1[0], l1[0] + l1.cols);
        out.h2.assign(l2[0], l2[0] + l2.cols);
        out.h3.assign(l3[0], l3[0] + l3.cols);
        return out;
    }
};

Model::IncrementalDecoder::IncrementalDecoder(const Model& m, EncodedCondition cond,
                                              TempoClass tempo)
    : impl(std::make_unique<Impl>(m, std::move(cond), tempo)) {}
Model::IncrementalDecoder::~IncrementalDecoder() = default;
Model::IncrementalDecoder::IncrementalDecoder(IncrementalDecoder&&) noexcept = default;

HeadLogits Model::IncrementalDecoder::step(int v1, int v2, int v3, int bar, int posrow) {
    return impl->step(v1, v2, v3, bar, posrow);
}

}  // namespace popmag
