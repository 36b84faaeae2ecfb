#include "xccd/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "xccd/kernels.hpp"

namespace xccd::backend {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kMaskValue = -1e30;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

struct LayerParams {
    std::vector<double> wq, wk, wv, wo;              // d x d
    std::vector<double> w1;                          // ff x d
    std::vector<double> w2;                          // d x ff
    std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;  // d
};

struct Params {
    std::vector<double> tok;  // V x d
    std::vector<double> pos;  // block x d
    std::vector<LayerParams> layers;
    std::vector<double> lnf_g, lnf_b;  // d
    std::vector<double> w_lm;          // V x d
};

struct LayerActs {
    std::vector<double> x_in;                // T x d
    std::vector<double> ln1_out;             // T x d
    std::vector<double> ln1_mean, ln1_rstd;  // T
    std::vector<double> q, k, v;             // T x d
    std::vector<double> att;                 // H x T x T (softmax probs)
    std::vector<double> ctx;                 // T x d
    std::vector<double> x_mid;               // T x d
    std::vector<double> ln2_out;             // T x d
    std::vector<double> ln2_mean, ln2_rstd;  // T
    std::vector<double> f1;                  // T x ff (pre-activation)
    std::vector<double> g;                   // T x ff
    std::vector<double> x_out;               // T x d
    // per-target caches for the adapter path
    std::map<std::string, std::vector<double>> lora_in;    // dropped input, T x d_in
    std::map<std::string, std::vector<double>> lora_mid;   // input * A^T, T x r
    std::map<std::string, std::vector<double>> lora_mask;  // dropout multipliers, T x d_in
};

struct Acts {
    int T = 0;
    std::vector<double> x0;
    std::vector<LayerActs> layers;
    std::vector<double> lnf_out;             // T x d
    std::vector<double> lnf_mean, lnf_rstd;  // T
    std::vector<double> probs;               // T x V
};

void layernorm_forward(const std::vector<double>& x, const std::vector<double>& g,
                       const std::vector<double>& b, int T, int d, std::vector<double>& y,
                       std::vector<double>& mean, std::vector<double>& rstd) {
    y.resize(static_cast<std::size_t>(T) * d);
    mean.resize(T);
    rstd.resize(T);
    for (int t = 0; t < T; ++t) {
        const double* row = x.data() + static_cast<std::size_t>(t) * d;
        double m = 0.0;
        for (int j = 0; j < d; ++j) m += row[j];
        m /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = row[j] - m;
            var += c * c;
        }
        var /= d;
        const double rs = 1.0 / std::sqrt(var + kLnEps);
        mean[t] = m;
        rstd[t] = rs;
        double* out = y.data() + static_cast<std::size_t>(t) * d;
        for (int j = 0; j < d; ++j) out[j] = (row[j] - m) * rs * g[j] + b[j];
    }
}

void layernorm_backward(const std::vector<double>& dy, const std::vector<double>& x,
                        const std::vector<double>& g, const std::vector<double>& mean,
                        const std::vector<double>& rstd, int T, int d, std::vector<double>& dx) {
    for (int t = 0; t < T; ++t) {
        const double* dyr = dy.data() + static_cast<std::size_t>(t) * d;
        const double* xr = x.data() + static_cast<std::size_t>(t) * d;
        double* dxr = dx.data() + static_cast<std::size_t>(t) * d;
        double m1 = 0.0;
        double m2 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double xhat = (xr[j] - mean[t]) * rstd[t];
            const double dxhat = dyr[j] * g[j];
            m1 += dxhat;
            m2 += dxhat * xhat;
        }
        m1 /= d;
        m2 /= d;
        for (int j = 0; j < d; ++j) {
            const double xhat = (xr[j] - mean[t]) * rstd[t];
            const double dxhat = dyr[j] * g[j];
            dxr[j] += rstd[t] * (dxhat - m1 - xhat * m2);
        }
    }
}

}  // namespace

struct ToyBackend::Impl {
    ToyConfig cfg;
    CharTokenizer tokenizer;
    Params p;
    std::optional<LoraAdapter> adapter;
    int V = 0;

    explicit Impl(ToyConfig c) : cfg(c) {
        V = tokenizer.vocab_size();
        Rng rng(cfg.seed);
        auto init = [&](std::vector<double>& w, std::size_t n) {
            w.resize(n);
            for (auto& v : w) v = rng.normal(0.0, cfg.init_std);
        };
        const auto d = static_cast<std::size_t>(cfg.dim);
        const auto ff = static_cast<std::size_t>(cfg.ff);
        init(p.tok, static_cast<std::size_t>(V) * d);
        init(p.pos, static_cast<std::size_t>(cfg.block_size) * d);
        p.layers.resize(cfg.layers);
        for (auto& l : p.layers) {
            init(l.wq, d * d);
            init(l.wk, d * d);
            init(l.wv, d * d);
            init(l.wo, d * d);
            init(l.w1, ff * d);
            init(l.w2, d * ff);
            l.ln1_g.assign(d, 1.0);
            l.ln1_b.assign(d, 0.0);
            l.ln2_g.assign(d, 1.0);
            l.ln2_b.assign(d, 0.0);
        }
        p.lnf_g.assign(d, 1.0);
        p.lnf_b.assign(d, 0.0);
        p.w_lm.resize(static_cast<std::size_t>(V) * d);
        for (auto& v : p.w_lm) v = rng.normal(0.0, cfg.lm_head_init_std);
    }

    // Applies y += scale * (dropout(x) A^T) B^T for the named target, caching
    // what the backward pass needs.
    void lora_forward(const std::string& name, const std::vector<double>& x, int T, int d_in,
                      int d_out, std::vector<double>& y, LayerActs* cache, Rng* dropout_rng) const {
        if (!adapter) return;
        auto it = adapter->targets.find(name);
        if (it == adapter->targets.end()) return;
        const auto& lt = it->second;
        const double scale = adapter->config.alpha / lt.r;
        const double p_drop = adapter->config.dropout;

        std::vector<double> dropped;
        const std::vector<double>* src = &x;
        std::vector<double> mask;
        if (dropout_rng != nullptr && p_drop > 0.0) {
            dropped.resize(x.size());
            mask.resize(x.size());
            const double keep = 1.0 - p_drop;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double m = dropout_rng->real() < p_drop ? 0.0 : 1.0 / keep;
                mask[i] = m;
                dropped[i] = x[i] * m;
            }
            src = &dropped;
        }

        std::vector<double> mid(static_cast<std::size_t>(T) * lt.r);
        kern::matmul_nt(mid.data(), src->data(), lt.a.data(), T, d_in, lt.r);
        std::vector<double> out(static_cast<std::size_t>(T) * d_out);
        kern::matmul_nt(out.data(), mid.data(), lt.b.data(), T, lt.r, d_out);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += scale * out[i];

        if (cache != nullptr) {
            cache->lora_in[name] = *src;
            cache->lora_mid[name] = std::move(mid);
            if (!mask.empty()) cache->lora_mask[name] = std::move(mask);
        }
    }

    // dy is the gradient at the linear's output; accumulates adapter grads and
    // dx += dy W_base + adapter path.
    void linear_backward(const std::string& name, const std::vector<double>& w,
                         const std::vector<double>& dy, int T, int d_in, int d_out,
                         std::vector<double>& dx, const LayerActs& cache,
                         ToyBackend::AdapterGrads* grads, double weight) const {
        {
            std::vector<double> tmp(static_cast<std::size_t>(T) * d_in);
            kern::matmul(tmp.data(), dy.data(), w.data(), T, d_out, d_in);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += tmp[i];
        }
        if (!adapter || grads == nullptr) return;
        auto it = adapter->targets.find(name);
        if (it == adapter->targets.end()) return;
        const auto& lt = it->second;
        const double scale = adapter->config.alpha / lt.r;

        const auto& xin = cache.lora_in.at(name);
        const auto& mid = cache.lora_mid.at(name);

        auto& gt = (*grads)[name];
        if (gt.a.empty()) {
            gt.r = lt.r;
            gt.d_in = lt.d_in;
            gt.d_out = lt.d_out;
            gt.a.assign(lt.a.size(), 0.0);
            gt.b.assign(lt.b.size(), 0.0);
        }

        // dB = scale * dy^T mid
        std::vector<double> db(lt.b.size());
        kern::matmul_tn(db.data(), dy.data(), mid.data(), d_out, T, lt.r);
        for (std::size_t i = 0; i < db.size(); ++i) gt.b[i] += weight * scale * db[i];

        // dmid = scale * dy B
        std::vector<double> dmid(static_cast<std::size_t>(T) * lt.r);
        kern::matmul(dmid.data(), dy.data(), lt.b.data(), T, d_out, lt.r);
        for (auto& v : dmid) v *= scale;

        // dA = dmid^T x_in
        std::vector<double> da(lt.a.size());
        kern::matmul_tn(da.data(), dmid.data(), xin.data(), lt.r, T, d_in);
        for (std::size_t i = 0; i < da.size(); ++i) gt.a[i] += weight * da[i];

        // dx += dmid A, through the dropout mask when one was sampled
        std::vector<double> dxl(static_cast<std::size_t>(T) * d_in);
        kern::matmul(dxl.data(), dmid.data(), lt.a.data(), T, lt.r, d_in);
        auto mit = cache.lora_mask.find(name);
        if (mit != cache.lora_mask.end()) {
            for (std::size_t i = 0; i < dxl.size(); ++i) dx[i] += dxl[i] * mit->second[i];
        } else {
            for (std::size_t i = 0; i < dxl.size(); ++i) dx[i] += dxl[i];
        }
    }

    void linear_forward(const std::string& name, const std::vector<double>& w,
                        const std::vector<double>& x, int T, int d_in, int d_out,
                        std::vector<double>& y, LayerActs* cache, Rng* dropout_rng) const {
        y.resize(static_cast<std::size_t>(T) * d_out);
        kern::matmul_nt(y.data(), x.data(), w.data(), T, d_in, d_out);
        lora_forward(name, x, T, d_in, d_out, y, cache, dropout_rng);
    }

    // Runs the transformer over the first T tokens of ids.
    void run_forward(const std::vector<int>& ids, int T, Acts& acts, Rng* dropout_rng) const {
        const int d = cfg.dim;
        const int H = cfg.heads;
        const int dh = d / H;
        const int ff = cfg.ff;
        const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

        acts.T = T;
        acts.x0.resize(static_cast<std::size_t>(T) * d);
        for (int t = 0; t < T; ++t) {
            const double* te = p.tok.data() + static_cast<std::size_t>(ids[t]) * d;
            const double* pe = p.pos.data() + static_cast<std::size_t>(t) * d;
            double* row = acts.x0.data() + static_cast<std::size_t>(t) * d;
            for (int j = 0; j < d; ++j) row[j] = te[j] + pe[j];
        }

        acts.layers.clear();
        acts.layers.resize(p.layers.size());
        const std::vector<double>* x = &acts.x0;
        for (std::size_t li = 0; li < p.layers.size(); ++li) {
            const auto& lp = p.layers[li];
            auto& la = acts.layers[li];
            const std::string prefix = "l" + std::to_string(li) + ".";
            la.x_in = *x;

            layernorm_forward(la.x_in, lp.ln1_g, lp.ln1_b, T, d, la.ln1_out, la.ln1_mean,
                              la.ln1_rstd);
            linear_forward(prefix + "wq", lp.wq, la.ln1_out, T, d, d, la.q, &la, dropout_rng);
            linear_forward(prefix + "wk", lp.wk, la.ln1_out, T, d, d, la.k, &la, dropout_rng);
            linear_forward(prefix + "wv", lp.wv, la.ln1_out, T, d, d, la.v, &la, dropout_rng);

            la.att.assign(static_cast<std::size_t>(H) * T * T, 0.0);
            la.ctx.assign(static_cast<std::size_t>(T) * d, 0.0);
            std::vector<double> qh(static_cast<std::size_t>(T) * dh);
            std::vector<double> kh(static_cast<std::size_t>(T) * dh);
            std::vector<double> vh(static_cast<std::size_t>(T) * dh);
            std::vector<double> ctxh(static_cast<std::size_t>(T) * dh);
            for (int h = 0; h < H; ++h) {
                for (int t = 0; t < T; ++t) {
                    const std::size_t src = static_cast<std::size_t>(t) * d + h * dh;
                    std::memcpy(&qh[static_cast<std::size_t>(t) * dh], &la.q[src],
                                sizeof(double) * dh);
                    std::memcpy(&kh[static_cast<std::size_t>(t) * dh], &la.k[src],
                                sizeof(double) * dh);
                    std::memcpy(&vh[static_cast<std::size_t>(t) * dh], &la.v[src],
                                sizeof(double) * dh);
                }
                double* att = la.att.data() + static_cast<std::size_t>(h) * T * T;
                kern::matmul_nt(att, qh.data(), kh.data(), T, dh, T);
                for (int i = 0; i < T; ++i) {
                    double* row = att + static_cast<std::size_t>(i) * T;
                    for (int j = 0; j <= i; ++j) row[j] *= att_scale;
                    for (int j = i + 1; j < T; ++j) row[j] = kMaskValue;
                }
                kern::softmax_rows(att, T, T);
                kern::matmul(ctxh.data(), att, vh.data(), T, T, dh);
                for (int t = 0; t < T; ++t) {
                    std::memcpy(&la.ctx[static_cast<std::size_t>(t) * d + h * dh],
                                &ctxh[static_cast<std::size_t>(t) * dh], sizeof(double) * dh);
                }
            }

            std::vector<double> attn_out;
            linear_forward(prefix + "wo", lp.wo, la.ctx, T, d, d, attn_out, &la, dropout_rng);
            la.x_mid.resize(static_cast<std::size_t>(T) * d);
            for (std::size_t i = 0; i < la.x_mid.size(); ++i) {
                la.x_mid[i] = la.x_in[i] + attn_out[i];
            }

            layernorm_forward(la.x_mid, lp.ln2_g, lp.ln2_b, T, d, la.ln2_out, la.ln2_mean,
                              la.ln2_rstd);
            linear_forward(prefix + "w1", lp.w1, la.ln2_out, T, d, ff, la.f1, &la, dropout_rng);
            la.g.resize(la.f1.size());
            for (std::size_t i = 0; i < la.f1.size(); ++i) la.g[i] = gelu(la.f1[i]);
            std::vector<double> mlp_out;
            linear_forward(prefix + "w2", lp.w2, la.g, T, ff, d, mlp_out, &la, dropout_rng);
            la.x_out.resize(static_cast<std::size_t>(T) * d);
            for (std::size_t i = 0; i < la.x_out.size(); ++i) {
                la.x_out[i] = la.x_mid[i] + mlp_out[i];
            }
            x = &la.x_out;
        }

        layernorm_forward(*x, p.lnf_g, p.lnf_b, T, d, acts.lnf_out, acts.lnf_mean, acts.lnf_rstd);

        acts.probs.resize(static_cast<std::size_t>(T) * V);
        kern::matmul_nt(acts.probs.data(), acts.lnf_out.data(), p.w_lm.data(), T, d, V);
        kern::softmax_rows(acts.probs.data(), T, V);
    }

    // Per-sequence mean NLL over supervised positions; optionally accumulates
    // adapter grads scaled by `weight`. Supervised positions need a prefix, so
    // position 0 never contributes.
    double loss_and_backward(const TokenizedSequence& seq, ToyBackend::AdapterGrads* grads,
                             double weight, Rng* dropout_rng) const {
        const int T = effective_length(seq);
        Acts acts;
        run_forward(seq.token_ids, T, acts, dropout_rng);

        std::vector<int> supervised;
        for (int t = 1; t < T; ++t) {
            if (seq.loss_mask[t] == 1 && seq.attention_mask[t] == 1) supervised.push_back(t);
        }
        if (supervised.empty()) {
            throw NoSupervisedPositions("lm_loss: no loss-masked positions with a prefix");
        }

        double loss = 0.0;
        for (int t : supervised) {
            const double p_target =
                acts.probs[static_cast<std::size_t>(t - 1) * V + seq.token_ids[t]];
            loss += -std::log(std::max(p_target, 1e-300));
        }
        loss /= static_cast<double>(supervised.size());
        if (grads == nullptr) return loss;

        const int d = cfg.dim;
        const int H = cfg.heads;
        const int dh = d / H;
        const int ff = cfg.ff;
        const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const double inv_n = 1.0 / static_cast<double>(supervised.size());

        // dlogits, expressed through probs
        std::vector<double> dlogits(static_cast<std::size_t>(T) * V, 0.0);
        for (int t : supervised) {
            const double* prow = acts.probs.data() + static_cast<std::size_t>(t - 1) * V;
            double* drow = dlogits.data() + static_cast<std::size_t>(t - 1) * V;
            for (int v = 0; v < V; ++v) drow[v] += prow[v] * inv_n;
            drow[seq.token_ids[t]] -= inv_n;
        }

        // lm head (frozen): d_lnf_out = dlogits W_lm
        std::vector<double> d_lnf(static_cast<std::size_t>(T) * d);
        kern::matmul(d_lnf.data(), dlogits.data(), p.w_lm.data(), T, V, d);

        const auto& last = acts.layers.back().x_out;
        std::vector<double> dx(static_cast<std::size_t>(T) * d, 0.0);
        layernorm_backward(d_lnf, last, p.lnf_g, acts.lnf_mean, acts.lnf_rstd, T, d, dx);

        for (int li = static_cast<int>(p.layers.size()) - 1; li >= 0; --li) {
            const auto& lp = p.layers[static_cast<std::size_t>(li)];
            const auto& la = acts.layers[static_cast<std::size_t>(li)];
            const std::string prefix = "l" + std::to_string(li) + ".";

            // residual 2: dx splits into the mlp branch and the carry
            std::vector<double> d_g(static_cast<std::size_t>(T) * ff, 0.0);
            linear_backward(prefix + "w2", lp.w2, dx, T, ff, d, d_g, la, grads, weight);
            std::vector<double> d_f1(d_g.size());
            for (std::size_t i = 0; i < d_g.size(); ++i) d_f1[i] = d_g[i] * gelu_grad(la.f1[i]);
            std::vector<double> d_ln2(static_cast<std::size_t>(T) * d, 0.0);
            linear_backward(prefix + "w1", lp.w1, d_f1, T, d, ff, d_ln2, la, grads, weight);
            // dx continues as d(x_mid) carry; add the layernorm path
            layernorm_backward(d_ln2, la.x_mid, lp.ln2_g, la.ln2_mean, la.ln2_rstd, T, d, dx);

            // residual 1: attention branch
            std::vector<double> d_ctx(static_cast<std::size_t>(T) * d, 0.0);
            linear_backward(prefix + "wo", lp.wo, dx, T, d, d, d_ctx, la, grads, weight);

            std::vector<double> d_q(static_cast<std::size_t>(T) * d, 0.0);
            std::vector<double> d_k(static_cast<std::size_t>(T) * d, 0.0);
            std::vector<double> d_v(static_cast<std::size_t>(T) * d, 0.0);
            std::vector<double> qh(static_cast<std::size_t>(T) * dh);
            std::vector<double> kh(static_cast<std::size_t>(T) * dh);
            std::vector<double> vh(static_cast<std::size_t>(T) * dh);
            std::vector<double> dctxh(static_cast<std::size_t>(T) * dh);
            std::vector<double> datt(static_cast<std::size_t>(T) * T);
            std::vector<double> ds(static_cast<std::size_t>(T) * T);
            std::vector<double> dqh(static_cast<std::size_t>(T) * dh);
            std::vector<double> dkh(static_cast<std::size_t>(T) * dh);
            std::vector<double> dvh(static_cast<std::size_t>(T) * dh);
            for (int h = 0; h < H; ++h) {
                for (int t = 0; t < T; ++t) {
                    const std::size_t src = static_cast<std::size_t>(t) * d + h * dh;
                    std::memcpy(&qh[static_cast<std::size_t>(t) * dh], &la.q[src],
                                sizeof(double) * dh);
                    std::memcpy(&kh[static_cast<std::size_t>(t) * dh], &la.k[src],
                                sizeof(double) * dh);
                    std::memcpy(&vh[static_cast<std::size_t>(t) * dh], &la.v[src],
                                sizeof(double) * dh);
                    std::memcpy(&dctxh[static_cast<std::size_t>(t) * dh], &d_ctx[src],
                                sizeof(double) * dh);
                }
                const double* att = la.att.data() + static_cast<std::size_t>(h) * T * T;
                kern::matmul_nt(datt.data(), dctxh.data(), vh.data(), T, dh, T);
                kern::matmul_tn(dvh.data(), att, dctxh.data(), T, T, dh);
                for (int i = 0; i < T; ++i) {
                    const double* arow = att + static_cast<std::size_t>(i) * T;
                    const double* darow = datt.data() + static_cast<std::size_t>(i) * T;
                    double dot = 0.0;
                    for (int j = 0; j < T; ++j) dot += arow[j] * darow[j];
                    double* dsrow = ds.data() + static_cast<std::size_t>(i) * T;
                    for (int j = 0; j < T; ++j) {
                        dsrow[j] = arow[j] * (darow[j] - dot) * att_scale;
                    }
                }
                kern::matmul(dqh.data(), ds.data(), kh.data(), T, T, dh);
                kern::matmul_tn(dkh.data(), ds.data(), qh.data(), T, T, dh);
                for (int t = 0; t < T; ++t) {
                    const std::size_t dst = static_cast<std::size_t>(t) * d + h * dh;
                    std::memcpy(&d_q[dst], &dqh[static_cast<std::size_t>(t) * dh],
                                sizeof(double) * dh);
                    std::memcpy(&d_k[dst], &dkh[static_cast<std::size_t>(t) * dh],
                                sizeof(double) * dh);
                    std::memcpy(&d_v[dst], &dvh[static_cast<std::size_t>(t) * dh],
                                sizeof(double) * dh);
                }
            }

            std::vector<double> d_ln1(static_cast<std::size_t>(T) * d, 0.0);
            linear_backward(prefix + "wq", lp.wq, d_q, T, d, d, d_ln1, la, grads, weight);
            linear_backward(prefix + "wk", lp.wk, d_k, T, d, d, d_ln1, la, grads, weight);
            linear_backward(prefix + "wv", lp.wv, d_v, T, d, d, d_ln1, la, grads, weight);
            layernorm_backward(d_ln1, la.x_in, lp.ln1_g, la.ln1_mean, la.ln1_rstd, T, d, dx);
            // dx now carries d(x_in) for the layer below
        }
        return loss;
    }

    static int effective_length(const TokenizedSequence& seq) {
        if (seq.token_ids.empty()) throw EmptySequence("forward: empty sequence");
        if (seq.attention_mask.size() != seq.token_ids.size() ||
            seq.loss_mask.size() != seq.token_ids.size()) {
            throw std::invalid_argument("TokenizedSequence: mask lengths differ from token_ids");
        }
        int t_eff = 0;
        bool seen_pad = false;
        for (std::size_t i = 0; i < seq.attention_mask.size(); ++i) {
            if (seq.attention_mask[i] == 1) {
                if (seen_pad) {
                    throw std::invalid_argument("attention_mask must be right-padded");
                }
                ++t_eff;
            } else {
                seen_pad = true;
            }
        }
        if (t_eff == 0) throw EmptySequence("forward: all-padding sequence");
        return t_eff;
    }
};

ToyBackend::ToyBackend(ToyConfig cfg) : impl_(std::make_unique<Impl>(cfg)) {
    if (cfg.dim % cfg.heads != 0) {
        throw std::invalid_argument("ToyConfig: dim must be divisible by heads");
    }
}

ToyBackend::~ToyBackend() = default;
ToyBackend::ToyBackend(ToyBackend&&) noexcept = default;
ToyBackend& ToyBackend::operator=(ToyBackend&&) noexcept = default;

int ToyBackend::dim() const { return impl_->cfg.dim; }
int ToyBackend::vocab_size() const { return impl_->V; }
int ToyBackend::max_len() const { return impl_->cfg.block_size; }

std::string ToyBackend::identity() const {
    std::ostringstream s;
    const auto& c = impl_->cfg;
    s << "toy(d=" << c.dim << ",h=" << c.heads << ",L=" << c.layers << ",ff=" << c.ff
      << ",block=" << c.block_size << ",seed=" << c.seed << ")";
    if (impl_->adapter) s << "+adapter";
    return s.str();
}

std::uint64_t ToyBackend::base_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](const std::vector<double>& v) {
        h = fnv1a_bytes(v.data(), v.size() * sizeof(double), h);
    };
    feed(impl_->p.tok);
    feed(impl_->p.pos);
    for (const auto& l : impl_->p.layers) {
        feed(l.wq);
        feed(l.wk);
        feed(l.wv);
        feed(l.wo);
        feed(l.w1);
        feed(l.w2);
        feed(l.ln1_g);
        feed(l.ln1_b);
        feed(l.ln2_g);
        feed(l.ln2_b);
    }
    feed(impl_->p.lnf_g);
    feed(impl_->p.lnf_b);
    feed(impl_->p.w_lm);
    return h;
}

const CharTokenizer& ToyBackend::tokenizer() const { return impl_->tokenizer; }
const ToyConfig& ToyBackend::config() const { return impl_->cfg; }

namespace {

// Chat layout shared by encode and encode_prompt. The assistant header is the
// generation anchor: the next token after it is the reply.
struct ChatSegments {
    std::vector<int> prefix;      // bos + optional system + user header
    std::vector<int> user;        // user content, left-truncatable
    std::vector<int> mid;         // assistant header
    std::vector<int> assistant;   // assistant content + eos (empty for prompts)
};

ChatSegments chat_segments(const CharTokenizer& tok, const std::optional<std::string>& system,
                           const std::string& user, const std::optional<std::string>& assistant) {
    ChatSegments s;
    s.prefix.push_back(CharTokenizer::kBos);
    if (system && !system->empty()) {
        auto ids = tok.encode("<system>\n" + *system + "\n");
        s.prefix.insert(s.prefix.end(), ids.begin(), ids.end());
    }
    auto uh = tok.encode("<user>\n");
    s.prefix.insert(s.prefix.end(), uh.begin(), uh.end());
    s.user = tok.encode(user);
    s.mid = tok.encode("\n<assistant>\n");
    if (assistant) {
        s.assistant = tok.encode(*assistant);
        s.assistant.push_back(CharTokenizer::kEos);
    }
    return s;
}

TokenizedSequence assemble(const ChatSegments& s, int max_len, LossMode loss_mode) {
    const std::size_t fixed = s.prefix.size() + s.mid.size() + s.assistant.size();
    if (fixed > static_cast<std::size_t>(max_len)) {
        throw AssistantTruncated("encode: assistant span does not fit even with empty user "
                                 "content (needs " +
                                 std::to_string(fixed) + ", max " + std::to_string(max_len) + ")");
    }
    const std::size_t user_keep =
        std::min(s.user.size(), static_cast<std::size_t>(max_len) - fixed);

    TokenizedSequence seq;
    seq.token_ids = s.prefix;
    seq.token_ids.insert(seq.token_ids.end(), s.user.end() - static_cast<long>(user_keep),
                         s.user.end());
    const std::size_t assistant_start = seq.token_ids.size() + s.mid.size();
    seq.token_ids.insert(seq.token_ids.end(), s.mid.begin(), s.mid.end());
    seq.token_ids.insert(seq.token_ids.end(), s.assistant.begin(), s.assistant.end());

    seq.attention_mask.assign(seq.token_ids.size(), 1);
    if (loss_mode == LossMode::full_loss) {
        seq.loss_mask.assign(seq.token_ids.size(), 1);
    } else {
        seq.loss_mask.assign(seq.token_ids.size(), 0);
        for (std::size_t i = assistant_start; i < seq.token_ids.size(); ++i) seq.loss_mask[i] = 1;
    }
    return seq;
}

}  // namespace

TokenizedSequence ToyBackend::encode(const RenderedExchange& exchange, int arg_max_len) const {
    std::optional<std::string> system;
    std::optional<std::string> user;
    std::optional<std::string> assistant;
    for (const auto& m : exchange.messages) {
        switch (m.role) {
            case Role::system: system = m.content; break;
            case Role::user: user = m.content; break;
            case Role::assistant: assistant = m.content; break;
        }
    }
    if (!user || !assistant || user->empty() || assistant->empty()) {
        throw std::invalid_argument("encode: exchange needs non-empty user and assistant turns");
    }
    const int cap = std::min(arg_max_len, impl_->cfg.block_size);
    auto segs = chat_segments(impl_->tokenizer, system, *user, assistant);
    return assemble(segs, cap, exchange.loss_mode);
}

TokenizedSequence ToyBackend::encode_prompt(const std::optional<std::string>& system,
                                            const std::string& user) const {
    auto segs = chat_segments(impl_->tokenizer, system, user, std::nullopt);
    auto seq = assemble(segs, impl_->cfg.block_size, LossMode::mask_prompt);
    std::fill(seq.loss_mask.begin(), seq.loss_mask.end(), 0);
    return seq;
}

ForwardResult ToyBackend::forward(const TokenizedSequence& seq) const {
    const int T = Impl::effective_length(seq);
    Acts acts;
    impl_->run_forward(seq.token_ids, T, acts, nullptr);

    ForwardResult r;
    r.hidden.T = static_cast<int>(seq.size());
    r.hidden.d = impl_->cfg.dim;
    r.hidden.data.assign(seq.size() * static_cast<std::size_t>(impl_->cfg.dim), 0.0);
    std::memcpy(r.hidden.data.data(), acts.lnf_out.data(),
                sizeof(double) * static_cast<std::size_t>(T) * impl_->cfg.dim);
    r.final_dist.assign(acts.probs.begin() + static_cast<std::size_t>(T - 1) * impl_->V,
                        acts.probs.begin() + static_cast<std::size_t>(T) * impl_->V);
    return r;
}

std::string ToyBackend::generate(const TokenizedSequence& seq, int max_new_tokens) const {
    if (max_new_tokens < 1) throw std::invalid_argument("generate: max_new_tokens must be >= 1");
    const int T0 = Impl::effective_length(seq);
    std::vector<int> ids(seq.token_ids.begin(), seq.token_ids.begin() + T0);
    std::vector<int> fresh;
    for (int step = 0; step < max_new_tokens; ++step) {
        std::vector<int> window = ids;
        if (window.size() > static_cast<std::size_t>(impl_->cfg.block_size)) {
            window.assign(ids.end() - impl_->cfg.block_size, ids.end());
        }
        Acts acts;
        impl_->run_forward(window, static_cast<int>(window.size()), acts, nullptr);
        const double* dist =
            acts.probs.data() + (window.size() - 1) * static_cast<std::size_t>(impl_->V);
        int best = 0;
        for (int v = 1; v < impl_->V; ++v) {
            if (dist[v] > dist[best]) best = v;
        }
        if (best == CharTokenizer::kEos) break;
        ids.push_back(best);
        fresh.push_back(best);
    }
    return impl_->tokenizer.decode(fresh);
}

double ToyBackend::lm_loss(const TokenizedSequence& seq) const {
    return impl_->loss_and_backward(seq, nullptr, 0.0, nullptr);
}

std::optional<int> ToyBackend::single_token(const std::string& literal) const {
    auto ids = impl_->tokenizer.encode(literal);
    if (ids.size() == 1) return ids[0];
    return std::nullopt;
}

std::size_t ToyBackend::count_tokens(const std::string& text) const {
    return impl_->tokenizer.encode(text).size();
}

void ToyBackend::attach_adapter(LoraAdapter adapter) { impl_->adapter = std::move(adapter); }
void ToyBackend::detach_adapter() { impl_->adapter.reset(); }
bool ToyBackend::has_adapter() const { return impl_->adapter.has_value(); }

const LoraAdapter& ToyBackend::adapter() const {
    if (!impl_->adapter) throw std::logic_error("no adapter attached");
    return *impl_->adapter;
}

LoraAdapter& ToyBackend::adapter_mut() {
    if (!impl_->adapter) throw std::logic_error("no adapter attached");
    return *impl_->adapter;
}

std::vector<std::string> ToyBackend::lora_target_names() const {
    std::vector<std::string> names;
    for (int li = 0; li < impl_->cfg.layers; ++li) {
        const std::string prefix = "l" + std::to_string(li) + ".";
        for (const char* n : {"wq", "wk", "wv", "wo", "w1", "w2"}) {
            names.push_back(prefix + n);
        }
    }
    return names;
}

LoraAdapter ToyBackend::init_adapter(const ToyConfig& cfg, const LoraConfig& lc,
                                     std::uint64_t seed) {
    if (lc.rank < 1) throw std::invalid_argument("LoraConfig: rank must be >= 1");
    LoraAdapter adapter;
    adapter.config = lc;
    Rng rng(seed);
    auto add = [&](const std::string& name, int d_in, int d_out) {
        LoraTensors t;
        t.r = lc.rank;
        t.d_in = d_in;
        t.d_out = d_out;
        t.a.resize(static_cast<std::size_t>(lc.rank) * d_in);
        for (auto& v : t.a) v = rng.normal(0.0, 0.02);
        t.b.assign(static_cast<std::size_t>(d_out) * lc.rank, 0.0);
        adapter.targets[name] = std::move(t);
    };
    for (int li = 0; li < cfg.layers; ++li) {
        const std::string prefix = "l" + std::to_string(li) + ".";
        add(prefix + "wq", cfg.dim, cfg.dim);
        add(prefix + "wk", cfg.dim, cfg.dim);
        add(prefix + "wv", cfg.dim, cfg.dim);
        add(prefix + "wo", cfg.dim, cfg.dim);
        add(prefix + "w1", cfg.dim, cfg.ff);
        add(prefix + "w2", cfg.ff, cfg.dim);
    }
    return adapter;
}

double ToyBackend::lm_loss_and_adapter_grads(const std::vector<TokenizedSequence>& batch,
                                             AdapterGrads& grads, Rng* dropout_rng) const {
    if (batch.empty()) throw std::invalid_argument("empty micro-batch");
    const double weight = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const auto& seq : batch) {
        loss += weight * impl_->loss_and_backward(seq, &grads, weight, dropout_rng);
    }
    return loss;
}

// --- adapter serialization ---

namespace {

nlohmann::json tensor_to_json(const LoraTensors& t) {
    return {{"r", t.r}, {"d_in", t.d_in}, {"d_out", t.d_out}, {"a", t.a}, {"b", t.b}};
}

LoraTensors tensor_from_json(const nlohmann::json& j) {
    LoraTensors t;
    j.at("r").get_to(t.r);
    j.at("d_in").get_to(t.d_in);
    j.at("d_out").get_to(t.d_out);
    j.at("a").get_to(t.a);
    j.at("b").get_to(t.b);
    if (t.a.size() != static_cast<std::size_t>(t.r) * t.d_in ||
        t.b.size() != static_cast<std::size_t>(t.d_out) * t.r) {
        throw DataError("adapter tensor shape mismatch");
    }
    return t;
}

}  // namespace

void LoraAdapter::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["format"] = "xccd-adapter-v1";
    j["rank"] = config.rank;
    j["alpha"] = config.alpha;
    j["dropout"] = config.dropout;
    nlohmann::json targets_json = nlohmann::json::object();
    for (const auto& [name, t] : targets) targets_json[name] = tensor_to_json(t);
    j["targets"] = targets_json;
    write_file(path, j.dump(2) + "\n");
}

LoraAdapter LoraAdapter::load(const std::filesystem::path& path) {
    auto j = nlohmann::json::parse(read_file(path));
    if (j.value("format", "") != "xccd-adapter-v1") {
        throw DataError("unrecognized adapter container: " + path.string());
    }
    LoraAdapter a;
    a.config.rank = j.at("rank").get<int>();
    a.config.alpha = j.at("alpha").get<double>();
    a.config.dropout = j.at("dropout").get<double>();
    for (const auto& [name, tj] : j.at("targets").items()) {
        a.targets[name] = tensor_from_json(tj);
    }
    return a;
}

// --- fine-tuning ---

namespace {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
};

double linear_lr(double base, long step, long total, long warmup) {
    if (total <= 0) return base;
    if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total == warmup) return base;
    return base * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

}  // namespace

LoraAdapter finetune(ToyBackend& backend, const std::vector<TokenizedSequence>& dataset,
                     const LoraConfig& lora_cfg, const TrainConfig& train_cfg,
                     const std::filesystem::path& run_dir) {
    if (dataset.empty()) throw std::invalid_argument("finetune: dataset must be non-empty");
    if (train_cfg.schedule != "linear" && train_cfg.schedule != "constant") {
        throw std::invalid_argument("finetune: unknown schedule " + train_cfg.schedule);
    }

    backend.attach_adapter(
        ToyBackend::init_adapter(backend.config(), lora_cfg, train_cfg.seed));
    if (train_cfg.epochs <= 0) return backend.adapter();

    const auto n = dataset.size();
    const auto micro = static_cast<std::size_t>(std::max(train_cfg.per_device_batch, 1));
    const auto accum = static_cast<std::size_t>(std::max(train_cfg.grad_accum, 1));
    const long micro_per_epoch = static_cast<long>((n + micro - 1) / micro);
    const long steps_per_epoch = (micro_per_epoch + static_cast<long>(accum) - 1) /
                                 static_cast<long>(accum);
    const long total_steps = steps_per_epoch * train_cfg.epochs;
    const long warmup =
        std::max<long>(1, std::lround(train_cfg.warmup_ratio * static_cast<double>(total_steps)));

    std::map<std::string, AdamState> adam;
    for (auto& [name, t] : backend.adapter_mut().targets) {
        adam[name].m.assign(t.a.size() + t.b.size(), 0.0);
        adam[name].v.assign(t.a.size() + t.b.size(), 0.0);
    }
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;

    Rng shuffle_rng(train_cfg.seed);
    Rng dropout_rng(train_cfg.seed ^ 0x9e3779b97f4a7c15ull);

    long step = 0;
    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        ToyBackend::AdapterGrads grads;
        std::size_t accumulated = 0;
        auto apply_step = [&]() {
            const double lr = train_cfg.schedule == "constant"
                                  ? train_cfg.learning_rate
                                  : linear_lr(train_cfg.learning_rate, step, total_steps, warmup);
            ++step;
            const double scale = 1.0 / static_cast<double>(accumulated);
            for (auto& [name, t] : backend.adapter_mut().targets) {
                auto git = grads.find(name);
                if (git == grads.end()) continue;
                auto& st = adam[name];
                auto update = [&](std::vector<double>& w, const std::vector<double>& g,
                                  std::size_t offset) {
                    for (std::size_t i = 0; i < w.size(); ++i) {
                        const double gi = g[i] * scale;
                        double& m = st.m[offset + i];
                        double& v = st.v[offset + i];
                        m = kBeta1 * m + (1.0 - kBeta1) * gi;
                        v = kBeta2 * v + (1.0 - kBeta2) * gi * gi;
                        const double mhat = m / (1.0 - std::pow(kBeta1, step));
                        const double vhat = v / (1.0 - std::pow(kBeta2, step));
                        w[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
                    }
                };
                update(t.a, git->second.a, 0);
                update(t.b, git->second.b, t.a.size());
            }
            grads.clear();
            accumulated = 0;
        };

        for (std::size_t start = 0; start < n; start += micro) {
            std::vector<TokenizedSequence> batch;
            for (std::size_t i = start; i < std::min(n, start + micro); ++i) {
                batch.push_back(dataset[order[i]]);
            }
            backend.lm_loss_and_adapter_grads(batch, grads, &dropout_rng);
            if (++accumulated == accum) apply_step();
        }
        if (accumulated > 0) apply_step();

        if (!run_dir.empty()) {
            const auto epoch_dir = run_dir / ("epoch_" + std::to_string(epoch + 1));
            std::filesystem::create_directories(epoch_dir);
            backend.adapter().save(epoch_dir / "adapter.json");
            nlohmann::json manifest = {{"epoch", epoch + 1},
                                       {"epochs", train_cfg.epochs},
                                       {"per_device_batch", train_cfg.per_device_batch},
                                       {"grad_accum", train_cfg.grad_accum},
                                       {"learning_rate", train_cfg.learning_rate},
                                       {"warmup_ratio", train_cfg.warmup_ratio},
                                       {"schedule", train_cfg.schedule},
                                       {"seed", train_cfg.seed},
                                       {"rank", lora_cfg.rank},
                                       {"alpha", lora_cfg.alpha},
                                       {"dropout", lora_cfg.dropout},
                                       {"dataset_size", n}};
            write_file(epoch_dir / "manifest.json", manifest.dump(2) + "\n");
            if (epoch > 0) {
                std::filesystem::remove_all(run_dir / ("epoch_" + std::to_string(epoch)));
            }
        }
    }
    return backend.adapter();
}

// --- backend registry ---

namespace {

std::map<std::string, BackendFactory>& registry() {
    static std::map<std::string, BackendFactory> r = {
        {"toy", [](const nlohmann::json& params) -> std::unique_ptr<Backend> {
             ToyConfig cfg;
             if (params.is_object()) {
                 cfg.dim = params.value("dim", cfg.dim);
                 cfg.heads = params.value("heads", cfg.heads);
                 cfg.layers = params.value("layers", cfg.layers);
                 cfg.ff = params.value("ff", cfg.ff);
                 cfg.block_size = params.value("block_size", cfg.block_size);
                 cfg.init_std = params.value("init_std", cfg.init_std);
                 cfg.lm_head_init_std = params.value("lm_head_init_std", cfg.lm_head_init_std);
                 cfg.seed = params.value("seed", cfg.seed);
             }
             return std::make_unique<ToyBackend>(cfg);
         }}};
    return r;
}

}  // namespace

void register_backend(const std::string& kind, BackendFactory factory) {
    registry()[kind] = std::move(factory);
}

std::unique_ptr<Backend> make_backend(const std::string& kind, const nlohmann::json& params) {
    auto it = registry().find(kind);
    if (it == registry().end()) {
        std::string known;
        for (const auto& [k, _] : registry()) {
            if (!known.empty()) known += ", ";
            known += k;
        }
        throw ConfigError("unknown backend kind '" + kind + "' (registered: " + known + ")");
    }
    return it->second(params);
}

std::vector<std::string> registered_backends() {
    std::vector<std::string> out;
    for (const auto& [k, _] : registry()) out.push_back(k);
    return out;
}

}  // namespace xccd::backend
