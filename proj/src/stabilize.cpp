#include "xccd/stabilize.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "xccd/kernels.hpp"
#include "xccd/prompts.hpp"

namespace xccd::stabilize {

PooledEmbedding mean_pool(const backend::HiddenStates& hidden, const std::vector<int>& mask) {
    if (static_cast<int>(mask.size()) != hidden.T) {
        throw DimensionMismatch("mean_pool: mask length != hidden T");
    }
    double count = 0.0;
    PooledEmbedding out(static_cast<std::size_t>(hidden.d), 0.0);
    for (int t = 0; t < hidden.T; ++t) {
        if (mask[static_cast<std::size_t>(t)] == 0) continue;
        count += 1.0;
        const double* row = hidden.data.data() + static_cast<std::size_t>(t) * hidden.d;
        for (int j = 0; j < hidden.d; ++j) out[static_cast<std::size_t>(j)] += row[j];
    }
    if (count == 0.0) throw AllPadding("mean_pool: attention mask has no valid positions");
    for (auto& v : out) v /= count;
    return out;
}

HeadParams init_head(int d, std::uint64_t seed, double dropout) {
    HeadParams p;
    p.d = d;
    p.dropout = dropout;
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    p.w_p.resize(static_cast<std::size_t>(d) * d);
    for (auto& v : p.w_p) v = (2.0 * rng.real() - 1.0) * bound;
    p.b_p.assign(static_cast<std::size_t>(d), 0.0);
    p.w_c.resize(static_cast<std::size_t>(d));
    for (auto& v : p.w_c) v = (2.0 * rng.real() - 1.0) * bound;
    p.b_c = 0.0;
    return p;
}

HeadForward head_forward(const PooledEmbedding& h, const HeadParams& params, bool train_mode,
                         Rng* rng) {
    const int d = params.d;
    if (static_cast<int>(h.size()) != d) {
        throw DimensionMismatch("head_forward: embedding dimension != head dimension");
    }
    HeadForward out;
    out.z.resize(static_cast<std::size_t>(d));
    for (int r = 0; r < d; ++r) {
        double acc = params.b_p[static_cast<std::size_t>(r)];
        const double* wrow = params.w_p.data() + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c) acc += wrow[c] * h[static_cast<std::size_t>(c)];
        out.z[static_cast<std::size_t>(r)] = std::tanh(acc);
    }
    out.z_dropped = out.z;
    if (train_mode && params.dropout > 0.0 && rng != nullptr) {
        const double keep = 1.0 - params.dropout;
        out.drop_mask.resize(out.z.size());
        for (std::size_t j = 0; j < out.z.size(); ++j) {
            out.drop_mask[j] = rng->real() < params.dropout ? 0.0 : 1.0 / keep;
            out.z_dropped[j] = out.z[j] * out.drop_mask[j];
        }
    }
    out.logit = params.b_c;
    for (int j = 0; j < d; ++j) {
        out.logit += params.w_c[static_cast<std::size_t>(j)] * out.z_dropped[static_cast<std::size_t>(j)];
    }
    return out;
}

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

double bce_loss(double logit, int label) {
    if (!std::isfinite(logit)) throw std::invalid_argument("bce_loss: logit must be finite");
    const double y = static_cast<double>(label);
    return std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::fabs(logit)));
}

int predict_head(double logit) {
    if (!std::isfinite(logit)) throw std::invalid_argument("predict_head: logit must be finite");
    return logit >= 0.0 ? 1 : 0;
}

namespace {

struct SupconWork {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<std::vector<double>> znorm;
    std::vector<double> norms;
    std::vector<std::vector<std::size_t>> positives;
    std::vector<std::size_t> anchors;  // indices with at least one positive
    std::vector<std::vector<double>> sim;  // s_ij, diagonal unused
};

SupconWork supcon_prepare(const std::vector<std::vector<double>>& z,
                          const std::vector<int>& labels, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("supcon: tau must be > 0");
    if (z.size() != labels.size()) throw DimensionMismatch("supcon: batch size mismatch");
    if (z.size() < 2) throw std::invalid_argument("supcon: batch size must be >= 2");

    SupconWork w;
    w.n = z.size();
    w.d = z[0].size();
    w.znorm.resize(w.n);
    w.norms.resize(w.n);
    for (std::size_t i = 0; i < w.n; ++i) {
        if (z[i].size() != w.d) throw DimensionMismatch("supcon: ragged batch");
        double norm = 0.0;
        for (double v : z[i]) norm += v * v;
        norm = std::sqrt(norm);
        if (norm == 0.0) throw std::invalid_argument("supcon: zero embedding");
        w.norms[i] = norm;
        w.znorm[i].resize(w.d);
        for (std::size_t j = 0; j < w.d; ++j) w.znorm[i][j] = z[i][j] / norm;
    }
    w.positives.resize(w.n);
    for (std::size_t i = 0; i < w.n; ++i) {
        for (std::size_t j = 0; j < w.n; ++j) {
            if (j != i && labels[j] == labels[i]) w.positives[i].push_back(j);
        }
        if (!w.positives[i].empty()) w.anchors.push_back(i);
    }
    if (w.anchors.empty()) {
        throw DegenerateBatch("supcon: no anchor has an in-batch positive");
    }
    w.sim.assign(w.n, std::vector<double>(w.n, 0.0));
    for (std::size_t i = 0; i < w.n; ++i) {
        for (std::size_t j = 0; j < w.n; ++j) {
            if (i == j) continue;
            double dot = 0.0;
            for (std::size_t k = 0; k < w.d; ++k) dot += w.znorm[i][k] * w.znorm[j][k];
            w.sim[i][j] = dot / tau;
        }
    }
    return w;
}

double supcon_from_work(const SupconWork& w, std::vector<std::vector<double>>* g_sim) {
    // log-sum-exp over k != i with max subtraction
    std::vector<double> log_denom(w.n, 0.0);
    std::vector<std::vector<double>> softmax;
    if (g_sim != nullptr) softmax.assign(w.n, std::vector<double>(w.n, 0.0));
    for (std::size_t i : w.anchors) {
        double mx = -1e300;
        for (std::size_t k = 0; k < w.n; ++k) {
            if (k != i) mx = std::max(mx, w.sim[i][k]);
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < w.n; ++k) {
            if (k != i) sum += std::exp(w.sim[i][k] - mx);
        }
        log_denom[i] = mx + std::log(sum);
        if (g_sim != nullptr) {
            for (std::size_t k = 0; k < w.n; ++k) {
                if (k != i) softmax[i][k] = std::exp(w.sim[i][k] - log_denom[i]);
            }
        }
    }

    const double m = static_cast<double>(w.anchors.size());
    double loss = 0.0;
    for (std::size_t i : w.anchors) {
        double inner = 0.0;
        for (std::size_t j : w.positives[i]) {
            inner += w.sim[i][j] - log_denom[i];
        }
        loss += -inner / static_cast<double>(w.positives[i].size());
    }
    loss /= m;

    if (g_sim != nullptr) {
        for (std::size_t i : w.anchors) {
            const double inv_p = 1.0 / static_cast<double>(w.positives[i].size());
            for (std::size_t j = 0; j < w.n; ++j) {
                if (j == i) continue;
                (*g_sim)[i][j] = softmax[i][j] / m;
            }
            for (std::size_t j : w.positives[i]) {
                (*g_sim)[i][j] -= inv_p / m;
            }
        }
    }
    return loss;
}

}  // namespace

double supcon_loss(const std::vector<std::vector<double>>& z, const std::vector<int>& labels,
                   double tau) {
    auto w = supcon_prepare(z, labels, tau);
    return supcon_from_work(w, nullptr);
}

double supcon_loss_grad(const std::vector<std::vector<double>>& z, const std::vector<int>& labels,
                        double tau, std::vector<std::vector<double>>& dz) {
    auto w = supcon_prepare(z, labels, tau);
    std::vector<std::vector<double>> g_sim(w.n, std::vector<double>(w.n, 0.0));
    const double loss = supcon_from_work(w, &g_sim);

    dz.assign(w.n, std::vector<double>(w.d, 0.0));
    for (std::size_t a = 0; a < w.n; ++a) {
        std::vector<double> dznorm(w.d, 0.0);
        for (std::size_t j = 0; j < w.n; ++j) {
            if (j == a) continue;
            const double c = (g_sim[a][j] + g_sim[j][a]) / tau;
            if (c == 0.0) continue;
            for (std::size_t k = 0; k < w.d; ++k) dznorm[k] += c * w.znorm[j][k];
        }
        // through the normalization: dz = (I - zn zn^T) dznorm / ||z||
        double dot = 0.0;
        for (std::size_t k = 0; k < w.d; ++k) dot += dznorm[k] * w.znorm[a][k];
        for (std::size_t k = 0; k < w.d; ++k) {
            dz[a][k] = (dznorm[k] - dot * w.znorm[a][k]) / w.norms[a];
        }
    }
    return loss;
}

double joint_loss(const std::vector<double>& logits, const std::vector<std::vector<double>>& z,
                  const std::vector<int>& labels, const ContrastiveConfig& config) {
    if (logits.size() != labels.size() || z.size() != labels.size()) {
        throw DimensionMismatch("joint_loss: batch not aligned");
    }
    double bce = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        bce += bce_loss(logits[i], labels[i]);
    }
    bce /= static_cast<double>(logits.size());
    if (config.lambda == 0.0) return bce;
    return bce + config.lambda * supcon_loss(z, labels, config.tau);
}

LabelTokenSets label_token_sets(const backend::Backend& b) {
    LabelTokenSets sets;
    for (const char* lit : {"Yes", "yes", " Yes", " yes", "YES"}) {
        if (auto id = b.single_token(lit)) sets.yes_tokens.insert(*id);
    }
    for (const char* lit : {"No", "no", " No", " no", "NO"}) {
        if (auto id = b.single_token(lit)) sets.no_tokens.insert(*id);
    }
    if (sets.yes_tokens.empty() || sets.no_tokens.empty()) {
        throw std::runtime_error("label_token_sets: tokenizer has no single-token yes/no");
    }
    for (int id : sets.yes_tokens) {
        if (sets.no_tokens.count(id)) {
            throw std::runtime_error("label_token_sets: yes/no token sets overlap");
        }
    }
    return sets;
}

ForcedConclusionResult forced_conclusion(const backend::Backend& b,
                                         const std::optional<std::string>& system,
                                         const std::string& reasoning_prompt,
                                         const LabelTokenSets& tokens, int max_new_tokens) {
    ForcedConclusionResult out;
    auto stage1 = b.encode_prompt(system, reasoning_prompt);
    out.first_stage_response = b.generate(stage1, max_new_tokens);

    // An empty first-stage response still has to yield a decision; stand in a
    // marker so the follow-up prompt renders.
    const std::string full_response =
        out.first_stage_response.empty() ? "(empty response)" : out.first_stage_response;
    const std::string follow_up = prompts::render_forced_conclusion_prompt(full_response);
    auto stage2 = b.encode_prompt(system, follow_up);
    auto fwd = b.forward(stage2);

    for (int id : tokens.yes_tokens) out.p_yes += fwd.final_dist[static_cast<std::size_t>(id)];
    for (int id : tokens.no_tokens) out.p_no += fwd.final_dist[static_cast<std::size_t>(id)];
    out.label = out.p_yes > out.p_no ? 1 : 0;
    return out;
}

double head_objective(const HeadParams& params, const std::vector<PooledEmbedding>& pooled,
                      const std::vector<int>& labels, HeadObjective objective,
                      const ContrastiveConfig& config, HeadGrads* grads, Rng* dropout_rng) {
    const std::size_t n = pooled.size();
    if (n == 0 || n != labels.size()) throw DimensionMismatch("head_objective: empty or ragged");
    const int d = params.d;

    std::vector<HeadForward> fwd(n);
    for (std::size_t i = 0; i < n; ++i) {
        fwd[i] = head_forward(pooled[i], params, dropout_rng != nullptr, dropout_rng);
    }

    double bce = 0.0;
    for (std::size_t i = 0; i < n; ++i) bce += bce_loss(fwd[i].logit, labels[i]);
    bce /= static_cast<double>(n);

    double total = bce;
    std::vector<std::vector<double>> z_batch;
    std::vector<std::vector<double>> dz_con;
    bool have_con = false;
    // A batch too small for pairwise terms or without any positive pair
    // carries no contrastive signal; the standalone joint_loss still raises.
    if (objective == HeadObjective::joint && config.lambda != 0.0 && n >= 2) {
        z_batch.reserve(n);
        for (const auto& f : fwd) z_batch.push_back(f.z);
        try {
            if (grads != nullptr) {
                total += config.lambda * supcon_loss_grad(z_batch, labels, config.tau, dz_con);
            } else {
                total += config.lambda * supcon_loss(z_batch, labels, config.tau);
            }
            have_con = true;
        } catch (const DegenerateBatch&) {
            have_con = false;
        }
    }

    if (grads == nullptr) return total;

    grads->w_p.assign(static_cast<std::size_t>(d) * d, 0.0);
    grads->b_p.assign(static_cast<std::size_t>(d), 0.0);
    grads->w_c.assign(static_cast<std::size_t>(d), 0.0);
    grads->b_c = 0.0;

    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double dlogit = (sigmoid(fwd[i].logit) - labels[i]) * inv_n;
        grads->b_c += dlogit;
        std::vector<double> dz(static_cast<std::size_t>(d), 0.0);
        for (int j = 0; j < d; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            grads->w_c[ju] += dlogit * fwd[i].z_dropped[ju];
            double dzd = dlogit * params.w_c[ju];
            if (!fwd[i].drop_mask.empty()) dzd *= fwd[i].drop_mask[ju];
            dz[ju] = dzd;
        }
        if (have_con) {
            for (int j = 0; j < d; ++j) {
                dz[static_cast<std::size_t>(j)] +=
                    config.lambda * dz_con[i][static_cast<std::size_t>(j)];
            }
        }
        for (int r = 0; r < d; ++r) {
            const auto ru = static_cast<std::size_t>(r);
            const double da = dz[ru] * (1.0 - fwd[i].z[ru] * fwd[i].z[ru]);
            grads->b_p[ru] += da;
            double* wrow = grads->w_p.data() + ru * static_cast<std::size_t>(d);
            for (int cidx = 0; cidx < d; ++cidx) {
                wrow[cidx] += da * pooled[i][static_cast<std::size_t>(cidx)];
            }
        }
    }
    return total;
}

HeadParams train_head_on_embeddings(const std::vector<PooledEmbedding>& pooled,
                                    const std::vector<int>& labels, const HeadTrainConfig& config,
                                    int d) {
    if (pooled.empty() || pooled.size() != labels.size()) {
        throw std::invalid_argument("train_head: dataset must be non-empty and aligned");
    }
    HeadParams params = init_head(d, config.seed, config.dropout);
    if (config.epochs <= 0) return params;

    const std::size_t n = pooled.size();
    const auto batch = static_cast<std::size_t>(std::max(config.batch_size, 1));

    std::vector<double> m(params.w_p.size() + params.b_p.size() + params.w_c.size() + 1, 0.0);
    std::vector<double> v(m.size(), 0.0);
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    long step = 0;

    Rng shuffle_rng(config.seed);
    Rng dropout_rng(config.seed ^ 0x5bf0a8b1461a4a6dull);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += batch) {
            std::vector<PooledEmbedding> bh;
            std::vector<int> by;
            for (std::size_t i = start; i < std::min(n, start + batch); ++i) {
                bh.push_back(pooled[order[i]]);
                by.push_back(labels[order[i]]);
            }
            HeadGrads g;
            head_objective(params, bh, by, config.objective, config.contrastive, &g,
                           params.dropout > 0.0 ? &dropout_rng : nullptr);
            ++step;
            auto update = [&](double* w, const double* grad, std::size_t count,
                              std::size_t offset) {
                for (std::size_t i = 0; i < count; ++i) {
                    double& mi = m[offset + i];
                    double& vi = v[offset + i];
                    mi = kBeta1 * mi + (1.0 - kBeta1) * grad[i];
                    vi = kBeta2 * vi + (1.0 - kBeta2) * grad[i] * grad[i];
                    const double mhat = mi / (1.0 - std::pow(kBeta1, step));
                    const double vhat = vi / (1.0 - std::pow(kBeta2, step));
                    w[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + kEps);
                }
            };
            std::size_t off = 0;
            update(params.w_p.data(), g.w_p.data(), params.w_p.size(), off);
            off += params.w_p.size();
            update(params.b_p.data(), g.b_p.data(), params.b_p.size(), off);
            off += params.b_p.size();
            update(params.w_c.data(), g.w_c.data(), params.w_c.size(), off);
            off += params.w_c.size();
            update(&params.b_c, &g.b_c, 1, off);
        }
    }
    return params;
}

std::vector<PooledEmbedding> pool_dataset(const backend::Backend& b,
                                          const std::vector<RenderedExchange>& exchanges) {
    std::vector<PooledEmbedding> out(exchanges.size());
    for (std::size_t i = 0; i < exchanges.size(); ++i) {
        std::optional<std::string> system;
        std::string user;
        for (const auto& msg : exchanges[i].messages) {
            if (msg.role == Role::system) system = msg.content;
            if (msg.role == Role::user) user = msg.content;
        }
        if (user.empty()) throw std::invalid_argument("pool_dataset: exchange has no user turn");
        auto seq = b.encode_prompt(system, user);
        auto fwd = b.forward(seq);
        out[i] = mean_pool(fwd.hidden, seq.attention_mask);
    }
    return out;
}

HeadParams train_head(const backend::Backend& b,
                      const std::vector<std::pair<RenderedExchange, int>>& dataset,
                      const HeadTrainConfig& config) {
    std::vector<RenderedExchange> exchanges;
    std::vector<int> labels;
    exchanges.reserve(dataset.size());
    for (const auto& [ex, y] : dataset) {
        exchanges.push_back(ex);
        labels.push_back(y);
    }
    auto pooled = pool_dataset(b, exchanges);
    return train_head_on_embeddings(pooled, labels, config, b.dim());
}

double head_accuracy(const HeadParams& params, const std::vector<PooledEmbedding>& pooled,
                     const std::vector<int>& labels) {
    if (pooled.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        auto f = head_forward(pooled[i], params, false, nullptr);
        if (predict_head(f.logit) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pooled.size());
}

void save_head(const std::filesystem::path& path, const HeadParams& params,
               const HeadTrainConfig& config, const std::string& backbone_identity) {
    nlohmann::json j = {
        {"format", "xccd-head-v1"},
        {"d", params.d},
        {"w_p", params.w_p},
        {"b_p", params.b_p},
        {"w_c", params.w_c},
        {"b_c", params.b_c},
        {"dropout", params.dropout},
        {"manifest",
         {{"objective", config.objective == HeadObjective::bce ? "bce" : "joint"},
          {"lambda", config.contrastive.lambda},
          {"tau", config.contrastive.tau},
          {"dropout", config.dropout},
          {"backbone", backbone_identity},
          {"seed", config.seed},
          {"epochs", config.epochs},
          {"batch_size", config.batch_size},
          {"learning_rate", config.learning_rate}}},
    };
    write_file(path, j.dump(2) + "\n");
}

HeadParams load_head(const std::filesystem::path& path) {
    auto j = nlohmann::json::parse(read_file(path));
    if (j.value("format", "") != "xccd-head-v1") {
        throw DataError("unrecognized head container: " + path.string());
    }
    HeadParams p;
    j.at("d").get_to(p.d);
    j.at("w_p").get_to(p.w_p);
    j.at("b_p").get_to(p.b_p);
    j.at("w_c").get_to(p.w_c);
    j.at("b_c").get_to(p.b_c);
    j.at("dropout").get_to(p.dropout);
    if (p.w_p.size() != static_cast<std::size_t>(p.d) * p.d ||
        p.b_p.size() != static_cast<std::size_t>(p.d) ||
        p.w_c.size() != static_cast<std::size_t>(p.d)) {
        throw DataError("head tensor shape mismatch");
    }
    return p;
}

}  // namespace xccd::stabilize
