#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "xccd/backend.hpp"
#include "xccd/prompts.hpp"
#include "xccd/stabilize.hpp"
#include "xccd/util.hpp"

#include "oracles.hpp"

using namespace xccd;
using namespace xccd::stabilize;

namespace {

using oracles::random_batch;
using oracles::random_labels_mixed;
using oracles::supcon_reference;

backend::HiddenStates make_hidden(const std::vector<std::vector<double>>& rows) {
    backend::HiddenStates h;
    h.T = static_cast<int>(rows.size());
    h.d = static_cast<int>(rows[0].size());
    for (const auto& r : rows) h.data.insert(h.data.end(), r.begin(), r.end());
    return h;
}

// Test double for the backend interface; the final-position distribution is
// scripted per constructor.
class RiggedBackend : public backend::Backend {
public:
    RiggedBackend(double p_yes, double p_no, std::string generation = "analysis text")
        : p_yes_(p_yes), p_no_(p_no), generation_(std::move(generation)) {}

    int dim() const override { return 4; }
    int vocab_size() const override { return tok_.vocab_size(); }
    int max_len() const override { return 512; }
    std::string identity() const override { return "rigged"; }
    std::uint64_t base_checksum() const override { return 42; }

    backend::TokenizedSequence encode(const RenderedExchange&, int) const override {
        throw std::logic_error("not used");
    }
    backend::TokenizedSequence encode_prompt(const std::optional<std::string>&,
                                             const std::string& user) const override {
        backend::TokenizedSequence s;
        s.token_ids = tok_.encode(user);
        if (s.token_ids.empty()) s.token_ids.push_back(CharTokenizer::kBos);
        s.attention_mask.assign(s.token_ids.size(), 1);
        s.loss_mask.assign(s.token_ids.size(), 0);
        return s;
    }
    backend::ForwardResult forward(const backend::TokenizedSequence& seq) const override {
        backend::ForwardResult r;
        r.hidden.T = static_cast<int>(seq.size());
        r.hidden.d = dim();
        r.hidden.data.assign(seq.size() * 4, 0.5);
        r.final_dist.assign(static_cast<std::size_t>(vocab_size()), 0.0);
        const double rest =
            (1.0 - p_yes_ - p_no_) / static_cast<double>(vocab_size() - 2);
        for (auto& v : r.final_dist) v = rest;
        r.final_dist[CharTokenizer::kYes] = p_yes_;
        r.final_dist[CharTokenizer::kNo] = p_no_;
        return r;
    }
    std::string generate(const backend::TokenizedSequence&, int) const override {
        return generation_;
    }
    double lm_loss(const backend::TokenizedSequence&) const override { return 0.0; }
    std::optional<int> single_token(const std::string& literal) const override {
        auto ids = tok_.encode(literal);
        if (ids.size() == 1) return ids[0];
        return std::nullopt;
    }
    std::size_t count_tokens(const std::string& text) const override {
        return tok_.encode(text).size();
    }

private:
    CharTokenizer tok_;
    double p_yes_;
    double p_no_;
    std::string generation_;
};

}  // namespace

TEST_CASE("mean pooling: hand values and a loop oracle") {
    auto identical = make_hidden({{2.0, -1.0, 0.5}, {2.0, -1.0, 0.5}, {2.0, -1.0, 0.5}});
    auto pooled = mean_pool(identical, {1, 1, 1});
    CHECK(pooled == std::vector<double>{2.0, -1.0, 0.5});

    auto two = make_hidden({{1.0, 3.0}, {5.0, 7.0}});
    auto avg = mean_pool(two, {1, 1});
    CHECK(avg[0] == doctest::Approx(3.0));
    CHECK(avg[1] == doctest::Approx(5.0));

    Rng rng(3);
    std::vector<std::vector<double>> rows(7, std::vector<double>(5));
    for (auto& r : rows) {
        for (auto& v : r) v = rng.normal();
    }
    std::vector<int> mask = {1, 1, 1, 0, 0, 0, 0};
    auto got = mean_pool(make_hidden(rows), mask);
    for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < 3; ++t) acc += rows[t][j];
        CHECK(got[j] == doctest::Approx(acc / 3.0).epsilon(1e-12));
    }

    CHECK_THROWS_AS(mean_pool(make_hidden(rows), std::vector<int>(7, 0)), AllPadding);
    CHECK_THROWS_AS(mean_pool(make_hidden(rows), std::vector<int>(3, 1)), DimensionMismatch);
}

TEST_CASE("mean pooling is linear in the hidden states") {
    Rng rng(4);
    std::vector<std::vector<double>> rows(5, std::vector<double>(6));
    for (auto& r : rows) {
        for (auto& v : r) v = rng.normal();
    }
    std::vector<int> mask = {1, 1, 1, 1, 0};
    const double alpha = 3.75;
    auto scaled = rows;
    for (auto& r : scaled) {
        for (auto& v : r) v *= alpha;
    }
    auto a = mean_pool(make_hidden(scaled), mask);
    auto b = mean_pool(make_hidden(rows), mask);
    for (std::size_t j = 0; j < a.size(); ++j) {
        CHECK(a[j] == doctest::Approx(alpha * b[j]).epsilon(1e-12));
    }
}

TEST_CASE("head forward: zero projection, odd symmetry, loop oracle") {
    HeadParams zero;
    zero.d = 3;
    zero.w_p.assign(9, 0.0);
    zero.b_p.assign(3, 0.0);
    zero.w_c = {0.7, -0.3, 1.1};
    zero.b_c = 0.0;
    zero.dropout = 0.0;
    CHECK(head_forward({1.0, 2.0, 3.0}, zero).logit == 0.0);  // tanh(0) = 0

    HeadParams id2;
    id2.d = 2;
    id2.w_p = {1.0, 0.0, 0.0, 1.0};
    id2.b_p = {0.0, 0.0};
    id2.w_c = {1.0, 1.0};
    id2.b_c = 0.0;
    CHECK(head_forward({1.0, -1.0}, id2).logit == doctest::Approx(0.0).epsilon(1e-15));

    Rng rng(5);
    HeadParams p = init_head(6, 11);
    std::vector<double> h(6);
    for (auto& v : h) v = rng.normal();
    auto got = head_forward(h, p);
    // independent scalar-by-scalar recomputation
    double logit = p.b_c;
    for (int r = 0; r < 6; ++r) {
        double acc = p.b_p[static_cast<std::size_t>(r)];
        for (int c = 0; c < 6; ++c) {
            acc += p.w_p[static_cast<std::size_t>(r) * 6 + c] * h[static_cast<std::size_t>(c)];
        }
        logit += p.w_c[static_cast<std::size_t>(r)] * std::tanh(acc);
    }
    CHECK(got.logit == doctest::Approx(logit).epsilon(1e-12));

    CHECK_THROWS_AS(head_forward({1.0, 2.0}, p), DimensionMismatch);
}

TEST_CASE("head initialization bounds and zero biases") {
    auto p = init_head(16, 3);
    const double bound = 1.0 / 4.0;
    for (double v : p.w_p) CHECK(std::fabs(v) <= bound);
    for (double v : p.w_c) CHECK(std::fabs(v) <= bound);
    for (double v : p.b_p) CHECK(v == 0.0);
    CHECK(p.b_c == 0.0);
}

TEST_CASE("bce loss: exact values and saturation") {
    CHECK(bce_loss(0.0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(bce_loss(0.0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(bce_loss(40.0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(bce_loss(40.0, 0) == doctest::Approx(40.0).epsilon(1e-12));
    CHECK(bce_loss(-40.0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::isfinite(bce_loss(1000.0, 0)));
    CHECK_THROWS_AS(bce_loss(std::numeric_limits<double>::infinity(), 1),
                    std::invalid_argument);

    // extended-precision reference on a random grid; the naive formula is
    // itself accurate only while 1 - sigmoid stays well above the long-double
    // epsilon, so the grid stops short of deep saturation
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
        const double logit = (rng.real() - 0.5) * 30.0;
        const int y = static_cast<int>(rng.below(2));
        const long double sig = 1.0L / (1.0L + std::exp(static_cast<long double>(-logit)));
        const long double expect =
            -(y * std::log(sig) + (1 - y) * std::log(1.0L - sig));
        CHECK(bce_loss(logit, y) ==
              doctest::Approx(static_cast<double>(expect)).epsilon(1e-10));
    }
}

TEST_CASE("prediction thresholds at a zero logit, boundary inclusive") {
    CHECK(predict_head(0.0) == 1);
    CHECK(predict_head(-3.0) == 0);
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double logit = rng.normal() * 5.0;
        const double sig = 1.0 / (1.0 + std::exp(-logit));
        CHECK(predict_head(logit) == (sig >= 0.5 ? 1 : 0));
    }
}

TEST_CASE("supcon closed form: identical embeddings and uniform labels") {
    for (double tau : {0.05, 0.1, 1.0}) {
        std::vector<std::vector<double>> z(4, {0.5, 0.5, 0.5, 0.5});
        std::vector<int> labels(4, 1);
        CHECK(supcon_loss(z, labels, tau) ==
              doctest::Approx(std::log(3.0)).epsilon(1e-6 / std::log(3.0)));
    }
}

TEST_CASE("supcon degenerate and invalid inputs") {
    std::vector<std::vector<double>> z2 = {{1.0, 0.0}, {0.0, 1.0}};
    CHECK_THROWS_AS(supcon_loss(z2, {0, 1}, 0.1), DegenerateBatch);
    CHECK_THROWS_AS(supcon_loss({{1.0, 0.0}}, {1}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(supcon_loss(z2, {1, 1}, 0.0), std::invalid_argument);
    std::vector<std::vector<double>> with_zero = {{0.0, 0.0}, {1.0, 0.0}, {0.5, 0.5}};
    CHECK_THROWS_AS(supcon_loss(with_zero, {1, 1, 0}, 0.1), std::invalid_argument);
}

TEST_CASE("supcon matches the triple-loop reference on random batches") {
    Rng rng(8);
    // the named spot check: N=6, tau=0.1
    {
        auto z = random_batch(6, 8, rng);
        auto labels = random_labels_mixed(6, rng);
        CHECK(supcon_loss(z, labels, 0.1) ==
              doctest::Approx(supcon_reference(z, labels, 0.1)).epsilon(1e-10));
    }
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 3 + rng.below(6);   // N <= 8
        const std::size_t d = 2 + rng.below(15);  // d <= 16
        auto z = random_batch(n, d, rng);
        std::vector<int> labels(n);
        for (;;) {  // at least one anchor must have a positive
            for (auto& v : labels) v = static_cast<int>(rng.below(2));
            int ones = 0;
            for (int v : labels) ones += v;
            if (ones >= 2 || static_cast<int>(n) - ones >= 2) break;
        }
        const double tau = 0.05 + rng.real();
        const double got = supcon_loss(z, labels, tau);
        const double expect = supcon_reference(z, labels, tau);
        CHECK(std::fabs(got - expect) <= 1e-8 * std::max(1.0, std::fabs(expect)));
    }
}

TEST_CASE("supcon is invariant under flipping every label") {
    Rng rng(9);
    auto z = random_batch(7, 5, rng);
    auto labels = random_labels_mixed(7, rng);
    std::vector<int> flipped;
    for (int v : labels) flipped.push_back(1 - v);
    CHECK(supcon_loss(z, labels, 0.2) ==
          doctest::Approx(supcon_loss(z, flipped, 0.2)).epsilon(1e-14));
}

TEST_CASE("similarity spread grows strictly as tau shrinks") {
    Rng rng(10);
    auto z = random_batch(6, 4, rng);
    auto spread = [&](double tau) {
        // normalized pairwise similarities, off-diagonal
        std::vector<std::vector<double>> zn = z;
        for (auto& row : zn) {
            double norm = 0.0;
            for (double v : row) norm += v * v;
            norm = std::sqrt(norm);
            for (auto& v : row) v /= norm;
        }
        double lo = 1e300, hi = -1e300;
        for (std::size_t i = 0; i < zn.size(); ++i) {
            for (std::size_t j = 0; j < zn.size(); ++j) {
                if (i == j) continue;
                double s = 0.0;
                for (std::size_t k = 0; k < zn[i].size(); ++k) s += zn[i][k] * zn[j][k];
                s /= tau;
                lo = std::min(lo, s);
                hi = std::max(hi, s);
            }
        }
        return hi - lo;
    };
    double prev = spread(1.0);
    for (double tau : {0.5, 0.2, 0.1, 0.05}) {
        const double cur = spread(tau);
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("l2 normalization is idempotent") {
    Rng rng(11);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> v(6);
        for (auto& x : v) x = rng.normal() * 10.0;
        auto normalize = [](std::vector<double> u) {
            double norm = 0.0;
            for (double x : u) norm += x * x;
            norm = std::sqrt(norm);
            for (auto& x : u) x /= norm;
            return u;
        };
        auto once = normalize(v);
        auto twice = normalize(once);
        for (std::size_t k = 0; k < v.size(); ++k) {
            CHECK(std::fabs(once[k] - twice[k]) <= 1e-7);
        }
    }
}

TEST_CASE("supcon gradient matches central finite differences") {
    Rng rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 4 + rng.below(3);
        const std::size_t d = 3 + rng.below(4);
        auto z = random_batch(n, d, rng);
        auto labels = random_labels_mixed(n, rng);
        const double tau = 0.1 + rng.real() * 0.5;

        std::vector<std::vector<double>> dz;
        supcon_loss_grad(z, labels, tau, dz);

        const double h = 1e-6;
        double worst = 0.0;
        for (int rep = 0; rep < 12; ++rep) {
            const auto i = static_cast<std::size_t>(rng.below(n));
            const auto k = static_cast<std::size_t>(rng.below(d));
            const double saved = z[i][k];
            z[i][k] = saved + h;
            const double up = supcon_loss(z, labels, tau);
            z[i][k] = saved - h;
            const double down = supcon_loss(z, labels, tau);
            z[i][k] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double rel = std::fabs(dz[i][k] - numeric) /
                               std::max({std::fabs(dz[i][k]), std::fabs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("joint loss: lambda=0 is exactly the mean bce") {
    Rng rng(13);
    std::vector<double> logits = {0.3, -1.2, 2.0, 0.0};
    std::vector<int> labels = {1, 0, 1, 0};
    auto z = random_batch(4, 5, rng);

    double mean_bce = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) mean_bce += bce_loss(logits[i], labels[i]);
    mean_bce /= 4.0;

    ContrastiveConfig off;
    off.lambda = 0.0;
    CHECK(joint_loss(logits, z, labels, off) == mean_bce);  // bit-for-bit

    ContrastiveConfig on;
    on.lambda = 1.0;
    on.tau = 0.1;
    CHECK(joint_loss(logits, z, labels, on) ==
          doctest::Approx(mean_bce + supcon_loss(z, labels, 0.1)).epsilon(1e-12));

    ContrastiveConfig half;
    half.lambda = 0.5;
    half.tau = 0.1;
    CHECK(joint_loss(logits, z, labels, half) ==
          doctest::Approx(mean_bce + 0.5 * supcon_loss(z, labels, 0.1)).epsilon(1e-12));

    // a batch with no positive pair only raises when the term is active
    std::vector<double> two_logits = {0.5, -0.5};
    std::vector<int> two_labels = {0, 1};
    auto z2 = random_batch(2, 5, rng);
    CHECK_NOTHROW(joint_loss(two_logits, z2, two_labels, off));
    CHECK_THROWS_AS(joint_loss(two_logits, z2, two_labels, on), DegenerateBatch);
}

TEST_CASE("contrastive defaults are exposed in the config") {
    ContrastiveConfig cfg;
    CHECK(cfg.lambda == 0.5);
    CHECK(cfg.tau == 0.07);
}

TEST_CASE("head objective gradients match finite differences (bce and joint)") {
    Rng rng(14);
    const int d = 5;
    const std::size_t n = 6;
    std::vector<PooledEmbedding> pooled;
    for (std::size_t i = 0; i < n; ++i) {
        PooledEmbedding h(d);
        for (auto& v : h) v = rng.normal();
        pooled.push_back(h);
    }
    auto labels = random_labels_mixed(n, rng);

    for (auto objective : {HeadObjective::bce, HeadObjective::joint}) {
        HeadParams params = init_head(d, 21, 0.0);  // dropout off for determinism
        ContrastiveConfig ccfg;
        ccfg.lambda = 0.7;
        ccfg.tau = 0.3;

        HeadGrads grads;
        head_objective(params, pooled, labels, objective, ccfg, &grads, nullptr);

        auto loss_at = [&]() {
            return head_objective(params, pooled, labels, objective, ccfg, nullptr, nullptr);
        };
        const double h = 1e-6;
        double worst = 0.0;
        auto probe = [&](double* w, const double* g, std::size_t count) {
            for (int rep = 0; rep < 6; ++rep) {
                const auto idx = static_cast<std::size_t>(rng.below(count));
                const double saved = w[idx];
                w[idx] = saved + h;
                const double up = loss_at();
                w[idx] = saved - h;
                const double down = loss_at();
                w[idx] = saved;
                const double numeric = (up - down) / (2.0 * h);
                const double rel = std::fabs(g[idx] - numeric) /
                                   std::max({std::fabs(g[idx]), std::fabs(numeric), 1e-8});
                worst = std::max(worst, rel);
            }
        };
        probe(params.w_p.data(), grads.w_p.data(), params.w_p.size());
        probe(params.b_p.data(), grads.b_p.data(), params.b_p.size());
        probe(params.w_c.data(), grads.w_c.data(), params.w_c.size());
        probe(&params.b_c, &grads.b_c, 1);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("head training separates a linearly separable fixture") {
    Rng rng(15);
    const int d = 8;
    std::vector<PooledEmbedding> pooled;
    std::vector<int> labels;
    for (int i = 0; i < 32; ++i) {
        PooledEmbedding h(d);
        const int y = i % 2;
        for (int j = 0; j < d; ++j) {
            h[static_cast<std::size_t>(j)] = rng.normal() * 0.2 + (y == 1 ? 1.0 : -1.0);
        }
        pooled.push_back(h);
        labels.push_back(y);
    }
    HeadTrainConfig cfg;
    cfg.objective = HeadObjective::bce;
    cfg.epochs = 25;  // 25 epochs x 4 batches = 100 steps
    cfg.batch_size = 8;
    cfg.learning_rate = 5e-2;
    cfg.dropout = 0.0;
    cfg.seed = 42;
    auto params = train_head_on_embeddings(pooled, labels, cfg, d);
    CHECK(head_accuracy(params, pooled, labels) >= 0.95);

    // joint objective separates it too
    cfg.objective = HeadObjective::joint;
    cfg.contrastive.lambda = 0.5;
    cfg.contrastive.tau = 0.07;
    auto params_joint = train_head_on_embeddings(pooled, labels, cfg, d);
    CHECK(head_accuracy(params_joint, pooled, labels) >= 0.95);

    // zero training steps return the seeded initialization untouched
    HeadTrainConfig zero = cfg;
    zero.epochs = 0;
    auto untouched = train_head_on_embeddings(pooled, labels, zero, d);
    auto fresh = init_head(d, zero.seed, zero.dropout);
    CHECK(untouched.w_p == fresh.w_p);
    CHECK(untouched.w_c == fresh.w_c);
    CHECK(untouched.b_c == fresh.b_c);
}

TEST_CASE("joint head training tolerates ragged trailing batches") {
    Rng rng(44);
    const int d = 4;
    std::vector<PooledEmbedding> pooled;
    std::vector<int> labels;
    for (int i = 0; i < 9; ++i) {  // 9 % 4 leaves a single-sample batch
        PooledEmbedding h(d);
        for (auto& v : h) v = rng.normal();
        pooled.push_back(h);
        labels.push_back(i % 2);
    }
    HeadTrainConfig cfg;
    cfg.objective = HeadObjective::joint;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.dropout = 0.0;
    CHECK_NOTHROW(train_head_on_embeddings(pooled, labels, cfg, d));
}

TEST_CASE("label token sets: toy tokenizer pins the singleton form") {
    backend::ToyBackend toy;
    auto sets = label_token_sets(toy);
    CHECK(sets.yes_tokens == std::set<int>{CharTokenizer::kYes});
    CHECK(sets.no_tokens == std::set<int>{CharTokenizer::kNo});
}

TEST_CASE("forced conclusion: rigged distributions decide the label") {
    LabelTokenSets sets;
    sets.yes_tokens = {CharTokenizer::kYes};
    sets.no_tokens = {CharTokenizer::kNo};

    RiggedBackend mostly_yes(0.9, 0.05);
    auto r1 = forced_conclusion(mostly_yes, std::nullopt, "compare a and b", sets, 4);
    CHECK(r1.label == 1);
    CHECK(r1.first_stage_response == "analysis text");

    RiggedBackend tie(0.25, 0.25);
    auto r2 = forced_conclusion(tie, std::nullopt, "compare a and b", sets, 4);
    CHECK(r2.label == 0);  // strict inequality: ties fall to non-clone

    RiggedBackend mostly_no(0.05, 0.9);
    CHECK(forced_conclusion(mostly_no, std::nullopt, "c", sets, 4).label == 0);

    // empty first-stage responses still produce a decision
    RiggedBackend silent(0.6, 0.1, "");
    CHECK(forced_conclusion(silent, std::nullopt, "c", sets, 4).label == 1);
}

TEST_CASE("forced conclusion is total on the real toy backend") {
    backend::ToyBackend toy;
    auto sets = label_token_sets(toy);
    Rng rng(16);
    const char* snippets[] = {"print(n)", "n=n+1", "x*y-z", "if(a<b){c}", "loop: s+=i"};
    for (int i = 0; i < 40; ++i) {
        CodePair pair;
        pair.code1 = snippets[rng.below(5)];
        pair.code2 = snippets[rng.below(5)];
        auto prompt = prompts::render_reasoning_prompt(pair);
        auto r = forced_conclusion(toy, std::nullopt, prompt, sets, 4);
        CHECK((r.label == 0 || r.label == 1));
        CHECK(r.p_yes >= 0.0);
        CHECK(r.p_no >= 0.0);
    }
}

TEST_CASE("train_head on the toy backbone leaves the backbone untouched") {
    backend::ToyConfig cfg;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.ff = 32;
    cfg.block_size = 128;
    backend::ToyBackend toy(cfg);

    std::vector<std::pair<RenderedExchange, int>> dataset;
    for (int i = 0; i < 8; ++i) {
        RenderedExchange ex;
        ex.messages.push_back(
            {Role::user, std::string("sample ") + (i % 2 ? "aaaa aaaa" : "zzzz zzzz")});
        dataset.emplace_back(ex, i % 2);
    }
    const auto checksum = toy.base_checksum();
    HeadTrainConfig hcfg;
    hcfg.epochs = 10;
    hcfg.batch_size = 4;
    hcfg.learning_rate = 3e-2;
    hcfg.dropout = 0.1;
    auto params = train_head(toy, dataset, hcfg);
    CHECK(toy.base_checksum() == checksum);
    CHECK(params.d == 16);
}

TEST_CASE("head parameters serialize with their manifest") {
    auto params = init_head(4, 2, 0.1);
    params.b_c = 0.75;
    HeadTrainConfig cfg;
    cfg.objective = HeadObjective::joint;
    cfg.contrastive.lambda = 0.5;
    cfg.contrastive.tau = 0.07;
    const auto path = std::filesystem::temp_directory_path() / "xccd_head_rt.json";
    save_head(path, params, cfg, "toy(base)");

    auto back = load_head(path);
    CHECK(back.w_p == params.w_p);
    CHECK(back.b_p == params.b_p);
    CHECK(back.w_c == params.w_c);
    CHECK(back.b_c == params.b_c);
    CHECK(back.dropout == params.dropout);

    auto j = nlohmann::json::parse(read_file(path));
    CHECK(j.at("manifest").at("objective") == "joint");
    CHECK(j.at("manifest").at("lambda") == 0.5);
    CHECK(j.at("manifest").at("tau") == 0.07);
    CHECK(j.at("manifest").at("backbone") == "toy(base)");
    CHECK(j.at("manifest").contains("seed"));
    std::filesystem::remove(path);
}
