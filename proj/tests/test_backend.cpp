#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "xccd/backend.hpp"
#include "xccd/prompts.hpp"
#include "xccd/tokenizer.hpp"
#include "xccd/util.hpp"

using namespace xccd;
using namespace xccd::backend;

namespace {

ToyConfig small_config() {
    ToyConfig cfg;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.ff = 32;
    cfg.block_size = 64;
    cfg.seed = 5;
    return cfg;
}

TokenizedSequence raw_sequence(const std::vector<int>& ids, const std::vector<int>& loss) {
    TokenizedSequence s;
    s.token_ids = ids;
    s.attention_mask.assign(ids.size(), 1);
    s.loss_mask = loss;
    return s;
}

}  // namespace

TEST_CASE("char tokenizer: vocabulary, folding, label tokens") {
    CharTokenizer tok;
    CHECK(tok.vocab_size() == 64);
    CHECK(tok.encode("Yes") == std::vector<int>{CharTokenizer::kYes});
    CHECK(tok.encode("No") == std::vector<int>{CharTokenizer::kNo});
    CHECK(tok.encode("yes").size() == 3);  // lowercase literal stays character-level
    CHECK(tok.encode("AbC") == tok.encode("abc"));
    CHECK(tok.decode(tok.encode("hello, world!")) == "hello, world!");
    CHECK(tok.decode(tok.encode("x = Yes or No;")) == "x = Yes or No;");
    auto unk = tok.encode("\t");
    REQUIRE(unk.size() == 1);
    CHECK(unk[0] == CharTokenizer::kUnk);
    // eos terminates decoding
    CHECK(tok.decode({tok.encode("ab")[0], CharTokenizer::kEos, tok.encode("z")[0]}) == "a");
}

TEST_CASE("encode: mask_prompt marks exactly the assistant span (hand oracle)") {
    ToyBackend toy(small_config());
    const auto& tok = toy.tokenizer();
    auto ex = prompts::build_exchange(std::nullopt, "hi", "ok", LossMode::mask_prompt);
    auto seq = toy.encode(ex, 64);

    // hand-assembled: bos + "<user>\n" + "hi" + "\n<assistant>\n" + "ok" + eos
    std::vector<int> expect = {CharTokenizer::kBos};
    for (int id : tok.encode("<user>\n")) expect.push_back(id);
    for (int id : tok.encode("hi")) expect.push_back(id);
    for (int id : tok.encode("\n<assistant>\n")) expect.push_back(id);
    const std::size_t assistant_start = expect.size();
    for (int id : tok.encode("ok")) expect.push_back(id);
    expect.push_back(CharTokenizer::kEos);

    CHECK(seq.token_ids == expect);
    REQUIRE(seq.loss_mask.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(seq.loss_mask[i] == (i >= assistant_start ? 1 : 0));
        CHECK(seq.attention_mask[i] == 1);
    }
}

TEST_CASE("encode: the supervised span is the assistant suffix for any content") {
    ToyBackend toy(small_config());
    Rng rng(31);
    const char* charset = "abcdefghij 0123456789.,;()";
    auto random_text = [&rng, charset]() {
        std::string s;
        const auto len = 1 + rng.below(24);
        for (std::size_t i = 0; i < len; ++i) s.push_back(charset[rng.below(26)]);
        return s;
    };
    for (int trial = 0; trial < 25; ++trial) {
        const auto user = random_text();
        const auto assistant = random_text();
        auto ex = prompts::build_exchange(std::nullopt, user, assistant, LossMode::mask_prompt);
        auto seq = toy.encode(ex, 128);
        const auto span = toy.tokenizer().encode(assistant).size() + 1;  // + eos
        std::size_t supervised = 0;
        for (int m : seq.loss_mask) supervised += static_cast<std::size_t>(m);
        CHECK(supervised == span);
        // contiguous suffix
        for (std::size_t i = seq.size() - span; i < seq.size(); ++i) {
            CHECK(seq.loss_mask[i] == 1);
        }
        for (std::size_t i = 0; i < seq.size() - span; ++i) {
            CHECK(seq.loss_mask[i] == 0);
        }
    }
}

TEST_CASE("encode: full_loss mask equals the attention mask") {
    ToyBackend toy(small_config());
    auto ex = prompts::build_exchange(std::string("s"), "user text", "reply", LossMode::full_loss);
    auto seq = toy.encode(ex, 64);
    CHECK(seq.loss_mask == seq.attention_mask);
}

TEST_CASE("encode: over-length user content is left-truncated, assistant intact") {
    ToyBackend toy(small_config());
    std::string user(200, 'u');
    user += "tail";  // the kept suffix
    auto ex = prompts::build_exchange(std::nullopt, user, "ok", LossMode::mask_prompt);
    auto seq = toy.encode(ex, 64);
    CHECK(seq.size() == 64);

    // assistant span is intact at the end: "ok" + eos
    const auto& tok = toy.tokenizer();
    auto ok_ids = tok.encode("ok");
    REQUIRE(seq.token_ids.size() >= ok_ids.size() + 1);
    CHECK(seq.token_ids.back() == CharTokenizer::kEos);
    CHECK(seq.token_ids[seq.size() - 2] == ok_ids[1]);
    CHECK(seq.token_ids[seq.size() - 3] == ok_ids[0]);

    // kept user suffix ends with "tail"
    auto decoded_all = tok.decode(seq.token_ids);
    CHECK(decoded_all.find("tail") != std::string::npos);
    CHECK(decoded_all.find("tail") < decoded_all.find("<assistant>"));

    // an assistant span that cannot fit at all is an error
    std::string huge_assistant(100, 'a');
    auto ex2 = prompts::build_exchange(std::nullopt, "u", huge_assistant, LossMode::mask_prompt);
    CHECK_THROWS_AS(toy.encode(ex2, 64), AssistantTruncated);
}

TEST_CASE("forward: distribution normalized, single-token shapes, error paths") {
    ToyBackend toy(small_config());
    auto seq = raw_sequence({CharTokenizer::kBos}, {0});
    auto r = toy.forward(seq);
    CHECK(r.hidden.T == 1);
    CHECK(r.hidden.d == 16);
    double sum = 0.0;
    for (double v : r.final_dist) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-6);

    TokenizedSequence empty;
    CHECK_THROWS_AS(toy.forward(empty), EmptySequence);
    TokenizedSequence padded = raw_sequence({1, 2}, {0, 0});
    padded.attention_mask = {0, 0};
    CHECK_THROWS_AS(toy.forward(padded), EmptySequence);
    TokenizedSequence broken = raw_sequence({1, 2, 3}, {0, 0, 0});
    broken.attention_mask = {1, 0, 1};  // not right-padded
    CHECK_THROWS_AS(toy.forward(broken), std::invalid_argument);
}

TEST_CASE("uniform model: lm loss is ln V at every position") {
    ToyConfig cfg = small_config();
    cfg.init_std = 0.0;  // all-zero weights give uniform next-token distributions
    ToyBackend toy(cfg);
    auto seq = raw_sequence(toy.tokenizer().encode("abcdef"), {0, 1, 1, 1, 1, 1});
    const double expect = std::log(static_cast<double>(toy.vocab_size()));
    CHECK(toy.lm_loss(seq) == doctest::Approx(expect).epsilon(1e-12));

    auto fwd = toy.forward(seq);
    for (double v : fwd.final_dist) {
        CHECK(v == doctest::Approx(1.0 / toy.vocab_size()).epsilon(1e-12));
    }
}

TEST_CASE("lm loss equals a per-position forward oracle on a 6-token fixture") {
    ToyBackend toy(small_config());
    auto ids = toy.tokenizer().encode("n*2;\n");
    ids.insert(ids.begin(), CharTokenizer::kBos);
    REQUIRE(ids.size() == 6);
    // supervise the last three positions (the assistant span of this fixture)
    std::vector<int> loss_mask = {0, 0, 0, 1, 1, 1};
    auto seq = raw_sequence(ids, loss_mask);

    double manual = 0.0;
    int supervised = 0;
    for (std::size_t t = 1; t < ids.size(); ++t) {
        if (loss_mask[t] == 0) continue;
        std::vector<int> prefix(ids.begin(), ids.begin() + static_cast<long>(t));
        auto fwd = toy.forward(raw_sequence(prefix, std::vector<int>(prefix.size(), 0)));
        manual += -std::log(fwd.final_dist[static_cast<std::size_t>(ids[t])]);
        ++supervised;
    }
    manual /= supervised;
    CHECK(toy.lm_loss(seq) == doctest::Approx(manual).epsilon(1e-10));

    auto no_supervision = raw_sequence(ids, std::vector<int>(ids.size(), 0));
    CHECK_THROWS_AS(toy.lm_loss(no_supervision), NoSupervisedPositions);
}

TEST_CASE("golden forward values for the default seed") {
    ToyBackend toy;  // d=32, L=2, seed 42
    auto seq = toy.encode_prompt(std::nullopt, "compare: print(n*2) vs println(n*2)");
    auto r = toy.forward(seq);
    REQUIRE(r.hidden.T == 56);
    double sumsq = 0.0;
    for (double v : r.hidden.data) sumsq += v * v;
    CHECK(sumsq == doctest::Approx(1791.84266848005).epsilon(1e-9));
    CHECK(r.hidden.data.front() == doctest::Approx(-0.749968547273046).epsilon(1e-9));
    CHECK(r.hidden.data.back() == doctest::Approx(-1.03450121739669).epsilon(1e-9));
}

TEST_CASE("generation is greedy, capped, and deterministic") {
    ToyBackend toy;  // default seed 42
    auto seq = toy.encode_prompt(std::nullopt, "compare: print(n*2) vs println(n*2)");

    // pinned continuation of the untrained model (its own transition table)
    CHECK(toy.generate(seq, 8) == "9 /90-9\n");

    // one step appends exactly the argmax of the next-token distribution
    auto fwd = toy.forward(seq);
    int best = 0;
    for (int v = 1; v < toy.vocab_size(); ++v) {
        if (fwd.final_dist[static_cast<std::size_t>(v)] >
            fwd.final_dist[static_cast<std::size_t>(best)]) {
            best = v;
        }
    }
    CHECK(toy.generate(seq, 1) == toy.tokenizer().piece(best));

    ToyBackend other;  // identical seed, independent instance
    CHECK(other.generate(seq, 8) == "9 /90-9\n");

    CHECK_THROWS_AS(toy.generate(seq, 0), std::invalid_argument);
}

TEST_CASE("encode_prompt carries no supervised positions") {
    ToyBackend toy(small_config());
    auto seq = toy.encode_prompt(std::string("sys"), "question?");
    for (int m : seq.loss_mask) CHECK(m == 0);
    auto tail = toy.tokenizer().decode(seq.token_ids);
    REQUIRE(tail.size() >= 12);
    CHECK(tail.substr(tail.size() - 12) == "<assistant>\n");
}

TEST_CASE("adapter identity: zero-initialized B leaves the model untouched") {
    ToyBackend toy(small_config());
    auto seq = toy.encode_prompt(std::nullopt, "identity check");
    auto base = toy.forward(seq);
    const double base_loss =
        toy.lm_loss(raw_sequence(toy.tokenizer().encode("abcd"), {0, 1, 1, 1}));

    toy.attach_adapter(ToyBackend::init_adapter(toy.config(), {4, 8.0, 0.0}, 11));
    auto adapted = toy.forward(seq);
    CHECK(adapted.hidden.data == base.hidden.data);      // exact equality
    CHECK(adapted.final_dist == base.final_dist);
    CHECK(toy.lm_loss(raw_sequence(toy.tokenizer().encode("abcd"), {0, 1, 1, 1})) == base_loss);

    toy.detach_adapter();
    CHECK_FALSE(toy.has_adapter());
}

TEST_CASE("adapter serialization round-trips exactly") {
    auto adapter = ToyBackend::init_adapter(small_config(), {3, 6.0, 0.05}, 9);
    // make B nonzero so the roundtrip is not trivially zeros
    Rng rng(1);
    for (auto& [name, t] : adapter.targets) {
        for (auto& v : t.b) v = rng.normal();
    }
    const auto path = std::filesystem::temp_directory_path() / "xccd_adapter_rt.json";
    adapter.save(path);
    auto back = LoraAdapter::load(path);
    CHECK(back.config.rank == adapter.config.rank);
    CHECK(back.config.alpha == adapter.config.alpha);
    CHECK(back.config.dropout == adapter.config.dropout);
    REQUIRE(back.targets.size() == adapter.targets.size());
    for (const auto& [name, t] : adapter.targets) {
        CHECK(back.targets.at(name).a == t.a);
        CHECK(back.targets.at(name).b == t.b);
    }
    std::filesystem::remove(path);
}

TEST_CASE("adapter gradients match central finite differences") {
    ToyConfig cfg = small_config();
    ToyBackend toy(cfg);
    auto adapter = ToyBackend::init_adapter(cfg, {2, 4.0, 0.0}, 3);
    Rng rng(17);
    for (auto& [name, t] : adapter.targets) {
        for (auto& v : t.a) v = rng.normal(0.0, 0.1);
        for (auto& v : t.b) v = rng.normal(0.0, 0.1);  // nonzero so dA is informative
    }
    toy.attach_adapter(adapter);

    std::vector<TokenizedSequence> batch = {
        raw_sequence(toy.tokenizer().encode("ab=cd+1;"), {0, 0, 1, 1, 1, 1, 1, 1}),
        raw_sequence(toy.tokenizer().encode("xy(z)!"), {0, 1, 1, 1, 1, 1}),
    };

    ToyBackend::AdapterGrads grads;
    toy.lm_loss_and_adapter_grads(batch, grads);

    auto batch_loss = [&]() {
        double total = 0.0;
        for (const auto& s : batch) total += toy.lm_loss(s);
        return total / static_cast<double>(batch.size());
    };

    const double h = 1e-5;
    Rng pick(23);
    int checked = 0;
    double worst = 0.0;
    for (const auto& [name, gt] : grads) {
        for (int rep = 0; rep < 2; ++rep) {
            const bool in_a = pick.below(2) == 0;
            auto& tensor = toy.adapter_mut().targets.at(name);
            auto& w = in_a ? tensor.a : tensor.b;
            const auto& g = in_a ? gt.a : gt.b;
            const auto idx = static_cast<std::size_t>(pick.below(w.size()));

            const double saved = w[idx];
            w[idx] = saved + h;
            const double up = batch_loss();
            w[idx] = saved - h;
            const double down = batch_loss();
            w[idx] = saved;

            const double numeric = (up - down) / (2.0 * h);
            const double analytic = g[idx];
            const double rel = std::fabs(analytic - numeric) /
                               std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            worst = std::max(worst, rel);
            ++checked;
        }
    }
    CHECK(checked >= 20);
    CHECK(worst < 1e-4);
}

TEST_CASE("finetune: frozen base, determinism, checkpoints, zero-epoch identity") {
    ToyConfig cfg = small_config();
    LoraConfig lora{2, 4.0, 0.0};
    TrainConfig tc;
    tc.epochs = 2;
    tc.per_device_batch = 2;
    tc.grad_accum = 2;
    tc.learning_rate = 5e-3;
    tc.seed = 42;

    ToyBackend toy(cfg);
    std::vector<TokenizedSequence> data;
    for (const char* text : {"ab ab ab.", "cd cd cd.", "ef ef ef.", "gh gh gh."}) {
        auto ex = prompts::build_exchange(std::nullopt, "say", text, LossMode::mask_prompt);
        data.push_back(toy.encode(ex, cfg.block_size));
    }

    const auto run_dir = std::filesystem::temp_directory_path() / "xccd_ft_ckpt";
    std::filesystem::remove_all(run_dir);
    const auto checksum = toy.base_checksum();
    auto trained = finetune(toy, data, lora, tc, run_dir);
    CHECK(toy.base_checksum() == checksum);  // base bit-identical

    CHECK(std::filesystem::exists(run_dir / "epoch_2" / "adapter.json"));
    CHECK(std::filesystem::exists(run_dir / "epoch_2" / "manifest.json"));
    CHECK_FALSE(std::filesystem::exists(run_dir / "epoch_1"));  // latest kept only

    ToyBackend toy2(cfg);
    auto trained2 = finetune(toy2, data, lora, tc, {});
    for (const auto& [name, t] : trained.targets) {
        CHECK(trained2.targets.at(name).a == t.a);  // seed-determined bit equality
        CHECK(trained2.targets.at(name).b == t.b);
    }

    ToyBackend toy3(cfg);
    TrainConfig zero = tc;
    zero.epochs = 0;
    auto idadapter = finetune(toy3, data, lora, zero, {});
    for (const auto& [name, t] : idadapter.targets) {
        for (double v : t.b) CHECK(v == 0.0);
    }
    std::filesystem::remove_all(run_dir);
}

TEST_CASE("training as its own oracle: loss decreases and the toy overfits") {
    ToyConfig cfg = small_config();
    ToyBackend toy(cfg);

    auto ex = prompts::build_exchange(std::nullopt, "say", "ya ya ya ya.", LossMode::mask_prompt);
    auto seq = toy.encode(ex, cfg.block_size);

    // 50 manual steps on one example decrease the loss monotonically
    toy.attach_adapter(ToyBackend::init_adapter(cfg, {4, 8.0, 0.0}, 1));
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> m_state, v_state;
    double prev = toy.lm_loss(seq);
    const double first = prev;
    const double lr = 2e-3;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int step = 1; step <= 50; ++step) {
        ToyBackend::AdapterGrads grads;
        toy.lm_loss_and_adapter_grads({seq}, grads);
        for (auto& [name, t] : toy.adapter_mut().targets) {
            auto& ms = m_state[name];
            auto& vs = v_state[name];
            if (ms.first.empty()) {
                ms.first.assign(t.a.size(), 0.0);
                ms.second.assign(t.b.size(), 0.0);
                vs.first.assign(t.a.size(), 0.0);
                vs.second.assign(t.b.size(), 0.0);
            }
            auto upd = [&](std::vector<double>& w, const std::vector<double>& g,
                           std::vector<double>& m, std::vector<double>& v) {
                for (std::size_t i = 0; i < w.size(); ++i) {
                    m[i] = b1 * m[i] + (1 - b1) * g[i];
                    v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
                    const double mh = m[i] / (1 - std::pow(b1, step));
                    const double vh = v[i] / (1 - std::pow(b2, step));
                    w[i] -= lr * mh / (std::sqrt(vh) + eps);
                }
            };
            upd(t.a, grads.at(name).a, ms.first, vs.first);
            upd(t.b, grads.at(name).b, ms.second, vs.second);
        }
        const double now = toy.lm_loss(seq);
        CHECK(now < prev);
        prev = now;
    }
    CHECK(prev < first);

    // full finetune drives a 4-example dataset to a near-zero loss; distinct
    // prompts make the mapping memorizable
    ToyConfig big;  // default width, short context
    big.block_size = 64;
    ToyBackend fresh(big);
    std::vector<TokenizedSequence> data;
    const char* users[4] = {"count low", "count mid", "count high", "count top"};
    const char* replies[4] = {"one two.", "three four.", "five six.", "seven eight."};
    for (int i = 0; i < 4; ++i) {
        auto e = prompts::build_exchange(std::nullopt, users[i], replies[i],
                                         LossMode::mask_prompt);
        data.push_back(fresh.encode(e, big.block_size));
    }
    TrainConfig tc;
    tc.epochs = 150;
    tc.per_device_batch = 4;
    tc.grad_accum = 1;
    tc.learning_rate = 1e-2;
    tc.warmup_ratio = 0.1;
    tc.seed = 42;
    finetune(fresh, data, {8, 16.0, 0.0}, tc, {});
    double total = 0.0;
    for (const auto& s : data) total += fresh.lm_loss(s);
    CHECK(total / 4.0 < 0.1);
}

TEST_CASE("backend registry resolves toy and rejects unknown kinds") {
    auto b = make_backend("toy", {{"dim", 16}, {"heads", 2}, {"layers", 1}, {"ff", 32}});
    CHECK(b->dim() == 16);
    CHECK(b->vocab_size() == 64);
    CHECK(b->identity().find("toy(") == 0);
    CHECK(b->single_token("Yes").has_value());
    CHECK_FALSE(b->single_token("yes").has_value());
    CHECK(b->count_tokens("Yes or No") == 6);
    CHECK_THROWS_AS(make_backend("plugin-x", {}), ConfigError);
}

TEST_CASE("full-scale training defaults are the shipped defaults") {
    LoraConfig lora;
    CHECK(lora.rank == 16);
    CHECK(lora.alpha == 32.0);
    CHECK(lora.dropout == 0.05);
    TrainConfig tc;
    CHECK(tc.epochs == 5);
    CHECK(tc.per_device_batch == 2);
    CHECK(tc.grad_accum == 4);  // effective batch 8
    CHECK(tc.learning_rate == 1e-4);
    CHECK(tc.warmup_ratio == 0.1);
    CHECK(tc.schedule == "linear");
    CHECK(tc.seed == 42);
    ToyConfig toy;
    CHECK(toy.block_size <= kDefaultMaxSequenceLength);
    CHECK(kDefaultMaxSequenceLength == 4096);
}
