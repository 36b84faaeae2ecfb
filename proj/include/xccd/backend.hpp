#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xccd/tokenizer.hpp"
#include "xccd/types.hpp"
#include "xccd/util.hpp"

namespace xccd::backend {

// Sequence cap for full-scale backends; the toy backend declares its own
// smaller context window.
inline constexpr int kDefaultMaxSequenceLength = 4096;

struct EmptySequence : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AssistantTruncated : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoSupervisedPositions : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TokenizedSequence {
    std::vector<int> token_ids;
    std::vector<int> attention_mask;  // right-padded: contiguous 1s then 0s
    std::vector<int> loss_mask;

    std::size_t size() const { return token_ids.size(); }
};

struct HiddenStates {
    std::vector<double> data;  // T x d, row-major
    int T = 0;
    int d = 0;

    double at(int t, int j) const { return data[static_cast<std::size_t>(t) * d + j]; }
};

struct ForwardResult {
    HiddenStates hidden;             // final layer states
    std::vector<double> final_dist;  // next-token probabilities at the last real position
};

struct LoraConfig {
    int rank = 16;
    double alpha = 32.0;
    double dropout = 0.05;
};

struct LoraTensors {
    int r = 0;
    int d_in = 0;
    int d_out = 0;
    std::vector<double> a;  // r x d_in
    std::vector<double> b;  // d_out x r, zero-initialized
};

struct LoraAdapter {
    LoraConfig config;
    std::map<std::string, LoraTensors> targets;

    void save(const std::filesystem::path& path) const;
    static LoraAdapter load(const std::filesystem::path& path);
};

struct TrainConfig {
    int epochs = 5;
    int per_device_batch = 2;
    int grad_accum = 4;  // effective batch = per_device_batch * grad_accum
    double learning_rate = 1e-4;
    double warmup_ratio = 0.1;
    std::string schedule = "linear";
    std::uint64_t seed = 42;
};

// Causal-LM abstraction the pipeline runs against. forward/generate/lm_loss
// are const and allocate their scratch locally, so batched evaluation may
// fan out across threads on one instance.
class Backend {
public:
    virtual ~Backend() = default;

    virtual int dim() const = 0;
    virtual int vocab_size() const = 0;
    virtual int max_len() const = 0;
    virtual std::string identity() const = 0;
    virtual std::uint64_t base_checksum() const = 0;

    virtual TokenizedSequence encode(const RenderedExchange& exchange, int max_len) const = 0;
    virtual TokenizedSequence encode_prompt(const std::optional<std::string>& system,
                                            const std::string& user) const = 0;
    virtual ForwardResult forward(const TokenizedSequence& seq) const = 0;
    virtual std::string generate(const TokenizedSequence& seq, int max_new_tokens) const = 0;
    virtual double lm_loss(const TokenizedSequence& seq) const = 0;

    // Token id for a literal that the tokenizer maps to one piece, if any.
    virtual std::optional<int> single_token(const std::string& literal) const = 0;

    virtual std::size_t count_tokens(const std::string& text) const = 0;
};

struct ToyConfig {
    int dim = 32;
    int heads = 4;
    int layers = 2;
    int ff = 128;
    int block_size = 512;
    double init_std = 0.08;
    // The readout stays frozen under adapter training, so its rows need
    // enough norm for confident next-token logits; layernormed states have
    // norm ~sqrt(dim).
    double lm_head_init_std = 0.4;
    std::uint64_t seed = 42;
};

// Two-layer causal transformer over the character tokenizer, deterministic
// given its seed and small enough that the full test suite runs in seconds.
class ToyBackend : public Backend {
public:
    explicit ToyBackend(ToyConfig cfg = {});
    ~ToyBackend() override;
    ToyBackend(ToyBackend&&) noexcept;
    ToyBackend& operator=(ToyBackend&&) noexcept;
    ToyBackend(const ToyBackend&) = delete;
    ToyBackend& operator=(const ToyBackend&) = delete;

    int dim() const override;
    int vocab_size() const override;
    int max_len() const override;
    std::string identity() const override;
    std::uint64_t base_checksum() const override;

    TokenizedSequence encode(const RenderedExchange& exchange, int max_len) const override;
    TokenizedSequence encode_prompt(const std::optional<std::string>& system,
                                    const std::string& user) const override;
    ForwardResult forward(const TokenizedSequence& seq) const override;
    std::string generate(const TokenizedSequence& seq, int max_new_tokens) const override;
    double lm_loss(const TokenizedSequence& seq) const override;
    std::optional<int> single_token(const std::string& literal) const override;
    std::size_t count_tokens(const std::string& text) const override;

    const CharTokenizer& tokenizer() const;
    const ToyConfig& config() const;

    // Adapter management; the attached adapter is owned by the backend and is
    // the only mutable state (single writer during training).
    void attach_adapter(LoraAdapter adapter);
    void detach_adapter();
    bool has_adapter() const;
    const LoraAdapter& adapter() const;
    LoraAdapter& adapter_mut();

    std::vector<std::string> lora_target_names() const;
    static LoraAdapter init_adapter(const ToyConfig& cfg, const LoraConfig& lc,
                                    std::uint64_t seed);

    using AdapterGrads = std::map<std::string, LoraTensors>;

    // Mean lm loss over the micro-batch plus analytic gradients w.r.t. the
    // attached adapter. dropout_rng enables adapter dropout (training only).
    double lm_loss_and_adapter_grads(const std::vector<TokenizedSequence>& batch,
                                     AdapterGrads& grads, Rng* dropout_rng = nullptr) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Next-token-prediction fine-tuning of a fresh LoRA adapter on a frozen base;
// leaves the trained adapter attached and returns a copy. When run_dir is
// non-empty a checkpoint is written per epoch, keeping only the latest.
LoraAdapter finetune(ToyBackend& backend, const std::vector<TokenizedSequence>& dataset,
                     const LoraConfig& lora_cfg, const TrainConfig& train_cfg,
                     const std::filesystem::path& run_dir = {});

// Named backend registry: "toy" is built in, plugins register at load time.
using BackendFactory = std::function<std::unique_ptr<Backend>(const nlohmann::json& params)>;
void register_backend(const std::string& kind, BackendFactory factory);
std::unique_ptr<Backend> make_backend(const std::string& kind, const nlohmann::json& params);
std::vector<std::string> registered_backends();

}  // namespace xccd::backend
