#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xccd/backend.hpp"
#include "xccd/types.hpp"
#include "xccd/util.hpp"

namespace xccd::stabilize {

struct AllPadding : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct DegenerateBatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using PooledEmbedding = std::vector<double>;

// Attention-mask-aware mean pooling: sum h_t * m_t / sum m_t.
PooledEmbedding mean_pool(const backend::HiddenStates& hidden, const std::vector<int>& mask);

struct HeadParams {
    std::vector<double> w_p;  // d x d
    std::vector<double> b_p;  // d
    std::vector<double> w_c;  // d (row vector)
    double b_c = 0.0;
    double dropout = 0.1;
    int d = 0;
};

HeadParams init_head(int d, std::uint64_t seed, double dropout = 0.1);

// z = tanh(W_p h + b_p); dropout on z in train mode; logit = W_c z + b_c.
// The projection z is also returned for contrastive batching.
struct HeadForward {
    double logit = 0.0;
    std::vector<double> z;          // pre-dropout projection
    std::vector<double> z_dropped;  // classifier input (== z in eval mode)
    std::vector<double> drop_mask;  // sampled multipliers; empty in eval mode
};

HeadForward head_forward(const PooledEmbedding& h, const HeadParams& params,
                         bool train_mode = false, Rng* rng = nullptr);

// Numerically stable binary cross-entropy on a logit.
double bce_loss(double logit, int label);

int predict_head(double logit);  // 1 iff sigmoid(logit) >= 0.5

struct ContrastiveConfig {
    double tau = 0.07;
    double lambda = 0.5;
};

// Supervised contrastive loss over l2-normalized projections, temperature-
// scaled cosine similarities, averaged over anchors with at least one
// in-batch positive. Throws DegenerateBatch when no anchor has a positive.
double supcon_loss(const std::vector<std::vector<double>>& z, const std::vector<int>& labels,
                   double tau);

// Loss plus analytic gradient w.r.t. the raw (unnormalized) projections.
double supcon_loss_grad(const std::vector<std::vector<double>>& z, const std::vector<int>& labels,
                        double tau, std::vector<std::vector<double>>& dz);

// mean BCE + lambda * supcon; lambda = 0 is exactly the mean BCE (the
// contrastive term is not evaluated).
double joint_loss(const std::vector<double>& logits, const std::vector<std::vector<double>>& z,
                  const std::vector<int>& labels, const ContrastiveConfig& config);

struct LabelTokenSets {
    std::set<int> yes_tokens;
    std::set<int> no_tokens;
};

// Builds the sets by summing every single-token case/space variant the
// backend's tokenizer admits.
LabelTokenSets label_token_sets(const backend::Backend& b);

struct ForcedConclusionResult {
    int label = 0;  // always 0 or 1
    std::string first_stage_response;
    double p_yes = 0.0;
    double p_no = 0.0;
};

// Two-stage inference: free generation under the reasoning prompt, then one
// forward pass over the follow-up prompt comparing summed yes/no token
// probabilities. Strict inequality decides 1; ties fall to 0. No second-stage
// decoding.
ForcedConclusionResult forced_conclusion(const backend::Backend& b,
                                         const std::optional<std::string>& system,
                                         const std::string& reasoning_prompt,
                                         const LabelTokenSets& tokens, int max_new_tokens);

enum class HeadObjective { bce, joint };

struct HeadTrainConfig {
    HeadObjective objective = HeadObjective::bce;
    ContrastiveConfig contrastive;
    int epochs = 20;
    int batch_size = 8;
    double learning_rate = 1e-2;
    double dropout = 0.1;
    std::uint64_t seed = 42;
};

struct HeadGrads {
    std::vector<double> w_p;
    std::vector<double> b_p;
    std::vector<double> w_c;
    double b_c = 0.0;
};

// Objective value and analytic gradients w.r.t. head parameters on one batch.
// Dropout masks are sampled from rng when train_mode; pass nullptr for the
// deterministic objective used by the finite-difference checks.
double head_objective(const HeadParams& params, const std::vector<PooledEmbedding>& pooled,
                      const std::vector<int>& labels, HeadObjective objective,
                      const ContrastiveConfig& config, HeadGrads* grads, Rng* dropout_rng);

// Adam on the head parameters over cached pooled embeddings; the backbone is
// not touched.
HeadParams train_head_on_embeddings(const std::vector<PooledEmbedding>& pooled,
                                    const std::vector<int>& labels, const HeadTrainConfig& config,
                                    int d);

std::vector<PooledEmbedding> pool_dataset(const backend::Backend& b,
                                          const std::vector<RenderedExchange>& exchanges);

HeadParams train_head(const backend::Backend& b,
                      const std::vector<std::pair<RenderedExchange, int>>& dataset,
                      const HeadTrainConfig& config);

double head_accuracy(const HeadParams& params, const std::vector<PooledEmbedding>& pooled,
                     const std::vector<int>& labels);

void save_head(const std::filesystem::path& path, const HeadParams& params,
               const HeadTrainConfig& config, const std::string& backbone_identity);
HeadParams load_head(const std::filesystem::path& path);

}  // namespace xccd::stabilize
