#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hgpmil/matrix.hpp"

namespace hgpmil::heads {

enum class HeadKind { MaxPool, GatedAttention };
enum class HeadTask { Classification, Cox };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& s);  // "maxpool" | "attention"

/// Trainable parameters of a MIL head in one flat vector:
///   [V (L x D) | U (L x D) | ww (L) | W (outputs x D) | b (outputs, classification only)]
/// Max pooling has L = 0, so only the classifier block is present.
struct HeadParams {
    HeadKind kind = HeadKind::GatedAttention;
    HeadTask task = HeadTask::Classification;
    std::size_t input_dim = 0;
    std::size_t hidden = 0;
    std::size_t outputs = 0;
    std::vector<double> theta;

    // Adam state, carried so training can resume from a saved head.
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    std::uint64_t adam_step = 0;

    std::size_t v_offset() const { return 0; }
    std::size_t u_offset() const { return hidden * input_dim; }
    std::size_t ww_offset() const { return 2 * hidden * input_dim; }
    std::size_t w_offset() const { return ww_offset() + hidden; }
    std::size_t b_offset() const { return w_offset() + outputs * input_dim; }
    std::size_t size() const { return b_offset() + (task == HeadTask::Classification ? outputs : 0); }
};

inline constexpr std::size_t kDefaultAttentionHidden = 64;

/// Classifier/attention weights uniform in [-1/sqrt(D), 1/sqrt(D)], gate
/// vector in [-1/sqrt(L), 1/sqrt(L)], biases zero.
HeadParams init_head(HeadKind kind, HeadTask task, std::size_t input_dim, std::size_t outputs,
                     std::size_t hidden, std::uint64_t seed);

/// Pooled bag representation plus whatever the backward pass needs.
struct Pooled {
    std::vector<double> z;
    std::vector<double> attention;         // attention head only
    std::vector<std::size_t> argmax;       // max pooling only; per feature, smallest index on ties
    std::vector<std::size_t> order;        // reduction order (rows sorted lexicographically)
    std::vector<double> gate_tanh;         // M x L
    std::vector<double> gate_sigm;         // M x L
};

Pooled pool(const HeadParams& params, const Matrix& instances);

/// Accumulates d(loss)/d(theta) into grad given d(loss)/dz.
void pool_backward(const HeadParams& params, const Matrix& instances, const Pooled& pooled, std::span<const double> dz,
                   std::span<double> grad);

std::vector<double> linear_output(const HeadParams& params, std::span<const double> z);

struct MaxPoolOutput {
    std::vector<double> logits;
    std::vector<std::size_t> argmax_instance;  // per class: instance contributing most to that logit
    std::vector<double> pooled;
};

struct AttentionOutput {
    std::vector<double> logits;
    std::vector<double> attention;
    std::vector<double> pooled;
};

MaxPoolOutput forward_maxpool(const HeadParams& params, const Matrix& instances);
AttentionOutput forward_attention(const HeadParams& params, const Matrix& instances);

std::vector<double> softmax(std::span<const double> logits);

/// Cross-entropy of one bag; adds the gradient into grad when given.
double bag_cross_entropy(const HeadParams& params, const Matrix& instances, int label, std::span<double> grad = {});

struct LabeledBag {
    const Matrix* instances = nullptr;
    int label = 0;
};

struct SurvivalBag {
    const Matrix* instances = nullptr;
    double time = 0.0;
    bool event = false;
};

/// Mean cross-entropy over bags and, when grad is given, its gradient.
double mean_cross_entropy(const HeadParams& params, std::span<const LabeledBag> bags, std::vector<double>* grad = nullptr);

/// Breslow-tie Cox negative partial log-likelihood of risk = beta . z,
/// averaged over events.
double cox_npll(const HeadParams& params, std::span<const SurvivalBag> bags, std::vector<double>* grad = nullptr);

enum class LossKind { CrossEntropy, CoxNPLL };

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 40;
    double weight_decay = 1e-4;
    std::uint64_t seed = 42;
    int patience = 0;  // epochs without validation improvement before stopping; 0 disables
    LossKind loss = LossKind::CrossEntropy;
    std::size_t hidden = kDefaultAttentionHidden;
};

struct TrainLog {
    std::vector<double> train_loss;  // per epoch, after the epoch's updates
    std::vector<double> val_loss;
    double initial_loss = 0.0;
    int best_epoch = -1;
};

HeadParams train_classifier(std::span<const LabeledBag> train, std::size_t num_classes, HeadKind kind,
                            const TrainConfig& cfg, std::span<const LabeledBag> validation = {},
                            TrainLog* log = nullptr);

HeadParams train_cox(std::span<const SurvivalBag> train, HeadKind kind, const TrainConfig& cfg, TrainLog* log = nullptr);

struct Prediction {
    std::vector<double> probabilities;  // classification
    double risk = 0.0;                  // Cox
    std::vector<double> attention;      // attention head
    std::vector<std::size_t> argmax_instance;  // max pooling head
};

Prediction predict(const HeadParams& params, const Matrix& instances);

std::string to_json(const HeadParams& params);
HeadParams head_from_json(const std::string& text);

} // namespace hgpmil::heads
