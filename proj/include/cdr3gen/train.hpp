#pragma once

// AdamW training with warm-up plus cosine decay, global gradient clipping
// and early stopping on validation perplexity.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdr3gen/checkpoint.hpp"
#include "cdr3gen/data_io.hpp"
#include "cdr3gen/model.hpp"

namespace cdr3gen::train {

using checkpoint::OptimizerState;
using model::Example;
using model::ModelParams;

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

struct TrainConfig {
    double lr_peak = 2e-4;
    AdamWConfig adamw;
    int batch_size = 256;
    int max_epochs = 100;
    long warmup_steps = -1;  // negative: 5% of the total step budget
    long max_steps = 0;      // 0: no cap beyond max_epochs
    double clip_norm = 1.0;
    int patience = 5;
    double label_smoothing = 0.1;
    std::uint64_t seed = 0;
    int threads = 1;

    // Throws InvalidConfig.
    void validate() const;
};

nlohmann::json config_to_json(const TrainConfig& cfg);

// Linear ramp 0 -> lr_peak over warmup_steps, then half-cosine down to 0 at
// total_steps (and 0 afterwards).
double cosine_lr(long step, long total_steps, long warmup_steps, double lr_peak);

double global_norm(const ModelParams& grads);

// Rescales all gradients by clip_norm / norm when the global L2 norm
// exceeds clip_norm. Returns the norm before clipping.
double clip_gradients(ModelParams& grads, double clip_norm);

// One decoupled-decay AdamW update at learning rate lr. Weight decay skips
// tensors flagged decay = false (biases, LayerNorm). Throws ShapeMismatch.
void adamw_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
                const AdamWConfig& cfg);

// exp of the mean unsmoothed token NLL over non-PAD targets. Throws EmptySplit.
double perplexity(const model::Model& m, std::span<const Example> split, int threads = 1);

std::vector<Example> encode_examples(std::span<const data_io::Triple> triples);

class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    // Returns true when value strictly improves on the best so far.
    bool observe(double value);
    bool should_stop() const noexcept { return since_best_ >= patience_; }
    int best_index() const noexcept { return best_index_; }  // 0-based observation index
    double best_value() const noexcept { return best_; }

private:
    int patience_;
    int observed_ = 0;
    int best_index_ = -1;
    int since_best_ = 0;
    double best_ = 0.0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    long steps = 0;
    double train_loss = 0.0;  // token-weighted mean over the epoch's batches
    std::optional<double> valid_ppl;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::vector<double> lr_trace;    // per optimizer step
    std::vector<double> step_loss;   // per optimizer step
    std::vector<double> grad_norm;   // pre-clip, per optimizer step
    std::string stop_reason;         // max_epochs | max_steps | early_stopping
    int best_epoch = 0;
    std::optional<double> best_valid_ppl;
    long total_steps = 0;
    long warmup_steps = 0;

    nlohmann::json to_json() const;
};

struct TrainResult {
    ModelParams best_params;
    OptimizerState optimizer;  // state after the final step
    TrainReport report;
};

using LogFn = std::function<void(const std::string&)>;

// Trains from the seeded initialization of model_cfg. With an empty
// validation split there is no early stopping and the final parameters are
// returned. Throws NonFinite if a parameter stops being finite.
TrainResult train(std::span<const Example> train_set, std::span<const Example> valid_set,
                  const model::ModelConfig& model_cfg, const TrainConfig& cfg,
                  const physchem::DescriptorTable* table, const LogFn& log = {});

}  // namespace cdr3gen::train
