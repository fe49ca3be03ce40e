#include "cdr3gen/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "cdr3gen/error.hpp"
#include "cdr3gen/rng.hpp"
#include "cdr3gen/seqcore.hpp"
#include "cdr3gen/util.hpp"

namespace cdr3gen::train {

namespace {

constexpr const char* kModule = "train";

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, kModule, what);
}

}  // namespace

void TrainConfig::validate() const {
    require(lr_peak > 0.0, "lr_peak must be positive");
    require(adamw.beta1 > 0.0 && adamw.beta1 < 1.0, "beta1 must lie in (0,1)");
    require(adamw.beta2 > 0.0 && adamw.beta2 < 1.0, "beta2 must lie in (0,1)");
    require(adamw.eps > 0.0, "eps must be positive");
    require(adamw.weight_decay >= 0.0, "weight_decay must be non-negative");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(max_epochs >= 1, "max_epochs must be at least 1");
    require(max_steps >= 0, "max_steps must be non-negative");
    require(clip_norm > 0.0, "clip_norm must be positive");
    require(patience >= 1, "patience must be at least 1");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0, "label_smoothing must lie in [0,1)");
    require(threads >= 1, "threads must be at least 1");
}

nlohmann::json config_to_json(const TrainConfig& cfg) {
    return {{"lr_peak", cfg.lr_peak},
            {"beta1", cfg.adamw.beta1},
            {"beta2", cfg.adamw.beta2},
            {"eps", cfg.adamw.eps},
            {"weight_decay", cfg.adamw.weight_decay},
            {"batch_size", cfg.batch_size},
            {"max_epochs", cfg.max_epochs},
            {"warmup_steps", cfg.warmup_steps},
            {"max_steps", cfg.max_steps},
            {"clip_norm", cfg.clip_norm},
            {"patience", cfg.patience},
            {"label_smoothing", cfg.label_smoothing},
            {"seed", cfg.seed}};
}

double cosine_lr(long step, long total_steps, long warmup_steps, double lr_peak) {
    if (step < warmup_steps) return lr_peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return lr_peak;
    if (step >= total_steps) return 0.0;
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_norm(const ModelParams& grads) {
    double sq = 0.0;
    for (const auto& t : grads.tensors()) sq += t.value->squaredNorm();
    return std::sqrt(sq);
}

double clip_gradients(ModelParams& grads, double clip_norm) {
    const double norm = global_norm(grads);
    if (norm > clip_norm) {
        const double scale = clip_norm / norm;
        for (auto& t : grads.tensors()) *t.value *= scale;
    }
    return norm;
}

void adamw_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
                const AdamWConfig& cfg) {
    auto p = params.tensors();
    const auto g = grads.tensors();
    auto m = state.m.tensors();
    auto v = state.v.tensors();
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
        throw Error(ErrorKind::ShapeMismatch, kModule, "gradient/optimizer tensors do not match the parameters");
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto rows = p[i].value->rows(), cols = p[i].value->cols();
        for (const model::Mat* other : {g[i].value, static_cast<const model::Mat*>(m[i].value),
                                        static_cast<const model::Mat*>(v[i].value)}) {
            if (other->rows() != rows || other->cols() != cols)
                throw Error(ErrorKind::ShapeMismatch, kModule, "tensor '" + p[i].name + "' shape mismatch");
        }
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto w = p[i].value->array();
        const auto gr = g[i].value->array();
        auto mt = m[i].value->array();
        auto vt = v[i].value->array();
        mt = cfg.beta1 * mt + (1.0 - cfg.beta1) * gr;
        vt = cfg.beta2 * vt + (1.0 - cfg.beta2) * gr.square();
        if (p[i].decay && cfg.weight_decay > 0.0) w *= 1.0 - lr * cfg.weight_decay;
        w -= lr * (mt / bc1) / ((vt / bc2).sqrt() + cfg.eps);
    }
}

double perplexity(const model::Model& m, std::span<const Example> split, int threads) {
    if (split.empty()) throw Error(ErrorKind::EmptySplit, kModule, "perplexity of an empty split");
    const model::NllSum s = m.nll(split, threads);
    if (s.tokens == 0) throw Error(ErrorKind::EmptySplit, kModule, "split has no target tokens");
    return std::exp(s.nll / static_cast<double>(s.tokens));
}

std::vector<Example> encode_examples(std::span<const data_io::Triple> triples) {
    std::vector<Example> out;
    out.reserve(triples.size());
    for (const auto& t : triples)
        out.push_back({seqcore::encode_source(t.mhc, t.peptide).ids, seqcore::encode_target(t.tcr).ids});
    return out;
}

bool EarlyStopper::observe(double value) {
    const int index = observed_++;
    if (best_index_ < 0 || value < best_) {
        best_ = value;
        best_index_ = index;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

nlohmann::json TrainReport::to_json() const {
    nlohmann::json epochs_json = nlohmann::json::array();
    for (const EpochRecord& e : epochs) {
        epochs_json.push_back({{"epoch", e.epoch},
                               {"steps", e.steps},
                               {"train_loss", e.train_loss},
                               {"valid_ppl", e.valid_ppl ? nlohmann::json(*e.valid_ppl) : nlohmann::json()}});
    }
    return {{"epochs", epochs_json},
            {"lr_trace", lr_trace},
            {"step_loss", step_loss},
            {"grad_norm", grad_norm},
            {"stop_reason", stop_reason},
            {"best_epoch", best_epoch},
            {"best_valid_ppl", best_valid_ppl ? nlohmann::json(*best_valid_ppl) : nlohmann::json()},
            {"total_steps", total_steps},
            {"warmup_steps", warmup_steps}};
}

TrainResult train(std::span<const Example> train_set, std::span<const Example> valid_set,
                  const model::ModelConfig& model_cfg, const TrainConfig& cfg,
                  const physchem::DescriptorTable* table, const LogFn& log) {
    cfg.validate();
    if (train_set.empty()) throw Error(ErrorKind::EmptySplit, kModule, "training split is empty");

    model::Model model(model_cfg, table);
    TrainResult result;
    result.optimizer = OptimizerState::zeros(model_cfg);
    TrainReport& report = result.report;

    const auto n = static_cast<long>(train_set.size());
    const long batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const long epoch_budget = batches_per_epoch * cfg.max_epochs;
    report.total_steps = cfg.max_steps > 0 ? std::min(cfg.max_steps, epoch_budget) : epoch_budget;
    report.warmup_steps = cfg.warmup_steps >= 0 ? cfg.warmup_steps : report.total_steps * 5 / 100;

    EarlyStopper stopper(cfg.patience);
    long step = 0;
    std::vector<std::size_t> order(train_set.size());
    std::vector<Example> batch;
    for (int epoch = 1; epoch <= cfg.max_epochs && step < report.total_steps; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(epoch))));
        shuffle(order, rng);

        EpochRecord rec;
        rec.epoch = epoch;
        double loss_tokens = 0.0;
        std::size_t tokens = 0;
        for (std::size_t start = 0; start < order.size() && step < report.total_steps;
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);

            model::LossAndGrad lg = model.loss_and_grad(batch, cfg.label_smoothing, cfg.threads);
            const double norm = clip_gradients(lg.grad, cfg.clip_norm);
            ++step;
            const double lr = cosine_lr(step, report.total_steps, report.warmup_steps, cfg.lr_peak);
            adamw_step(model.params(), lg.grad, result.optimizer, lr, cfg.adamw);
            if (!model.params().all_finite())
                throw Error(ErrorKind::NonFinite, kModule, "non-finite parameter after step " + std::to_string(step));

            report.lr_trace.push_back(lr);
            report.step_loss.push_back(lg.loss);
            report.grad_norm.push_back(norm);
            loss_tokens += lg.loss * static_cast<double>(lg.tokens);
            tokens += lg.tokens;
            ++rec.steps;
        }
        rec.train_loss = loss_tokens / static_cast<double>(tokens);

        bool improved = true;
        if (!valid_set.empty()) {
            rec.valid_ppl = perplexity(model, valid_set, cfg.threads);
            improved = stopper.observe(*rec.valid_ppl);
        }
        if (improved) {
            result.best_params = model.params();
            report.best_epoch = epoch;
            report.best_valid_ppl = rec.valid_ppl;
        }
        report.epochs.push_back(rec);
        if (log) {
            std::string line = "epoch " + std::to_string(epoch) + " steps " + std::to_string(step) + " train_loss " +
                               format_double(rec.train_loss);
            if (rec.valid_ppl) line += " valid_ppl " + format_double(*rec.valid_ppl);
            log(line);
        }
        if (!valid_set.empty() && stopper.should_stop()) {
            report.stop_reason = "early_stopping";
            return result;
        }
    }
    report.stop_reason = step >= report.total_steps && report.total_steps < epoch_budget ? "max_steps" : "max_epochs";
    return result;
}

}  // namespace cdr3gen::train
