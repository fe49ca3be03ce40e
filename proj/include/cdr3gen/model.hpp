#pragma once

// Gated three-channel embedding fusion feeding a Pre-LN Transformer
// encoder-decoder, with hand-written backward passes for every parameter.
//
// Matrices are row-major with one token per row; linear maps are applied on
// the right (y = x W + b). All arithmetic is double precision.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cdr3gen/physchem.hpp"

namespace cdr3gen::model {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

inline constexpr double kMaskValue = -1e9;
inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
    int d_tok = 64;
    int d_phys = 32;
    int d_pos = 32;
    int n_head = 4;
    int n_enc = 2;
    int n_dec = 2;
    int d_ff = 512;
    int max_src_len = 55;
    int max_tgt_len = 28;  // SOS + 26 residues + EOS
    bool phys_enabled = true;
    std::uint64_t seed = 0;

    int d_model() const noexcept { return d_tok + (phys_enabled ? d_phys : 0) + d_pos; }
    int d_head() const noexcept { return d_model() / n_head; }
    // Throws InvalidConfig.
    void validate() const;
};

struct LayerNormParams {
    Mat gain;
    Mat bias;
};

struct AttentionParams {
    Mat wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FeedForwardParams {
    Mat w1, b1, w2, b2;
};

struct EncoderLayerParams {
    LayerNormParams ln_attn;
    AttentionParams attn;
    LayerNormParams ln_ff;
    FeedForwardParams ff;
};

struct DecoderLayerParams {
    LayerNormParams ln_self;
    AttentionParams self_attn;
    LayerNormParams ln_cross;
    AttentionParams cross_attn;
    LayerNormParams ln_ff;
    FeedForwardParams ff;
};

struct TensorRef {
    std::string name;
    Mat* value;
    bool decay;  // false for biases and LayerNorm parameters
};

struct ConstTensorRef {
    std::string name;
    const Mat* value;
    bool decay;
};

// All learnable tensors. Also used as the gradient container, so a
// gradient set has exactly the parameter shapes and naming.
struct ModelParams {
    Mat tok_emb;    // vocab x d_tok
    Mat phys_proj;  // 5 x d_phys (empty when the phys channel is disabled)
    Mat gate_w, gate_b;
    Mat fuse_w, fuse_b;
    std::vector<EncoderLayerParams> encoder;
    LayerNormParams encoder_norm;
    std::vector<DecoderLayerParams> decoder;
    LayerNormParams decoder_norm;
    Mat head_w, head_b;

    static ModelParams zeros(const ModelConfig& cfg);
    // Normal(0, 0.02) weights, zero biases, unit LayerNorm gains.
    static ModelParams initialize(const ModelConfig& cfg, std::uint64_t seed);

    std::vector<TensorRef> tensors();
    std::vector<ConstTensorRef> tensors() const;
    std::size_t count() const;
    bool all_finite() const;
    void set_zero();
    ModelParams& operator+=(const ModelParams& other);
};

// Fixed sinusoidal table, rows = positions.
Mat sinusoidal_positions(int length, int width);

// Mask builders: additive matrices with 0 for visible and kMaskValue for
// hidden keys.
Mat key_padding_mask(int query_len, const std::vector<bool>& key_is_pad);
Mat causal_mask(int len, const std::vector<bool>& key_is_pad);

// Single-head scaled dot-product attention softmax(Q K^T / sqrt(d) + mask) V.
// `probs`, when given, receives the attention weights.
Mat scaled_dot_attention(const Mat& q, const Mat& k, const Mat& v, const Mat& mask,
                         Mat* probs = nullptr);

struct LayerNormTrace {
    Mat xhat;
    Eigen::VectorXd inv_std;
};

struct AttentionTrace {
    Mat xq, xkv;
    Mat q, k, v;
    Mat concat;
    std::vector<Mat> probs;  // one (Lq x Lk) matrix per head
};

struct FeedForwardTrace {
    Mat x, pre, act;
};

struct FusionTrace {
    std::vector<int> ids;
    Mat z, gate, gated;
};

struct EncoderLayerTrace {
    LayerNormTrace ln_attn;
    AttentionTrace attn;
    LayerNormTrace ln_ff;
    FeedForwardTrace ff;
};

struct DecoderLayerTrace {
    LayerNormTrace ln_self;
    AttentionTrace self_attn;
    LayerNormTrace ln_cross;
    AttentionTrace cross_attn;
    LayerNormTrace ln_ff;
    FeedForwardTrace ff;
};

struct EncoderTrace {
    std::vector<EncoderLayerTrace> layers;
    LayerNormTrace norm;
};

struct DecoderTrace {
    std::vector<DecoderLayerTrace> layers;
    LayerNormTrace norm;
    Mat normed;
};

// Cached activations of one full forward pass, enough for backpropagation.
struct ForwardTrace {
    FusionTrace src_fusion;
    EncoderTrace encoder;
    FusionTrace tgt_fusion;
    DecoderTrace decoder;
    Mat memory;
    Mat logits;
};

// Multi-head attention: project, attend per head, concatenate, project by W_o.
Mat multi_head_attention(const Mat& xq, const Mat& xkv, const Mat& mask, const AttentionParams& p,
                         int n_head, AttentionTrace* trace = nullptr);

// Pre-LN encoder stack followed by the final encoder LayerNorm.
Mat encoder_forward(const Mat& src_embed, const std::vector<bool>& pad_mask, const ModelParams& params,
                    const ModelConfig& cfg, EncoderTrace* trace = nullptr);

// Pre-LN decoder stack (causal self-attention, cross-attention, feed-forward),
// final LayerNorm and the vocabulary head. Returns logits (len x vocab).
Mat decoder_forward(const Mat& tgt_embed, const Mat& memory, const std::vector<bool>& src_pad,
                    const std::vector<bool>& tgt_pad, const ModelParams& params, const ModelConfig& cfg,
                    DecoderTrace* trace = nullptr);

// One teacher-forced training example: full token ids of both streams.
// `tgt` starts with SOS; the decoder reads tgt[0..n-2] and predicts tgt[1..n-1].
struct Example {
    std::vector<int> src;
    std::vector<int> tgt;
};

struct LossAndGrad {
    double loss = 0.0;        // mean over non-PAD target tokens
    std::size_t tokens = 0;   // number of scored target tokens
    ModelParams grad;
};

struct NllSum {
    double nll = 0.0;
    std::size_t tokens = 0;
};

// Source memory plus cross-attention keys/values, computed once per context.
struct EncodedContext {
    Mat memory;
    std::vector<bool> src_pad;
    std::vector<Mat> cross_k, cross_v;  // per decoder layer
};

// Incremental decoder state for one hypothesis.
struct DecodeState {
    std::vector<Mat> self_k, self_v;  // per decoder layer, one row per consumed token
    int position = 0;                 // number of tokens consumed
    RowVec next_logits;               // logits for the next token
};

class Model {
public:
    // Parameters drawn from cfg.seed. The descriptor table is consulted only
    // when cfg.phys_enabled is true; it may be null otherwise.
    Model(const ModelConfig& cfg, const physchem::DescriptorTable* table);
    Model(const ModelConfig& cfg, ModelParams params, const physchem::DescriptorTable* table);

    const ModelConfig& config() const noexcept { return cfg_; }
    const ModelParams& params() const noexcept { return params_; }
    ModelParams& params() noexcept { return params_; }
    std::size_t parameter_count() const { return params_.count(); }

    // h_i = W_f(sigmoid(W_g z_i + b_g) * z_i) + b_f, z_i = [tok; phys; pos].
    Mat fuse_embeddings(std::span<const int> ids, FusionTrace* trace = nullptr) const;

    Mat encode(std::span<const int> src, EncoderTrace* trace = nullptr) const;
    // Logits for every decoder input position. This path and prepare() drop
    // trailing source PAD, so their memory has one row per leading token.
    Mat logits(std::span<const int> src, std::span<const int> tgt_in) const;
    ForwardTrace forward(std::span<const int> src, std::span<const int> tgt_in) const;

    // Label-smoothed cross-entropy averaged over all non-PAD target tokens
    // of the batch, with exact gradients. Throws EmptyBatch.
    LossAndGrad loss_and_grad(std::span<const Example> batch, double label_smoothing,
                              int threads = 1) const;
    // Unsmoothed summed negative log-likelihood.
    NllSum nll(std::span<const Example> batch, int threads = 1) const;

    // Chemistry term phi_j^T W_phys^T W_phys phi_i of the attention logit
    // decomposition. Diagnostic only; throws DisabledChannel.
    double attn_phys_term(char residue_i, char residue_j) const;

    EncodedContext prepare(std::span<const int> src) const;
    // State after feeding SOS.
    DecodeState begin(const EncodedContext& ctx) const;
    DecodeState advance(const EncodedContext& ctx, const DecodeState& state, int token) const;

private:
    void load_descriptors(const physchem::DescriptorTable* table);
    Mat fuse_at(std::span<const int> ids, int first_position, FusionTrace* trace) const;
    void fusion_backward(const Mat& dh, const FusionTrace& t, ModelParams& grad) const;
    void accumulate_example(const Example& ex, double label_smoothing, double scale, ModelParams& grad,
                            double& loss_sum) const;
    RowVec step_logits(const EncodedContext& ctx, DecodeState& state, int token) const;

    ModelConfig cfg_;
    ModelParams params_;
    Mat token_phys_;  // vocab x 5 z-scored descriptors; empty when disabled
    Mat src_positions_, tgt_positions_;
};

std::vector<bool> pad_flags(std::span<const int> ids);

}  // namespace cdr3gen::model
