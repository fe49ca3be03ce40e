#include "cdr3gen/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "cdr3gen/error.hpp"
#include "cdr3gen/parallel.hpp"
#include "cdr3gen/rng.hpp"
#include "cdr3gen/seqcore.hpp"

namespace cdr3gen::model {

namespace {

constexpr int kVocab = seqcore::kVocabSize;
constexpr int kMaxChunks = 8;

Mat row_zeros(int n) { return Mat::Zero(1, n); }

Mat affine(const Mat& x, const Mat& w, const Mat& b) {
    Mat y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

void softmax_rows(Mat& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        // Scalar exp; masked logits underflow to exactly 0.
        s.row(r) = (s.row(r).array() - m).unaryExpr([](double x) { return x < -745.0 ? 0.0 : std::exp(x); });
        s.row(r) /= s.row(r).sum();
    }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat layer_norm(const Mat& x, const LayerNormParams& p, LayerNormTrace* trace) {
    const auto n = static_cast<double>(x.cols());
    Mat xhat(x.rows(), x.cols());
    Eigen::VectorXd inv(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).sum() / n;
        const auto centered = (x.row(r).array() - mu).eval();
        const double var = centered.square().sum() / n;
        inv[r] = 1.0 / std::sqrt(var + kLayerNormEps);
        xhat.row(r) = centered * inv[r];
    }
    Mat y = xhat.array().rowwise() * p.gain.row(0).array();
    y.rowwise() += p.bias.row(0);
    if (trace) {
        trace->xhat = std::move(xhat);
        trace->inv_std = std::move(inv);
    }
    return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormParams& p, const LayerNormTrace& t,
                        LayerNormParams& grad) {
    const Mat& xhat = t.xhat;
    grad.gain += (dy.array() * xhat.array()).colwise().sum().matrix();
    grad.bias += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * p.gain.row(0).array();
    const auto n = static_cast<double>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double sum_d = dxhat.row(r).sum();
        const double sum_dx = (dxhat.row(r).array() * xhat.row(r).array()).sum();
        dx.row(r) = (t.inv_std[r] / n) * (n * dxhat.row(r).array() - sum_d - xhat.row(r).array() * sum_dx);
    }
    return dx;
}

Mat feed_forward(const Mat& x, const FeedForwardParams& p, FeedForwardTrace* trace) {
    Mat pre = affine(x, p.w1, p.b1);
    Mat act = pre.unaryExpr([](double v) { return gelu(v); });
    Mat out = affine(act, p.w2, p.b2);
    if (trace) {
        trace->x = x;
        trace->pre = std::move(pre);
        trace->act = std::move(act);
    }
    return out;
}

Mat feed_forward_backward(const Mat& dout, const FeedForwardParams& p, const FeedForwardTrace& t,
                          FeedForwardParams& grad) {
    grad.w2.noalias() += t.act.transpose() * dout;
    grad.b2 += dout.colwise().sum();
    Mat dpre = dout * p.w2.transpose();
    dpre.array() *= t.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    grad.w1.noalias() += t.x.transpose() * dpre;
    grad.b1 += dpre.colwise().sum();
    return dpre * p.w1.transpose();
}

// Per-head softmax(q k^T / sqrt(d_h) + mask) v, heads concatenated.
Mat attend(const Mat& q, const Mat& k, const Mat& v, const Mat& mask, int n_head,
           std::vector<Mat>* probs) {
    const Eigen::Index dh = q.cols() / n_head;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat concat(q.rows(), q.cols());
    if (probs) probs->clear();
    for (int h = 0; h < n_head; ++h) {
        Mat s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
        if (mask.size() > 0) s += mask;
        softmax_rows(s);
        concat.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
        if (probs) probs->push_back(std::move(s));
    }
    return concat;
}

void attention_backward(const Mat& dout, const AttentionParams& p, int n_head, const AttentionTrace& t,
                        AttentionParams& grad, Mat& dxq, Mat& dxkv) {
    grad.wo.noalias() += t.concat.transpose() * dout;
    grad.bo += dout.colwise().sum();
    const Mat dconcat = dout * p.wo.transpose();

    const Eigen::Index dh = t.q.cols() / n_head;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat dq = Mat::Zero(t.q.rows(), t.q.cols());
    Mat dk = Mat::Zero(t.k.rows(), t.k.cols());
    Mat dv = Mat::Zero(t.v.rows(), t.v.cols());
    for (int h = 0; h < n_head; ++h) {
        const Mat& prob = t.probs[static_cast<std::size_t>(h)];
        const auto dc = dconcat.middleCols(h * dh, dh);
        const Mat dprob = dc * t.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh).noalias() += prob.transpose() * dc;
        const Eigen::VectorXd row_dot = (dprob.array() * prob.array()).rowwise().sum();
        const Mat dscore = prob.array() * (dprob.colwise() - row_dot).array();
        dq.middleCols(h * dh, dh).noalias() += scale * (dscore * t.k.middleCols(h * dh, dh));
        dk.middleCols(h * dh, dh).noalias() += scale * (dscore.transpose() * t.q.middleCols(h * dh, dh));
    }
    grad.wq.noalias() += t.xq.transpose() * dq;
    grad.bq += dq.colwise().sum();
    grad.wk.noalias() += t.xkv.transpose() * dk;
    grad.bk += dk.colwise().sum();
    grad.wv.noalias() += t.xkv.transpose() * dv;
    grad.bv += dv.colwise().sum();
    dxq = dq * p.wq.transpose();
    dxkv = dk * p.wk.transpose() + dv * p.wv.transpose();
}

Mat encoder_backward(const Mat& dmemory, const ModelParams& params, const ModelConfig& cfg,
                     const EncoderTrace& t, ModelParams& grad) {
    Mat dx = layer_norm_backward(dmemory, params.encoder_norm, t.norm, grad.encoder_norm);
    for (int l = cfg.n_enc - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        const EncoderLayerParams& p = params.encoder[li];
        const EncoderLayerTrace& lt = t.layers[li];
        EncoderLayerParams& g = grad.encoder[li];

        const Mat dff_in = feed_forward_backward(dx, p.ff, lt.ff, g.ff);
        dx += layer_norm_backward(dff_in, p.ln_ff, lt.ln_ff, g.ln_ff);

        Mat dxq, dxkv;
        attention_backward(dx, p.attn, cfg.n_head, lt.attn, g.attn, dxq, dxkv);
        dx += layer_norm_backward(dxq + dxkv, p.ln_attn, lt.ln_attn, g.ln_attn);
    }
    return dx;
}

// Returns d(tgt_embed); accumulates d(memory) into dmemory.
Mat decoder_backward(const Mat& dlogits, const ModelParams& params, const ModelConfig& cfg,
                     const DecoderTrace& t, ModelParams& grad, Mat& dmemory) {
    grad.head_w.noalias() += t.normed.transpose() * dlogits;
    grad.head_b += dlogits.colwise().sum();
    const Mat dnormed = dlogits * params.head_w.transpose();
    Mat dy = layer_norm_backward(dnormed, params.decoder_norm, t.norm, grad.decoder_norm);
    for (int l = cfg.n_dec - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        const DecoderLayerParams& p = params.decoder[li];
        const DecoderLayerTrace& lt = t.layers[li];
        DecoderLayerParams& g = grad.decoder[li];

        const Mat dff_in = feed_forward_backward(dy, p.ff, lt.ff, g.ff);
        dy += layer_norm_backward(dff_in, p.ln_ff, lt.ln_ff, g.ln_ff);

        Mat dq, dmem;
        attention_backward(dy, p.cross_attn, cfg.n_head, lt.cross_attn, g.cross_attn, dq, dmem);
        dmemory += dmem;
        dy += layer_norm_backward(dq, p.ln_cross, lt.ln_cross, g.ln_cross);

        Mat dxq, dxkv;
        attention_backward(dy, p.self_attn, cfg.n_head, lt.self_attn, g.self_attn, dxq, dxkv);
        dy += layer_norm_backward(dxq + dxkv, p.ln_self, lt.ln_self, g.ln_self);
    }
    return dy;
}

template <class Params, class Out>
void collect_tensors(Params& p, Out& out) {
    auto add = [&out](std::string name, auto& m, bool decay) { out.push_back({std::move(name), &m, decay}); };
    auto add_ln = [&add](const std::string& prefix, auto& ln) {
        add(prefix + ".gain", ln.gain, false);
        add(prefix + ".bias", ln.bias, false);
    };
    auto add_attn = [&add](const std::string& prefix, auto& a) {
        add(prefix + ".wq", a.wq, true);
        add(prefix + ".bq", a.bq, false);
        add(prefix + ".wk", a.wk, true);
        add(prefix + ".bk", a.bk, false);
        add(prefix + ".wv", a.wv, true);
        add(prefix + ".bv", a.bv, false);
        add(prefix + ".wo", a.wo, true);
        add(prefix + ".bo", a.bo, false);
    };
    auto add_ff = [&add](const std::string& prefix, auto& f) {
        add(prefix + ".w1", f.w1, true);
        add(prefix + ".b1", f.b1, false);
        add(prefix + ".w2", f.w2, true);
        add(prefix + ".b2", f.b2, false);
    };

    add("embed.tok", p.tok_emb, true);
    if (p.phys_proj.size() > 0) add("embed.phys_proj", p.phys_proj, true);
    add("embed.gate_w", p.gate_w, true);
    add("embed.gate_b", p.gate_b, false);
    add("embed.fuse_w", p.fuse_w, true);
    add("embed.fuse_b", p.fuse_b, false);
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        const std::string prefix = "encoder." + std::to_string(l);
        add_ln(prefix + ".ln_attn", p.encoder[l].ln_attn);
        add_attn(prefix + ".attn", p.encoder[l].attn);
        add_ln(prefix + ".ln_ff", p.encoder[l].ln_ff);
        add_ff(prefix + ".ff", p.encoder[l].ff);
    }
    add_ln("encoder.norm", p.encoder_norm);
    for (std::size_t l = 0; l < p.decoder.size(); ++l) {
        const std::string prefix = "decoder." + std::to_string(l);
        add_ln(prefix + ".ln_self", p.decoder[l].ln_self);
        add_attn(prefix + ".self_attn", p.decoder[l].self_attn);
        add_ln(prefix + ".ln_cross", p.decoder[l].ln_cross);
        add_attn(prefix + ".cross_attn", p.decoder[l].cross_attn);
        add_ln(prefix + ".ln_ff", p.decoder[l].ln_ff);
        add_ff(prefix + ".ff", p.decoder[l].ff);
    }
    add_ln("decoder.norm", p.decoder_norm);
    add("head.w", p.head_w, true);
    add("head.b", p.head_b, false);
}

LayerNormParams ln_zeros(int d) { return {row_zeros(d), row_zeros(d)}; }

AttentionParams attn_zeros(int d) {
    return {Mat::Zero(d, d), row_zeros(d), Mat::Zero(d, d), row_zeros(d),
            Mat::Zero(d, d), row_zeros(d), Mat::Zero(d, d), row_zeros(d)};
}

FeedForwardParams ff_zeros(int d, int d_ff) {
    return {Mat::Zero(d, d_ff), row_zeros(d_ff), Mat::Zero(d_ff, d), row_zeros(d)};
}

}  // namespace

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, "model", msg); };
    if (d_tok <= 0 || d_pos <= 0) fail("channel widths must be positive");
    if (phys_enabled && d_phys <= 0) fail("d_phys must be positive when the phys channel is enabled");
    if (n_head <= 0 || d_model() % n_head != 0) {
        fail("d_model " + std::to_string(d_model()) + " is not divisible by n_head " + std::to_string(n_head));
    }
    if (n_enc <= 0 || n_dec <= 0 || d_ff <= 0) fail("layer counts and d_ff must be positive");
    if (max_src_len <= 0 || max_tgt_len <= 0) fail("sequence limits must be positive");
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
    const int d = cfg.d_model();
    ModelParams p;
    p.tok_emb = Mat::Zero(kVocab, cfg.d_tok);
    if (cfg.phys_enabled) p.phys_proj = Mat::Zero(static_cast<int>(physchem::kDims), cfg.d_phys);
    p.gate_w = Mat::Zero(d, d);
    p.gate_b = row_zeros(d);
    p.fuse_w = Mat::Zero(d, d);
    p.fuse_b = row_zeros(d);
    for (int l = 0; l < cfg.n_enc; ++l) {
        p.encoder.push_back({ln_zeros(d), attn_zeros(d), ln_zeros(d), ff_zeros(d, cfg.d_ff)});
    }
    p.encoder_norm = ln_zeros(d);
    for (int l = 0; l < cfg.n_dec; ++l) {
        p.decoder.push_back(
            {ln_zeros(d), attn_zeros(d), ln_zeros(d), attn_zeros(d), ln_zeros(d), ff_zeros(d, cfg.d_ff)});
    }
    p.decoder_norm = ln_zeros(d);
    p.head_w = Mat::Zero(d, kVocab);
    p.head_b = row_zeros(kVocab);
    return p;
}

ModelParams ModelParams::initialize(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p = zeros(cfg);
    std::mt19937_64 rng(seed);
    constexpr double init_std = 0.02;
    constexpr double two_pi = 6.283185307179586;
    // Box-Muller; normal_distribution is implementation-defined.
    auto uniform = [&rng] { return uniform_open01(rng); };
    for (TensorRef& t : p.tensors()) {
        if (t.decay) {
            for (Eigen::Index i = 0; i < t.value->size(); ++i) {
                const double u1 = uniform();
                const double u2 = uniform();
                t.value->data()[i] = init_std * std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
            }
        } else if (t.name.ends_with(".gain")) {
            t.value->setOnes();
        }
    }
    return p;
}

std::vector<TensorRef> ModelParams::tensors() {
    std::vector<TensorRef> out;
    collect_tensors(*this, out);
    return out;
}

std::vector<ConstTensorRef> ModelParams::tensors() const {
    std::vector<ConstTensorRef> out;
    collect_tensors(*this, out);
    return out;
}

std::size_t ModelParams::count() const {
    std::size_t n = 0;
    for (const ConstTensorRef& t : tensors()) n += static_cast<std::size_t>(t.value->size());
    return n;
}

bool ModelParams::all_finite() const {
    for (const ConstTensorRef& t : tensors()) {
        if (!t.value->allFinite()) return false;
    }
    return true;
}

void ModelParams::set_zero() {
    for (TensorRef& t : tensors()) t.value->setZero();
}

ModelParams& ModelParams::operator+=(const ModelParams& other) {
    auto mine = tensors();
    const auto theirs = other.tensors();
    if (mine.size() != theirs.size()) throw Error(ErrorKind::ShapeMismatch, "model", "tensor count differs");
    for (std::size_t i = 0; i < mine.size(); ++i) *mine[i].value += *theirs[i].value;
    return *this;
}

Mat sinusoidal_positions(int length, int width) {
    Mat pe(length, width);
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < width; ++i) {
            const int pair = i / 2;
            const double freq = std::pow(10000.0, -2.0 * pair / static_cast<double>(width));
            pe(pos, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
        }
    }
    return pe;
}

Mat key_padding_mask(int query_len, const std::vector<bool>& key_is_pad) {
    Mat mask = Mat::Zero(query_len, static_cast<Eigen::Index>(key_is_pad.size()));
    for (std::size_t j = 0; j < key_is_pad.size(); ++j) {
        if (key_is_pad[j]) mask.col(static_cast<Eigen::Index>(j)).setConstant(kMaskValue);
    }
    return mask;
}

Mat causal_mask(int len, const std::vector<bool>& key_is_pad) {
    Mat mask = key_padding_mask(len, key_is_pad);
    for (int i = 0; i < len; ++i) {
        for (int j = i + 1; j < len; ++j) mask(i, j) = kMaskValue;
    }
    return mask;
}

Mat scaled_dot_attention(const Mat& q, const Mat& k, const Mat& v, const Mat& mask, Mat* probs) {
    std::vector<Mat> heads;
    Mat out = attend(q, k, v, mask, 1, probs ? &heads : nullptr);
    if (probs) *probs = std::move(heads.front());
    return out;
}

Mat multi_head_attention(const Mat& xq, const Mat& xkv, const Mat& mask, const AttentionParams& p,
                         int n_head, AttentionTrace* trace) {
    Mat q = affine(xq, p.wq, p.bq);
    Mat k = affine(xkv, p.wk, p.bk);
    Mat v = affine(xkv, p.wv, p.bv);
    Mat concat = attend(q, k, v, mask, n_head, trace ? &trace->probs : nullptr);
    Mat out = affine(concat, p.wo, p.bo);
    if (trace) {
        trace->xq = xq;
        trace->xkv = xkv;
        trace->q = std::move(q);
        trace->k = std::move(k);
        trace->v = std::move(v);
        trace->concat = std::move(concat);
    }
    return out;
}

Mat encoder_forward(const Mat& src_embed, const std::vector<bool>& pad_mask, const ModelParams& params,
                    const ModelConfig& cfg, EncoderTrace* trace) {
    const auto len = static_cast<int>(src_embed.rows());
    const Mat mask = key_padding_mask(len, pad_mask);
    if (trace) trace->layers.resize(static_cast<std::size_t>(cfg.n_enc));
    Mat x = src_embed;
    for (int l = 0; l < cfg.n_enc; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const EncoderLayerParams& p = params.encoder[li];
        EncoderLayerTrace* lt = trace ? &trace->layers[li] : nullptr;
        const Mat a = layer_norm(x, p.ln_attn, lt ? &lt->ln_attn : nullptr);
        x += multi_head_attention(a, a, mask, p.attn, cfg.n_head, lt ? &lt->attn : nullptr);
        const Mat b = layer_norm(x, p.ln_ff, lt ? &lt->ln_ff : nullptr);
        x += feed_forward(b, p.ff, lt ? &lt->ff : nullptr);
    }
    return layer_norm(x, params.encoder_norm, trace ? &trace->norm : nullptr);
}

Mat decoder_forward(const Mat& tgt_embed, const Mat& memory, const std::vector<bool>& src_pad,
                    const std::vector<bool>& tgt_pad, const ModelParams& params, const ModelConfig& cfg,
                    DecoderTrace* trace) {
    const auto len = static_cast<int>(tgt_embed.rows());
    const Mat self_mask = causal_mask(len, tgt_pad);
    const Mat cross_mask = key_padding_mask(len, src_pad);
    if (trace) trace->layers.resize(static_cast<std::size_t>(cfg.n_dec));
    Mat y = tgt_embed;
    for (int l = 0; l < cfg.n_dec; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const DecoderLayerParams& p = params.decoder[li];
        DecoderLayerTrace* lt = trace ? &trace->layers[li] : nullptr;
        const Mat a = layer_norm(y, p.ln_self, lt ? &lt->ln_self : nullptr);
        y += multi_head_attention(a, a, self_mask, p.self_attn, cfg.n_head, lt ? &lt->self_attn : nullptr);
        const Mat b = layer_norm(y, p.ln_cross, lt ? &lt->ln_cross : nullptr);
        y += multi_head_attention(b, memory, cross_mask, p.cross_attn, cfg.n_head,
                                  lt ? &lt->cross_attn : nullptr);
        const Mat c = layer_norm(y, p.ln_ff, lt ? &lt->ln_ff : nullptr);
        y += feed_forward(c, p.ff, lt ? &lt->ff : nullptr);
    }
    Mat normed = layer_norm(y, params.decoder_norm, trace ? &trace->norm : nullptr);
    Mat out = affine(normed, params.head_w, params.head_b);
    if (trace) trace->normed = std::move(normed);
    return out;
}

std::vector<bool> pad_flags(std::span<const int> ids) {
    std::vector<bool> flags(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) flags[i] = ids[i] == seqcore::kPad;
    return flags;
}

Model::Model(const ModelConfig& cfg, const physchem::DescriptorTable* table)
    : Model(cfg, ModelParams::initialize(cfg, cfg.seed), table) {}

Model::Model(const ModelConfig& cfg, ModelParams params, const physchem::DescriptorTable* table)
    : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    const ModelParams expected = ModelParams::zeros(cfg_);
    const auto want = expected.tensors();
    const auto got = params_.tensors();
    if (want.size() != got.size()) {
        throw Error(ErrorKind::ShapeMismatch, "model", "parameter set does not match the configuration");
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].name != got[i].name || want[i].value->rows() != got[i].value->rows() ||
            want[i].value->cols() != got[i].value->cols()) {
            throw Error(ErrorKind::ShapeMismatch, "model", "tensor '" + want[i].name + "' has the wrong shape");
        }
    }
    const int pos_rows = std::max(cfg_.max_src_len, cfg_.max_tgt_len);
    src_positions_ = sinusoidal_positions(pos_rows, cfg_.d_pos);
    tgt_positions_ = src_positions_;
    if (cfg_.phys_enabled) load_descriptors(table);
}

void Model::load_descriptors(const physchem::DescriptorTable* table) {
    if (!table) throw Error(ErrorKind::InvalidConfig, "model", "phys channel enabled without a descriptor table");
    token_phys_.resize(kVocab, static_cast<Eigen::Index>(physchem::kDims));
    for (int id = 0; id < kVocab; ++id) {
        const physchem::Descriptor z = table->zscore_token(id);
        for (std::size_t k = 0; k < physchem::kDims; ++k) token_phys_(id, static_cast<Eigen::Index>(k)) = z[k];
    }
}

Mat Model::fuse_embeddings(std::span<const int> ids, FusionTrace* trace) const {
    return fuse_at(ids, 0, trace);
}

Mat Model::fuse_at(std::span<const int> ids, int first_position, FusionTrace* trace) const {
    const auto len = static_cast<Eigen::Index>(ids.size());
    if (first_position + len > src_positions_.rows()) {
        throw Error(ErrorKind::InvalidConfig, "model",
                    "sequence of " + std::to_string(first_position + len) + " tokens exceeds positional table");
    }
    const int d = cfg_.d_model();
    Mat z(len, d);
    for (Eigen::Index i = 0; i < len; ++i) {
        const int id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= kVocab) {
            throw Error(ErrorKind::UnknownResidue, "model", "token id " + std::to_string(id) + " out of range");
        }
        z.row(i).head(cfg_.d_tok) = params_.tok_emb.row(id);
    }
    if (cfg_.phys_enabled) {
        Mat phi(len, static_cast<Eigen::Index>(physchem::kDims));
        for (Eigen::Index i = 0; i < len; ++i) phi.row(i) = token_phys_.row(ids[static_cast<std::size_t>(i)]);
        z.middleCols(cfg_.d_tok, cfg_.d_phys).noalias() = phi * params_.phys_proj;
    }
    z.rightCols(cfg_.d_pos) = src_positions_.middleRows(first_position, len);

    Mat gate = affine(z, params_.gate_w, params_.gate_b).unaryExpr([](double v) { return sigmoid(v); });
    Mat gated = gate.cwiseProduct(z);
    Mat h = affine(gated, params_.fuse_w, params_.fuse_b);
    if (trace) {
        trace->ids.assign(ids.begin(), ids.end());
        trace->z = std::move(z);
        trace->gate = std::move(gate);
        trace->gated = std::move(gated);
    }
    return h;
}

void Model::fusion_backward(const Mat& dh, const FusionTrace& t, ModelParams& grad) const {
    grad.fuse_w.noalias() += t.gated.transpose() * dh;
    grad.fuse_b += dh.colwise().sum();
    const Mat dgated = dh * params_.fuse_w.transpose();
    Mat dz = dgated.cwiseProduct(t.gate);
    const Mat dpre = (dgated.array() * t.z.array() * t.gate.array() * (1.0 - t.gate.array())).matrix();
    grad.gate_w.noalias() += t.z.transpose() * dpre;
    grad.gate_b += dpre.colwise().sum();
    dz.noalias() += dpre * params_.gate_w.transpose();
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
        grad.tok_emb.row(t.ids[i]) += dz.row(static_cast<Eigen::Index>(i)).head(cfg_.d_tok);
    }
    if (cfg_.phys_enabled) {
        Mat phi(static_cast<Eigen::Index>(t.ids.size()), static_cast<Eigen::Index>(physchem::kDims));
        for (std::size_t i = 0; i < t.ids.size(); ++i) phi.row(static_cast<Eigen::Index>(i)) = token_phys_.row(t.ids[i]);
        grad.phys_proj.noalias() += phi.transpose() * dz.middleCols(cfg_.d_tok, cfg_.d_phys);
    }
}

Mat Model::encode(std::span<const int> src, EncoderTrace* trace) const {
    return encoder_forward(fuse_embeddings(src), pad_flags(src), params_, cfg_, trace);
}

namespace {

// Trailing PAD positions carry exactly zero attention weight, so dropping
// them leaves every other activation unchanged.
std::span<const int> trim_padding(std::span<const int> src) {
    std::size_t n = src.size();
    while (n > 0 && src[n - 1] == seqcore::kPad) --n;
    return n == 0 ? src : src.first(n);
}

}  // namespace

Mat Model::logits(std::span<const int> src_full, std::span<const int> tgt_in) const {
    const auto src = trim_padding(src_full);
    const Mat memory = encode(src);
    return decoder_forward(fuse_embeddings(tgt_in), memory, pad_flags(src), pad_flags(tgt_in), params_, cfg_);
}

ForwardTrace Model::forward(std::span<const int> src_full, std::span<const int> tgt_in) const {
    const auto src = trim_padding(src_full);
    ForwardTrace t;
    const Mat src_embed = fuse_embeddings(src, &t.src_fusion);
    t.memory = encoder_forward(src_embed, pad_flags(src), params_, cfg_, &t.encoder);
    const Mat tgt_embed = fuse_embeddings(tgt_in, &t.tgt_fusion);
    t.logits = decoder_forward(tgt_embed, t.memory, pad_flags(src), pad_flags(tgt_in), params_, cfg_, &t.decoder);
    return t;
}

namespace {

std::size_t count_targets(const Example& ex) {
    std::size_t n = 0;
    for (std::size_t j = 1; j < ex.tgt.size(); ++j) n += ex.tgt[j] != seqcore::kPad;
    return n;
}

void check_example(const Example& ex) {
    if (ex.src.empty() || ex.tgt.size() < 2) {
        throw Error(ErrorKind::ShapeMismatch, "model", "example needs a source and at least SOS + one target");
    }
}

}  // namespace

void Model::accumulate_example(const Example& ex, double label_smoothing, double scale, ModelParams& grad,
                               double& loss_sum) const {
    const std::span<const int> tgt_in(ex.tgt.data(), ex.tgt.size() - 1);
    const ForwardTrace t = forward(ex.src, tgt_in);

    const double uniform = label_smoothing / kVocab;
    Mat dlogits = Mat::Zero(t.logits.rows(), t.logits.cols());
    for (Eigen::Index r = 0; r < t.logits.rows(); ++r) {
        const int target = ex.tgt[static_cast<std::size_t>(r) + 1];
        if (target == seqcore::kPad) continue;
        const double m = t.logits.row(r).maxCoeff();
        const double lse = m + std::log((t.logits.row(r).array() - m).exp().sum());
        const RowVec logp = t.logits.row(r).array() - lse;
        loss_sum += -(1.0 - label_smoothing) * logp[target] - uniform * logp.sum();
        RowVec d = logp.array().exp() - uniform;
        d[target] -= 1.0 - label_smoothing;
        dlogits.row(r) = d * scale;
    }

    Mat dmemory = Mat::Zero(t.memory.rows(), t.memory.cols());
    const Mat dtgt = decoder_backward(dlogits, params_, cfg_, t.decoder, grad, dmemory);
    fusion_backward(dtgt, t.tgt_fusion, grad);
    const Mat dsrc = encoder_backward(dmemory, params_, cfg_, t.encoder, grad);
    fusion_backward(dsrc, t.src_fusion, grad);
}

LossAndGrad Model::loss_and_grad(std::span<const Example> batch, double label_smoothing, int threads) const {
    if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "model", "loss requested on an empty batch");
    std::size_t tokens = 0;
    for (const Example& ex : batch) {
        check_example(ex);
        tokens += count_targets(ex);
    }
    if (tokens == 0) throw Error(ErrorKind::EmptyBatch, "model", "batch has no target tokens");
    const double scale = 1.0 / static_cast<double>(tokens);

    // Fixed chunking independent of the thread count keeps the reduction
    // order, and therefore the bits, identical for any --threads value.
    const std::size_t chunks = std::min<std::size_t>(batch.size(), kMaxChunks);
    std::vector<ModelParams> grads(chunks);
    std::vector<double> losses(chunks, 0.0);
    parallel_for(chunks, threads, [&](std::size_t c) {
        grads[c] = ModelParams::zeros(cfg_);
        const std::size_t begin = c * batch.size() / chunks;
        const std::size_t end = (c + 1) * batch.size() / chunks;
        for (std::size_t i = begin; i < end; ++i) accumulate_example(batch[i], label_smoothing, scale, grads[c], losses[c]);
    });

    LossAndGrad out;
    out.tokens = tokens;
    out.grad = std::move(grads[0]);
    double loss_sum = losses[0];
    for (std::size_t c = 1; c < chunks; ++c) {
        out.grad += grads[c];
        loss_sum += losses[c];
    }
    out.loss = loss_sum * scale;
    return out;
}

NllSum Model::nll(std::span<const Example> batch, int threads) const {
    std::vector<NllSum> parts(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        const Example& ex = batch[i];
        check_example(ex);
        const std::span<const int> tgt_in(ex.tgt.data(), ex.tgt.size() - 1);
        const Mat out = logits(ex.src, tgt_in);
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            const int target = ex.tgt[static_cast<std::size_t>(r) + 1];
            if (target == seqcore::kPad) continue;
            const double m = out.row(r).maxCoeff();
            const double lse = m + std::log((out.row(r).array() - m).exp().sum());
            parts[i].nll += lse - out(r, target);
            ++parts[i].tokens;
        }
    });
    NllSum total;
    for (const NllSum& p : parts) {
        total.nll += p.nll;
        total.tokens += p.tokens;
    }
    return total;
}

double Model::attn_phys_term(char residue_i, char residue_j) const {
    if (!cfg_.phys_enabled) {
        throw Error(ErrorKind::DisabledChannel, "model", "physicochemical channel is disabled");
    }
    const int id_i = seqcore::vocab().residue_id(residue_i);
    const int id_j = seqcore::vocab().residue_id(residue_j);
    if (id_i < 0 || id_j < 0) throw Error(ErrorKind::UnknownResidue, "model", "diagnostic needs residue symbols");
    const RowVec e_i = token_phys_.row(id_i) * params_.phys_proj;
    const RowVec e_j = token_phys_.row(id_j) * params_.phys_proj;
    return e_j.dot(e_i);
}

EncodedContext Model::prepare(std::span<const int> src_full) const {
    const auto src = trim_padding(src_full);
    EncodedContext ctx;
    ctx.memory = encode(src);
    ctx.src_pad = pad_flags(src);
    for (const DecoderLayerParams& p : params_.decoder) {
        ctx.cross_k.push_back(affine(ctx.memory, p.cross_attn.wk, p.cross_attn.bk));
        ctx.cross_v.push_back(affine(ctx.memory, p.cross_attn.wv, p.cross_attn.bv));
    }
    return ctx;
}

DecodeState Model::begin(const EncodedContext& ctx) const {
    DecodeState state;
    const int d = cfg_.d_model();
    state.self_k.assign(static_cast<std::size_t>(cfg_.n_dec), Mat(0, d));
    state.self_v.assign(static_cast<std::size_t>(cfg_.n_dec), Mat(0, d));
    state.next_logits = step_logits(ctx, state, seqcore::kSos);
    return state;
}

DecodeState Model::advance(const EncodedContext& ctx, const DecodeState& state, int token) const {
    DecodeState next = state;
    next.next_logits = step_logits(ctx, next, token);
    return next;
}

RowVec Model::step_logits(const EncodedContext& ctx, DecodeState& state, int token) const {
    const std::array<int, 1> ids{token};
    Mat y = fuse_at(ids, state.position, nullptr);
    const Mat cross_mask = key_padding_mask(1, ctx.src_pad);
    for (int l = 0; l < cfg_.n_dec; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const DecoderLayerParams& p = params_.decoder[li];

        const Mat a = layer_norm(y, p.ln_self, nullptr);
        Mat& keys = state.self_k[li];
        Mat& values = state.self_v[li];
        keys.conservativeResize(keys.rows() + 1, Eigen::NoChange);
        values.conservativeResize(values.rows() + 1, Eigen::NoChange);
        keys.row(keys.rows() - 1) = affine(a, p.self_attn.wk, p.self_attn.bk);
        values.row(values.rows() - 1) = affine(a, p.self_attn.wv, p.self_attn.bv);
        const Mat q_self = affine(a, p.self_attn.wq, p.self_attn.bq);
        y += affine(attend(q_self, keys, values, Mat(), cfg_.n_head, nullptr), p.self_attn.wo, p.self_attn.bo);

        const Mat b = layer_norm(y, p.ln_cross, nullptr);
        const Mat q_cross = affine(b, p.cross_attn.wq, p.cross_attn.bq);
        y += affine(attend(q_cross, ctx.cross_k[li], ctx.cross_v[li], cross_mask, cfg_.n_head, nullptr),
                    p.cross_attn.wo, p.cross_attn.bo);

        const Mat c = layer_norm(y, p.ln_ff, nullptr);
        y += feed_forward(c, p.ff, nullptr);
    }
    ++state.position;
    const Mat normed = layer_norm(y, params_.decoder_norm, nullptr);
    return affine(normed, params_.head_w, params_.head_b).row(0);
}

}  // namespace cdr3gen::model
