#include "sepkit/model.hpp"

#include "sepkit/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace sepkit {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

// ---- small dense kernels ---------------------------------------------------

// C = A (m x k) * B (k x n)
Matrix matmul(const Matrix& A, const Matrix& B) {
    Matrix C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* crow = C.row(i);
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double a = arow[k];
            if (a == 0.0) continue;
            const double* brow = B.row(k);
            for (std::size_t j = 0; j < B.cols; ++j) {
                crow[j] += a * brow[j];
            }
        }
    }
    return C;
}

// C = A^T (A is m x k) * B (m x n) -> k x n
Matrix matmul_tn(const Matrix& A, const Matrix& B) {
    Matrix C(A.cols, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        const double* brow = B.row(i);
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double a = arow[k];
            if (a == 0.0) continue;
            double* crow = C.row(k);
            for (std::size_t j = 0; j < B.cols; ++j) {
                crow[j] += a * brow[j];
            }
        }
    }
    return C;
}

// C = A (m x k) * B^T (B is n x k) -> m x n
Matrix matmul_nt(const Matrix& A, const Matrix& B) {
    Matrix C(A.rows, B.rows);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* crow = C.row(i);
        for (std::size_t j = 0; j < B.rows; ++j) {
            const double* brow = B.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < A.cols; ++k) {
                acc += arow[k] * brow[k];
            }
            crow[j] = acc;
        }
    }
    return C;
}

void add_row_bias(Matrix& M, const std::vector<double>& bias) {
    for (std::size_t i = 0; i < M.rows; ++i) {
        double* row = M.row(i);
        for (std::size_t j = 0; j < M.cols; ++j) {
            row[j] += bias[j];
        }
    }
}

Matrix slice_cols(const Matrix& M, std::size_t c0, std::size_t width) {
    Matrix out(M.rows, width);
    for (std::size_t i = 0; i < M.rows; ++i) {
        const double* src = M.row(i) + c0;
        std::copy(src, src + width, out.row(i));
    }
    return out;
}

void paste_cols(Matrix& dst, const Matrix& src, std::size_t c0) {
    for (std::size_t i = 0; i < src.rows; ++i) {
        std::copy(src.row(i), src.row(i) + src.cols, dst.row(i) + c0);
    }
}

void add_cols(Matrix& dst, const Matrix& src, std::size_t c0) {
    for (std::size_t i = 0; i < src.rows; ++i) {
        const double* s = src.row(i);
        double* d = dst.row(i) + c0;
        for (std::size_t j = 0; j < src.cols; ++j) {
            d[j] += s[j];
        }
    }
}

// ---- layer norm ------------------------------------------------------------

struct LnStats {
    std::vector<double> mean;
    std::vector<double> rstd;
};

Matrix layer_norm(const Matrix& x, const std::vector<double>& gain, const std::vector<double>& bias,
                  LnStats& stats) {
    Matrix y(x.rows, x.cols);
    stats.mean.resize(x.rows);
    stats.rstd.resize(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) mean += xr[j];
        mean /= static_cast<double>(x.cols);
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(x.cols);
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        stats.mean[i] = mean;
        stats.rstd[i] = rstd;
        double* yr = y.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) {
            yr[j] = gain[j] * (xr[j] - mean) * rstd + bias[j];
        }
    }
    return y;
}

// dy -> dx (returned); accumulates dgain/dbias.
Matrix layer_norm_backward(const Matrix& x, const LnStats& stats, const std::vector<double>& gain,
                           const Matrix& dy, std::vector<double>& dgain, std::vector<double>& dbias) {
    Matrix dx(x.rows, x.cols);
    const double inv_n = 1.0 / static_cast<double>(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        const double* dyr = dy.row(i);
        double* dxr = dx.row(i);
        const double mean = stats.mean[i];
        const double rstd = stats.rstd[i];
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double xhat = (xr[j] - mean) * rstd;
            const double dxhat = dyr[j] * gain[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgain[j] += dyr[j] * xhat;
            dbias[j] += dyr[j];
        }
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double xhat = (xr[j] - mean) * rstd;
            const double dxhat = dyr[j] * gain[j];
            dxr[j] = rstd * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
        }
    }
    return dx;
}

// ---- activations and positions ----------------------------------------------

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void add_sinusoidal_position(double* row, std::size_t d_model, std::size_t pos) {
    for (std::size_t k = 0; 2 * k < d_model; ++k) {
        const double rate = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(d_model));
        const double angle = static_cast<double>(pos) * rate;
        row[2 * k] += std::sin(angle);
        if (2 * k + 1 < d_model) {
            row[2 * k + 1] += std::cos(angle);
        }
    }
}

// ---- forward cache -----------------------------------------------------------

struct LayerActivations {
    Matrix x_in;
    Matrix ln1_out;
    LnStats ln1;
    Matrix q, k, v;
    Matrix attn_concat;
    Matrix x_mid;
    Matrix ln2_out;
    LnStats ln2;
    Matrix ff_pre;
    Matrix ff_act;
};

struct Activations {
    Matrix x0;
    std::vector<LayerActivations> layers;
    Matrix x_final;
    Matrix lnf_out;
    LnStats lnf;
    Matrix logits;
    Matrix probs;
    double loss = 0.0;
    std::vector<AttentionMask> masks;
};

void check_tokens(const ModelConfig& cfg, const TokenSeq& tokens) {
    if (tokens.size() > cfg.max_seq) {
        throw std::invalid_argument("forward: input length " + std::to_string(tokens.size()) +
                                    " exceeds max_seq " + std::to_string(cfg.max_seq));
    }
    for (TokenId id : tokens.ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) {
            throw std::invalid_argument("forward: token id " + std::to_string(id) + " outside vocab");
        }
    }
}

Activations run_forward(const ModelParams& params, const TokenSeq& tokens,
                        const std::vector<MaskPolicy>& layer_policies) {
    const ModelConfig& cfg = params.config;
    cfg.validate();
    check_tokens(cfg, tokens);
    if (layer_policies.size() != cfg.n_layers) {
        throw std::invalid_argument("forward: layer policy count != n_layers");
    }
    const std::size_t m = tokens.size();
    const std::size_t d = cfg.d_model;
    const std::size_t dh = cfg.head_dim();

    Activations acts;
    acts.x0 = Matrix(m, d);
    for (std::size_t i = 0; i < m; ++i) {
        const double* emb = params.embedding.row(static_cast<std::size_t>(tokens.ids[i]));
        std::copy(emb, emb + d, acts.x0.row(i));
        add_sinusoidal_position(acts.x0.row(i), d, i);
    }

    acts.masks.reserve(cfg.n_layers);
    for (const MaskPolicy& policy : layer_policies) {
        acts.masks.push_back(build_mask(policy, tokens));
    }

    Matrix x = acts.x0;
    acts.layers.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        LayerActivations& la = acts.layers[l];
        const LayerParams& lp = params.layers[l];
        la.x_in = x;
        la.ln1_out = layer_norm(x, lp.ln1_g, lp.ln1_b, la.ln1);
        la.q = matmul(la.ln1_out, lp.wq);
        la.k = matmul(la.ln1_out, lp.wk);
        la.v = matmul(la.ln1_out, lp.wv);
        la.attn_concat = Matrix(m, d);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const Matrix qh = slice_cols(la.q, h * dh, dh);
            const Matrix kh = slice_cols(la.k, h * dh, dh);
            const Matrix vh = slice_cols(la.v, h * dh, dh);
            const Matrix oh = masked_attention(qh, kh, vh, acts.masks[l]);
            paste_cols(la.attn_concat, oh, h * dh);
        }
        Matrix attn_out = matmul(la.attn_concat, lp.wo);
        la.x_mid = x;
        for (std::size_t i = 0; i < m * d; ++i) la.x_mid.data[i] += attn_out.data[i];

        la.ln2_out = layer_norm(la.x_mid, lp.ln2_g, lp.ln2_b, la.ln2);
        la.ff_pre = matmul(la.ln2_out, lp.w1);
        add_row_bias(la.ff_pre, lp.b1);
        la.ff_act = la.ff_pre;
        for (double& vv : la.ff_act.data) vv = gelu(vv);
        Matrix ff_out = matmul(la.ff_act, lp.w2);
        add_row_bias(ff_out, lp.b2);
        x = la.x_mid;
        for (std::size_t i = 0; i < m * d; ++i) x.data[i] += ff_out.data[i];
    }
    acts.x_final = x;
    acts.lnf_out = layer_norm(x, params.lnf_g, params.lnf_b, acts.lnf);
    acts.logits = matmul(acts.lnf_out, params.head);

    // softmax + mean next-token cross-entropy
    acts.probs = Matrix(m, cfg.vocab);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double* lr = acts.logits.row(i);
        double* pr = acts.probs.row(i);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cfg.vocab; ++j) max_logit = std::max(max_logit, lr[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < cfg.vocab; ++j) {
            pr[j] = std::exp(lr[j] - max_logit);
            denom += pr[j];
        }
        for (std::size_t j = 0; j < cfg.vocab; ++j) pr[j] /= denom;
        if (i + 1 < m) {
            loss -= std::log(pr[static_cast<std::size_t>(tokens.ids[i + 1])]);
        }
    }
    acts.loss = m >= 2 ? loss / static_cast<double>(m - 1) : 0.0;
    return acts;
}

// Accumulates d(loss_scale * loss)/d(params) into grads.
void run_backward(const ModelParams& params, const TokenSeq& tokens, const Activations& acts,
                  double loss_scale, ModelParams& grads) {
    const ModelConfig& cfg = params.config;
    const std::size_t m = tokens.size();
    if (m < 2) return;  // no targets, zero gradient
    const std::size_t d = cfg.d_model;
    const std::size_t dh = cfg.head_dim();

    Matrix dlogits(m, cfg.vocab);
    const double scale = loss_scale / static_cast<double>(m - 1);
    for (std::size_t i = 0; i + 1 < m; ++i) {
        const double* pr = acts.probs.row(i);
        double* dr = dlogits.row(i);
        for (std::size_t j = 0; j < cfg.vocab; ++j) dr[j] = pr[j] * scale;
        dr[static_cast<std::size_t>(tokens.ids[i + 1])] -= scale;
    }

    // head and final norm
    Matrix dlnf = matmul_nt(dlogits, params.head);
    {
        Matrix dhead = matmul_tn(acts.lnf_out, dlogits);
        for (std::size_t i = 0; i < dhead.data.size(); ++i) grads.head.data[i] += dhead.data[i];
    }
    Matrix dx = layer_norm_backward(acts.x_final, acts.lnf, params.lnf_g, dlnf, grads.lnf_g, grads.lnf_b);

    for (std::size_t l = cfg.n_layers; l-- > 0;) {
        const LayerActivations& la = acts.layers[l];
        const LayerParams& lp = params.layers[l];
        LayerParams& lg = grads.layers[l];

        // feed-forward block: x_out = x_mid + W2(gelu(W1 ln2 + b1)) + b2
        Matrix dff_out = dx;  // residual passthrough keeps dx for x_mid
        {
            Matrix dact = matmul_nt(dff_out, lp.w2);
            Matrix dw2 = matmul_tn(la.ff_act, dff_out);
            for (std::size_t i = 0; i < dw2.data.size(); ++i) lg.w2.data[i] += dw2.data[i];
            for (std::size_t i = 0; i < m; ++i) {
                const double* r = dff_out.row(i);
                for (std::size_t j = 0; j < d; ++j) lg.b2[j] += r[j];
            }
            Matrix dpre = dact;
            for (std::size_t i = 0; i < dpre.data.size(); ++i) {
                dpre.data[i] *= gelu_grad(la.ff_pre.data[i]);
            }
            Matrix dw1 = matmul_tn(la.ln2_out, dpre);
            for (std::size_t i = 0; i < dw1.data.size(); ++i) lg.w1.data[i] += dw1.data[i];
            for (std::size_t i = 0; i < m; ++i) {
                const double* r = dpre.row(i);
                for (std::size_t j = 0; j < cfg.d_ff; ++j) lg.b1[j] += r[j];
            }
            Matrix dln2 = matmul_nt(dpre, lp.w1);
            Matrix dmid = layer_norm_backward(la.x_mid, la.ln2, lp.ln2_g, dln2, lg.ln2_g, lg.ln2_b);
            for (std::size_t i = 0; i < m * d; ++i) dx.data[i] += dmid.data[i];
        }

        // attention block: x_mid = x_in + Wo(concat heads(ln1))
        {
            Matrix dattn_out = dx;  // residual passthrough keeps dx for x_in
            Matrix dconcat = matmul_nt(dattn_out, lp.wo);
            Matrix dwo = matmul_tn(la.attn_concat, dattn_out);
            for (std::size_t i = 0; i < dwo.data.size(); ++i) lg.wo.data[i] += dwo.data[i];

            Matrix dq(m, d), dk(m, d), dv(m, d);
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                const Matrix qh = slice_cols(la.q, h * dh, dh);
                const Matrix kh = slice_cols(la.k, h * dh, dh);
                const Matrix vh = slice_cols(la.v, h * dh, dh);
                const Matrix doh = slice_cols(dconcat, h * dh, dh);
                AttentionGrads hg = attention_backward(qh, kh, vh, acts.masks[l], doh);
                add_cols(dq, hg.dQ, h * dh);
                add_cols(dk, hg.dK, h * dh);
                add_cols(dv, hg.dV, h * dh);
            }
            Matrix dwq = matmul_tn(la.ln1_out, dq);
            Matrix dwk = matmul_tn(la.ln1_out, dk);
            Matrix dwv = matmul_tn(la.ln1_out, dv);
            for (std::size_t i = 0; i < dwq.data.size(); ++i) {
                lg.wq.data[i] += dwq.data[i];
                lg.wk.data[i] += dwk.data[i];
                lg.wv.data[i] += dwv.data[i];
            }
            Matrix dln1 = matmul_nt(dq, lp.wq);
            {
                Matrix t1 = matmul_nt(dk, lp.wk);
                Matrix t2 = matmul_nt(dv, lp.wv);
                for (std::size_t i = 0; i < dln1.data.size(); ++i) dln1.data[i] += t1.data[i] + t2.data[i];
            }
            Matrix din = layer_norm_backward(la.x_in, la.ln1, lp.ln1_g, dln1, lg.ln1_g, lg.ln1_b);
            for (std::size_t i = 0; i < m * d; ++i) dx.data[i] += din.data[i];
        }
    }

    // embedding rows (positional encoding has no parameters)
    for (std::size_t i = 0; i < m; ++i) {
        const double* r = dx.row(i);
        double* er = grads.embedding.row(static_cast<std::size_t>(tokens.ids[i]));
        for (std::size_t j = 0; j < d; ++j) er[j] += r[j];
    }
}

// ---- parameter plumbing -------------------------------------------------------

std::vector<std::vector<double>*> param_arrays(ModelParams& p) {
    std::vector<std::vector<double>*> arrays;
    arrays.push_back(&p.embedding.data);
    for (LayerParams& l : p.layers) {
        arrays.push_back(&l.wq.data);
        arrays.push_back(&l.wk.data);
        arrays.push_back(&l.wv.data);
        arrays.push_back(&l.wo.data);
        arrays.push_back(&l.w1.data);
        arrays.push_back(&l.b1);
        arrays.push_back(&l.w2.data);
        arrays.push_back(&l.b2);
        arrays.push_back(&l.ln1_g);
        arrays.push_back(&l.ln1_b);
        arrays.push_back(&l.ln2_g);
        arrays.push_back(&l.ln2_b);
    }
    arrays.push_back(&p.lnf_g);
    arrays.push_back(&p.lnf_b);
    arrays.push_back(&p.head.data);
    return arrays;
}

ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    for (std::vector<double>* arr : param_arrays(z)) {
        std::fill(arr->begin(), arr->end(), 0.0);
    }
    return z;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_seq == 0) {
        throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    }
}

void TrainConfig::validate() const {
    if (batch == 0 || seq_len == 0) {
        throw std::invalid_argument("TrainConfig: batch and seq_len must be positive");
    }
    if (lr < 0.0 || eps <= 0.0 || clip < 0.0) {
        throw std::invalid_argument("TrainConfig: lr/clip must be >= 0 and eps > 0");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
    }
}

ModelParams init_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    p.embedding = Matrix(cfg.vocab, cfg.d_model);
    p.layers.resize(cfg.n_layers);
    for (LayerParams& l : p.layers) {
        l.wq = Matrix(cfg.d_model, cfg.d_model);
        l.wk = Matrix(cfg.d_model, cfg.d_model);
        l.wv = Matrix(cfg.d_model, cfg.d_model);
        l.wo = Matrix(cfg.d_model, cfg.d_model);
        l.w1 = Matrix(cfg.d_model, cfg.d_ff);
        l.b1.assign(cfg.d_ff, 0.0);
        l.w2 = Matrix(cfg.d_ff, cfg.d_model);
        l.b2.assign(cfg.d_model, 0.0);
        l.ln1_g.assign(cfg.d_model, 1.0);
        l.ln1_b.assign(cfg.d_model, 0.0);
        l.ln2_g.assign(cfg.d_model, 1.0);
        l.ln2_b.assign(cfg.d_model, 0.0);
    }
    p.lnf_g.assign(cfg.d_model, 1.0);
    p.lnf_b.assign(cfg.d_model, 0.0);
    p.head = Matrix(cfg.d_model, cfg.vocab);

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    auto fill = [&](Matrix& mat) {
        for (double& v : mat.data) v = normal(rng);
    };
    fill(p.embedding);
    for (LayerParams& l : p.layers) {
        fill(l.wq);
        fill(l.wk);
        fill(l.wv);
        fill(l.wo);
        fill(l.w1);
        fill(l.w2);
    }
    fill(p.head);
    return p;
}

ForwardResult forward(const ModelParams& params, const TokenSeq& tokens,
                      const std::vector<MaskPolicy>& layer_policies) {
    Activations acts = run_forward(params, tokens, layer_policies);
    return {std::move(acts.logits), acts.loss};
}

ModelParams loss_gradients(const ModelParams& params, const TokenSeq& tokens,
                           const std::vector<MaskPolicy>& layer_policies) {
    const Activations acts = run_forward(params, tokens, layer_policies);
    ModelParams grads = zeros_like(params);
    run_backward(params, tokens, acts, 1.0, grads);
    return grads;
}

TrainResult train(ModelParams& params, const TokenSeq& corpus, const TrainConfig& tcfg,
                  const std::vector<MaskPolicy>& layer_policies) {
    params.config.validate();
    tcfg.validate();
    if (layer_policies.size() != params.config.n_layers) {
        throw std::invalid_argument("train: layer policy count != n_layers");
    }
    const std::size_t window = tcfg.seq_len + 1;
    if (corpus.size() < window) {
        throw std::invalid_argument("train: corpus too short, need at least seq_len+1 tokens");
    }
    if (window > params.config.max_seq) {
        throw std::invalid_argument("train: seq_len+1 exceeds max_seq");
    }

    std::mt19937_64 rng(tcfg.seed);
    std::uniform_int_distribution<std::size_t> offset_dist(0, corpus.size() - window);

    ModelParams grads = zeros_like(params);
    ModelParams adam_m = zeros_like(params);
    ModelParams adam_v = zeros_like(params);
    auto arrays_p = param_arrays(params);
    auto arrays_g = param_arrays(grads);
    auto arrays_m = param_arrays(adam_m);
    auto arrays_v = param_arrays(adam_v);

    const ModelDims dims{params.config.d_model, params.config.n_heads, params.config.n_layers,
                         params.config.d_ff, params.config.vocab};

    TrainResult result;
    result.curve.reserve(tcfg.steps);
    std::uint64_t tokens_seen = 0;
    std::uint64_t flops_total = 0;

    for (std::size_t step = 1; step <= tcfg.steps; ++step) {
        for (std::vector<double>* g : arrays_g) std::fill(g->begin(), g->end(), 0.0);
        double batch_loss = 0.0;
        const double inv_batch = 1.0 / static_cast<double>(tcfg.batch);

        for (std::size_t b = 0; b < tcfg.batch; ++b) {
            const std::size_t off = offset_dist(rng);
            TokenSeq item;
            item.ids.assign(corpus.ids.begin() + off, corpus.ids.begin() + off + window);
            item.sep_flags.assign(corpus.sep_flags.begin() + off, corpus.sep_flags.begin() + off + window);

            Activations acts = run_forward(params, item, layer_policies);
            batch_loss += acts.loss * inv_batch;
            run_backward(params, item, acts, inv_batch, grads);

            std::vector<std::uint64_t> nnz;
            nnz.reserve(acts.masks.size());
            for (const AttentionMask& mask : acts.masks) nnz.push_back(nnz_lower(mask));
            flops_total += flops_estimate(dims, window, nnz).total;
            tokens_seen += window;
        }

        if (tcfg.clip > 0.0) {
            double norm_sq = 0.0;
            for (std::vector<double>* g : arrays_g) {
                for (double v : *g) norm_sq += v * v;
            }
            const double norm = std::sqrt(norm_sq);
            if (norm > tcfg.clip) {
                const double scale = tcfg.clip / norm;
                for (std::vector<double>* g : arrays_g) {
                    for (double& v : *g) v *= scale;
                }
            }
        }

        const double bc1 = 1.0 - std::pow(tcfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(tcfg.beta2, static_cast<double>(step));
        for (std::size_t ai = 0; ai < arrays_p.size(); ++ai) {
            std::vector<double>& pv = *arrays_p[ai];
            std::vector<double>& gv = *arrays_g[ai];
            std::vector<double>& mv = *arrays_m[ai];
            std::vector<double>& vv = *arrays_v[ai];
            for (std::size_t i = 0; i < pv.size(); ++i) {
                mv[i] = tcfg.beta1 * mv[i] + (1.0 - tcfg.beta1) * gv[i];
                vv[i] = tcfg.beta2 * vv[i] + (1.0 - tcfg.beta2) * gv[i] * gv[i];
                pv[i] -= tcfg.lr * (mv[i] / bc1) / (std::sqrt(vv[i] / bc2) + tcfg.eps);
            }
        }

        result.curve.push_back({step, batch_loss, tokens_seen, flops_total});
    }
    return result;
}

// ---- generation ----------------------------------------------------------------

namespace {

struct KvRow {
    std::vector<double> k;
    std::vector<double> v;
};

std::vector<double> vec_matmul(const std::vector<double>& x, const Matrix& M) {
    std::vector<double> y(M.cols, 0.0);
    for (std::size_t k = 0; k < M.rows; ++k) {
        const double xv = x[k];
        if (xv == 0.0) continue;
        const double* row = M.row(k);
        for (std::size_t j = 0; j < M.cols; ++j) y[j] += xv * row[j];
    }
    return y;
}

std::vector<double> vec_layer_norm(const std::vector<double>& x, const std::vector<double>& gain,
                                   const std::vector<double>& bias) {
    const std::size_t n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    std::vector<double> y(n);
    for (std::size_t j = 0; j < n; ++j) y[j] = gain[j] * (x[j] - mean) * rstd + bias[j];
    return y;
}

}  // namespace

GenerateResult generate(const ModelParams& params, const TokenSeq& prompt, std::size_t steps,
                        const GenPolicy& policy, const SeparatorSet& seps) {
    const ModelConfig& cfg = params.config;
    cfg.validate();
    if (prompt.empty()) {
        throw std::invalid_argument("generate: prompt must be non-empty");
    }
    for (TokenId id : prompt.ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) {
            throw std::invalid_argument("generate: prompt token id outside vocab");
        }
    }

    const KvPolicy kv_policy = std::visit(
        [](const auto& p) -> KvPolicy {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, FullCachePolicy>) {
                return VanillaPolicy{};
            } else if constexpr (std::is_same_v<P, FundamentalGenPolicy>) {
                return FundamentalPolicy{p.a, p.n};
            } else {
                return p;
            }
        },
        policy);

    PolicyTracker tracker(kv_policy);
    std::vector<std::unordered_map<std::size_t, KvRow>> kv_store(cfg.n_layers);

    GenerateResult result;
    result.tokens.ids = prompt.ids;
    result.tokens.sep_flags = classify(prompt.ids, seps);

    const std::size_t d = cfg.d_model;
    const std::size_t dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<double> last_logits;

    auto consume = [&](TokenId id, bool is_sep) {
        result.trace.push_back(tracker.step(id, is_sep));
        const std::size_t arrival = tracker.consumed() - 1;
        const std::vector<CacheEntry> retained = tracker.retained();
        const std::size_t pos = retained.size() - 1;  // new token is last in enumeration

        std::vector<double> x(params.embedding.row(static_cast<std::size_t>(id)),
                              params.embedding.row(static_cast<std::size_t>(id)) + d);
        add_sinusoidal_position(x.data(), d, pos);

        std::unordered_set<std::size_t> keep;
        keep.reserve(retained.size());
        for (const CacheEntry& e : retained) keep.insert(e.arrival_index);

        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const LayerParams& lp = params.layers[l];
            const std::vector<double> y = vec_layer_norm(x, lp.ln1_g, lp.ln1_b);
            KvRow row{vec_matmul(y, lp.wk), vec_matmul(y, lp.wv)};
            const std::vector<double> q = vec_matmul(y, lp.wq);

            auto& store = kv_store[l];
            store[arrival] = std::move(row);
            for (auto it = store.begin(); it != store.end();) {
                it = keep.contains(it->first) ? std::next(it) : store.erase(it);
            }

            // attention over the retained enumeration, all entries visible
            std::vector<double> ctx(d, 0.0);
            std::vector<double> scores(retained.size());
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                const std::size_t c0 = h * dh;
                double max_score = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < retained.size(); ++j) {
                    const KvRow& kr = store.at(retained[j].arrival_index);
                    double acc = 0.0;
                    for (std::size_t t = 0; t < dh; ++t) acc += q[c0 + t] * kr.k[c0 + t];
                    scores[j] = acc * scale;
                    max_score = std::max(max_score, scores[j]);
                }
                double denom = 0.0;
                for (std::size_t j = 0; j < retained.size(); ++j) {
                    scores[j] = std::exp(scores[j] - max_score);
                    denom += scores[j];
                }
                for (std::size_t j = 0; j < retained.size(); ++j) {
                    const double w = scores[j] / denom;
                    const KvRow& kr = store.at(retained[j].arrival_index);
                    for (std::size_t t = 0; t < dh; ++t) ctx[c0 + t] += w * kr.v[c0 + t];
                }
            }
            const std::vector<double> attn_out = vec_matmul(ctx, lp.wo);
            for (std::size_t j = 0; j < d; ++j) x[j] += attn_out[j];

            const std::vector<double> y2 = vec_layer_norm(x, lp.ln2_g, lp.ln2_b);
            std::vector<double> pre = vec_matmul(y2, lp.w1);
            for (std::size_t j = 0; j < cfg.d_ff; ++j) pre[j] = gelu(pre[j] + lp.b1[j]);
            std::vector<double> ff = vec_matmul(pre, lp.w2);
            for (std::size_t j = 0; j < d; ++j) x[j] += ff[j] + lp.b2[j];
        }

        const std::vector<double> xf = vec_layer_norm(x, params.lnf_g, params.lnf_b);
        last_logits = vec_matmul(xf, params.head);
    };

    for (std::size_t i = 0; i < result.tokens.size(); ++i) {
        consume(result.tokens.ids[i], result.tokens.sep_flags[i] != 0);
    }
    for (std::size_t g = 0; g < steps; ++g) {
        const auto best = std::max_element(last_logits.begin(), last_logits.end());
        const TokenId next = static_cast<TokenId>(std::distance(last_logits.begin(), best));
        const bool is_sep = seps.contains(next);
        result.tokens.ids.push_back(next);
        result.tokens.sep_flags.push_back(is_sep ? 1 : 0);
        consume(next, is_sep);
    }
    return result;
}

// ---- serialization ------------------------------------------------------------

namespace {

using nlohmann::json;

json config_to_json(const ModelConfig& cfg) {
    return json{{"vocab", cfg.vocab},       {"d_model", cfg.d_model}, {"n_heads", cfg.n_heads},
                {"n_layers", cfg.n_layers}, {"d_ff", cfg.d_ff},       {"max_seq", cfg.max_seq},
                {"seed", cfg.seed}};
}

void require_array_size(const json& j, const char* key, std::size_t expected) {
    if (!j.contains(key) || !j[key].is_array()) {
        throw std::runtime_error(std::string("load_model: malformed file, missing array '") + key + "'");
    }
    if (j[key].size() != expected) {
        throw std::runtime_error(std::string("load_model: config mismatch, '") + key + "' has " +
                                 std::to_string(j[key].size()) + " values, expected " +
                                 std::to_string(expected));
    }
}

std::vector<double> read_array(const json& j, const char* key, std::size_t expected) {
    require_array_size(j, key, expected);
    std::vector<double> out = j[key].get<std::vector<double>>();
    for (double v : out) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string("load_model: malformed file, non-finite value in '") +
                                     key + "'");
        }
    }
    return out;
}

}  // namespace

void save_model(const ModelParams& params, const std::filesystem::path& path) {
    params.config.validate();
    json j;
    j["config"] = config_to_json(params.config);
    j["embedding"] = params.embedding.data;
    json layers = json::array();
    for (const LayerParams& l : params.layers) {
        layers.push_back(json{{"wq", l.wq.data},
                              {"wk", l.wk.data},
                              {"wv", l.wv.data},
                              {"wo", l.wo.data},
                              {"w1", l.w1.data},
                              {"b1", l.b1},
                              {"w2", l.w2.data},
                              {"b2", l.b2},
                              {"ln1_g", l.ln1_g},
                              {"ln1_b", l.ln1_b},
                              {"ln2_g", l.ln2_g},
                              {"ln2_b", l.ln2_b}});
    }
    j["layers"] = std::move(layers);
    j["lnf_g"] = params.lnf_g;
    j["lnf_b"] = params.lnf_b;
    j["head"] = params.head.data;

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("save_model: cannot open " + path.string());
    }
    out << j.dump();
    out << '\n';
    if (!out) {
        throw std::runtime_error("save_model: write failed: " + path.string());
    }
}

ModelParams load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("load_model: cannot open " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_model: malformed file " + path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("config") || !j["config"].is_object()) {
        throw std::runtime_error("load_model: malformed file, missing config object");
    }

    ModelConfig cfg;
    try {
        const json& jc = j["config"];
        cfg.vocab = jc.at("vocab").get<std::size_t>();
        cfg.d_model = jc.at("d_model").get<std::size_t>();
        cfg.n_heads = jc.at("n_heads").get<std::size_t>();
        cfg.n_layers = jc.at("n_layers").get<std::size_t>();
        cfg.d_ff = jc.at("d_ff").get<std::size_t>();
        cfg.max_seq = jc.at("max_seq").get<std::size_t>();
        cfg.seed = jc.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw std::runtime_error("load_model: malformed config: " + std::string(e.what()));
    }
    cfg.validate();

    ModelParams p;
    p.config = cfg;
    p.embedding = Matrix(cfg.vocab, cfg.d_model, read_array(j, "embedding", cfg.vocab * cfg.d_model));
    if (!j.contains("layers") || !j["layers"].is_array()) {
        throw std::runtime_error("load_model: malformed file, missing layers array");
    }
    if (j["layers"].size() != cfg.n_layers) {
        throw std::runtime_error("load_model: config mismatch, layer count " +
                                 std::to_string(j["layers"].size()) + " != n_layers " +
                                 std::to_string(cfg.n_layers));
    }
    const std::size_t d = cfg.d_model;
    for (const json& jl : j["layers"]) {
        LayerParams l;
        l.wq = Matrix(d, d, read_array(jl, "wq", d * d));
        l.wk = Matrix(d, d, read_array(jl, "wk", d * d));
        l.wv = Matrix(d, d, read_array(jl, "wv", d * d));
        l.wo = Matrix(d, d, read_array(jl, "wo", d * d));
        l.w1 = Matrix(d, cfg.d_ff, read_array(jl, "w1", d * cfg.d_ff));
        l.b1 = read_array(jl, "b1", cfg.d_ff);
        l.w2 = Matrix(cfg.d_ff, d, read_array(jl, "w2", cfg.d_ff * d));
        l.b2 = read_array(jl, "b2", d);
        l.ln1_g = read_array(jl, "ln1_g", d);
        l.ln1_b = read_array(jl, "ln1_b", d);
        l.ln2_g = read_array(jl, "ln2_g", d);
        l.ln2_b = read_array(jl, "ln2_b", d);
        p.layers.push_back(std::move(l));
    }
    p.lnf_g = read_array(j, "lnf_g", d);
    p.lnf_b = read_array(j, "lnf_b", d);
    p.head = Matrix(d, cfg.vocab, read_array(j, "head", d * cfg.vocab));
    return p;
}

}  // namespace sepkit
