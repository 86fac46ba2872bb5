#include "uadbo/surrogate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace uadbo::model {

using diff::NodePtr;
using diff::Tensor;
using nlohmann::json;

namespace {

// Architecture constants (encoder blocks per the three-block conv layout,
// MLP decoder 128/256/128, U-Net style field decoder).
constexpr int kEncChannels[3] = {16, 32, 64};
constexpr int kDecDims[3] = {128, 256, 128};
constexpr int kFieldChannels[3] = {32, 16, 8};
constexpr int kStations = geom::kStationCount;
// Encoder feature lengths after each conv(s2)+avgpool block on 101 stations.
constexpr int kLevelLen[3] = {25, 6, 1};

Tensor kaiming(std::vector<int> shape, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

} // namespace

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::Ed: return "ed";
        case Mode::Gsed: return "gsed";
        case Mode::Ensemble: return "ensemble";
    }
    return "?";
}

Mode mode_from_name(const std::string& name) {
    if (name == "ed") return Mode::Ed;
    if (name == "gsed") return Mode::Gsed;
    if (name == "ensemble") return Mode::Ensemble;
    throw Error(msg("unknown model mode '", name, "'"));
}

void ModelConfig::validate() const {
    if (beta < 0.0) throw Error("model config: beta must be >= 0");
    if (n_l < 1) throw Error("model config: N_l must be >= 1");
    if (mode == Mode::Ensemble && ensemble_n < 2)
        throw Error("model config: ensemble needs at least 2 members");
    if (batch_size < 1) throw Error("model config: batch size must be >= 1");
    if (max_epochs < 1) throw Error("model config: max epochs must be >= 1");
    if (patience < 1) throw Error("model config: patience must be >= 1");
}

std::array<double, kLatentDim> reparameterize(const LatentGaussian& latent,
                                              const std::array<double, kLatentDim>& eps) {
    std::array<double, kLatentDim> z{};
    for (int i = 0; i < kLatentDim; ++i)
        z[i] = latent.mean[i] + std::exp(0.5 * latent.log_var[i]) * eps[i];
    return z;
}

double kl_std_normal(const std::vector<double>& mu, const std::vector<double>& log_var) {
    if (mu.size() != log_var.size()) throw Error("kl_std_normal: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i)
        acc += -0.5 * (1.0 + log_var[i] - mu[i] * mu[i] - std::exp(log_var[i]));
    return acc;
}

// ---------------------------------------------------------------------------
// Member
// ---------------------------------------------------------------------------

Member::Member(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
    config_.validate();
    Rng rng(init_seed);

    int in_ch = kInputChannels;
    for (int b = 0; b < 3; ++b) {
        const std::string p = "enc.c" + std::to_string(b + 1);
        params_.add(p + ".w", kaiming({kEncChannels[b], in_ch, 3}, in_ch * 3, rng));
        params_.add(p + ".b", Tensor::zeros({kEncChannels[b]}));
        in_ch = kEncChannels[b];
    }

    const bool gaussian = config_.mode != Mode::Ed; // ensemble members are ED nets
    if (config_.mode == Mode::Gsed) {
        params_.add("head.mu.w", kaiming({kEncChannels[2], kLatentDim}, kEncChannels[2], rng));
        params_.add("head.mu.b", Tensor::zeros({kLatentDim}));
        // Small-scale init keeps exp(logvar) sane on out-of-cloud inputs.
        Tensor lvw = kaiming({kEncChannels[2], kLatentDim}, kEncChannels[2], rng);
        for (auto& v : lvw.data) v *= 0.1;
        params_.add("head.logvar.w", std::move(lvw));
        params_.add("head.logvar.b", Tensor::full({kLatentDim}, -4.0));
    } else {
        params_.add("head.z.w", kaiming({kEncChannels[2], kLatentDim}, kEncChannels[2], rng));
        params_.add("head.z.b", Tensor::zeros({kLatentDim}));
    }
    (void)gaussian;

    if (config_.decoder == DecoderKind::Scalar) {
        int in = kLatentDim + 1;
        for (int i = 0; i < 3; ++i) {
            const std::string p = "dec.fc" + std::to_string(i + 1);
            params_.add(p + ".w", kaiming({in, kDecDims[i]}, in, rng));
            params_.add(p + ".b", Tensor::zeros({kDecDims[i]}));
            const std::string bn = "dec.bn" + std::to_string(i + 1);
            params_.add(bn + ".gamma", Tensor::full({kDecDims[i]}, 1.0));
            params_.add(bn + ".beta", Tensor::zeros({kDecDims[i]}));
            params_.add(bn + ".run_mean", Tensor::zeros({kDecDims[i]}), false);
            params_.add(bn + ".run_var", Tensor::full({kDecDims[i]}, 1.0), false);
            in = kDecDims[i];
        }
        params_.add("dec.out.w", kaiming({kDecDims[2], 1}, kDecDims[2], rng));
        params_.add("dec.out.b", Tensor::zeros({1}));
    } else {
        for (const char* dp : {"dcp", "dcf"}) {
            const std::string d(dp);
            params_.add(d + ".fc.w", kaiming({kLatentDim + 1, kEncChannels[2]}, kLatentDim + 1, rng));
            params_.add(d + ".fc.b", Tensor::zeros({kEncChannels[2]}));
            // level 3 -> 1: concat 64+64 channels
            params_.add(d + ".u3.w", kaiming({kFieldChannels[0], 2 * kEncChannels[2], 3},
                                             2 * kEncChannels[2] * 3, rng));
            params_.add(d + ".u3.b", Tensor::zeros({kFieldChannels[0]}));
            params_.add(d + ".u2.w", kaiming({kFieldChannels[1], kFieldChannels[0] + kEncChannels[1], 3},
                                             (kFieldChannels[0] + kEncChannels[1]) * 3, rng));
            params_.add(d + ".u2.b", Tensor::zeros({kFieldChannels[1]}));
            params_.add(d + ".u1.w", kaiming({kFieldChannels[2], kFieldChannels[1] + kEncChannels[0], 3},
                                             (kFieldChannels[1] + kEncChannels[0]) * 3, rng));
            params_.add(d + ".u1.b", Tensor::zeros({kFieldChannels[2]}));
            params_.add(d + ".out.w", kaiming({2, kFieldChannels[2], 3}, kFieldChannels[2] * 3, rng));
            params_.add(d + ".out.b", Tensor::zeros({2}));
        }
    }
}

std::size_t member_param_count(const ModelConfig& config) {
    Member probe(config, 0);
    return probe.params().total_size();
}

Member::EncoderOut Member::encode(const diff::NodePtr& x) {
    if (x->shape.size() != 3 || x->shape[1] != kInputChannels || x->shape[2] != kStations)
        throw Error(msg("encode: expected [B,", kInputChannels, ",", kStations, "] input, got ",
                        diff::shape_str(x->shape)));
    EncoderOut out;
    NodePtr h = x;
    for (int b = 0; b < 3; ++b) {
        const std::string p = "enc.c" + std::to_string(b + 1);
        h = diff::conv1d(h, params_.at(p + ".w"), params_.at(p + ".b"), 2, -1);
        h = diff::avgpool1d(h, 2, 2);
        h = diff::leaky_relu(h, 0.2);
        if (b == 0) out.e1 = h;
        if (b == 1) out.e2 = h;
        if (b == 2) out.e3 = h;
    }
    out.features = diff::flatten(h);
    return out;
}

diff::NodePtr Member::latent_mu(const diff::NodePtr& features) {
    if (config_.mode != Mode::Gsed) throw Error("latent_mu: not a gaussian model");
    return diff::dense(features, params_.at("head.mu.w"), params_.at("head.mu.b"));
}

diff::NodePtr Member::latent_log_var(const diff::NodePtr& features) {
    if (config_.mode != Mode::Gsed) throw Error("latent_log_var: not a gaussian model");
    const auto raw = diff::dense(features, params_.at("head.logvar.w"), params_.at("head.logvar.b"));
    // Saturate far outside the trained range; identity within [-12, 8].
    return diff::leaky_clamp(raw, -12.0, 8.0, 0.05);
}

diff::NodePtr Member::latent_z(const diff::NodePtr& features) {
    if (config_.mode == Mode::Gsed) throw Error("latent_z: gaussian model has no deterministic head");
    return diff::dense(features, params_.at("head.z.w"), params_.at("head.z.b"));
}

namespace {

NodePtr apply_bn(diff::ParamStore& params, const std::string& name, const NodePtr& x,
                 Member::BnRun mode, Member::BnStats* stats, int idx) {
    const NodePtr gamma = params.at(name + ".gamma");
    const NodePtr beta = params.at(name + ".beta");
    const NodePtr rm = params.at(name + ".run_mean");
    const NodePtr rv = params.at(name + ".run_var");

    switch (mode) {
        case Member::BnRun::Train:
            return diff::batchnorm1d(x, gamma, beta, rm, rv, true);
        case Member::BnRun::Eval:
            return diff::batchnorm1d(x, gamma, beta, rm, rv, false);
        case Member::BnRun::Frozen:
            if (!stats || static_cast<int>(stats->mean.size()) <= idx)
                throw Error("bn frozen: statistics not collected");
            return diff::batchnorm1d_stats(x, gamma, beta, stats->mean[idx], stats->var[idx]);
        case Member::BnRun::Collect:
            break;
    }

    // Collect: batch statistics of this (deterministic) pass, recorded for
    // the reparameterized draws of the same batch; running buffers updated
    // exactly as standard training-mode batch norm would.
    if (!stats) throw Error("bn collect: missing stats sink");
    const int B = x->shape[0];
    const int C = x->shape[1];
    if (B < 2) throw Error("batch norm: need at least 2 rows per batch");
    std::vector<double> mean(C, 0.0), var(C, 0.0);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) mean[c] += x->value[static_cast<std::size_t>(b) * C + c];
    for (int c = 0; c < C; ++c) mean[c] /= B;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double d = x->value[static_cast<std::size_t>(b) * C + c] - mean[c];
            var[c] += d * d;
        }
    for (int c = 0; c < C; ++c) var[c] /= B;
    const double unbias = static_cast<double>(B) / (B - 1);
    for (int c = 0; c < C; ++c) {
        rm->value[c] = 0.9 * rm->value[c] + 0.1 * mean[c];
        rv->value[c] = 0.9 * rv->value[c] + 0.1 * var[c] * unbias;
    }
    if (static_cast<int>(stats->mean.size()) <= idx) {
        stats->mean.resize(idx + 1);
        stats->var.resize(idx + 1);
    }
    stats->mean[idx] = mean;
    stats->var[idx] = var;
    return diff::batchnorm1d_stats(x, gamma, beta, mean, var);
}

} // namespace

diff::NodePtr Member::decode_scalar(const diff::NodePtr& z, const diff::NodePtr& c,
                                    BnRun mode, BnStats* stats) {
    if (config_.decoder != DecoderKind::Scalar) throw Error("decode_scalar: model has a field decoder");
    NodePtr h = diff::concat({z, c}, 1);
    for (int i = 0; i < 3; ++i) {
        const std::string fc = "dec.fc" + std::to_string(i + 1);
        h = diff::dense(h, params_.at(fc + ".w"), params_.at(fc + ".b"));
        h = apply_bn(params_, "dec.bn" + std::to_string(i + 1), h, mode, stats, i);
        h = diff::leaky_relu(h, 0.2);
    }
    return diff::dense(h, params_.at("dec.out.w"), params_.at("dec.out.b"));
}

Member::FieldOut Member::decode_field(const diff::NodePtr& z, const diff::NodePtr& c,
                                      const EncoderOut& enc, int tile, BnRun, BnStats*) {
    if (config_.decoder != DecoderKind::Field) throw Error("decode_field: model has a scalar decoder");
    const NodePtr skip3 = tile > 1 ? diff::tile_rows(enc.e3, tile) : enc.e3;
    const NodePtr skip2 = tile > 1 ? diff::tile_rows(enc.e2, tile) : enc.e2;
    const NodePtr skip1 = tile > 1 ? diff::tile_rows(enc.e1, tile) : enc.e1;

    FieldOut out;
    for (const char* dp : {"dcp", "dcf"}) {
        const std::string d(dp);
        NodePtr h = diff::concat({z, c}, 1);
        h = diff::dense(h, params_.at(d + ".fc.w"), params_.at(d + ".fc.b"));
        h = diff::leaky_relu(h, 0.2);
        h = diff::reshape(h, {h->shape[0], kEncChannels[2], 1});

        h = diff::concat({h, skip3}, 1);
        h = diff::interp_resize1d(h, kLevelLen[1]);
        h = diff::conv1d(h, params_.at(d + ".u3.w"), params_.at(d + ".u3.b"), 1, -1);
        h = diff::leaky_relu(h, 0.2);

        h = diff::concat({h, skip2}, 1);
        h = diff::interp_resize1d(h, kLevelLen[0]);
        h = diff::conv1d(h, params_.at(d + ".u2.w"), params_.at(d + ".u2.b"), 1, -1);
        h = diff::leaky_relu(h, 0.2);

        h = diff::concat({h, skip1}, 1);
        h = diff::interp_resize1d(h, kStations);
        h = diff::conv1d(h, params_.at(d + ".u1.w"), params_.at(d + ".u1.b"), 1, -1);
        h = diff::leaky_relu(h, 0.2);

        h = diff::conv1d(h, params_.at(d + ".out.w"), params_.at(d + ".out.b"), 1, -1);
        if (d == "dcp")
            out.cp = h;
        else
            out.cf = h;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Input assembly
// ---------------------------------------------------------------------------

diff::Tensor make_input(const geom::AirfoilShape& shape, const data::ConditionSample& cruise,
                        const data::NormalizationStats& stats) {
    const auto coords = geom::cst_evaluate(shape, geom::station_grid());
    if (cruise.cp.upper.size() != static_cast<std::size_t>(kStations))
        throw Error("make_input: cruise fields must live on the canonical grid");
    Tensor x = Tensor::zeros({1, kInputChannels, kStations});
    for (int i = 0; i < kStations; ++i) {
        x.data[0 * kStations + i] = stats.norm_geom(coords.upper_y[i]);
        x.data[1 * kStations + i] = stats.norm_geom(coords.lower_y[i]);
        x.data[2 * kStations + i] = stats.norm_cp(cruise.cp.upper[i]);
        x.data[3 * kStations + i] = stats.norm_cp(cruise.cp.lower[i]);
        x.data[4 * kStations + i] = stats.norm_cf(cruise.cf.upper[i]);
        x.data[5 * kStations + i] = stats.norm_cf(cruise.cf.lower[i]);
    }
    return x;
}

namespace {

struct Prepared {
    std::vector<Tensor> inputs;                 // [6,101] per record, normalized
    std::vector<double> cond;                   // normalized condition scalar
    std::vector<std::vector<double>> target;    // normalized target (dim 1 or 404)
    int out_dim = 1;
};

double condition_scalar(const data::SampleRecord& r, DecoderKind kind,
                        const data::NormalizationStats& stats) {
    if (kind == DecoderKind::Scalar) return stats.norm_mach(r.target.mach);
    return stats.norm_aoa(r.target.aoa_deg) - stats.norm_aoa(r.cruise.aoa_deg);
}

Prepared prepare(const std::vector<data::SampleRecord>& records, const ModelConfig& config,
                 const data::NormalizationStats& stats) {
    Prepared p;
    p.inputs.reserve(records.size());
    p.cond.reserve(records.size());
    p.target.reserve(records.size());
    p.out_dim = config.decoder == DecoderKind::Scalar ? 1 : 4 * kStations;

    for (const auto& r : records) {
        Tensor x = make_input(r.shape, r.cruise, stats);
        x.shape = {kInputChannels, kStations};
        p.inputs.push_back(std::move(x));
        p.cond.push_back(condition_scalar(r, config.decoder, stats));

        std::vector<double> y;
        if (config.decoder == DecoderKind::Scalar) {
            y = {stats.norm_cd(r.target.cd)};
        } else {
            y.resize(4 * kStations);
            for (int i = 0; i < kStations; ++i) {
                double tu = stats.norm_cp(r.target.cp.upper[i]);
                double tl = stats.norm_cp(r.target.cp.lower[i]);
                double fu = stats.norm_cf(r.target.cf.upper[i]);
                double fl = stats.norm_cf(r.target.cf.lower[i]);
                if (config.residual_learning) {
                    tu -= stats.norm_cp(r.cruise.cp.upper[i]);
                    tl -= stats.norm_cp(r.cruise.cp.lower[i]);
                    fu -= stats.norm_cf(r.cruise.cf.upper[i]);
                    fl -= stats.norm_cf(r.cruise.cf.lower[i]);
                }
                y[0 * kStations + i] = tu;
                y[1 * kStations + i] = tl;
                y[2 * kStations + i] = fu;
                y[3 * kStations + i] = fl;
            }
        }
        p.target.push_back(std::move(y));
    }
    return p;
}

Tensor gather_inputs(const Prepared& p, const std::vector<int>& rows) {
    const int B = static_cast<int>(rows.size());
    Tensor x = Tensor::zeros({B, kInputChannels, kStations});
    const std::size_t stride = static_cast<std::size_t>(kInputChannels) * kStations;
    for (int b = 0; b < B; ++b)
        std::copy_n(p.inputs[rows[b]].data.data(), stride, x.data.data() + b * stride);
    return x;
}

Tensor gather_cond(const Prepared& p, const std::vector<int>& rows) {
    Tensor c = Tensor::zeros({static_cast<int>(rows.size()), 1});
    for (std::size_t b = 0; b < rows.size(); ++b) c.data[b] = p.cond[rows[b]];
    return c;
}

Tensor gather_targets(const Prepared& p, const std::vector<int>& rows, int tile) {
    const int B = static_cast<int>(rows.size());
    Tensor y = Tensor::zeros({B * tile, p.out_dim});
    for (int t = 0; t < tile; ++t)
        for (int b = 0; b < B; ++b)
            std::copy_n(p.target[rows[b]].data(), p.out_dim,
                        y.data.data() + (static_cast<std::size_t>(t) * B + b) * p.out_dim);
    return y;
}

/// eps tensor [B*n_l, 18], per-instance substreams: all draws for one record
/// come from one stream keyed by its dataset index.
Tensor gather_eps(const std::vector<int>& rows, int n_l, const Rng& root) {
    const int B = static_cast<int>(rows.size());
    Tensor eps = Tensor::zeros({B * n_l, kLatentDim});
    for (int b = 0; b < B; ++b) {
        Rng rng = root.child(static_cast<std::uint64_t>(rows[b]));
        for (int l = 0; l < n_l; ++l)
            for (int d = 0; d < kLatentDim; ++d)
                eps.data[(static_cast<std::size_t>(l) * B + b) * kLatentDim + d] = rng.normal();
    }
    return eps;
}

NodePtr flatten_field(const Member::FieldOut& f) {
    return diff::concat({diff::flatten(f.cp), diff::flatten(f.cf)}, 1);
}

/// Builds the training-loss node for one batch. GS-ED decoder batch-norm
/// statistics come from the latent-mean pass and are frozen for the draws.
NodePtr batch_loss(Member& member, const Prepared& p, const std::vector<int>& rows,
                   const ModelConfig& config, const Rng& eps_root, bool training) {
    const int B = static_cast<int>(rows.size());
    const NodePtr x = diff::constant(gather_inputs(p, rows));
    const NodePtr c = diff::constant(gather_cond(p, rows));
    const auto enc = member.encode(x);

    if (config.mode != Mode::Gsed) {
        const NodePtr z = member.latent_z(enc.features);
        NodePtr yhat;
        if (config.decoder == DecoderKind::Scalar) {
            Member::BnStats st;
            yhat = member.decode_scalar(z, c, training ? Member::BnRun::Train : Member::BnRun::Eval, &st);
        } else {
            yhat = flatten_field(member.decode_field(z, c, enc, 1, Member::BnRun::Train, nullptr));
        }
        const NodePtr y = diff::constant(gather_targets(p, rows, 1));
        return diff::scale(diff::sum_all(diff::square(diff::sub(yhat, y))),
                           1.0 / (static_cast<double>(B) * p.out_dim));
    }

    const NodePtr mu = member.latent_mu(enc.features);
    const NodePtr logvar = member.latent_log_var(enc.features);

    const int L = config.n_l;
    const NodePtr eps = diff::constant(gather_eps(rows, L, eps_root));
    const NodePtr mu_all = diff::tile_rows(mu, L);
    const NodePtr sigma_all = diff::exp_elem(diff::scale(diff::tile_rows(logvar, L), 0.5));
    const NodePtr z_all = diff::add(mu_all, diff::mul(sigma_all, eps));
    const NodePtr c_all = diff::tile_rows(c, L);

    // Batch-norm statistics are shared by all draws of the batch (one
    // statistics set per batch, over the combined draw rows).
    NodePtr yhat;
    if (config.decoder == DecoderKind::Scalar) {
        yhat = member.decode_scalar(z_all, c_all,
                                    training ? Member::BnRun::Train : Member::BnRun::Eval, nullptr);
    } else {
        yhat = flatten_field(member.decode_field(z_all, c_all, enc, L, Member::BnRun::Train, nullptr));
    }
    const NodePtr y = diff::constant(gather_targets(p, rows, L));
    const NodePtr recon = diff::scale(diff::sum_all(diff::square(diff::sub(yhat, y))),
                                      0.5 / (static_cast<double>(B) * L));

    // -beta/2 * sum(1 + logvar - mu^2 - sigma^2), averaged over the batch.
    NodePtr kl_inner = diff::add_scalar(diff::sub(logvar, diff::add(diff::square(mu), diff::exp_elem(logvar))), 1.0);
    const NodePtr kl = diff::scale(diff::sum_all(kl_inner), -0.5 * config.beta / B);
    return diff::add(recon, kl);
}

double eval_loss(Member& member, const Prepared& p, const std::vector<int>& idx,
                 const ModelConfig& config, const Rng& eps_root) {
    if (idx.empty()) throw Error("validation: empty index set");
    double acc = 0.0;
    const int chunk = std::max(1, config.batch_size);
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        std::vector<int> rows(idx.begin() + start,
                              idx.begin() + std::min(idx.size(), start + chunk));
        const NodePtr loss = batch_loss(member, p, rows, config, eps_root, /*training=*/false);
        acc += loss->value[0] * static_cast<double>(rows.size());
    }
    return acc / static_cast<double>(idx.size());
}

/// Replace the momentum-chased running statistics with exact train-set
/// statistics of the final weights (encoder chunked, decoder in one batch).
void reset_bn_buffers(Member& member, const Prepared& p, const std::vector<int>& rows,
                      const ModelConfig& config) {
    if (config.decoder != DecoderKind::Scalar) return;
    const int n = static_cast<int>(rows.size());
    std::vector<double> z_rows(static_cast<std::size_t>(n) * kLatentDim);
    std::vector<double> c_rows(n);
    constexpr int kChunk = 256;
    for (int start = 0; start < n; start += kChunk) {
        std::vector<int> chunk(rows.begin() + start,
                               rows.begin() + std::min(n, start + kChunk));
        const NodePtr x = diff::constant(gather_inputs(p, chunk));
        const auto enc = member.encode(x);
        const NodePtr z = config.mode == Mode::Gsed ? member.latent_mu(enc.features)
                                                    : member.latent_z(enc.features);
        std::copy(z->value.begin(), z->value.end(),
                  z_rows.begin() + static_cast<std::size_t>(start) * kLatentDim);
        for (std::size_t b = 0; b < chunk.size(); ++b) c_rows[start + b] = p.cond[chunk[b]];
    }
    Tensor z({n, kLatentDim}, std::move(z_rows));
    Tensor c({n, 1}, std::move(c_rows));
    Member::BnStats st;
    (void)member.decode_scalar(diff::constant(z), diff::constant(c), Member::BnRun::Collect, &st);
    const double unbias = n > 1 ? static_cast<double>(n) / (n - 1) : 1.0;
    for (int i = 0; i < 3; ++i) {
        const std::string bn = "dec.bn" + std::to_string(i + 1);
        auto rm = member.params().at(bn + ".run_mean");
        auto rv = member.params().at(bn + ".run_var");
        rm->value = st.mean[i];
        rv->value = st.var[i];
        for (auto& v : rv->value) v *= unbias;
    }
}

} // namespace

double gsed_loss(Member& member, const std::vector<data::SampleRecord>& records,
                 const std::vector<int>& batch, const data::NormalizationStats& stats,
                 int n_l, double beta, std::uint64_t seed) {
    if (batch.empty()) throw Error("gsed_loss: empty batch");
    ModelConfig cfg = member.config();
    cfg.n_l = n_l;
    cfg.beta = beta;
    std::vector<data::SampleRecord> subset;
    subset.reserve(batch.size());
    for (int i : batch) subset.push_back(records.at(static_cast<std::size_t>(i)));
    const Prepared p = prepare(subset, cfg, stats);
    std::vector<int> rows(subset.size());
    std::iota(rows.begin(), rows.end(), 0);
    // Frozen-net semantics: batch norm uses the stored running statistics so
    // the value is an expectation over the draws alone. The training loop
    // itself normalizes with batch statistics internally.
    const NodePtr loss = batch_loss(member, p, rows, cfg, Rng(seed), /*training=*/false);
    const double v = loss->value[0];
    if (!std::isfinite(v)) throw Error("gsed_loss: non-finite loss");
    return v;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainResult train(const ModelConfig& config, const std::vector<data::SampleRecord>& records,
                  const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                  const data::NormalizationStats& stats, std::uint64_t seed) {
    config.validate();
    if (config.mode == Mode::Ensemble)
        throw Error("train: use ensemble_train for ensemble mode");
    if (train_idx.empty() || val_idx.empty()) throw Error("train: empty split");

    const auto t0 = std::chrono::steady_clock::now();
    const Rng root(seed);
    Member member(config, root.child(1).next_u64());
    const Prepared p = prepare(records, config, stats);
    for (int i : train_idx)
        if (i < 0 || i >= static_cast<int>(records.size())) throw Error("train: index out of range");

    diff::AdamState adam;
    const Rng val_eps = root.child(3);
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<double> best_weights = member.params().flatten();
    int best_epoch = 0;
    int since_best = 0;
    int epochs_run = 0;

    std::vector<int> order(train_idx);
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        const double lr = diff::lr_at(config.lr, epoch);
        Rng shuffle_rng = root.child(100 + static_cast<std::uint64_t>(epoch));
        order = train_idx;
        shuffle_rng.shuffle(order);
        const Rng eps_root = root.child(200).child(static_cast<std::uint64_t>(epoch));

        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::vector<int> rows(order.begin() + start,
                                  order.begin() + std::min(order.size(), start + config.batch_size));
            if (rows.size() < 2 && order.size() >= 2) continue; // degenerate for batch norm
            member.params().zero_grad();
            const NodePtr loss = batch_loss(member, p, rows, config, eps_root, /*training=*/true);
            const double lv = loss->value[0];
            if (!std::isfinite(lv) || lv > 1e6)
                throw Error(msg("train: divergence at epoch ", epoch, " batch offset ", start,
                                " (loss ", lv, ")"));
            diff::backward(loss);
            diff::adam_step(member.params(), adam, lr);
        }

        const double val = eval_loss(member, p, val_idx, config, val_eps);
        if (log_level() >= 3) {
            double gsq = 0.0, wsq = 0.0;
            for (auto& e : member.params().entries) {
                if (!e.trainable) continue;
                for (double g : e.node->grad) gsq += g * g;
                for (double w : e.node->value) wsq += w * w;
            }
            log_debug("epoch ", epoch, " train(eval-mode) ",
                      eval_loss(member, p, std::vector<int>(train_idx.begin(),
                          train_idx.begin() + std::min<std::size_t>(train_idx.size(), 128)), config, val_eps),
                      " |g| ", std::sqrt(gsq), " |w| ", std::sqrt(wsq));
        }
        epochs_run = epoch + 1;
        if (val < best_val) {
            best_val = val;
            best_weights = member.params().flatten();
            best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        log_debug("epoch ", epoch, " lr ", lr, " val ", val, " best ", best_val);
        if (since_best > config.patience) break;
    }
    member.params().load_flat(best_weights);
    (void)best_epoch;

    // Exact train-set batch-norm statistics for inference; kept only when
    // they do not worsen the monitored validation loss.
    reset_bn_buffers(member, p, train_idx, config);
    const double val_reset = eval_loss(member, p, val_idx, config, val_eps);
    if (val_reset <= best_val) {
        best_val = val_reset;
        best_weights = member.params().flatten();
    } else {
        member.params().load_flat(best_weights);
    }

    TrainResult result;
    result.checkpoint.config = config;
    result.checkpoint.stats = stats;
    result.checkpoint.weights = std::move(best_weights);
    result.checkpoint.seed = seed;
    result.checkpoint.epochs_run = epochs_run;
    result.checkpoint.val_loss = best_val;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

std::vector<int> ensemble_subsample(const std::vector<int>& train_idx, int member,
                                    std::uint64_t seed) {
    Rng sub_rng = Rng(seed).child(10 + static_cast<std::uint64_t>(member));
    std::vector<int> pool(train_idx);
    sub_rng.shuffle(pool);
    const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(
        std::lround(0.9 * static_cast<double>(pool.size()))));
    std::vector<int> subsample(pool.begin(), pool.begin() + keep);
    std::sort(subsample.begin(), subsample.end());
    return subsample;
}

std::vector<TrainResult> ensemble_train(const ModelConfig& config,
                                        const std::vector<data::SampleRecord>& records,
                                        const std::vector<int>& train_idx,
                                        const std::vector<int>& val_idx,
                                        const data::NormalizationStats& stats,
                                        std::uint64_t seed) {
    if (config.ensemble_n < 2) throw Error("ensemble_train: need at least 2 members");
    ModelConfig member_cfg = config;
    member_cfg.mode = Mode::Ed;

    const Rng root(seed);
    std::vector<TrainResult> results;
    for (int m = 0; m < config.ensemble_n; ++m) {
        results.push_back(train(member_cfg, records, ensemble_subsample(train_idx, m, seed),
                                val_idx, stats,
                                root.child(1000 + static_cast<std::uint64_t>(m)).next_u64()));
    }
    return results;
}

double validation_loss(Member& member, const std::vector<data::SampleRecord>& records,
                       const std::vector<int>& val_idx, const data::NormalizationStats& stats,
                       std::uint64_t train_seed) {
    const Prepared p = prepare(records, member.config(), stats);
    return eval_loss(member, p, val_idx, member.config(), Rng(train_seed).child(3));
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"mode", mode_name(c.mode)},
                {"decoder", c.decoder == DecoderKind::Scalar ? "scalar" : "field"},
                {"beta", c.beta},
                {"n_l", c.n_l},
                {"ensemble_n", c.ensemble_n},
                {"residual_learning", c.residual_learning},
                {"batch_size", c.batch_size},
                {"max_epochs", c.max_epochs},
                {"patience", c.patience},
                {"lr", {{"warmup_start", c.lr.warmup_start},
                        {"warmup_end", c.lr.warmup_end},
                        {"warmup_epochs", c.lr.warmup_epochs},
                        {"decay_base", c.lr.decay_base}}}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.mode = mode_from_name(j.at("mode").get<std::string>());
    c.decoder = j.at("decoder").get<std::string>() == "field" ? DecoderKind::Field : DecoderKind::Scalar;
    c.beta = j.at("beta").get<double>();
    c.n_l = j.at("n_l").get<int>();
    c.ensemble_n = j.value("ensemble_n", 3);
    c.residual_learning = j.value("residual_learning", true);
    c.batch_size = j.value("batch_size", 16);
    c.max_epochs = j.value("max_epochs", 300);
    c.patience = j.value("patience", 30);
    const json& lr = j.at("lr");
    c.lr.warmup_start = lr.at("warmup_start").get<double>();
    c.lr.warmup_end = lr.at("warmup_end").get<double>();
    c.lr.warmup_epochs = lr.at("warmup_epochs").get<int>();
    c.lr.decay_base = lr.at("decay_base").get<double>();
    return c;
}

json calibration_to_json(const Calibration& c) {
    return json{{"kappa_l", c.kappa_l}, {"kappa_u", c.kappa_u}, {"alpha", c.alpha},
                {"n_calib", c.n_calib}, {"target", c.target}, {"calibrated", c.calibrated}};
}

Calibration calibration_from_json(const json& j) {
    Calibration c;
    c.kappa_l = j.at("kappa_l").get<double>();
    c.kappa_u = j.at("kappa_u").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.n_calib = j.value("n_calib", 0);
    c.target = j.value("target", "");
    c.calibrated = j.value("calibrated", false);
    return c;
}

json checkpoint_to_json_obj(const Checkpoint& ckpt) {
    json topology = config_to_json(ckpt.config);
    topology["latent_dim"] = kLatentDim;
    topology["encoder_channels"] = {kEncChannels[0], kEncChannels[1], kEncChannels[2]};
    topology["decoder_dims"] = {kDecDims[0], kDecDims[1], kDecDims[2]};
    topology["field_channels"] = {kFieldChannels[0], kFieldChannels[1], kFieldChannels[2]};
    topology["param_count"] = ckpt.weights.size();

    return json{{"format", "ua-dbo-ckpt"},
                {"version", 1},
                {"topology", topology},
                {"weights", base64_encode_doubles(ckpt.weights)},
                {"stats", json::parse(data::stats_to_json(ckpt.stats))},
                {"calibration", calibration_to_json(ckpt.calibration)},
                {"metadata", {{"seed", ckpt.seed},
                              {"dataset_seed", ckpt.dataset_seed},
                              {"epochs", ckpt.epochs_run},
                              {"val_loss", ckpt.val_loss}}}};
}

Checkpoint checkpoint_from_json_obj(const json& j) {
    if (j.value("format", "") != "ua-dbo-ckpt" || j.value("version", 0) != 1)
        throw Error("checkpoint: unsupported container format");
    Checkpoint ckpt;
    ckpt.config = config_from_json(j.at("topology"));
    ckpt.weights = base64_decode_doubles(j.at("weights").get<std::string>());
    const std::size_t expected = j.at("topology").value("param_count", std::size_t{0});
    if (expected != ckpt.weights.size())
        throw Error(msg("checkpoint: weight count ", ckpt.weights.size(),
                        " does not match topology count ", expected));
    if (member_param_count(ckpt.config) != ckpt.weights.size())
        throw Error("checkpoint: weight count does not match the architecture");
    ckpt.stats = data::stats_from_json(j.at("stats").dump());
    ckpt.calibration = calibration_from_json(j.at("calibration"));
    const json& meta = j.at("metadata");
    ckpt.seed = meta.value("seed", 0ULL);
    ckpt.dataset_seed = meta.value("dataset_seed", 0ULL);
    ckpt.epochs_run = meta.value("epochs", 0);
    ckpt.val_loss = meta.value("val_loss", 0.0);
    return ckpt;
}

} // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
    return checkpoint_to_json_obj(ckpt).dump(2);
}

Checkpoint checkpoint_from_json(const std::string& text) {
    return checkpoint_from_json_obj(json::parse(text));
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path);
    if (!f) throw Error(msg("cannot open '", path, "' for writing"));
    f << checkpoint_to_json(ckpt) << "\n";
    if (!f) throw Error(msg("write failed for '", path, "'"));
}

void write_ensemble(const std::string& path, const EnsembleCheckpoint& ens) {
    json j{{"format", "ua-dbo-ensemble"}, {"version", 1},
           {"calibration", calibration_to_json(ens.calibration)}};
    j["members"] = json::array();
    for (const auto& m : ens.members) j["members"].push_back(checkpoint_to_json_obj(m));
    std::ofstream f(path);
    if (!f) throw Error(msg("cannot open '", path, "' for writing"));
    f << j.dump(2) << "\n";
    if (!f) throw Error(msg("write failed for '", path, "'"));
}

// ---------------------------------------------------------------------------
// ModelHandle
// ---------------------------------------------------------------------------

ModelHandle ModelHandle::from_checkpoint(const Checkpoint& ckpt) {
    ModelHandle h;
    h.config_ = ckpt.config;
    h.stats_ = ckpt.stats;
    h.calibration = ckpt.calibration;
    h.members_.emplace_back(ckpt.config, 0);
    h.members_[0].params().load_flat(ckpt.weights);
    h.checkpoints_.push_back(ckpt);
    return h;
}

ModelHandle ModelHandle::from_ensemble(const EnsembleCheckpoint& ens) {
    if (ens.members.size() < 2) throw Error("ensemble handle: need at least 2 members");
    ModelHandle h;
    h.config_ = ens.members[0].config;
    h.config_.mode = Mode::Ensemble;
    h.config_.ensemble_n = static_cast<int>(ens.members.size());
    h.stats_ = ens.members[0].stats;
    h.calibration = ens.calibration;
    for (const auto& m : ens.members) {
        h.members_.emplace_back(m.config, 0);
        h.members_.back().params().load_flat(m.weights);
        h.checkpoints_.push_back(m);
    }
    return h;
}

ModelHandle ModelHandle::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(msg("cannot open '", path, "'"));
    json j = json::parse(f);
    if (j.value("format", "") == "ua-dbo-ckpt") return from_checkpoint(checkpoint_from_json_obj(j));
    if (j.value("format", "") == "ua-dbo-ensemble") {
        EnsembleCheckpoint ens;
        ens.calibration = calibration_from_json(j.at("calibration"));
        for (const auto& m : j.at("members")) ens.members.push_back(checkpoint_from_json_obj(m));
        return from_ensemble(ens);
    }
    throw Error(msg("'", path, "' is not a recognized checkpoint"));
}

void ModelHandle::save(const std::string& path) const {
    if (config_.mode == Mode::Ensemble) {
        EnsembleCheckpoint ens;
        ens.members = checkpoints_;
        ens.calibration = calibration;
        write_ensemble(path, ens);
    } else {
        Checkpoint ckpt = checkpoints_.at(0);
        ckpt.calibration = calibration;
        write_checkpoint(path, ckpt);
    }
}

// ---------------------------------------------------------------------------
// Predictor
// ---------------------------------------------------------------------------

Predictor::Predictor(ModelHandle& model, const geom::AirfoilShape& shape,
                     const data::ConditionSample& cruise)
    : model_(model), input_(make_input(shape, cruise, model.stats())), cruise_(cruise) {
    for (auto& member : model_.members()) {
        const auto enc = member.encode(diff::constant(input_));
        LatentGaussian lat;
        if (model_.mode() == Mode::Gsed) {
            const NodePtr mu = member.latent_mu(enc.features);
            const NodePtr lv = member.latent_log_var(enc.features);
            std::copy_n(mu->value.data(), kLatentDim, lat.mean.data());
            std::copy_n(lv->value.data(), kLatentDim, lat.log_var.data());
            has_latent_ = true;
        } else {
            const NodePtr z = member.latent_z(enc.features);
            std::copy_n(z->value.data(), kLatentDim, lat.mean.data());
        }
        latents_.push_back(lat);
    }
}

const LatentGaussian& Predictor::latent() const {
    if (!has_latent_) throw Error("latent: model is not a gaussian encoder-decoder");
    return latents_.at(0);
}

int Predictor::resolve_draws(int requested) const {
    if (model_.mode() == Mode::Ed)
        throw Error("no uncertainty available: deterministic ED model");
    if (model_.mode() == Mode::Ensemble) return static_cast<int>(model_.members().size());
    if (requested < 2) throw Error("sample count must be >= 2");
    return requested;
}

namespace {

/// Decode a [rows, latent] x [rows, 1] batch through one member and return
/// raw normalized outputs. Used for both z-draw batches and mean passes.
std::vector<double> decode_rows_scalar(Member& member, const std::vector<double>& z_rows,
                                       const std::vector<double>& c_rows) {
    const int rows = static_cast<int>(c_rows.size());
    Tensor z({rows, kLatentDim}, z_rows);
    Tensor c({rows, 1}, c_rows);
    Member::BnStats st;
    const NodePtr out = member.decode_scalar(diff::constant(z), diff::constant(c),
                                             Member::BnRun::Eval, &st);
    return out->value;
}

} // namespace

std::vector<std::vector<double>> Predictor::sample_cd(const std::vector<double>& machs,
                                                      int n_s, std::uint64_t seed) {
    if (machs.empty()) throw Error("sample_cd: empty condition list");
    const int draws = resolve_draws(n_s);
    const int nc = static_cast<int>(machs.size());
    const auto& stats = model_.stats();

    std::vector<std::vector<double>> out(draws, std::vector<double>(nc, 0.0));
    if (model_.mode() == Mode::Ensemble) {
        std::vector<double> c_rows(nc);
        for (int j = 0; j < nc; ++j) c_rows[j] = stats.norm_mach(machs[j]);
        for (int m = 0; m < draws; ++m) {
            std::vector<double> z_rows(static_cast<std::size_t>(nc) * kLatentDim);
            for (int j = 0; j < nc; ++j)
                std::copy_n(latents_[m].mean.data(), kLatentDim, z_rows.data() + j * kLatentDim);
            const auto raw = decode_rows_scalar(model_.members()[m], z_rows, c_rows);
            for (int j = 0; j < nc; ++j) out[m][j] = stats.denorm_cd(raw[j]);
        }
        return out;
    }

    // GS-ED: one decoder pass over draws x conditions with shared z per draw.
    Rng root(seed);
    std::vector<std::array<double, kLatentDim>> zs(draws);
    for (int s = 0; s < draws; ++s) {
        Rng rng = root.child(static_cast<std::uint64_t>(s));
        std::array<double, kLatentDim> eps{};
        for (auto& e : eps) e = rng.normal();
        zs[s] = reparameterize(latents_[0], eps);
    }
    std::vector<double> z_rows(static_cast<std::size_t>(draws) * nc * kLatentDim);
    std::vector<double> c_rows(static_cast<std::size_t>(draws) * nc);
    for (int s = 0; s < draws; ++s)
        for (int j = 0; j < nc; ++j) {
            std::copy_n(zs[s].data(), kLatentDim,
                        z_rows.data() + (static_cast<std::size_t>(s) * nc + j) * kLatentDim);
            c_rows[static_cast<std::size_t>(s) * nc + j] = stats.norm_mach(machs[j]);
        }
    const auto raw = decode_rows_scalar(model_.members()[0], z_rows, c_rows);
    for (int s = 0; s < draws; ++s)
        for (int j = 0; j < nc; ++j)
            out[s][j] = stats.denorm_cd(raw[static_cast<std::size_t>(s) * nc + j]);
    return out;
}

std::vector<double> Predictor::mean_cd(const std::vector<double>& machs) {
    if (machs.empty()) throw Error("mean_cd: empty condition list");
    const int nc = static_cast<int>(machs.size());
    const auto& stats = model_.stats();
    std::vector<double> c_rows(nc);
    for (int j = 0; j < nc; ++j) c_rows[j] = stats.norm_mach(machs[j]);

    std::vector<double> acc(nc, 0.0);
    for (std::size_t m = 0; m < model_.members().size(); ++m) {
        std::vector<double> z_rows(static_cast<std::size_t>(nc) * kLatentDim);
        for (int j = 0; j < nc; ++j)
            std::copy_n(latents_[m].mean.data(), kLatentDim, z_rows.data() + j * kLatentDim);
        const auto raw = decode_rows_scalar(model_.members()[m], z_rows, c_rows);
        for (int j = 0; j < nc; ++j) acc[j] += stats.denorm_cd(raw[j]);
    }
    for (double& v : acc) v /= static_cast<double>(model_.members().size());
    return acc;
}

namespace {

std::vector<FieldPrediction> decode_rows_field(Member& member, const Member::EncoderOut& enc,
                                               const std::vector<double>& z_rows,
                                               const std::vector<double>& c_rows,
                                               const data::ConditionSample& cruise,
                                               const data::NormalizationStats& stats,
                                               bool residual) {
    const int rows = static_cast<int>(c_rows.size());
    Tensor z({rows, kLatentDim}, z_rows);
    Tensor c({rows, 1}, c_rows);
    const auto out = member.decode_field(diff::constant(z), diff::constant(c), enc, rows,
                                         Member::BnRun::Eval, nullptr);

    std::vector<FieldPrediction> preds(rows);
    for (int r = 0; r < rows; ++r) {
        FieldPrediction& f = preds[r];
        f.cp.upper.resize(kStations);
        f.cp.lower.resize(kStations);
        f.cf.upper.resize(kStations);
        f.cf.lower.resize(kStations);
        for (int i = 0; i < kStations; ++i) {
            double tu = out.cp->value[(static_cast<std::size_t>(r) * 2 + 0) * kStations + i];
            double tl = out.cp->value[(static_cast<std::size_t>(r) * 2 + 1) * kStations + i];
            double fu = out.cf->value[(static_cast<std::size_t>(r) * 2 + 0) * kStations + i];
            double fl = out.cf->value[(static_cast<std::size_t>(r) * 2 + 1) * kStations + i];
            if (residual) {
                tu += stats.norm_cp(cruise.cp.upper[i]);
                tl += stats.norm_cp(cruise.cp.lower[i]);
                fu += stats.norm_cf(cruise.cf.upper[i]);
                fl += stats.norm_cf(cruise.cf.lower[i]);
            }
            f.cp.upper[i] = stats.denorm_cp(tu);
            f.cp.lower[i] = stats.denorm_cp(tl);
            f.cf.upper[i] = stats.denorm_cf(fu);
            f.cf.lower[i] = stats.denorm_cf(fl);
        }
    }
    return preds;
}

} // namespace

std::vector<std::vector<FieldPrediction>> Predictor::sample_fields(
    const std::vector<double>& target_aoas, int n_s, std::uint64_t seed) {
    if (target_aoas.empty()) throw Error("sample_fields: empty condition list");
    const int draws = resolve_draws(n_s);
    const int nc = static_cast<int>(target_aoas.size());
    const auto& stats = model_.stats();
    const bool residual = model_.config().residual_learning;

    auto cond_row = [&](double aoa) {
        return stats.norm_aoa(aoa) - stats.norm_aoa(cruise_.aoa_deg);
    };

    std::vector<std::vector<FieldPrediction>> out(draws);
    if (model_.mode() == Mode::Ensemble) {
        for (int m = 0; m < draws; ++m) {
            Member& member = model_.members()[m];
            const auto enc = member.encode(diff::constant(input_));
            std::vector<double> z_rows(static_cast<std::size_t>(nc) * kLatentDim);
            std::vector<double> c_rows(nc);
            for (int j = 0; j < nc; ++j) {
                std::copy_n(latents_[m].mean.data(), kLatentDim, z_rows.data() + j * kLatentDim);
                c_rows[j] = cond_row(target_aoas[j]);
            }
            out[m] = decode_rows_field(member, enc, z_rows, c_rows, cruise_, stats, residual);
        }
        return out;
    }

    Member& member = model_.members()[0];
    const auto enc = member.encode(diff::constant(input_));
    Rng root(seed);
    std::vector<double> z_rows(static_cast<std::size_t>(draws) * nc * kLatentDim);
    std::vector<double> c_rows(static_cast<std::size_t>(draws) * nc);
    for (int s = 0; s < draws; ++s) {
        Rng rng = root.child(static_cast<std::uint64_t>(s));
        std::array<double, kLatentDim> eps{};
        for (auto& e : eps) e = rng.normal();
        const auto z = reparameterize(latents_[0], eps);
        for (int j = 0; j < nc; ++j) {
            std::copy_n(z.data(), kLatentDim,
                        z_rows.data() + (static_cast<std::size_t>(s) * nc + j) * kLatentDim);
            c_rows[static_cast<std::size_t>(s) * nc + j] = cond_row(target_aoas[j]);
        }
    }
    const auto all = decode_rows_field(member, enc, z_rows, c_rows, cruise_, stats, residual);
    for (int s = 0; s < draws; ++s)
        out[s] = {all.begin() + static_cast<std::size_t>(s) * nc,
                  all.begin() + static_cast<std::size_t>(s + 1) * nc};
    return out;
}

std::vector<FieldPrediction> Predictor::mean_fields(const std::vector<double>& target_aoas) {
    if (target_aoas.empty()) throw Error("mean_fields: empty condition list");
    const int nc = static_cast<int>(target_aoas.size());
    const auto& stats = model_.stats();
    const bool residual = model_.config().residual_learning;

    std::vector<FieldPrediction> acc;
    for (std::size_t m = 0; m < model_.members().size(); ++m) {
        Member& member = model_.members()[m];
        const auto enc = member.encode(diff::constant(input_));
        std::vector<double> z_rows(static_cast<std::size_t>(nc) * kLatentDim);
        std::vector<double> c_rows(nc);
        for (int j = 0; j < nc; ++j) {
            std::copy_n(latents_[m].mean.data(), kLatentDim, z_rows.data() + j * kLatentDim);
            c_rows[j] = stats.norm_aoa(target_aoas[j]) - stats.norm_aoa(cruise_.aoa_deg);
        }
        auto preds = decode_rows_field(member, enc, z_rows, c_rows, cruise_, stats, residual);
        if (acc.empty()) {
            acc = std::move(preds);
        } else {
            for (int j = 0; j < nc; ++j)
                for (int i = 0; i < kStations; ++i) {
                    acc[j].cp.upper[i] += preds[j].cp.upper[i];
                    acc[j].cp.lower[i] += preds[j].cp.lower[i];
                    acc[j].cf.upper[i] += preds[j].cf.upper[i];
                    acc[j].cf.lower[i] += preds[j].cf.lower[i];
                }
        }
    }
    const double inv = 1.0 / static_cast<double>(model_.members().size());
    for (auto& f : acc)
        for (auto* v : {&f.cp.upper, &f.cp.lower, &f.cf.upper, &f.cf.lower})
            for (double& x : *v) x *= inv;
    return acc;
}

} // namespace uadbo::model
