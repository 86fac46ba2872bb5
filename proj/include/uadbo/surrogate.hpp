#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uadbo/dataset.hpp"
#include "uadbo/diff.hpp"
#include "uadbo/geometry.hpp"
#include "uadbo/oracle.hpp"

namespace uadbo::model {

inline constexpr int kLatentDim = 18;
inline constexpr int kInputChannels = 6; // geometry y, cruise cp, cruise cf (upper/lower each)

enum class Mode { Ed, Gsed, Ensemble };
enum class DecoderKind { Scalar, Field };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);

struct ModelConfig {
    Mode mode = Mode::Gsed;
    DecoderKind decoder = DecoderKind::Scalar;
    double beta = 1e-5;
    int n_l = 4;
    int ensemble_n = 3;
    bool residual_learning = true; // field decoder predicts target-minus-cruise
    int batch_size = 16;
    int max_epochs = 300;
    int patience = 30;
    diff::LrSchedule lr;

    void validate() const;
};

struct LatentGaussian {
    std::array<double, kLatentDim> mean{};
    std::array<double, kLatentDim> log_var{};
};

/// z = mu + exp(log_var / 2) * eps, elementwise.
std::array<double, kLatentDim> reparameterize(const LatentGaussian& latent,
                                              const std::array<double, kLatentDim>& eps);

/// KL(N(mu, sigma^2) || N(0, I)) summed over dimensions.
double kl_std_normal(const std::vector<double>& mu, const std::vector<double>& log_var);

struct Calibration {
    double kappa_l = 1.0;
    double kappa_u = 1.0;
    double alpha = 0.9;
    int n_calib = 0;
    std::string target; // "cd" or "cdbar"
    bool calibrated = false;
};

// ---------------------------------------------------------------------------
// Runtime network (one ED / GS-ED member)
// ---------------------------------------------------------------------------

class Member {
public:
    Member(const ModelConfig& config, std::uint64_t init_seed);

    struct EncoderOut {
        diff::NodePtr features; // [B, 64]
        diff::NodePtr e1, e2, e3; // block outputs for skip connections
    };

    enum class BnRun { Train, Eval, Collect, Frozen };

    /// Per-layer batch statistics collected by a Collect pass and replayed by
    /// a Frozen pass.
    struct BnStats {
        std::vector<std::vector<double>> mean, var;
    };

    EncoderOut encode(const diff::NodePtr& x);
    diff::NodePtr latent_mu(const diff::NodePtr& features);
    diff::NodePtr latent_log_var(const diff::NodePtr& features); // gsed heads only
    diff::NodePtr latent_z(const diff::NodePtr& features);       // ed head only

    diff::NodePtr decode_scalar(const diff::NodePtr& z, const diff::NodePtr& c,
                                BnRun mode, BnStats* stats);

    struct FieldOut {
        diff::NodePtr cp; // [R, 2, 101]
        diff::NodePtr cf;
    };
    FieldOut decode_field(const diff::NodePtr& z, const diff::NodePtr& c,
                          const EncoderOut& enc, int tile, BnRun mode, BnStats* stats);

    diff::ParamStore& params() { return params_; }
    const diff::ParamStore& params() const { return params_; }
    const ModelConfig& config() const { return config_; }

private:
    ModelConfig config_;
    diff::ParamStore params_;
    std::vector<diff::LayerSpec> encoder_specs_;
};

/// Expected scalar-parameter count of one member (the GS-ED log-variance
/// head is the only difference between the two modes).
std::size_t member_param_count(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelConfig config;
    data::NormalizationStats stats;
    std::vector<double> weights;
    Calibration calibration;
    std::uint64_t seed = 0;
    std::uint64_t dataset_seed = 0;
    int epochs_run = 0;
    double val_loss = 0.0;
};

struct EnsembleCheckpoint {
    std::vector<Checkpoint> members;
    Calibration calibration;
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);
void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
void write_ensemble(const std::string& path, const EnsembleCheckpoint& ens);

// ---------------------------------------------------------------------------
// Loaded model handle (single member or ensemble)
// ---------------------------------------------------------------------------

class ModelHandle {
public:
    static ModelHandle from_checkpoint(const Checkpoint& ckpt);
    static ModelHandle from_ensemble(const EnsembleCheckpoint& ens);
    static ModelHandle load(const std::string& path);
    void save(const std::string& path) const;

    Mode mode() const { return config_.mode; }
    bool probabilistic() const { return config_.mode != Mode::Ed; }
    const ModelConfig& config() const { return config_; }
    const data::NormalizationStats& stats() const { return stats_; }

    Calibration calibration;

    std::vector<Member>& members() { return members_; }
    const std::vector<Checkpoint>& checkpoints() const { return checkpoints_; }

private:
    ModelConfig config_;
    data::NormalizationStats stats_;
    std::vector<Member> members_;
    std::vector<Checkpoint> checkpoints_;
};

// ---------------------------------------------------------------------------
// Inference bound to one candidate's cruise state
// ---------------------------------------------------------------------------

struct FieldPrediction {
    oracle::SurfaceField cp, cf; // physical units
};

class Predictor {
public:
    Predictor(ModelHandle& model, const geom::AirfoilShape& shape,
              const data::ConditionSample& cruise);

    /// Number of Monte Carlo draws actually used: requested for GS-ED, the
    /// member count for ensembles. Throws for deterministic ED models.
    int resolve_draws(int requested) const;

    const LatentGaussian& latent() const; // gsed only

    /// Sample-coupled cd matrix [draw][condition] in drag-coefficient units.
    std::vector<std::vector<double>> sample_cd(const std::vector<double>& machs,
                                               int n_s, std::uint64_t seed);

    /// Deterministic prediction: ED head, GS-ED latent mean, ensemble mean.
    std::vector<double> mean_cd(const std::vector<double>& machs);

    /// Field-task equivalents; conditions are target angles of attack (deg).
    std::vector<std::vector<FieldPrediction>> sample_fields(const std::vector<double>& target_aoas,
                                                            int n_s, std::uint64_t seed);
    std::vector<FieldPrediction> mean_fields(const std::vector<double>& target_aoas);

private:
    ModelHandle& model_;
    diff::Tensor input_;                 // [1, 6, 101] normalized
    data::ConditionSample cruise_;       // raw units
    std::vector<LatentGaussian> latents_; // one per member
    bool has_latent_ = false;
};

/// Model input tensor for one candidate: normalized geometry plus cruise
/// fields on the canonical grid.
diff::Tensor make_input(const geom::AirfoilShape& shape, const data::ConditionSample& cruise,
                        const data::NormalizationStats& stats);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
    Checkpoint checkpoint;
    double wall_seconds = 0.0; // measured, never persisted
};

TrainResult train(const ModelConfig& config, const std::vector<data::SampleRecord>& records,
                  const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                  const data::NormalizationStats& stats, std::uint64_t seed);

/// The 90% training subsample used by ensemble member `member`.
std::vector<int> ensemble_subsample(const std::vector<int>& train_idx, int member,
                                    std::uint64_t seed);

/// Validation loss of a member under the same protocol the trainer monitors
/// (eval-mode batch norm, fixed validation draw streams from `train_seed`).
double validation_loss(Member& member, const std::vector<data::SampleRecord>& records,
                       const std::vector<int>& val_idx, const data::NormalizationStats& stats,
                       std::uint64_t train_seed);

/// n independent ED trainings on distinct 90% subsamples and init seeds.
std::vector<TrainResult> ensemble_train(const ModelConfig& config,
                                        const std::vector<data::SampleRecord>& records,
                                        const std::vector<int>& train_idx,
                                        const std::vector<int>& val_idx,
                                        const data::NormalizationStats& stats,
                                        std::uint64_t seed);

/// Spec-shaped loss evaluation on a record batch with seeded draws (GS-ED
/// modes; BN statistics from the latent-mean pass).
double gsed_loss(Member& member, const std::vector<data::SampleRecord>& records,
                 const std::vector<int>& batch, const data::NormalizationStats& stats,
                 int n_l, double beta, std::uint64_t seed);

} // namespace uadbo::model
