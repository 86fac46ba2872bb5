#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uadbo/util.hpp"

namespace uadbo::diff {

// ---------------------------------------------------------------------------
// Dense double tensors and reverse-mode autodiff at tensor granularity.
// Shapes follow [B, F] for feature tensors and [B, C, L] for channel signals.
// ---------------------------------------------------------------------------

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);

    int numel() const;
};

int shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the computation graph. Leaves carry no backward closure.
struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    int numel() const { return static_cast<int>(value.size()); }
    void ensure_grad();
};

NodePtr constant(Tensor t);
NodePtr variable(Tensor t); // leaf that accumulates gradient

/// Reverse sweep from a scalar output; fills grad on every reachable node
/// with requires_grad set. Throws if the output is not a scalar.
void backward(const NodePtr& output);

// --- primitive ops ---------------------------------------------------------

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double k);
NodePtr add_scalar(const NodePtr& a, double k);
NodePtr exp_elem(const NodePtr& a);

/// Identity inside [lo, hi], linear with `slope` outside. Keeps exponent
/// arguments bounded without distorting the well-behaved range.
NodePtr leaky_clamp(const NodePtr& a, double lo, double hi, double slope);
NodePtr square(const NodePtr& a);
NodePtr sum_all(const NodePtr& a);
NodePtr mean_all(const NodePtr& a);
NodePtr reshape(const NodePtr& a, std::vector<int> shape);
NodePtr concat(const std::vector<NodePtr>& xs, int axis);

/// Rows of `a` repeated `times` in sequence: [r0..rB, r0..rB, ...].
NodePtr tile_rows(const NodePtr& a, int times);

// --- layers ----------------------------------------------------------------

NodePtr dense(const NodePtr& x, const NodePtr& w, const NodePtr& b);
NodePtr conv1d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int padding);
NodePtr avgpool1d(const NodePtr& x, int window, int stride);
NodePtr leaky_relu(const NodePtr& x, double slope);
NodePtr flatten(const NodePtr& x);

/// Upsample [B,C,L] to [B,C,L*factor] with per-window linear reconstruction
/// (central-difference slopes). Each expanded window keeps the mean of its
/// source sample, so avgpool1d(f) ∘ interp_upsample1d(f) is mean-preserving.
NodePtr interp_upsample1d(const NodePtr& x, int factor);

/// Linear resample of [B,C,L] to an arbitrary output length (endpoints
/// aligned). Used where skip connections pin exact lengths.
NodePtr interp_resize1d(const NodePtr& x, int out_len);

/// Batch normalization over [B,F] (per feature) or [B,C,L] (per channel).
/// Training mode normalizes with batch statistics and updates the running
/// buffers in place (momentum-weighted, unbiased variance); eval mode uses
/// the running buffers.
NodePtr batchnorm1d(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                    const NodePtr& run_mean, const NodePtr& run_var,
                    bool training, double momentum = 0.1, double eps = 1e-8);

/// Batch normalization against externally supplied statistics, treated as
/// constants (no gradient flows through them).
NodePtr batchnorm1d_stats(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                          const std::vector<double>& mean, const std::vector<double>& var,
                          double eps = 1e-8);

// --- parameter store -------------------------------------------------------

struct ParamStore {
    struct Entry {
        std::string name;
        NodePtr node;
        bool trainable = true;
    };
    std::vector<Entry> entries;

    NodePtr add(const std::string& name, Tensor init, bool trainable = true);
    NodePtr at(const std::string& name) const;
    bool has(const std::string& name) const;
    std::size_t total_size() const;
    std::size_t trainable_size() const;
    std::vector<double> flatten() const;
    void load_flat(const std::vector<double>& flat);
    void zero_grad();
};

// --- optimizer and schedule -------------------------------------------------

struct AdamState {
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
};

/// Bias-corrected Adam over the trainable entries of the store, consuming
/// gradients accumulated by backward(). Throws (naming the parameter) on a
/// non-finite gradient.
void adam_step(ParamStore& params, AdamState& state, double lr);

struct LrSchedule {
    double warmup_start = 1e-4;
    double warmup_end = 1e-3;
    int warmup_epochs = 20;
    double decay_base = 0.95;
};

double lr_at(const LrSchedule& schedule, int epoch);

// --- declarative layer specs -------------------------------------------------

struct LayerSpec {
    enum class Kind { Dense, Conv1d, AvgPool1d, InterpUpsample1d, BatchNorm1d, LeakyRelu, Concat, Flatten };
    Kind kind = Kind::Dense;

    int features_in = 0, features_out = 0;          // dense
    int in_channels = 0, out_channels = 0;          // conv1d
    int kernel_size = 3, stride = 1, padding = -1;  // conv1d; padding<0 means kernel/2
    int pool_window = 2, pool_stride = 2;           // avgpool1d
    int factor = 2;                                 // interp-upsample1d
    int bn_features = 0;                            // batchnorm1d
    double bn_momentum = 0.1, bn_eps = 1e-8;
    double slope = 0.2;                             // leakyrelu

    void validate() const;
    static const char* kind_name(Kind k);
};

/// Create (seeded) parameters for a layer sequence under `prefix.<index>.*`.
/// Kaiming-style uniform fan-in scaling for weights, zero biases.
void init_sequence_params(const std::vector<LayerSpec>& specs, const std::string& prefix,
                          ParamStore& params, Rng& rng);

/// Run a layer sequence. A Concat layer consumes `side` (joined on axis 1)
/// exactly once. Shape errors name the offending layer index.
NodePtr forward(const std::vector<LayerSpec>& specs, const NodePtr& input, ParamStore& params,
                const std::string& prefix, bool training, const NodePtr& side = nullptr);

std::size_t sequence_param_count(const std::vector<LayerSpec>& specs);

} // namespace uadbo::diff
