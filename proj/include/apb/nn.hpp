#pragma once

#include "apb/rng.hpp"
#include "apb/tabular.hpp" // Matrix/Vector aliases

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace apb {

enum class Activation { None, Relu, Tanh };

/// Affine layer y = W x + b. Initialization is uniform in
/// +-init_scale*sqrt(1/fan_in), so init_scale acts as a pure multiplier on
/// the base range.
struct DenseLayer {
    Matrix weights; // out x in
    Vector bias;    // out

    static DenseLayer init(int in, int out, double init_scale, Rng& rng);
    int in_dim() const { return static_cast<int>(weights.cols()); }
    int out_dim() const { return static_cast<int>(weights.rows()); }
};

/// Dense chain with one activation applied between layers (none after the
/// last). Columns of input/output matrices are batch samples.
struct Mlp {
    std::vector<DenseLayer> layers;
    Activation activation = Activation::Relu;

    /// dims = {in, hidden..., out}; requires at least {in, out}.
    static Mlp init(const std::vector<int>& dims, Activation activation,
                    double init_scale, Rng& rng);
    int in_dim() const { return layers.front().in_dim(); }
    int out_dim() const { return layers.back().out_dim(); }
};

/// Cached activations from one forward pass; consumed by the matching
/// backward pass.
struct MlpTape {
    std::vector<Matrix> inputs;  // input seen by each layer
    std::vector<Matrix> preacts; // W x + b of each layer
};

struct MlpGrads {
    std::vector<Matrix> weights;
    std::vector<Vector> bias;

    void setZero(const Mlp& net);
    MlpGrads& operator+=(const MlpGrads& other);
    MlpGrads& operator*=(double factor);
};

/// Batched forward; `tape`, when non-null, is filled for backward.
Matrix mlp_forward(const Mlp& net, const Matrix& input, MlpTape* tape = nullptr);
Vector mlp_forward(const Mlp& net, const Vector& input, MlpTape* tape = nullptr);

/// Backpropagates `output_grad` (same shape as the forward output) through
/// the tape; fills per-layer gradients and returns the input gradient.
Matrix mlp_backward(const Mlp& net, const MlpTape& tape, const Matrix& output_grad,
                    MlpGrads& grads);

// Flat parameter views, ordered layer by layer as [vec(W), b]. Gradients
// flatten in the same order, so optimizer state lines up by construction.
Vector flatten(const Mlp& net);
void unflatten(Mlp& net, const Vector& flat);
Vector flatten_grads(const Mlp& net, const MlpGrads& grads);
Vector flatten(const DenseLayer& layer);
void unflatten(DenseLayer& layer, const Vector& flat);
int parameter_count(const Mlp& net);
int parameter_count(const DenseLayer& layer);

/// Bias-corrected Adam over a flat parameter vector.
struct AdamState {
    Vector first_moment;
    Vector second_moment;
    long step_count = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState init(int n_params, double lr);
    void reset();
};

/// One update; throws NumericError on non-finite gradients.
Vector adam_step(AdamState& state, const Vector& params, const Vector& grads);

// ---------------------------------------------------------------------------
// Checkpoint container: named parameter groups, each a list of tensors with
// explicit shapes, plus run metadata. Loading verifies shapes loudly.

struct CheckpointTensor {
    std::vector<int> shape;
    std::vector<double> data;
};

struct Checkpoint {
    std::uint64_t seed = 0;
    long step = 0;
    std::string config_hash;
    std::map<std::string, std::vector<CheckpointTensor>> groups;

    bool has_group(const std::string& name) const { return groups.count(name) > 0; }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::vector<CheckpointTensor> tensors_of(const Mlp& net);
std::vector<CheckpointTensor> tensors_of(const DenseLayer& layer);
void load_into(Mlp& net, const std::vector<CheckpointTensor>& tensors);
void load_into(DenseLayer& layer, const std::vector<CheckpointTensor>& tensors);

} // namespace apb
