#include "apb/nn.hpp"

#include "apb/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace apb {

DenseLayer DenseLayer::init(int in, int out, double init_scale, Rng& rng) {
    if (in <= 0 || out <= 0)
        throw StructuralError("DenseLayer::init: dimensions must be positive");
    if (init_scale <= 0.0)
        throw StructuralError("DenseLayer::init: init_scale must be positive");
    const double bound = init_scale * std::sqrt(1.0 / in);
    DenseLayer layer;
    layer.weights = Matrix(out, in);
    layer.bias = Vector(out);
    for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.weights(r, c) = rng.uniform(-bound, bound);
    for (int r = 0; r < out; ++r) layer.bias(r) = rng.uniform(-bound, bound);
    return layer;
}

Mlp Mlp::init(const std::vector<int>& dims, Activation activation, double init_scale,
              Rng& rng) {
    if (dims.size() < 2) throw StructuralError("Mlp::init: need at least in and out dims");
    Mlp net;
    net.activation = activation;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
        net.layers.push_back(DenseLayer::init(dims[i], dims[i + 1], init_scale, rng));
    return net;
}

namespace {

Matrix apply_activation(Activation act, const Matrix& z) {
    switch (act) {
        case Activation::None: return z;
        case Activation::Relu: return z.cwiseMax(0.0);
        case Activation::Tanh: return z.array().tanh().matrix();
    }
    throw StructuralError("unknown activation");
}

Matrix activation_grad(Activation act, const Matrix& z, const Matrix& upstream) {
    switch (act) {
        case Activation::None: return upstream;
        case Activation::Relu:
            return (z.array() > 0.0).cast<double>().matrix().cwiseProduct(upstream);
        case Activation::Tanh: {
            const Matrix t = z.array().tanh().matrix();
            return (1.0 - t.array().square()).matrix().cwiseProduct(upstream);
        }
    }
    throw StructuralError("unknown activation");
}

} // namespace

Matrix mlp_forward(const Mlp& net, const Matrix& input, MlpTape* tape) {
    if (input.rows() != net.in_dim())
        throw StructuralError("mlp_forward: input has " + std::to_string(input.rows()) +
                              " rows, layer expects " + std::to_string(net.in_dim()));
    if (tape) {
        tape->inputs.clear();
        tape->preacts.clear();
    }
    Matrix x = input;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const DenseLayer& layer = net.layers[l];
        Matrix z = (layer.weights * x).colwise() + layer.bias;
        if (tape) {
            tape->inputs.push_back(std::move(x));
            tape->preacts.push_back(z);
        }
        x = (l + 1 < net.layers.size()) ? apply_activation(net.activation, z)
                                        : std::move(z);
    }
    return x;
}

Vector mlp_forward(const Mlp& net, const Vector& input, MlpTape* tape) {
    return mlp_forward(net, Matrix(input), tape).col(0);
}

void MlpGrads::setZero(const Mlp& net) {
    weights.resize(net.layers.size());
    bias.resize(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        weights[l] = Matrix::Zero(net.layers[l].out_dim(), net.layers[l].in_dim());
        bias[l] = Vector::Zero(net.layers[l].out_dim());
    }
}

MlpGrads& MlpGrads::operator+=(const MlpGrads& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] += other.weights[l];
        bias[l] += other.bias[l];
    }
    return *this;
}

MlpGrads& MlpGrads::operator*=(double factor) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] *= factor;
        bias[l] *= factor;
    }
    return *this;
}

Matrix mlp_backward(const Mlp& net, const MlpTape& tape, const Matrix& output_grad,
                    MlpGrads& grads) {
    const std::size_t n_layers = net.layers.size();
    if (tape.inputs.size() != n_layers || tape.preacts.size() != n_layers)
        throw StructuralError("mlp_backward: tape does not match the network");
    for (std::size_t l = 0; l < n_layers; ++l)
        if (tape.inputs[l].rows() != net.layers[l].in_dim() ||
            tape.preacts[l].rows() != net.layers[l].out_dim())
            throw StructuralError("mlp_backward: tape comes from a different network");
    if (output_grad.rows() != net.out_dim() ||
        output_grad.cols() != tape.inputs.back().cols())
        throw StructuralError("mlp_backward: output_grad shape mismatch");

    grads.weights.resize(n_layers);
    grads.bias.resize(n_layers);
    Matrix delta = output_grad; // gradient at layer output (post-linear)
    for (std::size_t l = n_layers; l-- > 0;) {
        if (l + 1 < n_layers)
            delta = activation_grad(net.activation, tape.preacts[l], delta);
        grads.weights[l] = delta * tape.inputs[l].transpose();
        grads.bias[l] = delta.rowwise().sum();
        delta = net.layers[l].weights.transpose() * delta;
    }
    return delta; // gradient with respect to the network input
}

int parameter_count(const DenseLayer& layer) {
    return static_cast<int>(layer.weights.size() + layer.bias.size());
}

int parameter_count(const Mlp& net) {
    int total = 0;
    for (const DenseLayer& l : net.layers) total += parameter_count(l);
    return total;
}

Vector flatten(const DenseLayer& layer) {
    Vector flat(parameter_count(layer));
    flat.head(layer.weights.size()) =
        Eigen::Map<const Vector>(layer.weights.data(), layer.weights.size());
    flat.tail(layer.bias.size()) = layer.bias;
    return flat;
}

void unflatten(DenseLayer& layer, const Vector& flat) {
    if (flat.size() != parameter_count(layer))
        throw StructuralError("unflatten: size mismatch for dense layer");
    Eigen::Map<Vector>(layer.weights.data(), layer.weights.size()) =
        flat.head(layer.weights.size());
    layer.bias = flat.tail(layer.bias.size());
}

Vector flatten(const Mlp& net) {
    Vector flat(parameter_count(net));
    int off = 0;
    for (const DenseLayer& l : net.layers) {
        flat.segment(off, parameter_count(l)) = flatten(l);
        off += parameter_count(l);
    }
    return flat;
}

void unflatten(Mlp& net, const Vector& flat) {
    if (flat.size() != parameter_count(net))
        throw StructuralError("unflatten: size mismatch for mlp");
    int off = 0;
    for (DenseLayer& l : net.layers) {
        unflatten(l, flat.segment(off, parameter_count(l)));
        off += parameter_count(l);
    }
}

Vector flatten_grads(const Mlp& net, const MlpGrads& grads) {
    Vector flat(parameter_count(net));
    int off = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const Matrix& w = grads.weights[l];
        flat.segment(off, w.size()) = Eigen::Map<const Vector>(w.data(), w.size());
        off += static_cast<int>(w.size());
        flat.segment(off, grads.bias[l].size()) = grads.bias[l];
        off += static_cast<int>(grads.bias[l].size());
    }
    return flat;
}

AdamState AdamState::init(int n_params, double lr) {
    AdamState s;
    s.first_moment = Vector::Zero(n_params);
    s.second_moment = Vector::Zero(n_params);
    s.lr = lr;
    return s;
}

void AdamState::reset() {
    first_moment.setZero();
    second_moment.setZero();
    step_count = 0;
}

Vector adam_step(AdamState& state, const Vector& params, const Vector& grads) {
    if (params.size() != state.first_moment.size() || grads.size() != params.size())
        throw StructuralError("adam_step: parameter/gradient size mismatch");
    if (!grads.allFinite())
        throw NumericError("adam_step: non-finite gradient");
    state.step_count += 1;
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
    state.second_moment = state.beta2 * state.second_moment +
                          (1.0 - state.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(state.beta1, state.step_count);
    const double c2 = 1.0 - std::pow(state.beta2, state.step_count);
    const Vector m_hat = state.first_moment / c1;
    const Vector v_hat = state.second_moment / c2;
    const Vector denom = v_hat.cwiseSqrt() + Vector::Constant(params.size(), state.epsilon);
    return params - state.lr * m_hat.cwiseQuotient(denom);
}

// --- checkpoint io ----------------------------------------------------------

namespace {

nlohmann::json tensor_to_json(const CheckpointTensor& t) {
    return nlohmann::json{{"shape", t.shape}, {"data", t.data}};
}

CheckpointTensor tensor_from_json(const nlohmann::json& j) {
    CheckpointTensor t;
    t.shape = j.at("shape").get<std::vector<int>>();
    t.data = j.at("data").get<std::vector<double>>();
    long expected = 1;
    for (int d : t.shape) expected *= d;
    if (expected != static_cast<long>(t.data.size()))
        throw ValidationError("checkpoint: tensor data does not match its shape");
    return t;
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json j;
    j["format"] = "apb-checkpoint-v1";
    j["seed"] = ckpt.seed;
    j["step"] = ckpt.step;
    j["config_hash"] = ckpt.config_hash;
    nlohmann::json groups;
    for (const auto& [name, tensors] : ckpt.groups) {
        nlohmann::json list = nlohmann::json::array();
        for (const CheckpointTensor& t : tensors) list.push_back(tensor_to_json(t));
        groups[name] = std::move(list);
    }
    j["groups"] = std::move(groups);
    std::ofstream out(path);
    if (!out) throw ValidationError("save_checkpoint: cannot open " + path);
    out << j.dump();
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("load_checkpoint: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("load_checkpoint: bad JSON: ") + e.what());
    }
    if (j.value("format", "") != "apb-checkpoint-v1")
        throw ValidationError("load_checkpoint: unknown format tag");
    Checkpoint ckpt;
    ckpt.seed = j.value("seed", std::uint64_t{0});
    ckpt.step = j.value("step", 0L);
    ckpt.config_hash = j.value("config_hash", "");
    for (const auto& [name, list] : j.at("groups").items()) {
        std::vector<CheckpointTensor> tensors;
        for (const auto& tj : list) tensors.push_back(tensor_from_json(tj));
        ckpt.groups[name] = std::move(tensors);
    }
    return ckpt;
}

std::vector<CheckpointTensor> tensors_of(const DenseLayer& layer) {
    CheckpointTensor w;
    w.shape = {layer.out_dim(), layer.in_dim()};
    w.data.assign(layer.weights.data(), layer.weights.data() + layer.weights.size());
    CheckpointTensor b;
    b.shape = {layer.out_dim()};
    b.data.assign(layer.bias.data(), layer.bias.data() + layer.bias.size());
    return {std::move(w), std::move(b)};
}

std::vector<CheckpointTensor> tensors_of(const Mlp& net) {
    std::vector<CheckpointTensor> out;
    for (const DenseLayer& l : net.layers) {
        auto pair = tensors_of(l);
        out.insert(out.end(), std::make_move_iterator(pair.begin()),
                   std::make_move_iterator(pair.end()));
    }
    return out;
}

void load_into(DenseLayer& layer, const std::vector<CheckpointTensor>& tensors) {
    if (tensors.size() != 2)
        throw ValidationError("checkpoint: dense layer expects 2 tensors, got " +
                              std::to_string(tensors.size()));
    const auto& w = tensors[0];
    const auto& b = tensors[1];
    if (w.shape != std::vector<int>{layer.out_dim(), layer.in_dim()})
        throw ValidationError("checkpoint: weight shape mismatch");
    if (b.shape != std::vector<int>{layer.out_dim()})
        throw ValidationError("checkpoint: bias shape mismatch");
    layer.weights = Eigen::Map<const Matrix>(w.data.data(), layer.out_dim(),
                                             layer.in_dim());
    layer.bias = Eigen::Map<const Vector>(b.data.data(), layer.out_dim());
}

void load_into(Mlp& net, const std::vector<CheckpointTensor>& tensors) {
    if (tensors.size() != 2 * net.layers.size())
        throw ValidationError("checkpoint: mlp expects " +
                              std::to_string(2 * net.layers.size()) + " tensors, got " +
                              std::to_string(tensors.size()));
    for (std::size_t l = 0; l < net.layers.size(); ++l)
        load_into(net.layers[l], {tensors[2 * l], tensors[2 * l + 1]});
}

} // namespace apb
