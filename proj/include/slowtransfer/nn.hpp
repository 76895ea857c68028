#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "slowtransfer/tensor.hpp"

namespace slowtransfer::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kQOutputs = 9;

enum class Activation { relu, linear };

// 2-D convolution with relu.
struct ConvSpec {
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t pad = 1;
    bool operator==(const ConvSpec&) const = default;
};

struct DenseSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::relu;
    bool operator==(const DenseSpec&) const = default;
};

struct FlattenSpec {
    bool operator==(const FlattenSpec&) const = default;
};

using LayerSpec = std::variant<ConvSpec, DenseSpec, FlattenSpec>;

std::size_t conv_output_size(std::size_t input, const ConvSpec& spec);

// Parameters of one layer. Conv weights are (out, in, k, k); dense weights
// are (out, in). Flatten layers carry empty tensors.
struct Layer {
    LayerSpec spec;
    Tensor weight;
    Tensor bias;
    bool operator==(const Layer&) const = default;
};

// Compact description of the standard Q-network family: optional conv stack,
// flatten, relu dense hidden layers, linear 9-way head.
struct ArchSpec {
    std::vector<std::size_t> input_shape{3, 32, 32};
    std::vector<std::size_t> conv_channels{8, 16, 32};
    std::vector<std::size_t> hidden{128};
    // Extra features concatenated with the last hidden activation before the head.
    std::size_t extra_head_inputs = 0;

    static ArchSpec desk(std::size_t image_size = 32);
    static ArchSpec paper();
    static ArchSpec for_vector(std::size_t input_dim, std::vector<std::size_t> hidden = {64, 64});

    bool operator==(const ArchSpec&) const = default;
};

class Network {
public:
    Network() = default;
    // Builds a zero-initialized network and checks that the layers chain.
    Network(std::vector<std::size_t> input_shape, std::vector<LayerSpec> specs, std::size_t extra_head_inputs = 0);

    static Network build(const ArchSpec& arch, std::uint64_t seed);

    const std::vector<std::size_t>& input_shape() const { return input_shape_; }
    std::size_t extra_head_inputs() const { return extra_head_inputs_; }
    // Width D of the activation captured at the last hidden layer.
    std::size_t tap_width() const { return tap_width_; }
    // Index of the layer whose output is the tap; -1 when the head reads the input directly.
    int tap_index() const { return static_cast<int>(layers_.size()) - 2; }
    std::size_t head_input_width() const;

    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::size_t parameter_count() const;

    void initialize(std::uint64_t seed);

    bool operator==(const Network&) const = default;

private:
    std::vector<std::size_t> input_shape_;
    std::vector<Layer> layers_;
    std::size_t extra_head_inputs_ = 0;
    std::size_t tap_width_ = 0;
};

struct Gradients {
    std::vector<Tensor> weight;
    std::vector<Tensor> bias;
};

// Intermediate values kept by a training forward pass for backward().
struct ForwardCache {
    std::size_t batch = 0;
    std::vector<RowMatrix> inputs;   // per layer (dense: batch x in; conv: im2col)
    std::vector<RowMatrix> outputs;  // per layer, after activation
};

struct TapOutput {
    Tensor q_values;  // (batch, 9)
    Tensor hidden;    // (batch, D)
};

// Q-values for a batch shaped (batch, input_shape...). `extra` supplies the
// (batch, extra_head_inputs) features concatenated before the head.
Tensor forward(const Network& net, const Tensor& batch, const Tensor* extra = nullptr);
TapOutput forward_with_tap(const Network& net, const Tensor& batch, const Tensor* extra = nullptr);
// Tap activations only; skips the head.
Tensor hidden_activations(const Network& net, const Tensor& batch);
Tensor forward_train(const Network& net, const Tensor& batch, const Tensor* extra, ForwardCache& cache);

// Gradients of mean_b sum_j loss_grad[b, j] * Q[b, j] with respect to every parameter.
Gradients backward(const Network& net, const ForwardCache& cache, const Tensor& loss_grad);
Gradients backward(const Network& net, const Tensor& batch, const Tensor& loss_grad, const Tensor* extra = nullptr);

struct AdamState {
    std::vector<Tensor> m_weight, v_weight, m_bias, v_bias;
    std::int64_t step = 0;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_network(const Network& net, double learning_rate = 0.001);
};

void adam_step(Network& net, AdamState& adam, const Gradients& grads);

std::uint64_t parameter_hash(const Network& net);

// Weight file: "STNN", u32 version, u64 descriptor length, JSON architecture
// descriptor, then all parameters as little-endian f64 in layer order
// (weight before bias).
void save(const Network& net, const std::string& path);
Network load(const std::string& path);
// Throws ShapeError unless the stored architecture equals `expected`'s.
Network load(const std::string& path, const Network& expected);

std::string describe(const Network& net);

}  // namespace slowtransfer::nn
