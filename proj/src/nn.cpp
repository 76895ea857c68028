#include "slowtransfer/nn.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

namespace slowtransfer::nn {

namespace {

// Tensor storage is only malloc-aligned. Eigen picks different reduction and
// FMA paths depending on alignment, so products and reductions are always
// evaluated on Eigen-owned operands and only copied through these maps.
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

constexpr char kMagic[4] = {'S', 'T', 'N', 'N'};
constexpr std::uint32_t kFormatVersion = 1;

struct Shape3 {
    std::size_t c, h, w;
};

// Gathers receptive fields of a (C, B*H*W) activation into (C*k*k, B*Ho*Wo).
void im2col(const RowMatrix& in, Shape3 s, std::size_t batch, const ConvSpec& spec, std::size_t ho,
            std::size_t wo, RowMatrix& cols) {
    const std::size_t k = spec.kernel;
    const std::size_t plane = s.h * s.w;
    const std::size_t out_plane = ho * wo;
    cols.resize(static_cast<Eigen::Index>(s.c * k * k), static_cast<Eigen::Index>(batch * out_plane));
    for (std::size_t c = 0; c < s.c; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                double* dst = cols.row(static_cast<Eigen::Index>((c * k + ky) * k + kx)).data();
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* src = in.data() + c * batch * plane + b * plane;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) -
                                        static_cast<std::ptrdiff_t>(spec.pad);
                        double* row_dst = dst + b * out_plane + oy * wo;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) {
                            std::fill(row_dst, row_dst + wo, 0.0);
                            continue;
                        }
                        const double* row_src = src + static_cast<std::size_t>(iy) * s.w;
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) -
                                            static_cast<std::ptrdiff_t>(spec.pad);
                            row_dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w))
                                              ? 0.0
                                              : row_src[static_cast<std::size_t>(ix)];
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters (C*k*k, B*Ho*Wo) back into (C, B*H*W).
void col2im(const RowMatrix& cols, Shape3 s, std::size_t batch, const ConvSpec& spec, std::size_t ho,
            std::size_t wo, RowMatrix& out) {
    const std::size_t k = spec.kernel;
    const std::size_t plane = s.h * s.w;
    const std::size_t out_plane = ho * wo;
    out.setZero(static_cast<Eigen::Index>(s.c), static_cast<Eigen::Index>(batch * plane));
    for (std::size_t c = 0; c < s.c; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const double* src = cols.row(static_cast<Eigen::Index>((c * k + ky) * k + kx)).data();
                for (std::size_t b = 0; b < batch; ++b) {
                    double* dst = out.data() + c * batch * plane + b * plane;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) -
                                        static_cast<std::ptrdiff_t>(spec.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
                        const double* row_src = src + b * out_plane + oy * wo;
                        double* row_dst = dst + static_cast<std::size_t>(iy) * s.w;
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) -
                                            static_cast<std::ptrdiff_t>(spec.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
                            row_dst[static_cast<std::size_t>(ix)] += row_src[ox];
                        }
                    }
                }
            }
        }
    }
}

void relu_inplace(RowMatrix& m) { m = m.cwiseMax(0.0); }

RowMatrix relu_mask_product(const RowMatrix& grad, const RowMatrix& activated) {
    return (activated.array() > 0.0).select(grad.array(), 0.0).matrix();
}

Tensor to_tensor(const RowMatrix& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    std::copy(m.data(), m.data() + m.size(), t.data.begin());
    return t;
}

std::vector<std::vector<std::size_t>> chain_shapes(const std::vector<std::size_t>& input_shape,
                                                   const std::vector<Layer>& layers, std::size_t extra) {
    std::vector<std::vector<std::size_t>> shapes{input_shape};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& cur = shapes.back();
        const std::string where = "layer " + std::to_string(i) + ": ";
        const bool last = i + 1 == layers.size();
        std::vector<std::size_t> next;
        if (const auto* conv = std::get_if<ConvSpec>(&layers[i].spec)) {
            if (cur.size() != 3 || cur[0] != conv->in_ch) {
                throw ShapeError(where + "conv expects (" + std::to_string(conv->in_ch) + ", H, W) input, got " +
                                 Tensor::shape_string(cur));
            }
            if (conv->kernel == 0 || conv->stride == 0 || conv->out_ch == 0) throw ShapeError(where + "degenerate conv");
            if (cur[1] + 2 * conv->pad < conv->kernel || cur[2] + 2 * conv->pad < conv->kernel) {
                throw ShapeError(where + "conv kernel larger than padded input");
            }
            next = {conv->out_ch, conv_output_size(cur[1], *conv), conv_output_size(cur[2], *conv)};
        } else if (std::holds_alternative<FlattenSpec>(layers[i].spec)) {
            next = {Tensor::element_count(cur)};
        } else {
            const auto& dense = std::get<DenseSpec>(layers[i].spec);
            const std::size_t expected_in = cur.size() == 1 ? cur[0] + (last ? extra : 0) : 0;
            if (cur.size() != 1 || dense.in_dim != expected_in) {
                throw ShapeError(where + "dense in_dim " + std::to_string(dense.in_dim) + " does not match input " +
                                 Tensor::shape_string(cur) + (last && extra ? " plus extra inputs" : ""));
            }
            next = {dense.out_dim};
        }
        shapes.push_back(std::move(next));
    }
    return shapes;
}

struct Pass {
    RowMatrix q;
    RowMatrix tap;
};

Pass run_forward(const Network& net, const Tensor& batch, const Tensor* extra, ForwardCache* cache, bool stop_at_tap) {
    const auto& in_shape = net.input_shape();
    if (batch.rank() != in_shape.size() + 1 ||
        !std::equal(in_shape.begin(), in_shape.end(), batch.shape.begin() + 1)) {
        throw ShapeError("layer 0: input batch shape " + Tensor::shape_string(batch.shape) +
                         " does not match network input " + Tensor::shape_string(in_shape));
    }
    const std::size_t b = batch.dim(0);
    const auto& layers = net.layers();
    if (net.extra_head_inputs() > 0 && !stop_at_tap) {
        if (extra == nullptr || extra->rank() != 2 || extra->dim(0) != b || extra->dim(1) != net.extra_head_inputs()) {
            throw ShapeError("layer " + std::to_string(layers.size() - 1) + ": expected extra head inputs of shape (" +
                             std::to_string(b) + ", " + std::to_string(net.extra_head_inputs()) + ")");
        }
    }
    if (cache) {
        cache->batch = b;
        cache->inputs.resize(layers.size());
        cache->outputs.resize(layers.size());
    }

    RowMatrix cur;
    Shape3 spatial{0, 0, 0};
    if (in_shape.size() == 3) {
        spatial = {in_shape[0], in_shape[1], in_shape[2]};
        const std::size_t plane = spatial.h * spatial.w;
        cur.resize(static_cast<Eigen::Index>(spatial.c), static_cast<Eigen::Index>(b * plane));
        for (std::size_t s = 0; s < b; ++s) {
            for (std::size_t c = 0; c < spatial.c; ++c) {
                const double* src = batch.data.data() + (s * spatial.c + c) * plane;
                std::copy(src, src + plane, cur.data() + c * b * plane + s * plane);
            }
        }
    } else {
        cur = ConstRowMap(batch.data.data(), static_cast<Eigen::Index>(b),
                          static_cast<Eigen::Index>(batch.size() / std::max<std::size_t>(b, 1)));
    }

    Pass pass;
    if (layers.size() == 1) pass.tap = cur;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& layer = layers[i];
        const bool last = i + 1 == layers.size();
        if (last && stop_at_tap) break;
        if (const auto* conv = std::get_if<ConvSpec>(&layer.spec)) {
            const std::size_t ho = conv_output_size(spatial.h, *conv);
            const std::size_t wo = conv_output_size(spatial.w, *conv);
            RowMatrix scratch;
            RowMatrix& cols = cache ? cache->inputs[i] : scratch;
            im2col(cur, spatial, b, *conv, ho, wo, cols);
            const std::size_t fan = conv->in_ch * conv->kernel * conv->kernel;
            const RowMatrix w = ConstRowMap(layer.weight.data.data(), static_cast<Eigen::Index>(conv->out_ch),
                                            static_cast<Eigen::Index>(fan));
            const Eigen::Map<const Eigen::VectorXd> bias(layer.bias.data.data(),
                                                         static_cast<Eigen::Index>(conv->out_ch));
            RowMatrix out(static_cast<Eigen::Index>(conv->out_ch), cols.cols());
            out.noalias() = w * cols;
            out.colwise() += bias;
            relu_inplace(out);
            cur = std::move(out);
            spatial = {conv->out_ch, ho, wo};
        } else if (std::holds_alternative<FlattenSpec>(layer.spec)) {
            const std::size_t plane = spatial.h * spatial.w;
            RowMatrix flat(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(spatial.c * plane));
            for (std::size_t s = 0; s < b; ++s) {
                for (std::size_t c = 0; c < spatial.c; ++c) {
                    const double* src = cur.data() + c * b * plane + s * plane;
                    std::copy(src, src + plane, flat.data() + s * spatial.c * plane + c * plane);
                }
            }
            cur = std::move(flat);
        } else {
            const auto& dense = std::get<DenseSpec>(layer.spec);
            RowMatrix scratch;
            RowMatrix& input = cache ? cache->inputs[i] : scratch;
            if (last && net.extra_head_inputs() > 0) {
                input.resize(cur.rows(), static_cast<Eigen::Index>(dense.in_dim));
                input.leftCols(cur.cols()) = cur;
                input.rightCols(static_cast<Eigen::Index>(net.extra_head_inputs())) =
                    ConstRowMap(extra->data.data(), static_cast<Eigen::Index>(b),
                                static_cast<Eigen::Index>(net.extra_head_inputs()));
            } else if (cache) {
                input = cur;
            } else {
                input = std::move(cur);
            }
            const RowMatrix w = ConstRowMap(layer.weight.data.data(), static_cast<Eigen::Index>(dense.out_dim),
                                            static_cast<Eigen::Index>(dense.in_dim));
            const Eigen::Map<const Eigen::RowVectorXd> bias(layer.bias.data.data(),
                                                            static_cast<Eigen::Index>(dense.out_dim));
            RowMatrix out(input.rows(), static_cast<Eigen::Index>(dense.out_dim));
            out.noalias() = input * w.transpose();
            out.rowwise() += bias;
            if (dense.activation == Activation::relu) relu_inplace(out);
            cur = std::move(out);
        }
        if (cache && !std::holds_alternative<FlattenSpec>(layer.spec)) cache->outputs[i] = cur;
        if (static_cast<int>(i) == net.tap_index()) pass.tap = cur;
    }
    if (!stop_at_tap) pass.q = std::move(cur);
    return pass;
}

nlohmann::json layer_json(const LayerSpec& spec) {
    if (const auto* c = std::get_if<ConvSpec>(&spec)) {
        return {{"type", "conv"},   {"in_ch", c->in_ch},   {"out_ch", c->out_ch},
                {"kernel", c->kernel}, {"stride", c->stride}, {"pad", c->pad}};
    }
    if (std::holds_alternative<FlattenSpec>(spec)) return {{"type", "flatten"}};
    const auto& d = std::get<DenseSpec>(spec);
    return {{"type", "dense"},
            {"in_dim", d.in_dim},
            {"out_dim", d.out_dim},
            {"activation", d.activation == Activation::relu ? "relu" : "linear"}};
}

LayerSpec layer_from_json(const nlohmann::json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "conv") {
        return ConvSpec{j.at("in_ch").get<std::size_t>(), j.at("out_ch").get<std::size_t>(),
                        j.at("kernel").get<std::size_t>(), j.at("stride").get<std::size_t>(),
                        j.at("pad").get<std::size_t>()};
    }
    if (type == "flatten") return FlattenSpec{};
    if (type == "dense") {
        const auto act = j.at("activation").get<std::string>();
        if (act != "relu" && act != "linear") throw FormatError("unknown activation '" + act + "'");
        return DenseSpec{j.at("in_dim").get<std::size_t>(), j.at("out_dim").get<std::size_t>(),
                         act == "relu" ? Activation::relu : Activation::linear};
    }
    throw FormatError("unknown layer type '" + type + "'");
}

nlohmann::json descriptor(const Network& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers()) layers.push_back(layer_json(l.spec));
    return {{"input_shape", net.input_shape()}, {"extra_head_inputs", net.extra_head_inputs()}, {"layers", layers}};
}

void write_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void write_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint64_t read_le(std::istream& in, int bytes, const std::string& what) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = in.get();
        if (c == EOF) throw FormatError("truncated weight file while reading " + what);
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

}  // namespace

std::size_t conv_output_size(std::size_t input, const ConvSpec& spec) {
    return (input + 2 * spec.pad - spec.kernel) / spec.stride + 1;
}

ArchSpec ArchSpec::desk(std::size_t image_size) {
    ArchSpec a;
    a.input_shape = {3, image_size, image_size};
    a.conv_channels = {8, 16, 32};
    a.hidden = {128};
    return a;
}

ArchSpec ArchSpec::paper() {
    ArchSpec a;
    a.input_shape = {3, 64, 64};
    a.conv_channels = {16, 32, 64};
    a.hidden = {512};
    return a;
}

ArchSpec ArchSpec::for_vector(std::size_t input_dim, std::vector<std::size_t> hidden) {
    ArchSpec a;
    a.input_shape = {input_dim};
    a.conv_channels = {};
    a.hidden = std::move(hidden);
    return a;
}

Network::Network(std::vector<std::size_t> input_shape, std::vector<LayerSpec> specs, std::size_t extra_head_inputs)
    : input_shape_(std::move(input_shape)), extra_head_inputs_(extra_head_inputs) {
    if (specs.empty()) throw ShapeError("network needs at least one layer");
    const auto* head = std::get_if<DenseSpec>(&specs.back());
    if (head == nullptr || head->activation != Activation::linear || head->out_dim != kQOutputs) {
        throw ShapeError("layer " + std::to_string(specs.size() - 1) +
                         ": final layer must be a linear dense layer with 9 outputs");
    }
    for (auto& spec : specs) layers_.push_back(Layer{std::move(spec), {}, {}});
    const auto shapes = chain_shapes(input_shape_, layers_, extra_head_inputs_);
    tap_width_ = shapes[shapes.size() - 2].at(0);
    for (auto& layer : layers_) {
        if (const auto* c = std::get_if<ConvSpec>(&layer.spec)) {
            layer.weight = Tensor({c->out_ch, c->in_ch, c->kernel, c->kernel});
            layer.bias = Tensor({c->out_ch});
        } else if (const auto* d = std::get_if<DenseSpec>(&layer.spec)) {
            layer.weight = Tensor({d->out_dim, d->in_dim});
            layer.bias = Tensor({d->out_dim});
        }
    }
}

Network Network::build(const ArchSpec& arch, std::uint64_t seed) {
    std::vector<LayerSpec> specs;
    std::vector<std::size_t> shape = arch.input_shape;
    if (!arch.conv_channels.empty()) {
        if (shape.size() != 3) throw ShapeError("conv architecture needs a (C, H, W) input shape");
        for (std::size_t ch : arch.conv_channels) {
            ConvSpec conv{shape[0], ch, 3, 2, 1};
            shape = {ch, conv_output_size(shape[1], conv), conv_output_size(shape[2], conv)};
            specs.emplace_back(conv);
        }
    }
    if (shape.size() != 1) {
        specs.emplace_back(FlattenSpec{});
        shape = {Tensor::element_count(shape)};
    }
    std::size_t width = shape[0];
    for (std::size_t h : arch.hidden) {
        specs.emplace_back(DenseSpec{width, h, Activation::relu});
        width = h;
    }
    specs.emplace_back(DenseSpec{width + arch.extra_head_inputs, kQOutputs, Activation::linear});
    Network net(arch.input_shape, std::move(specs), arch.extra_head_inputs);
    net.initialize(seed);
    return net;
}

std::size_t Network::head_input_width() const { return std::get<DenseSpec>(layers_.back().spec).in_dim; }

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

void Network::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& layer : layers_) {
        double fan_in = 0.0;
        double fan_out = 0.0;
        if (const auto* c = std::get_if<ConvSpec>(&layer.spec)) {
            fan_in = static_cast<double>(c->in_ch * c->kernel * c->kernel);
            fan_out = static_cast<double>(c->out_ch * c->kernel * c->kernel);
        } else if (const auto* d = std::get_if<DenseSpec>(&layer.spec)) {
            fan_in = static_cast<double>(d->in_dim);
            fan_out = static_cast<double>(d->out_dim);
        } else {
            continue;
        }
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& w : layer.weight.data) w = dist(rng);
        std::fill(layer.bias.data.begin(), layer.bias.data.end(), 0.0);
    }
}

Tensor forward(const Network& net, const Tensor& batch, const Tensor* extra) {
    return to_tensor(run_forward(net, batch, extra, nullptr, false).q);
}

TapOutput forward_with_tap(const Network& net, const Tensor& batch, const Tensor* extra) {
    Pass pass = run_forward(net, batch, extra, nullptr, false);
    return {to_tensor(pass.q), to_tensor(pass.tap)};
}

Tensor hidden_activations(const Network& net, const Tensor& batch) {
    return to_tensor(run_forward(net, batch, nullptr, nullptr, true).tap);
}

Tensor forward_train(const Network& net, const Tensor& batch, const Tensor* extra, ForwardCache& cache) {
    return to_tensor(run_forward(net, batch, extra, &cache, false).q);
}

Gradients backward(const Network& net, const ForwardCache& cache, const Tensor& loss_grad) {
    const std::size_t b = cache.batch;
    if (loss_grad.rank() != 2 || loss_grad.dim(0) != b || loss_grad.dim(1) != kQOutputs) {
        throw ShapeError("loss gradient must have shape (" + std::to_string(b) + ", 9), got " +
                         Tensor::shape_string(loss_grad.shape));
    }
    const auto& layers = net.layers();
    const auto shapes = chain_shapes(net.input_shape(), layers, net.extra_head_inputs());
    Gradients grads;
    grads.weight.resize(layers.size());
    grads.bias.resize(layers.size());

    RowMatrix upstream = ConstRowMap(loss_grad.data.data(), static_cast<Eigen::Index>(b),
                                     static_cast<Eigen::Index>(kQOutputs)) /
                         static_cast<double>(b);
    for (std::size_t idx = layers.size(); idx-- > 0;) {
        const Layer& layer = layers[idx];
        grads.weight[idx] = Tensor(layer.weight.shape);
        grads.bias[idx] = Tensor(layer.bias.shape);
        if (const auto* dense = std::get_if<DenseSpec>(&layer.spec)) {
            RowMatrix dz = dense->activation == Activation::relu ? relu_mask_product(upstream, cache.outputs[idx])
                                                                  : upstream;
            const RowMatrix& input = cache.inputs[idx];
            RowMap(grads.weight[idx].data.data(), static_cast<Eigen::Index>(dense->out_dim),
                   static_cast<Eigen::Index>(dense->in_dim))
                = RowMatrix(dz.transpose() * input);
            Eigen::Map<Eigen::RowVectorXd>(grads.bias[idx].data.data(), static_cast<Eigen::Index>(dense->out_dim)) =
                Eigen::RowVectorXd(dz.colwise().sum());
            if (idx > 0) {
                const RowMatrix w = ConstRowMap(layer.weight.data.data(), static_cast<Eigen::Index>(dense->out_dim),
                                                static_cast<Eigen::Index>(dense->in_dim));
                RowMatrix dx = dz * w;
                const bool last = idx + 1 == layers.size();
                if (last && net.extra_head_inputs() > 0) {
                    upstream = dx.leftCols(static_cast<Eigen::Index>(net.tap_width()));
                } else {
                    upstream = std::move(dx);
                }
            }
        } else if (std::holds_alternative<FlattenSpec>(layer.spec)) {
            const auto& in = shapes[idx];
            const std::size_t plane = in[1] * in[2];
            RowMatrix spatial(static_cast<Eigen::Index>(in[0]), static_cast<Eigen::Index>(b * plane));
            for (std::size_t s = 0; s < b; ++s) {
                for (std::size_t c = 0; c < in[0]; ++c) {
                    const double* src = upstream.data() + s * in[0] * plane + c * plane;
                    std::copy(src, src + plane, spatial.data() + c * b * plane + s * plane);
                }
            }
            upstream = std::move(spatial);
        } else {
            const auto& conv = std::get<ConvSpec>(layer.spec);
            const std::size_t fan = conv.in_ch * conv.kernel * conv.kernel;
            RowMatrix dz = relu_mask_product(upstream, cache.outputs[idx]);
            RowMap(grads.weight[idx].data.data(), static_cast<Eigen::Index>(conv.out_ch),
                   static_cast<Eigen::Index>(fan))
                = RowMatrix(dz * cache.inputs[idx].transpose());
            Eigen::Map<Eigen::VectorXd>(grads.bias[idx].data.data(), static_cast<Eigen::Index>(conv.out_ch)) =
                Eigen::VectorXd(dz.rowwise().sum());
            if (idx > 0) {
                const RowMatrix w = ConstRowMap(layer.weight.data.data(), static_cast<Eigen::Index>(conv.out_ch),
                                                static_cast<Eigen::Index>(fan));
                RowMatrix dcols = w.transpose() * dz;
                const auto& in = shapes[idx];
                const auto& out = shapes[idx + 1];
                col2im(dcols, {in[0], in[1], in[2]}, b, conv, out[1], out[2], upstream);
            }
        }
    }
    return grads;
}

Gradients backward(const Network& net, const Tensor& batch, const Tensor& loss_grad, const Tensor* extra) {
    ForwardCache cache;
    forward_train(net, batch, extra, cache);
    return backward(net, cache, loss_grad);
}

AdamState AdamState::for_network(const Network& net, double learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    for (const auto& l : net.layers()) {
        s.m_weight.emplace_back(l.weight.shape);
        s.v_weight.emplace_back(l.weight.shape);
        s.m_bias.emplace_back(l.bias.shape);
        s.v_bias.emplace_back(l.bias.shape);
    }
    return s;
}

void adam_step(Network& net, AdamState& adam, const Gradients& grads) {
    auto& layers = net.layers();
    if (grads.weight.size() != layers.size() || grads.bias.size() != layers.size() ||
        adam.m_weight.size() != layers.size()) {
        throw ShapeError("gradient/optimizer state does not match the network's layer count");
    }
    adam.step += 1;
    const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.step));
    const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.step));
    auto update = [&](Tensor& param, const Tensor& grad, Tensor& m, Tensor& v) {
        if (grad.shape != param.shape) throw ShapeError("gradient shape does not match parameter shape");
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double g = grad.data[i];
            m.data[i] = adam.beta1 * m.data[i] + (1.0 - adam.beta1) * g;
            v.data[i] = adam.beta2 * v.data[i] + (1.0 - adam.beta2) * g * g;
            const double m_hat = m.data[i] / c1;
            const double v_hat = v.data[i] / c2;
            param.data[i] -= adam.learning_rate * m_hat / (std::sqrt(v_hat) + adam.eps);
        }
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
        update(layers[i].weight, grads.weight[i], adam.m_weight[i], adam.v_weight[i]);
        update(layers[i].bias, grads.bias[i], adam.m_bias[i], adam.v_bias[i]);
    }
}

std::uint64_t parameter_hash(const Network& net) {
    Fnv1a h;
    for (const auto& l : net.layers()) {
        h.update_values(l.weight.values());
        h.update_values(l.bias.values());
    }
    return h.digest();
}

void save(const Network& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(kMagic, 4);
    write_u32(out, kFormatVersion);
    const std::string desc = descriptor(net).dump();
    write_u64(out, desc.size());
    out.write(desc.data(), static_cast<std::streamsize>(desc.size()));
    for (const auto& l : net.layers()) {
        for (const Tensor* t : {&l.weight, &l.bias}) {
            for (double v : t->data) write_u64(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

Network load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) throw FormatError(path + ": bad magic bytes");
    const auto version = static_cast<std::uint32_t>(read_le(in, 4, "version"));
    if (version != kFormatVersion) {
        throw FormatError(path + ": format version mismatch (file " + std::to_string(version) + ", expected " +
                          std::to_string(kFormatVersion) + ")");
    }
    const std::uint64_t desc_len = read_le(in, 8, "descriptor length");
    if (desc_len > (1u << 24)) throw FormatError(path + ": implausible descriptor length");
    std::string desc(desc_len, '\0');
    in.read(desc.data(), static_cast<std::streamsize>(desc_len));
    if (static_cast<std::uint64_t>(in.gcount()) != desc_len) throw FormatError(path + ": truncated descriptor");

    Network net;
    try {
        const auto j = nlohmann::json::parse(desc);
        std::vector<LayerSpec> specs;
        for (const auto& l : j.at("layers")) specs.push_back(layer_from_json(l));
        net = Network(j.at("input_shape").get<std::vector<std::size_t>>(), std::move(specs),
                      j.at("extra_head_inputs").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": malformed architecture descriptor: " + e.what());
    }
    for (auto& l : net.layers()) {
        for (Tensor* t : {&l.weight, &l.bias}) {
            for (double& v : t->data) v = std::bit_cast<double>(read_le(in, 8, "parameters"));
        }
    }
    if (in.peek() != EOF) throw FormatError(path + ": trailing bytes after parameters");
    return net;
}

Network load(const std::string& path, const Network& expected) {
    Network net = load(path);
    bool same = net.input_shape() == expected.input_shape() &&
                net.extra_head_inputs() == expected.extra_head_inputs() &&
                net.layers().size() == expected.layers().size();
    for (std::size_t i = 0; same && i < net.layers().size(); ++i) {
        same = net.layers()[i].spec == expected.layers()[i].spec;
    }
    if (!same) {
        throw ShapeError(path + ": stored architecture " + describe(net) + " does not match expected " +
                         describe(expected));
    }
    return net;
}

std::string describe(const Network& net) { return descriptor(net).dump(); }

}  // namespace slowtransfer::nn
