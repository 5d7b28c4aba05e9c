#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "minidl/errors.hpp"
#include "minidl/ops.hpp"
#include "minidl/rng.hpp"

// An ordered, parameterized layer stack with train/eval mode, plus the
// checkpoint codec. Checkpoints are a flat little-endian binary:
//
//   magic "MDL1"
//   u32 layer_count
//   per layer: u32 kind, u32 ni, i32 ints[ni], u32 nf, f32 floats[nf]
//   u32 param_count,  per tensor: u32 ndim, u32 dims[ndim], f32 data[numel]
//   u32 state_count,  per tensor: same encoding (batch-norm running mean
//                     and variance, in layer order)
//
// Parameter tensors appear in layer-declaration order: conv and linear
// layers contribute (weight, bias), batch-norm contributes (gamma, beta).
// Data is always stored as 32-bit floats regardless of the scalar type in
// memory.

namespace minidl {

struct Conv2dSpec {
    int in_ch, out_ch, kernel, stride, pad;
};
struct ConvTranspose2dSpec {
    int in_ch, out_ch, kernel, stride, pad;
};
struct MaxPool2dSpec {
    int kernel, stride;
};
struct ReluSpec {};
struct LeakyReluSpec {
    float slope = 0.2f;
};
struct SigmoidSpec {};
struct TanhSpec {};
struct BatchNorm2dSpec {
    int channels;
    float eps = 1e-5f;
    float momentum = 0.1f;
};
struct DropoutSpec {
    float p = 0.5f;
};
struct FlattenSpec {};
struct LinearSpec {
    int in_features, out_features;
};
struct ReshapeSpec {
    std::vector<int> dims;  // per-sample target shape (batch dim excluded)
};

using LayerSpec =
    std::variant<Conv2dSpec, ConvTranspose2dSpec, MaxPool2dSpec, ReluSpec, LeakyReluSpec,
                 SigmoidSpec, TanhSpec, BatchNorm2dSpec, DropoutSpec, FlattenSpec, LinearSpec,
                 ReshapeSpec>;

enum class WeightInit { Zero, KaimingUniform, DcganNormal };

namespace detail {

template <class S>
void init_weight(Tensor<S>& w, WeightInit init, int fan_in, Rng& rng) {
    switch (init) {
        case WeightInit::Zero: return;
        case WeightInit::KaimingUniform: {
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (std::int64_t i = 0; i < w.size(); ++i)
                w[i] = static_cast<S>(rng.uniform(-bound, bound));
            return;
        }
        case WeightInit::DcganNormal:
            for (std::int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<S>(rng.normal(0.0, 0.02));
            return;
    }
}

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace detail

// Per-layer forward activations of one pass, for inspection (Grad-CAM picks
// its target activation out of this).
template <class S>
struct ForwardTrace {
    std::vector<Var<S>> outputs;  // one per layer, in stack order
};

template <class S>
class Model {
public:
    struct Layer {
        LayerSpec spec;
        std::vector<int> param_ids;  // indices into params_
        int state_id = -1;           // index into bn_states_, for batch-norm
    };

    // --- construction -------------------------------------------------------

    int add_conv2d(int in_ch, int out_ch, int kernel, int stride, int pad,
                   WeightInit init = WeightInit::Zero, Rng* rng = nullptr) {
        Tensor<S> w({out_ch, in_ch, kernel, kernel});
        Tensor<S> b({out_ch});
        if (init != WeightInit::Zero)
            detail::init_weight(w, init, in_ch * kernel * kernel, require_rng(rng));
        return push_layer(Conv2dSpec{in_ch, out_ch, kernel, stride, pad}, {add_param(w), add_param(b)});
    }

    int add_conv_transpose2d(int in_ch, int out_ch, int kernel, int stride, int pad,
                             WeightInit init = WeightInit::Zero, Rng* rng = nullptr) {
        Tensor<S> w({in_ch, out_ch, kernel, kernel});
        Tensor<S> b({out_ch});
        if (init != WeightInit::Zero)
            detail::init_weight(w, init, in_ch * kernel * kernel, require_rng(rng));
        return push_layer(ConvTranspose2dSpec{in_ch, out_ch, kernel, stride, pad},
                          {add_param(w), add_param(b)});
    }

    int add_maxpool2d(int kernel, int stride) {
        return push_layer(MaxPool2dSpec{kernel, stride}, {});
    }

    int add_relu() { return push_layer(ReluSpec{}, {}); }
    int add_leaky_relu(float slope) { return push_layer(LeakyReluSpec{slope}, {}); }
    int add_sigmoid() { return push_layer(SigmoidSpec{}, {}); }
    int add_tanh() { return push_layer(TanhSpec{}, {}); }

    int add_batchnorm2d(int channels, float eps = 1e-5f, float momentum = 0.1f,
                        WeightInit init = WeightInit::Zero, Rng* rng = nullptr) {
        Tensor<S> gamma = Tensor<S>::ones({channels});
        Tensor<S> beta({channels});
        if (init == WeightInit::DcganNormal)
            for (std::int64_t i = 0; i < gamma.size(); ++i)
                gamma[i] = static_cast<S>(require_rng(rng).normal(1.0, 0.02));
        const int layer = push_layer(BatchNorm2dSpec{channels, eps, momentum},
                                     {add_param(gamma), add_param(beta)});
        layers_[static_cast<std::size_t>(layer)].state_id = static_cast<int>(bn_states_.size());
        bn_states_.emplace_back(channels);
        return layer;
    }

    int add_dropout(float p) { return push_layer(DropoutSpec{p}, {}); }
    int add_flatten() { return push_layer(FlattenSpec{}, {}); }

    int add_linear(int in_features, int out_features, WeightInit init = WeightInit::Zero,
                   Rng* rng = nullptr) {
        Tensor<S> w({in_features, out_features});
        Tensor<S> b({out_features});
        if (init != WeightInit::Zero) detail::init_weight(w, init, in_features, require_rng(rng));
        return push_layer(LinearSpec{in_features, out_features}, {add_param(w), add_param(b)});
    }

    int add_reshape(std::vector<int> per_sample_dims) {
        return push_layer(ReshapeSpec{std::move(per_sample_dims)}, {});
    }

    // --- forward ------------------------------------------------------------

    // Applies the stack to x. Train mode requires an Rng when the stack
    // contains dropout. A trace, when given, receives every layer output.
    Var<S> forward(Graph<S>& g, Var<S> x, Rng* rng = nullptr, ForwardTrace<S>* trace = nullptr) {
        if (trace) trace->outputs.clear();
        for (auto& layer : layers_) {
            x = apply(g, layer, x, rng);
            if (trace) trace->outputs.push_back(x);
        }
        return x;
    }

    // --- state --------------------------------------------------------------

    bool training() const { return training_; }
    void set_training(bool v) { training_ = v; }

    std::vector<Tensor<S>>& params() { return params_; }
    const std::vector<Tensor<S>>& params() const { return params_; }

    std::vector<BatchNormState<S>>& bn_states() { return bn_states_; }
    const std::vector<Layer>& layers() const { return layers_; }

    Tensor<S>& layer_param(int layer, int which) {
        return params_[static_cast<std::size_t>(
            layers_[static_cast<std::size_t>(layer)].param_ids[static_cast<std::size_t>(which)])];
    }

    std::int64_t num_params() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // --- checkpoint io ------------------------------------------------------

    void save(const std::filesystem::path& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open " + path.string() + " for writing");
        write_bytes(f, "MDL1", 4);
        write_u32(f, static_cast<std::uint32_t>(layers_.size()));
        for (const auto& layer : layers_) write_spec(f, layer.spec);
        write_u32(f, static_cast<std::uint32_t>(params_.size()));
        for (const auto& p : params_) write_tensor(f, p);
        write_u32(f, static_cast<std::uint32_t>(bn_states_.size() * 2));
        for (const auto& st : bn_states_) {
            write_tensor(f, st.running_mean);
            write_tensor(f, st.running_var);
        }
        if (!f) throw IoError("short write to " + path.string());
    }

    static Model load(const std::filesystem::path& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open " + path.string());
        char magic[4];
        read_bytes(f, magic, 4, path);
        if (std::memcmp(magic, "MDL1", 4) != 0)
            throw FormatError(path.string() + ": not a model checkpoint");
        Model m;
        const std::uint32_t n_layers = read_u32(f, path);
        for (std::uint32_t i = 0; i < n_layers; ++i) m.append_spec(read_spec(f, path));
        const std::uint32_t n_params = read_u32(f, path);
        if (n_params != m.params_.size())
            throw FormatError(path.string() + ": parameter count mismatch");
        for (auto& p : m.params_) {
            Tensor<S> t = read_tensor(f, path);
            if (t.shape() != p.shape())
                throw FormatError(path.string() + ": parameter shape mismatch");
            t.set_requires_grad(true);
            p = std::move(t);
        }
        const std::uint32_t n_state = read_u32(f, path);
        if (n_state != m.bn_states_.size() * 2)
            throw FormatError(path.string() + ": running-stat count mismatch");
        for (auto& st : m.bn_states_) {
            st.running_mean = read_tensor(f, path);
            st.running_var = read_tensor(f, path);
        }
        return m;
    }

private:
    Rng& require_rng(Rng* rng) const {
        if (!rng) throw ConfigError("weight initialization requires an Rng");
        return *rng;
    }

    int add_param(Tensor<S>& t) {
        t.set_requires_grad(true);
        params_.push_back(t);
        return static_cast<int>(params_.size()) - 1;
    }

    int push_layer(LayerSpec spec, std::vector<int> param_ids) {
        layers_.push_back(Layer{std::move(spec), std::move(param_ids), -1});
        return static_cast<int>(layers_.size()) - 1;
    }

    // Rebuilds the layer/param skeleton (zero weights) from a spec list.
    void append_spec(const LayerSpec& spec) {
        std::visit(detail::Overloaded{
                       [&](const Conv2dSpec& s) {
                           add_conv2d(s.in_ch, s.out_ch, s.kernel, s.stride, s.pad);
                       },
                       [&](const ConvTranspose2dSpec& s) {
                           add_conv_transpose2d(s.in_ch, s.out_ch, s.kernel, s.stride, s.pad);
                       },
                       [&](const MaxPool2dSpec& s) { add_maxpool2d(s.kernel, s.stride); },
                       [&](const ReluSpec&) { add_relu(); },
                       [&](const LeakyReluSpec& s) { add_leaky_relu(s.slope); },
                       [&](const SigmoidSpec&) { add_sigmoid(); },
                       [&](const TanhSpec&) { add_tanh(); },
                       [&](const BatchNorm2dSpec& s) { add_batchnorm2d(s.channels, s.eps, s.momentum); },
                       [&](const DropoutSpec& s) { add_dropout(s.p); },
                       [&](const FlattenSpec&) { add_flatten(); },
                       [&](const LinearSpec& s) { add_linear(s.in_features, s.out_features); },
                       [&](const ReshapeSpec& s) { add_reshape(s.dims); },
                   },
                   spec);
    }

    Var<S> apply(Graph<S>& g, Layer& layer, Var<S> x, Rng* rng) {
        return std::visit(
            detail::Overloaded{
                [&](const Conv2dSpec& s) {
                    Var<S> w = g.param(params_[layer.param_ids[0]]);
                    Var<S> b = g.param(params_[layer.param_ids[1]]);
                    return conv2d(x, w, b, s.stride, s.pad);
                },
                [&](const ConvTranspose2dSpec& s) {
                    Var<S> w = g.param(params_[layer.param_ids[0]]);
                    Var<S> b = g.param(params_[layer.param_ids[1]]);
                    return conv_transpose2d(x, w, b, s.stride, s.pad);
                },
                [&](const MaxPool2dSpec& s) { return maxpool2d(x, s.kernel, s.stride); },
                [&](const ReluSpec&) { return relu(x); },
                [&](const LeakyReluSpec& s) { return leaky_relu(x, static_cast<S>(s.slope)); },
                [&](const SigmoidSpec&) { return sigmoid(x); },
                [&](const TanhSpec&) { return tanh_act(x); },
                [&](const BatchNorm2dSpec& s) {
                    Var<S> gamma = g.param(params_[layer.param_ids[0]]);
                    Var<S> beta = g.param(params_[layer.param_ids[1]]);
                    return batchnorm2d(x, gamma, beta, bn_states_[static_cast<std::size_t>(layer.state_id)],
                                       static_cast<S>(s.eps), static_cast<S>(s.momentum), training_);
                },
                [&](const DropoutSpec& s) {
                    return dropout(x, static_cast<double>(s.p), training_, rng);
                },
                [&](const FlattenSpec&) { return flatten(x); },
                [&](const LinearSpec&) {
                    Var<S> w = g.param(params_[layer.param_ids[0]]);
                    Var<S> b = g.param(params_[layer.param_ids[1]]);
                    return linear(x, w, b);
                },
                [&](const ReshapeSpec& s) {
                    Shape target{x.shape()[0]};
                    for (int d : s.dims) target.push_back(d);
                    return reshape(x, std::move(target));
                },
            },
            layer.spec);
    }

    // --- binary helpers -----------------------------------------------------

    static void write_bytes(std::ofstream& f, const char* p, std::size_t n) {
        f.write(p, static_cast<std::streamsize>(n));
    }
    static void write_u32(std::ofstream& f, std::uint32_t v) {
        write_bytes(f, reinterpret_cast<const char*>(&v), 4);
    }
    static void write_i32(std::ofstream& f, std::int32_t v) {
        write_bytes(f, reinterpret_cast<const char*>(&v), 4);
    }
    static void write_f32(std::ofstream& f, float v) {
        write_bytes(f, reinterpret_cast<const char*>(&v), 4);
    }
    static void read_bytes(std::ifstream& f, char* p, std::size_t n,
                           const std::filesystem::path& path) {
        f.read(p, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(f.gcount()) != n)
            throw FormatError(path.string() + ": truncated checkpoint");
    }
    static std::uint32_t read_u32(std::ifstream& f, const std::filesystem::path& path) {
        std::uint32_t v;
        read_bytes(f, reinterpret_cast<char*>(&v), 4, path);
        return v;
    }
    static std::int32_t read_i32(std::ifstream& f, const std::filesystem::path& path) {
        std::int32_t v;
        read_bytes(f, reinterpret_cast<char*>(&v), 4, path);
        return v;
    }
    static float read_f32(std::ifstream& f, const std::filesystem::path& path) {
        float v;
        read_bytes(f, reinterpret_cast<char*>(&v), 4, path);
        return v;
    }

    static void write_record(std::ofstream& f, std::uint32_t kind, const std::vector<std::int32_t>& ints,
                             const std::vector<float>& floats) {
        write_u32(f, kind);
        write_u32(f, static_cast<std::uint32_t>(ints.size()));
        for (auto v : ints) write_i32(f, v);
        write_u32(f, static_cast<std::uint32_t>(floats.size()));
        for (auto v : floats) write_f32(f, v);
    }

    static void write_spec(std::ofstream& f, const LayerSpec& spec) {
        std::visit(detail::Overloaded{
                       [&](const Conv2dSpec& s) {
                           write_record(f, 0, {s.in_ch, s.out_ch, s.kernel, s.stride, s.pad}, {});
                       },
                       [&](const ConvTranspose2dSpec& s) {
                           write_record(f, 1, {s.in_ch, s.out_ch, s.kernel, s.stride, s.pad}, {});
                       },
                       [&](const MaxPool2dSpec& s) { write_record(f, 2, {s.kernel, s.stride}, {}); },
                       [&](const ReluSpec&) { write_record(f, 3, {}, {}); },
                       [&](const LeakyReluSpec& s) { write_record(f, 4, {}, {s.slope}); },
                       [&](const SigmoidSpec&) { write_record(f, 5, {}, {}); },
                       [&](const TanhSpec&) { write_record(f, 6, {}, {}); },
                       [&](const BatchNorm2dSpec& s) {
                           write_record(f, 7, {s.channels}, {s.eps, s.momentum});
                       },
                       [&](const DropoutSpec& s) { write_record(f, 8, {}, {s.p}); },
                       [&](const FlattenSpec&) { write_record(f, 9, {}, {}); },
                       [&](const LinearSpec& s) {
                           write_record(f, 10, {s.in_features, s.out_features}, {});
                       },
                       [&](const ReshapeSpec& s) {
                           std::vector<std::int32_t> dims(s.dims.begin(), s.dims.end());
                           write_record(f, 11, dims, {});
                       },
                   },
                   spec);
    }

    static LayerSpec read_spec(std::ifstream& f, const std::filesystem::path& path) {
        const std::uint32_t kind = read_u32(f, path);
        const std::uint32_t ni = read_u32(f, path);
        std::vector<std::int32_t> ints(ni);
        for (auto& v : ints) v = read_i32(f, path);
        const std::uint32_t nf = read_u32(f, path);
        std::vector<float> floats(nf);
        for (auto& v : floats) v = read_f32(f, path);
        auto want = [&](std::size_t wi, std::size_t wf) {
            if (ints.size() != wi || floats.size() != wf)
                throw FormatError(path.string() + ": malformed layer record");
        };
        switch (kind) {
            case 0: want(5, 0); return Conv2dSpec{ints[0], ints[1], ints[2], ints[3], ints[4]};
            case 1: want(5, 0); return ConvTranspose2dSpec{ints[0], ints[1], ints[2], ints[3], ints[4]};
            case 2: want(2, 0); return MaxPool2dSpec{ints[0], ints[1]};
            case 3: want(0, 0); return ReluSpec{};
            case 4: want(0, 1); return LeakyReluSpec{floats[0]};
            case 5: want(0, 0); return SigmoidSpec{};
            case 6: want(0, 0); return TanhSpec{};
            case 7: want(1, 2); return BatchNorm2dSpec{ints[0], floats[0], floats[1]};
            case 8: want(0, 1); return DropoutSpec{floats[0]};
            case 9: want(0, 0); return FlattenSpec{};
            case 10: want(2, 0); return LinearSpec{ints[0], ints[1]};
            case 11: {
                std::vector<int> dims(ints.begin(), ints.end());
                return ReshapeSpec{std::move(dims)};
            }
            default: throw FormatError(path.string() + ": unknown layer kind " + std::to_string(kind));
        }
    }

    static void write_tensor(std::ofstream& f, const Tensor<S>& t) {
        write_u32(f, static_cast<std::uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) write_u32(f, static_cast<std::uint32_t>(t.dim(i)));
        for (std::int64_t i = 0; i < t.size(); ++i) write_f32(f, static_cast<float>(t[i]));
    }

    static Tensor<S> read_tensor(std::ifstream& f, const std::filesystem::path& path) {
        const std::uint32_t ndim = read_u32(f, path);
        if (ndim > 8) throw FormatError(path.string() + ": implausible tensor rank");
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int>(read_u32(f, path));
        Tensor<S> t(shape);
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(read_f32(f, path));
        return t;
    }

    std::vector<Layer> layers_;
    std::vector<Tensor<S>> params_;
    std::vector<BatchNormState<S>> bn_states_;
    bool training_ = false;
};

}  // namespace minidl
