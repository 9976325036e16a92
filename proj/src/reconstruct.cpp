#include "softlabel/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace softlabel {

Tensor invert_layer_at(const Tensor& weight_grad, const Tensor& z_grad, std::size_t pivot)
{
    if (weight_grad.ndim() != 2 || weight_grad.rows() != z_grad.size())
        throw ShapeError("invert_layer: weight gradient rows do not match z_grad length");
    if (pivot >= z_grad.size()) throw ArgumentError("invert_layer: pivot out of range");
    const double s = z_grad[pivot];
    if (s == 0.0) throw DomainError("invert_layer: pivot has zero output gradient");
    const auto row = weight_grad.row(pivot);
    Tensor x({row.size()});
    for (std::size_t c = 0; c < row.size(); ++c) x[c] = row[c] / s;
    return x;
}

Tensor invert_layer(const Tensor& weight_grad, const Tensor& z_grad)
{
    if (weight_grad.ndim() != 2 || weight_grad.rows() != z_grad.size())
        throw ShapeError("invert_layer: weight gradient rows do not match z_grad length");
    std::size_t pivot = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < z_grad.size(); ++i)
        if (std::abs(z_grad[i]) > best) {
            best = std::abs(z_grad[i]);
            pivot = i;
        }
    if (best == 0.0) throw DeadLayerError("layer output gradient is all zero; input unrecoverable");
    return invert_layer_at(weight_grad, z_grad, pivot);
}

Tensor propagate_zgrad(const Tensor& weight, const Tensor& z_grad, const Tensor& x_hat, Activation activation)
{
    Tensor g = matvec_transposed(weight, z_grad);
    if (x_hat.size() != g.size()) throw ShapeError("propagate_zgrad: recovered input length mismatch");
    if (activation == Activation::ReLU)
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(x_hat[i] > 0.0)) g[i] = 0.0;
    return g;
}

Reconstruction reconstruct_input(const MlpModel& model, const GradientCapture& capture, const Tensor& feature,
                                 const Tensor& label)
{
    const auto& layers = model.layers();
    const std::size_t n = layers.size();
    if (capture.weight_grads.size() != n) throw ShapeError("capture layer count does not match the model");
    const LayerSpec& last = layers.back();
    if (feature.size() != last.in_dim() || label.size() != last.out_dim())
        throw ShapeError("recovered feature/label do not match the last layer");

    Tensor logits = matvec(last.weight, feature);
    if (last.bias)
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += (*last.bias)[i];
    Tensor z_grad = softmax(logits);
    for (std::size_t i = 0; i < z_grad.size(); ++i) z_grad[i] -= label[i];

    Reconstruction rec;
    rec.layer_inputs.resize(n);
    for (std::size_t l = n; l-- > 0;) {
        try {
            rec.layer_inputs[l] = invert_layer(capture.weight_grads[l], z_grad);
        } catch (const DeadLayerError&) {
            throw PartialReconstructionError("layer " + std::to_string(l) + " has an all-zero output gradient", l,
                                             std::move(rec.layer_inputs));
        }
        if (l > 0) z_grad = propagate_zgrad(layers[l].weight, z_grad, rec.layer_inputs[l], layers[l - 1].activation);
    }
    rec.input = rec.layer_inputs.front();
    return rec;
}

Reconstruction reconstruct_input(const MlpModel& model, const GradientCapture& capture, const RecoveryResult& result)
{
    if (!result.success()) throw ArgumentError("reconstruction needs a successful label recovery");
    return reconstruct_input(model, capture, result.feature, result.label);
}

std::vector<std::optional<Tensor>> bias_attack(const MlpModel& model, const GradientCapture& capture)
{
    std::vector<std::optional<Tensor>> out(model.layer_count());
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        if (!model.layers()[l].bias || !capture.bias_grads[l]) continue;
        out[l] = invert_layer(capture.weight_grads[l], *capture.bias_grads[l]);
    }
    return out;
}

void write_pnm(const std::filesystem::path& path, const Tensor& image, std::size_t channels, std::size_t height,
               std::size_t width)
{
    if (channels != 1 && channels != 3) throw ArgumentError("PNM export supports 1 or 3 channels");
    if (image.size() != channels * height * width) throw ShapeError("PNM export: image size mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << (channels == 1 ? "P5" : "P6") << '\n' << width << ' ' << height << "\n255\n";
    const std::size_t plane = height * width;
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < channels; ++c) {
            const double raw = image[c * plane + p];
            const double v = std::isnan(raw) ? 0.0 : std::clamp(raw, 0.0, 1.0);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace softlabel
