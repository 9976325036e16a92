#pragma once

#include "softlabel/error.hpp"
#include "softlabel/recovery.hpp"
#include "softlabel/tensor.hpp"
#include "softlabel/victim.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

namespace softlabel {

// Analytical input reconstruction through fully-connected layers.
//
// Each layer's weight gradient is the outer product dL/dz ⊗ x, so a layer
// input follows from any row i with (dL/dz)_i ≠ 0. Starting from the
// recovered label and last-layer feature, dL/dz of the last layer is p - ŷ;
// earlier layers get dL/dz = Wᵀ·dL/dz masked by the ReLU pattern of the
// already-recovered input. No bias term is needed.

/// Output gradient of a layer is all zero; its input cannot be recovered.
class DeadLayerError : public DomainError {
public:
    using DomainError::DomainError;
};

/// x̂ = weight_grad[i*] / z_grad[i*] with i* = argmax |z_grad|.
Tensor invert_layer(const Tensor& weight_grad, const Tensor& z_grad);
/// Same with an explicit pivot row; throws DomainError when z_grad[pivot] = 0.
Tensor invert_layer_at(const Tensor& weight_grad, const Tensor& z_grad, std::size_t pivot);

/// dL/dz of the previous layer: Wᵀ·z_grad, masked by (x̂ > 0) when the
/// previous layer's activation is ReLU.
Tensor propagate_zgrad(const Tensor& weight, const Tensor& z_grad, const Tensor& x_hat, Activation activation);

struct Reconstruction {
    Tensor input;                    ///< recovered network input
    std::vector<Tensor> layer_inputs; ///< x̂ per layer, index = layer
};

/// A layer on the way down had an all-zero output gradient.
class PartialReconstructionError : public DeadLayerError {
public:
    PartialReconstructionError(const std::string& what, std::size_t dead_layer, std::vector<Tensor> recovered)
        : DeadLayerError(what), dead_layer_(dead_layer), recovered_(std::move(recovered))
    {}

    /// Layer whose input could not be recovered.
    std::size_t dead_layer() const noexcept { return dead_layer_; }
    /// Deepest layer whose input was recovered (dead_layer + 1).
    std::size_t deepest_recovered() const noexcept { return dead_layer_ + 1; }
    /// Recovered inputs for layers dead_layer+1 .. last (index = layer; earlier entries are default tensors).
    const std::vector<Tensor>& recovered() const noexcept { return recovered_; }

private:
    std::size_t dead_layer_;
    std::vector<Tensor> recovered_;
};

Reconstruction reconstruct_input(const MlpModel& model, const GradientCapture& capture, const Tensor& feature,
                                 const Tensor& label);
/// Uses result.feature and result.label; requires a successful recovery.
Reconstruction reconstruct_input(const MlpModel& model, const GradientCapture& capture, const RecoveryResult& result);

/// Per-layer inputs from weight-gradient rows divided by bias-gradient
/// entries; layers without a bias get no entry.
std::vector<std::optional<Tensor>> bias_attack(const MlpModel& model, const GradientCapture& capture);

/// 8-bit binary PGM (1 channel) or PPM (3 channels, planar input) with values
/// clamped to [0, 1], scaled by 255 and rounded.
void write_pnm(const std::filesystem::path& path, const Tensor& image, std::size_t channels, std::size_t height,
               std::size_t width);

} // namespace softlabel
