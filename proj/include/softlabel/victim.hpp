#pragma once

#include "softlabel/rng.hpp"
#include "softlabel/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace softlabel {

enum class Activation { Identity, ReLU };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// One fully-connected layer: z = W·x (+ b), followed by `activation`.
struct LayerSpec {
    Tensor weight;              // [out × in]
    std::optional<Tensor> bias; // [out]
    Activation activation = Activation::Identity;

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
};

/// Fully-connected classifier. The last layer emits raw logits.
class MlpModel {
public:
    MlpModel() = default;
    /// Validates layer chaining; throws ShapeError / ArgumentError.
    explicit MlpModel(std::vector<LayerSpec> layers);

    /// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    /// `dims` = {input, hidden..., classes}; `bias` and `activations` have
    /// one entry per layer (activations of the last layer must be Identity).
    static MlpModel random(const std::vector<std::size_t>& dims, const std::vector<bool>& bias,
                           const std::vector<Activation>& activations, Rng& rng);

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    std::vector<LayerSpec>& mutable_layers() noexcept { return layers_; }
    const LayerSpec& last_layer() const { return layers_.back(); }
    std::size_t layer_count() const noexcept { return layers_.size(); }
    std::size_t input_dim() const { return layers_.front().in_dim(); }
    std::size_t class_count() const { return layers_.back().out_dim(); }
    bool has_bias() const;

    friend bool operator==(const MlpModel& a, const MlpModel& b);

private:
    std::vector<LayerSpec> layers_;
};

enum class LabelKind { OneHot, Smoothing, Mixup };

std::string to_string(LabelKind k);
LabelKind parse_label_kind(const std::string& name);

/// A (possibly soft) training label with the parameters that produced it.
struct AugmentedLabel {
    Tensor y;
    LabelKind kind = LabelKind::OneHot;
    double epsilon = 0.0;          // smoothing probability
    std::size_t class_a = 0;       // top class (one-hot/smoothing) or first mixup class
    std::size_t class_b = 0;       // second mixup class
    double coefficient = 1.0;      // mixup weight of class_a

    std::size_t class_count() const { return y.size(); }
};

AugmentedLabel one_hot_label(std::size_t classes, std::size_t cls);
/// y = (1 - eps)·onehot + eps/C.
AugmentedLabel smoothing_label(std::size_t classes, std::size_t cls, double epsilon);
/// y = a·onehot(class_a) + (1 - a)·onehot(class_b); classes must differ.
AugmentedLabel mixup_label(std::size_t classes, std::size_t class_a, std::size_t class_b, double a);

/// Samples the augmentation parameter: eps ~ U(0, max_epsilon) for
/// smoothing, a ~ U(0, 1) for mixup. `classes_idx` holds one class (two for mixup).
AugmentedLabel make_label(LabelKind kind, std::span<const std::size_t> classes_idx, Rng& rng,
                          std::size_t classes, double max_epsilon = 0.5);

/// a·x1 + (1 - a)·x2.
Tensor mix_inputs(const Tensor& x1, const Tensor& x2, double a);

struct ForwardPass {
    Tensor logits;
    std::vector<Tensor> inputs;          // input of each layer (inputs[0] = x)
    std::vector<Tensor> pre_activations; // z of each layer

    const Tensor& last_layer_input() const { return inputs.back(); }
};

ForwardPass forward(const MlpModel& model, const Tensor& x);

/// -Σ y_i log softmax(z)_i.
double cross_entropy(const Tensor& logits, const Tensor& y);
double cross_entropy(const Tensor& logits, const AugmentedLabel& y);

/// Everything a client would upload for one example, plus the per-layer
/// output gradients and the model's predicted class (bookkeeping the
/// attack uses only in the degenerate one-hot case).
struct GradientCapture {
    std::vector<Tensor> weight_grads;
    std::vector<std::optional<Tensor>> bias_grads;
    std::vector<Tensor> output_grads; // dL/dz of each layer
    double loss = 0.0;
    std::size_t predicted_class = 0;

    const Tensor& last_weight_grad() const { return weight_grads.back(); }
};

/// Exact gradients of the cross-entropy loss for a single example.
/// ReLU'(0) is taken as 0.
GradientCapture backward(const MlpModel& model, const Tensor& x, const Tensor& y);
GradientCapture backward(const MlpModel& model, const Tensor& x, const AugmentedLabel& y);

struct Sample {
    Tensor x;
    AugmentedLabel label;
};
using Dataset = std::vector<Sample>;

/// Class-conditioned Gaussian blobs clamped to [0, 1].
class BlobSource {
public:
    BlobSource(std::size_t input_dim, std::size_t classes, Rng& rng, double spread = 0.15);

    Sample draw(std::size_t cls, Rng& rng) const;
    Dataset sample(std::size_t n, Rng& rng) const;

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t classes() const noexcept { return means_.size(); }
    const Tensor& mean(std::size_t cls) const { return means_.at(cls); }

private:
    std::size_t input_dim_;
    double spread_;
    std::vector<Tensor> means_;
};

/// One-hot labelled blob dataset; shorthand for BlobSource(...).sample(n, rng).
Dataset synth_dataset(std::size_t n, std::size_t input_dim, std::size_t classes, Rng& rng);

/// Mini-batch SGD on mean cross-entropy. Samples are reshuffled each epoch
/// with `rng`; batch_size 0 means full batch.
MlpModel train(MlpModel model, const Dataset& data, std::size_t epochs, double lr, Rng& rng,
               std::size_t batch_size = 16);

double mean_loss(const MlpModel& model, const Dataset& data);
/// Fraction of samples whose argmax logit equals the label's top class.
double accuracy(const MlpModel& model, const Dataset& data);

std::size_t argmax(std::span<const double> v);

// ---- serialization -------------------------------------------------------

/// Writes manifest.json plus one tensor file per parameter into `dir`.
void save_model(const std::filesystem::path& dir, const MlpModel& model);
MlpModel load_model(const std::filesystem::path& dir);

/// Writes capture.json plus one tensor file per gradient into `dir`.
void save_capture(const std::filesystem::path& dir, const GradientCapture& capture);
GradientCapture load_capture(const std::filesystem::path& dir);

} // namespace softlabel
