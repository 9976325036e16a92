#include "softlabel/victim.hpp"

#include "softlabel/error.hpp"

#include "json_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace softlabel {

using nlohmann::json;

std::string to_string(Activation a)
{
    return a == Activation::ReLU ? "relu" : "identity";
}

Activation parse_activation(const std::string& name)
{
    if (name == "relu") return Activation::ReLU;
    if (name == "identity") return Activation::Identity;
    throw ArgumentError("unknown activation '" + name + "'");
}

MlpModel::MlpModel(std::vector<LayerSpec> layers) : layers_(std::move(layers))
{
    if (layers_.empty()) throw ArgumentError("model needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.weight.ndim() != 2) throw ShapeError("layer weight must be 2-D");
        if (l.bias && (l.bias->ndim() != 1 || l.bias->size() != l.out_dim()))
            throw ShapeError("layer " + std::to_string(i) + " bias length does not match output dim");
        if (i + 1 < layers_.size() && layers_[i + 1].in_dim() != l.out_dim())
            throw ShapeError("layer " + std::to_string(i) + " output dim does not match next layer input");
    }
    if (layers_.back().activation != Activation::Identity)
        throw ArgumentError("last layer must emit raw logits (identity activation)");
    if (class_count() < 2) throw ArgumentError("classifier needs at least two classes");
}

MlpModel MlpModel::random(const std::vector<std::size_t>& dims, const std::vector<bool>& bias,
                          const std::vector<Activation>& activations, Rng& rng)
{
    if (dims.size() < 2) throw ArgumentError("need at least input and output dims");
    const std::size_t n = dims.size() - 1;
    if (bias.size() != n || activations.size() != n)
        throw ArgumentError("bias/activation lists need one entry per layer");
    std::vector<LayerSpec> layers;
    for (std::size_t i = 0; i < n; ++i) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[i]));
        LayerSpec l{Tensor({dims[i + 1], dims[i]}), std::nullopt, activations[i]};
        for (auto& w : l.weight.values()) w = rng.uniform(-bound, bound);
        if (bias[i]) {
            l.bias = Tensor({dims[i + 1]});
            for (auto& b : l.bias->values()) b = rng.uniform(-bound, bound);
        }
        layers.push_back(std::move(l));
    }
    return MlpModel(std::move(layers));
}

bool MlpModel::has_bias() const
{
    return std::any_of(layers_.begin(), layers_.end(), [](const LayerSpec& l) { return l.bias.has_value(); });
}

bool operator==(const MlpModel& a, const MlpModel& b)
{
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
        const auto& la = a.layers_[i];
        const auto& lb = b.layers_[i];
        if (la.activation != lb.activation || la.weight != lb.weight || la.bias != lb.bias) return false;
    }
    return true;
}

std::string to_string(LabelKind k)
{
    switch (k) {
    case LabelKind::OneHot: return "onehot";
    case LabelKind::Smoothing: return "smoothing";
    case LabelKind::Mixup: return "mixup";
    }
    return "?";
}

LabelKind parse_label_kind(const std::string& name)
{
    if (name == "onehot" || name == "one-hot") return LabelKind::OneHot;
    if (name == "smoothing") return LabelKind::Smoothing;
    if (name == "mixup") return LabelKind::Mixup;
    throw ArgumentError("unknown augmentation '" + name + "'");
}

AugmentedLabel one_hot_label(std::size_t classes, std::size_t cls)
{
    if (cls >= classes) throw ArgumentError("class index out of range");
    AugmentedLabel l{Tensor({classes}), LabelKind::OneHot, 0.0, cls, cls, 1.0};
    l.y[cls] = 1.0;
    return l;
}

AugmentedLabel smoothing_label(std::size_t classes, std::size_t cls, double epsilon)
{
    if (cls >= classes) throw ArgumentError("class index out of range");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ArgumentError("smoothing probability must be in [0, 1)");
    AugmentedLabel l{Tensor({classes}, epsilon / static_cast<double>(classes)), LabelKind::Smoothing,
                     epsilon, cls, cls, 1.0};
    l.y[cls] += 1.0 - epsilon;
    if (epsilon == 0.0) l.kind = LabelKind::OneHot;
    return l;
}

AugmentedLabel mixup_label(std::size_t classes, std::size_t class_a, std::size_t class_b, double a)
{
    if (class_a >= classes || class_b >= classes) throw ArgumentError("class index out of range");
    if (class_a == class_b) throw ArgumentError("mixup needs two different classes");
    if (!(a > 0.0 && a < 1.0)) throw ArgumentError("mixup coefficient must be in (0, 1)");
    AugmentedLabel l{Tensor({classes}), LabelKind::Mixup, 0.0, class_a, class_b, a};
    l.y[class_a] = a;
    l.y[class_b] = 1.0 - a;
    return l;
}

AugmentedLabel make_label(LabelKind kind, std::span<const std::size_t> classes_idx, Rng& rng,
                          std::size_t classes, double max_epsilon)
{
    if (classes_idx.empty()) throw ArgumentError("make_label needs a class index");
    switch (kind) {
    case LabelKind::OneHot: return one_hot_label(classes, classes_idx[0]);
    case LabelKind::Smoothing: {
        auto l = smoothing_label(classes, classes_idx[0], rng.uniform(0.0, max_epsilon));
        l.kind = LabelKind::Smoothing;
        return l;
    }
    case LabelKind::Mixup: {
        if (classes_idx.size() < 2) throw ArgumentError("mixup needs two class indices");
        if (classes_idx[0] == classes_idx[1]) throw ArgumentError("mixup needs two different classes");
        double a = rng.uniform();
        while (a == 0.0) a = rng.uniform();
        return mixup_label(classes, classes_idx[0], classes_idx[1], a);
    }
    }
    throw ArgumentError("unknown label kind");
}

Tensor mix_inputs(const Tensor& x1, const Tensor& x2, double a)
{
    if (x1.shape() != x2.shape()) throw ShapeError("mix_inputs: shape mismatch");
    Tensor out(x1.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x1[i] + (1.0 - a) * x2[i];
    return out;
}

ForwardPass forward(const MlpModel& model, const Tensor& x)
{
    if (x.ndim() != 1 || x.size() != model.input_dim())
        throw ShapeError("forward: input has " + std::to_string(x.size()) + " entries, model expects " +
                         std::to_string(model.input_dim()));
    ForwardPass fp;
    Tensor a = x;
    for (const auto& layer : model.layers()) {
        Tensor z = matvec(layer.weight, a);
        if (layer.bias)
            for (std::size_t i = 0; i < z.size(); ++i) z[i] += (*layer.bias)[i];
        fp.inputs.push_back(std::move(a));
        a = z;
        if (layer.activation == Activation::ReLU)
            for (auto& v : a.values()) v = v > 0.0 ? v : 0.0;
        fp.pre_activations.push_back(std::move(z));
    }
    fp.logits = std::move(a);
    return fp;
}

double cross_entropy(const Tensor& logits, const Tensor& y)
{
    if (logits.size() != y.size()) throw ShapeError("cross_entropy: label length mismatch");
    const double zmax = *std::max_element(logits.data().begin(), logits.data().end());
    double sum = 0.0;
    for (double z : logits.values()) sum += std::exp(z - zmax);
    const double lse = zmax + std::log(sum);
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] != 0.0) loss -= y[i] * (logits[i] - lse);
    return loss;
}

double cross_entropy(const Tensor& logits, const AugmentedLabel& y) { return cross_entropy(logits, y.y); }

std::size_t argmax(std::span<const double> v)
{
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

GradientCapture backward(const MlpModel& model, const Tensor& x, const Tensor& y)
{
    if (y.size() != model.class_count()) throw ShapeError("backward: label length mismatch");
    const ForwardPass fp = forward(model, x);
    const auto& layers = model.layers();
    const std::size_t n = layers.size();

    GradientCapture g;
    g.weight_grads.resize(n);
    g.bias_grads.resize(n);
    g.output_grads.resize(n);
    g.loss = cross_entropy(fp.logits, y);
    g.predicted_class = argmax(fp.logits.values());

    Tensor dz = softmax(fp.logits);
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] -= y[i];

    for (std::size_t l = n; l-- > 0;) {
        const Tensor& in = fp.inputs[l];
        Tensor dw({layers[l].out_dim(), layers[l].in_dim()});
        for (std::size_t r = 0; r < dw.rows(); ++r) {
            auto row = dw.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = dz[r] * in[c];
        }
        g.weight_grads[l] = std::move(dw);
        if (layers[l].bias) g.bias_grads[l] = dz;
        if (l > 0) {
            Tensor da = matvec_transposed(layers[l].weight, dz);
            if (layers[l - 1].activation == Activation::ReLU) {
                const Tensor& zprev = fp.pre_activations[l - 1];
                for (std::size_t i = 0; i < da.size(); ++i)
                    if (!(zprev[i] > 0.0)) da[i] = 0.0;
            }
            g.output_grads[l] = std::move(dz);
            dz = std::move(da);
        } else {
            g.output_grads[l] = std::move(dz);
        }
    }
    return g;
}

GradientCapture backward(const MlpModel& model, const Tensor& x, const AugmentedLabel& y)
{
    return backward(model, x, y.y);
}

BlobSource::BlobSource(std::size_t input_dim, std::size_t classes, Rng& rng, double spread)
    : input_dim_(input_dim), spread_(spread)
{
    if (input_dim == 0 || classes < 2) throw ArgumentError("blob source needs input_dim >= 1 and >= 2 classes");
    means_.reserve(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        Tensor m({input_dim});
        for (auto& v : m.values()) v = rng.uniform(0.2, 0.8);
        means_.push_back(std::move(m));
    }
}

Sample BlobSource::draw(std::size_t cls, Rng& rng) const
{
    const Tensor& m = means_.at(cls);
    Tensor x({input_dim_});
    for (std::size_t i = 0; i < input_dim_; ++i) x[i] = std::clamp(rng.normal(m[i], spread_), 0.0, 1.0);
    return {std::move(x), one_hot_label(classes(), cls)};
}

Dataset BlobSource::sample(std::size_t n, Rng& rng) const
{
    Dataset out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(draw(static_cast<std::size_t>(rng.below(classes())), rng));
    return out;
}

Dataset synth_dataset(std::size_t n, std::size_t input_dim, std::size_t classes, Rng& rng)
{
    if (n == 0) throw ArgumentError("synth_dataset needs n >= 1");
    BlobSource src(input_dim, classes, rng);
    return src.sample(n, rng);
}

MlpModel train(MlpModel model, const Dataset& data, std::size_t epochs, double lr, Rng& rng,
               std::size_t batch_size)
{
    if (data.empty() || epochs == 0) return model;
    const std::size_t bs = batch_size == 0 ? data.size() : std::min(batch_size, data.size());
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    auto& layers = model.mutable_layers();

    for (std::size_t e = 0; e < epochs; ++e) {
        if (bs < data.size()) rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(start + bs, order.size());
            std::vector<Tensor> gw(layers.size());
            std::vector<Tensor> gb(layers.size());
            for (std::size_t l = 0; l < layers.size(); ++l) {
                gw[l] = Tensor(layers[l].weight.shape());
                gb[l] = Tensor({layers[l].out_dim()});
            }
            for (std::size_t k = start; k < end; ++k) {
                const Sample& s = data[order[k]];
                const GradientCapture g = backward(model, s.x, s.label);
                for (std::size_t l = 0; l < layers.size(); ++l) {
                    auto dst = gw[l].values();
                    auto src = g.weight_grads[l].values();
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                    if (g.bias_grads[l])
                        for (std::size_t i = 0; i < gb[l].size(); ++i) gb[l][i] += (*g.bias_grads[l])[i];
                }
            }
            const double step = lr / static_cast<double>(end - start);
            for (std::size_t l = 0; l < layers.size(); ++l) {
                auto w = layers[l].weight.values();
                auto d = gw[l].values();
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step * d[i];
                if (layers[l].bias)
                    for (std::size_t i = 0; i < gb[l].size(); ++i) (*layers[l].bias)[i] -= step * gb[l][i];
            }
        }
    }
    return model;
}

double mean_loss(const MlpModel& model, const Dataset& data)
{
    double total = 0.0;
    for (const auto& s : data) total += cross_entropy(forward(model, s.x).logits, s.label);
    return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

double accuracy(const MlpModel& model, const Dataset& data)
{
    std::size_t hits = 0;
    for (const auto& s : data)
        if (argmax(forward(model, s.x).logits.values()) == argmax(s.label.y.values())) ++hits;
    return data.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(data.size());
}

// ---- serialization -------------------------------------------------------

using detail::ensure_dir;
using detail::read_json;
using detail::write_json;

void save_model(const std::filesystem::path& dir, const MlpModel& model)
{
    ensure_dir(dir);
    json layers = json::array();
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
        const auto& l = model.layers()[i];
        const std::string wname = "layer" + std::to_string(i) + "_weight.gtn";
        write_tensor(dir / wname, l.weight);
        json entry = {{"in", l.in_dim()},
                      {"out", l.out_dim()},
                      {"activation", to_string(l.activation)},
                      {"weight", wname},
                      {"bias", nullptr}};
        if (l.bias) {
            const std::string bname = "layer" + std::to_string(i) + "_bias.gtn";
            write_tensor(dir / bname, *l.bias);
            entry["bias"] = bname;
        }
        layers.push_back(std::move(entry));
    }
    write_json(dir / "manifest.json", {{"format", "softlabel-mlp/1"},
                                       {"input_dim", model.input_dim()},
                                       {"classes", model.class_count()},
                                       {"layers", std::move(layers)}});
}

MlpModel load_model(const std::filesystem::path& dir)
{
    const json m = read_json(dir / "manifest.json");
    if (m.value("format", "") != "softlabel-mlp/1") throw FormatError("unsupported model manifest format");
    std::vector<LayerSpec> layers;
    try {
        for (const auto& entry : m.at("layers")) {
            LayerSpec l{read_tensor(dir / entry.at("weight").get<std::string>()), std::nullopt,
                        parse_activation(entry.at("activation").get<std::string>())};
            if (l.weight.ndim() != 2 || l.in_dim() != entry.at("in").get<std::size_t>() ||
                l.out_dim() != entry.at("out").get<std::size_t>())
                throw FormatError("layer weight shape disagrees with manifest");
            if (!entry.at("bias").is_null()) l.bias = read_tensor(dir / entry.at("bias").get<std::string>());
            layers.push_back(std::move(l));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("model manifest: ") + e.what());
    }
    return MlpModel(std::move(layers));
}

void save_capture(const std::filesystem::path& dir, const GradientCapture& capture)
{
    ensure_dir(dir);
    json layers = json::array();
    for (std::size_t i = 0; i < capture.weight_grads.size(); ++i) {
        const std::string stem = "layer" + std::to_string(i);
        write_tensor(dir / (stem + "_dw.gtn"), capture.weight_grads[i]);
        write_tensor(dir / (stem + "_dz.gtn"), capture.output_grads[i]);
        json entry = {{"weight_grad", stem + "_dw.gtn"}, {"output_grad", stem + "_dz.gtn"}, {"bias_grad", nullptr}};
        if (capture.bias_grads[i]) {
            write_tensor(dir / (stem + "_db.gtn"), *capture.bias_grads[i]);
            entry["bias_grad"] = stem + "_db.gtn";
        }
        layers.push_back(std::move(entry));
    }
    write_json(dir / "capture.json", {{"format", "softlabel-capture/1"},
                                      {"loss", capture.loss},
                                      {"predicted_class", capture.predicted_class},
                                      {"layers", std::move(layers)}});
}

GradientCapture load_capture(const std::filesystem::path& dir)
{
    const json m = read_json(dir / "capture.json");
    if (m.value("format", "") != "softlabel-capture/1") throw FormatError("unsupported capture format");
    GradientCapture g;
    try {
        g.loss = m.at("loss").get<double>();
        g.predicted_class = m.at("predicted_class").get<std::size_t>();
        for (const auto& entry : m.at("layers")) {
            g.weight_grads.push_back(read_tensor(dir / entry.at("weight_grad").get<std::string>()));
            g.output_grads.push_back(read_tensor(dir / entry.at("output_grad").get<std::string>()));
            if (entry.at("bias_grad").is_null())
                g.bias_grads.emplace_back(std::nullopt);
            else
                g.bias_grads.emplace_back(read_tensor(dir / entry.at("bias_grad").get<std::string>()));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("capture manifest: ") + e.what());
    }
    if (g.weight_grads.empty()) throw FormatError("capture has no layers");
    return g;
}

} // namespace softlabel
