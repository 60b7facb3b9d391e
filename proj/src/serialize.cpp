#include "ensemblefit/serialize.hpp"

#include <fstream>
#include <stdexcept>

namespace ensemblefit {

using nlohmann::json;

namespace {

json tensor_to_nested(const Tensor& t, std::size_t dim, std::size_t offset, std::size_t span) {
    json arr = json::array();
    if (dim + 1 == t.shape.size()) {
        for (std::size_t i = 0; i < t.shape[dim]; ++i) arr.push_back(t.values[offset + i]);
        return arr;
    }
    const std::size_t inner = span / t.shape[dim];
    for (std::size_t i = 0; i < t.shape[dim]; ++i) {
        arr.push_back(tensor_to_nested(t, dim + 1, offset + i * inner, inner));
    }
    return arr;
}

json tensor_to_json(const Tensor& t) {
    if (t.shape.empty()) return json::array();
    return tensor_to_nested(t, 0, 0, t.size());
}

void nested_to_flat(const json& arr, const std::vector<std::size_t>& shape, std::size_t dim,
                    std::vector<double>& out, const std::string& what) {
    if (!arr.is_array() || arr.size() != shape[dim]) {
        throw std::runtime_error(what + ": expected array of length " + std::to_string(shape[dim]));
    }
    if (dim + 1 == shape.size()) {
        for (const auto& v : arr) {
            if (!v.is_number()) throw std::runtime_error(what + ": non-numeric entry");
            out.push_back(v.get<double>());
        }
        return;
    }
    for (const auto& sub : arr) nested_to_flat(sub, shape, dim + 1, out, what);
}

Tensor tensor_from_json(const json& arr, const std::vector<std::size_t>& shape, const std::string& what) {
    std::vector<double> flat;
    flat.reserve(shape_product(shape));
    nested_to_flat(arr, shape, 0, flat, what);
    return Tensor(shape, std::move(flat));
}

std::size_t get_size(const json& obj, const char* key, const std::string& what) {
    if (!obj.contains(key) || !obj[key].is_number_unsigned()) {
        throw std::runtime_error(what + ": missing or invalid '" + key + "'");
    }
    return obj[key].get<std::size_t>();
}

} // namespace

json model_to_json(const LayeredModel& model) {
    json doc;
    doc["format_version"] = kModelFormatVersion;
    doc["input_shape"] = model.input_shape;
    json layers = json::array();
    for (const Layer& l : model.layers) {
        json entry;
        entry["kind"] = layer_kind_name(l.kind);
        entry["trainable"] = l.trainable;
        json hp = json::object();
        switch (l.kind) {
            case LayerKind::Conv2D:
                hp["in_ch"] = l.in_ch;
                hp["out_ch"] = l.out_ch;
                hp["kernel_h"] = l.kernel_h;
                hp["kernel_w"] = l.kernel_w;
                hp["stride"] = l.stride;
                hp["padding"] = l.padding;
                break;
            case LayerKind::MaxPool2D:
                hp["kernel_h"] = l.kernel_h;
                hp["kernel_w"] = l.kernel_w;
                break;
            case LayerKind::Dense:
                hp["in_dim"] = l.in_dim;
                hp["out_dim"] = l.out_dim;
                break;
            default:
                break;
        }
        entry["hyperparams"] = hp;
        json params = json::object();
        if (l.kind == LayerKind::Conv2D) {
            params["weights"] = tensor_to_json(l.weights);
        } else if (l.kind == LayerKind::Dense) {
            params["weights"] = tensor_to_json(l.weights);
            params["bias"] = tensor_to_json(l.bias);
        }
        entry["params"] = params;
        layers.push_back(std::move(entry));
    }
    doc["layers"] = std::move(layers);
    return doc;
}

LayeredModel model_from_json(const json& doc) {
    if (!doc.contains("format_version") || !doc["format_version"].is_number_integer()) {
        throw std::runtime_error("model document: missing format_version");
    }
    const int version = doc["format_version"].get<int>();
    if (version != kModelFormatVersion) {
        throw std::runtime_error("model format_version " + std::to_string(version) +
                                 " not supported (expected " + std::to_string(kModelFormatVersion) + ")");
    }
    if (!doc.contains("input_shape") || !doc["input_shape"].is_array() ||
        doc["input_shape"].size() != 3) {
        throw std::runtime_error("model document: input_shape must be [c, h, w]");
    }
    LayeredModel model;
    for (const auto& v : doc["input_shape"]) model.input_shape.push_back(v.get<std::size_t>());

    if (!doc.contains("layers") || !doc["layers"].is_array()) {
        throw std::runtime_error("model document: missing layers array");
    }
    std::size_t index = 0;
    for (const auto& entry : doc["layers"]) {
        const std::string what = "layer " + std::to_string(index);
        if (!entry.contains("kind") || !entry["kind"].is_string()) {
            throw std::runtime_error(what + ": missing kind");
        }
        Layer l;
        l.kind = layer_kind_from_name(entry["kind"].get<std::string>());
        l.trainable = entry.value("trainable", true);
        const json& hp = entry.contains("hyperparams") ? entry["hyperparams"] : json::object();
        const json& params = entry.contains("params") ? entry["params"] : json::object();
        switch (l.kind) {
            case LayerKind::Conv2D: {
                l.in_ch = get_size(hp, "in_ch", what);
                l.out_ch = get_size(hp, "out_ch", what);
                l.kernel_h = get_size(hp, "kernel_h", what);
                l.kernel_w = get_size(hp, "kernel_w", what);
                l.stride = get_size(hp, "stride", what);
                l.padding = get_size(hp, "padding", what);
                if (!params.contains("weights")) throw std::runtime_error(what + ": missing weights");
                l.weights = tensor_from_json(params["weights"],
                                             {l.out_ch, l.in_ch, l.kernel_h, l.kernel_w},
                                             what + " weights");
                break;
            }
            case LayerKind::MaxPool2D:
                l.kernel_h = get_size(hp, "kernel_h", what);
                l.kernel_w = get_size(hp, "kernel_w", what);
                break;
            case LayerKind::Dense: {
                l.in_dim = get_size(hp, "in_dim", what);
                l.out_dim = get_size(hp, "out_dim", what);
                if (!params.contains("weights") || !params.contains("bias")) {
                    throw std::runtime_error(what + ": missing weights or bias");
                }
                l.weights = tensor_from_json(params["weights"], {l.out_dim, l.in_dim}, what + " weights");
                l.bias = tensor_from_json(params["bias"], {l.out_dim}, what + " bias");
                break;
            }
            default:
                break;
        }
        model.layers.push_back(std::move(l));
        ++index;
    }
    model.validate(); // rejects tampered shapes before anyone sees the model
    return model;
}

void save_model(const LayeredModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write model file '" + path + "'");
    out << model_to_json(model).dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing model file '" + path + "'");
}

LayeredModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read model file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("model file '" + path + "': " + e.what());
    }
    return model_from_json(doc);
}

} // namespace ensemblefit
