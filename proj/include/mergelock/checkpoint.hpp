#pragma once

#include <map>
#include <string>
#include <vector>

#include "mergelock/config.hpp"
#include "mergelock/errors.hpp"
#include "mergelock/matrix.hpp"

namespace mergelock {

// A model: configuration plus the full named tensor map. Tensors iterate in
// lexicographic name order, which is also the serialization order.
struct Checkpoint {
    ModelConfig config;
    std::map<std::string, Matrix> tensors;

    Matrix& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw SchemaError("missing tensor: " + name, name);
        return it->second;
    }

    const Matrix& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw SchemaError("missing tensor: " + name, name);
        return it->second;
    }

    Matrix& layer_tensor(std::size_t layer, const std::string& suffix) {
        return at("layers." + std::to_string(layer) + "." + suffix);
    }

    const Matrix& layer_tensor(std::size_t layer, const std::string& suffix) const {
        return at("layers." + std::to_string(layer) + "." + suffix);
    }

    // Every schema name present with the exact shape, nothing extra, all
    // entries finite. Bias tensors must be zero when includes_bias is off.
    void validate() const {
        config.validate();
        const auto schema = tensor_schema(config);
        std::size_t expected = 0;
        for (const TensorSpec& spec : schema) {
            ++expected;
            auto it = tensors.find(spec.name);
            if (it == tensors.end()) throw SchemaError("missing tensor: " + spec.name, spec.name);
            const Matrix& m = it->second;
            if (m.rows() != spec.rows || m.cols() != spec.cols)
                throw SchemaError("tensor " + spec.name + " has shape " +
                                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                      ", expected " + std::to_string(spec.rows) + "x" +
                                      std::to_string(spec.cols),
                                  spec.name);
            if (!m.all_finite())
                throw SchemaError("tensor " + spec.name + " has non-finite entries", spec.name);
            if (spec.is_bias && !config.includes_bias) {
                for (double v : m.storage())
                    if (v != 0.0)
                        throw SchemaError("bias tensor " + spec.name +
                                              " must be zero when the model has no biases",
                                          spec.name);
            }
        }
        if (tensors.size() != expected) {
            for (const auto& [name, _] : tensors) {
                bool known = false;
                for (const TensorSpec& spec : schema)
                    if (spec.name == name) { known = true; break; }
                if (!known) throw SchemaError("unknown tensor: " + name, name);
            }
        }
    }

    void require_same_schema(const Checkpoint& other) const {
        if (!(config == other.config)) throw SchemaError("model configurations differ");
    }
};

// Per-name deltas, same name set as the source checkpoints.
struct TaskVector {
    std::map<std::string, Matrix> deltas;
};

inline TaskVector task_vector(const Checkpoint& ft, const Checkpoint& pre) {
    ft.require_same_schema(pre);
    TaskVector tv;
    for (const auto& [name, m] : ft.tensors) tv.deltas.emplace(name, m - pre.at(name));
    return tv;
}

// Largest elementwise gap over all tensors.
inline double checkpoint_max_abs_diff(const Checkpoint& a, const Checkpoint& b) {
    a.require_same_schema(b);
    double m = 0.0;
    for (const auto& [name, t] : a.tensors) m = std::max(m, max_abs_diff(t, b.at(name)));
    return m;
}

inline Checkpoint apply_task_vectors(const Checkpoint& pre, const std::vector<TaskVector>& taus,
                                     double lambda) {
    Checkpoint out = pre;
    if (lambda == 0.0 || taus.empty()) return out;  // exactly theta_pre
    for (auto& [name, m] : out.tensors) {
        for (std::size_t k = 0; k < m.size(); ++k) {
            double sum = 0.0;
            for (const TaskVector& tau : taus) {
                auto it = tau.deltas.find(name);
                if (it == tau.deltas.end()) throw SchemaError("task vector missing " + name, name);
                sum += it->second.storage()[k];
            }
            m.storage()[k] += lambda * sum;
        }
    }
    return out;
}

}  // namespace mergelock
