#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mergelock/checkpoint.hpp"
#include "mergelock/config.hpp"
#include "mergelock/errors.hpp"
#include "mergelock/key.hpp"
#include "mergelock/sha256.hpp"
#include "mergelock/transformer.hpp"

namespace mergelock {

enum class Dtype { f32, f64 };

// Container layout (extensions .mlck for models/batches, .mlkey for keys):
//
//   [8-byte little-endian unsigned header length]
//   [UTF-8 JSON header, canonical: sorted keys, no whitespace]
//   [contiguous little-endian tensor data]
//
// Header: {"config": {...}, "kind": "checkpoint|key|batch", "meta": {...},
//          "tensors": [{"byte_begin","byte_end","dtype","name","shape"}],
//          "version": 1}
// byte_begin/byte_end are offsets into the data section. Tensors are packed
// in table order, which is lexicographic by name.

namespace detail {

inline void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64_le(std::vector<std::uint8_t>& out, double v) {
    put_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

inline void put_f32_le(std::vector<std::uint8_t>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline std::uint64_t get_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline double get_f64_le(const std::uint8_t* p) { return std::bit_cast<double>(get_u64_le(p)); }

inline float get_f32_le(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(v);
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"activation", to_string(c.activation)}, {"d_ff", c.d_ff},
            {"d_model", c.d_model},                  {"includes_bias", c.includes_bias},
            {"num_heads", c.num_heads},              {"num_layers", c.num_layers}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.activation = activation_from_string(j.at("activation").get<std::string>());
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.includes_bias = j.at("includes_bias").get<bool>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    return c;
}

struct ParsedContainer {
    std::string kind;
    nlohmann::json config;
    nlohmann::json meta;
    std::map<std::string, Matrix> tensors;
};

inline std::vector<std::uint8_t> serialize_container(
    const std::string& kind, const nlohmann::json& config, const nlohmann::json& meta,
    const std::map<std::string, Matrix>& tensors, Dtype dtype) {
    const std::size_t elem = dtype == Dtype::f64 ? 8 : 4;
    nlohmann::json table = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, m] : tensors) {
        const std::size_t bytes = m.size() * elem;
        table.push_back({{"byte_begin", offset},
                         {"byte_end", offset + bytes},
                         {"dtype", dtype == Dtype::f64 ? "f64" : "f32"},
                         {"name", name},
                         {"shape", {m.rows(), m.cols()}}});
        offset += bytes;
    }
    nlohmann::json header = {{"config", config},
                             {"kind", kind},
                             {"meta", meta},
                             {"tensors", table},
                             {"version", 1}};
    const std::string header_str = header.dump();  // sorted keys, no whitespace

    std::vector<std::uint8_t> out;
    out.reserve(8 + header_str.size() + offset);
    put_u64_le(out, header_str.size());
    out.insert(out.end(), header_str.begin(), header_str.end());
    for (const auto& [name, m] : tensors) {
        if (dtype == Dtype::f64)
            for (double v : m.storage()) put_f64_le(out, v);
        else
            for (double v : m.storage()) put_f32_le(out, static_cast<float>(v));
    }
    return out;
}

inline ParsedContainer parse_container(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8) throw ParseError("container shorter than the 8-byte length field", 0);
    const std::uint64_t header_len = get_u64_le(bytes.data());
    if (8 + header_len > bytes.size())
        throw ParseError("header length exceeds file size", 8);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed JSON header: ") + e.what(), 8);
    }

    ParsedContainer parsed;
    try {
        if (header.at("version").get<int>() != 1)
            throw ParseError("unsupported container version", 8);
        parsed.kind = header.at("kind").get<std::string>();
        parsed.config = header.at("config");
        parsed.meta = header.value("meta", nlohmann::json::object());

        const std::size_t data_begin = 8 + header_len;
        const std::size_t data_size = bytes.size() - data_begin;
        for (const auto& entry : header.at("tensors")) {
            const std::string name = entry.at("name").get<std::string>();
            const std::size_t byte_begin = entry.at("byte_begin").get<std::size_t>();
            const std::size_t byte_end = entry.at("byte_end").get<std::size_t>();
            const std::string dtype = entry.at("dtype").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2) throw SchemaError("tensor " + name + " is not 2-D", name);
            const std::size_t elem = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
            if (elem == 0) throw SchemaError("tensor " + name + " has unknown dtype " + dtype, name);
            if (byte_end < byte_begin || byte_end - byte_begin != shape[0] * shape[1] * elem)
                throw SchemaError("tensor " + name + " byte range does not match its shape", name);
            if (byte_end > data_size)
                throw ParseError("data section truncated inside tensor " + name, byte_end);

            Matrix m(shape[0], shape[1]);
            const std::uint8_t* p = bytes.data() + data_begin + byte_begin;
            if (elem == 8)
                for (std::size_t k = 0; k < m.size(); ++k) m.storage()[k] = get_f64_le(p + 8 * k);
            else
                for (std::size_t k = 0; k < m.size(); ++k)
                    m.storage()[k] = static_cast<double>(get_f32_le(p + 4 * k));
            if (!parsed.tensors.emplace(name, std::move(m)).second)
                throw SchemaError("duplicate tensor name " + name, name);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("header field error: ") + e.what(), 8);
    }
    return parsed;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path, path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path, path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open for reading: " + path, path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw IoError("read failed: " + path, path);
    return bytes;
}

}  // namespace detail

// ---- checkpoints ----

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt,
                                                      Dtype dtype = Dtype::f64) {
    ckpt.validate();
    std::map<std::string, Matrix> to_write;
    for (const auto& spec : tensor_schema(ckpt.config)) {
        if (spec.is_bias && !ckpt.config.includes_bias) continue;  // implicit zeros
        to_write.emplace(spec.name, ckpt.at(spec.name));
    }
    return detail::serialize_container("checkpoint", detail::config_to_json(ckpt.config),
                                       nlohmann::json::object(), to_write, dtype);
}

inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    detail::ParsedContainer parsed = detail::parse_container(bytes);
    if (parsed.kind != "checkpoint")
        throw SchemaError("expected a checkpoint container, found kind '" + parsed.kind + "'");
    Checkpoint ckpt;
    ckpt.config = detail::config_from_json(parsed.config);
    ckpt.tensors = std::move(parsed.tensors);
    if (!ckpt.config.includes_bias)
        for (const auto& spec : tensor_schema(ckpt.config))
            if (spec.is_bias) ckpt.tensors.emplace(spec.name, Matrix(spec.rows, spec.cols));
    ckpt.validate();
    return ckpt;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt,
                             Dtype dtype = Dtype::f64) {
    detail::write_file(path, serialize_checkpoint(ckpt, dtype));
}

inline Checkpoint read_checkpoint(const std::string& path) {
    return deserialize_checkpoint(detail::read_file(path));
}

// SHA-256 of the canonical (f64) serialization.
inline std::string fingerprint(const Checkpoint& ckpt) {
    return detail::sha256_hex(serialize_checkpoint(ckpt, Dtype::f64));
}

// ---- batches ----

inline void write_batch(const std::string& path, const Batch& batch, const ModelConfig& config) {
    batch.validate();
    std::map<std::string, Matrix> tensors;
    for (std::size_t i = 0; i < batch.inputs.size(); ++i)
        tensors.emplace("batch." + std::to_string(i), batch.inputs[i]);
    detail::write_file(path, detail::serialize_container("batch", detail::config_to_json(config),
                                                         nlohmann::json::object(), tensors,
                                                         Dtype::f64));
}

inline Batch read_batch(const std::string& path) {
    detail::ParsedContainer parsed = detail::parse_container(detail::read_file(path));
    if (parsed.kind != "batch")
        throw SchemaError("expected a batch container, found kind '" + parsed.kind + "'");
    Batch batch;
    for (std::size_t i = 0;; ++i) {
        auto it = parsed.tensors.find("batch." + std::to_string(i));
        if (it == parsed.tensors.end()) break;
        batch.inputs.push_back(std::move(it->second));
    }
    if (batch.inputs.size() != parsed.tensors.size())
        throw SchemaError("batch container has non-contiguous batch.{i} names");
    batch.validate();
    return batch;
}

// ---- keys ----

inline std::vector<std::uint8_t> serialize_key(const MergeLockKey& key) {
    key.validate();
    std::map<std::string, Matrix> tensors;
    for (std::size_t l = 0; l < key.layers.size(); ++l) {
        const std::string lp = "layers." + std::to_string(l) + ".";
        const LayerKey& layer = key.layers[l];
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            const std::string hp = lp + "heads." + std::to_string(h) + ".";
            tensors.emplace(hp + "a", layer.heads[h].a);
            tensors.emplace(hp + "a_inv", layer.heads[h].a_inv);
            tensors.emplace(hp + "b", layer.heads[h].b);
            tensors.emplace(hp + "b_inv", layer.heads[h].b_inv);
        }
        if (key.scheme == Scheme::params) {
            Matrix perm(1, layer.mlp_perm.size());
            for (std::size_t i = 0; i < layer.mlp_perm.size(); ++i)
                perm(0, i) = static_cast<double>(layer.mlp_perm[i]);
            tensors.emplace(lp + "mlp_perm", std::move(perm));
            tensors.emplace(lp + "qk_diag", Matrix::row_vector(layer.qk_diag));
            tensors.emplace(lp + "vo_diag", Matrix::row_vector(layer.vo_diag));
        }
    }
    nlohmann::json config = {{"d_ff", key.d_ff},
                             {"d_head", key.d_head},
                             {"num_heads", key.num_heads},
                             {"num_layers", key.layers.size()}};
    nlohmann::json meta = {{"fingerprint", key.fingerprint},
                           {"sampling",
                            {{"cond_cap", key.sampling.cond_cap},
                             {"diag_hi", key.sampling.diag_hi},
                             {"diag_lo", key.sampling.diag_lo},
                             {"gaussian_std", key.sampling.gaussian_std},
                             {"max_resamples", key.sampling.max_resamples}}},
                           {"scheme", to_string(key.scheme)},
                           {"seed", key.seed}};
    return detail::serialize_container("key", config, meta, tensors, Dtype::f64);
}

inline MergeLockKey deserialize_key(const std::vector<std::uint8_t>& bytes) {
    detail::ParsedContainer parsed = detail::parse_container(bytes);
    if (parsed.kind != "key")
        throw SchemaError("expected a key container, found kind '" + parsed.kind + "'");
    MergeLockKey key;
    try {
        key.scheme = scheme_from_string(parsed.meta.at("scheme").get<std::string>());
        key.seed = parsed.meta.at("seed").get<std::uint64_t>();
        key.fingerprint = parsed.meta.at("fingerprint").get<std::string>();
        const auto& sampling = parsed.meta.at("sampling");
        key.sampling.cond_cap = sampling.at("cond_cap").get<double>();
        key.sampling.diag_hi = sampling.at("diag_hi").get<double>();
        key.sampling.diag_lo = sampling.at("diag_lo").get<double>();
        key.sampling.gaussian_std = sampling.at("gaussian_std").get<double>();
        key.sampling.max_resamples = sampling.at("max_resamples").get<std::size_t>();
        key.sampling.seed = key.seed;
        key.num_heads = parsed.config.at("num_heads").get<std::size_t>();
        key.d_head = parsed.config.at("d_head").get<std::size_t>();
        key.d_ff = parsed.config.at("d_ff").get<std::size_t>();
        key.layers.resize(parsed.config.at("num_layers").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("key header field error: ") + e.what(), 8);
    }

    for (std::size_t l = 0; l < key.layers.size(); ++l) {
        const std::string lp = "layers." + std::to_string(l) + ".";
        LayerKey& layer = key.layers[l];
        layer.heads.resize(key.num_heads);
        for (std::size_t h = 0; h < key.num_heads; ++h) {
            const std::string hp = lp + "heads." + std::to_string(h) + ".";
            auto take = [&](const std::string& name) {
                auto it = parsed.tensors.find(name);
                if (it == parsed.tensors.end())
                    throw SchemaError("key missing tensor " + name, name);
                return it->second;
            };
            layer.heads[h] = {take(hp + "a"), take(hp + "a_inv"), take(hp + "b"),
                              take(hp + "b_inv")};
        }
        if (key.scheme == Scheme::params) {
            auto it = parsed.tensors.find(lp + "mlp_perm");
            if (it == parsed.tensors.end())
                throw SchemaError("params key missing " + lp + "mlp_perm");
            std::vector<std::size_t> map(it->second.size());
            for (std::size_t i = 0; i < map.size(); ++i)
                map[i] = static_cast<std::size_t>(it->second.storage()[i]);
            layer.mlp_perm = Permutation(std::move(map));
            layer.qk_diag = parsed.tensors.at(lp + "qk_diag").storage();
            layer.vo_diag = parsed.tensors.at(lp + "vo_diag").storage();
        }
    }
    key.validate();
    return key;
}

inline void write_key(const std::string& path, const MergeLockKey& key) {
    detail::write_file(path, serialize_key(key));
}

inline MergeLockKey read_key(const std::string& path) {
    return deserialize_key(detail::read_file(path));
}

}  // namespace mergelock
