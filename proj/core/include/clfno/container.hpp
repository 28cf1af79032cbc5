#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clfno/tensor.hpp"

namespace clfno {

using json = nlohmann::json;

/// Shared on-disk container: an 8-byte magic, a JSON header (kind, format
/// version, kind-specific metadata, block table, payload checksum), then
/// the raw little-endian payload blocks in declared order.
///
/// Checkpoints and datasets use f32 payloads; method state may use f64
/// where full precision matters (e.g. orthonormal gradient bases).
/// save(load(f)) is byte-identical.
struct Block {
    std::string name;
    std::vector<int> shape;
    bool f64 = false;           // payload dtype: f32 (default) or f64
    bool trainable = false;     // meaningful for checkpoint blocks
    bool has_trainable = false; // whether the flag is serialized
    std::vector<double> values; // always held as doubles in memory

    int64_t numel() const { return Tensor::count(shape); }
};

struct Container {
    static constexpr int kFormatVersion = 1;

    std::string kind;
    json meta = json::object();
    std::vector<Block> blocks;

    Block& add_block(const std::string& name, std::vector<int> shape, bool f64 = false);
    Block& add_tensor(const std::string& name, const Tensor& t, bool f64 = false);
    const Block* find(const std::string& name) const;
    const Block& at(const std::string& name) const;
    Tensor tensor(const std::string& name) const;

    void save(const std::string& path) const;
    static Container load(const std::string& path);
};

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

} // namespace clfno
