#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "clfno/tensor.hpp"

namespace clfno {

/// One named parameter: values, a same-shaped gradient slot, and a
/// trainable flag. Frozen entries always read back zero gradient after
/// a backward pass.
struct ParamEntry {
    Tensor value;
    Tensor grad;
    bool trainable = true;
};

/// Named, shaped parameter tensors of a model. Iteration order is the
/// lexicographic name order (std::map), which keeps optimizer updates,
/// gradient flattening and serialization deterministic.
class ParamStore {
public:
    ParamEntry& add(const std::string& name, std::vector<int> shape) {
        require(entries_.find(name) == entries_.end(), "duplicate_param",
                "parameter already registered: " + name);
        ParamEntry e;
        e.value = Tensor(shape);
        e.grad = Tensor(std::move(shape));
        return entries_.emplace(name, std::move(e)).first->second;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    ParamEntry& at(const std::string& name) {
        auto it = entries_.find(name);
        require(it != entries_.end(), "missing_param", "no such parameter: " + name);
        return it->second;
    }
    const ParamEntry& at(const std::string& name) const {
        auto it = entries_.find(name);
        require(it != entries_.end(), "missing_param", "no such parameter: " + name);
        return it->second;
    }

    void zero_grads() {
        for (auto& [name, e] : entries_) {
            std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
        }
    }

    /// Flip the trainable flag on every entry matched by `pred`.
    /// Returns the match count; zero matches is reported to the caller
    /// as a warning condition, not an error.
    int set_trainable(const std::function<bool(const std::string&)>& pred, bool flag) {
        int matched = 0;
        for (auto& [name, e] : entries_) {
            if (pred(name)) {
                e.trainable = flag;
                ++matched;
            }
        }
        return matched;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [name, e] : entries_) {
            n += e.value.numel();
        }
        return n;
    }

    int64_t param_count_prefix(const std::string& prefix) const {
        int64_t n = 0;
        for (const auto& [name, e] : entries_) {
            if (name.rfind(prefix, 0) == 0) {
                n += e.value.numel();
            }
        }
        return n;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [name, e] : entries_) {
            out.push_back(name);
        }
        return out;
    }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [name, e] : entries_) {
            if (name.rfind(prefix, 0) == 0) {
                out.push_back(name);
            }
        }
        return out;
    }

    /// Round all values through float32 (the checkpoint precision). Runs
    /// at stage boundaries so a resumed run sees bit-identical state.
    void quantize_f32() {
        for (auto& [name, e] : entries_) {
            e.value.quantize_f32();
        }
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    size_t size() const { return entries_.size(); }

private:
    std::map<std::string, ParamEntry> entries_;
};

} // namespace clfno
