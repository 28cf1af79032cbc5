#pragma once

#include <string>

#include "clfno/container.hpp"
#include "clfno/param_store.hpp"

namespace clfno {

/// Write every parameter (name, shape, trainable flag, f32 payload) plus a
/// JSON metadata header. Round trips bit-exactly.
void save_checkpoint(const ParamStore& store, const json& meta, const std::string& path);

struct LoadedCheckpoint {
    ParamStore store;
    json meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace clfno
