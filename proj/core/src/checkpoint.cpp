#include "clfno/checkpoint.hpp"

namespace clfno {

void save_checkpoint(const ParamStore& store, const json& meta, const std::string& path) {
    Container c;
    c.kind = "checkpoint";
    c.meta = meta;
    for (const auto& [name, e] : store) {
        Block& b = c.add_tensor(name, e.value);
        b.has_trainable = true;
        b.trainable = e.trainable;
    }
    c.save(path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Container c = Container::load(path);
    require(c.kind == "checkpoint", "bad_kind",
            "expected a checkpoint container, got kind '" + c.kind + "' in " + path);
    LoadedCheckpoint out;
    out.meta = c.meta;
    for (const Block& b : c.blocks) {
        ParamEntry& e = out.store.add(b.name, b.shape);
        e.value.data = b.values;
        e.trainable = b.has_trainable ? b.trainable : true;
        require(e.value.all_finite(), "non_finite",
                "checkpoint parameter " + b.name + " contains non-finite values");
    }
    return out;
}

} // namespace clfno
