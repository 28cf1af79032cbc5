#include "clfno/container.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace clfno {

static_assert(std::endian::native == std::endian::little,
              "container payloads are little-endian; big-endian hosts need byte swaps");

namespace {

constexpr char kMagic[8] = {'C', 'L', 'F', 'N', 'B', 'I', 'N', '1'};

const std::array<uint32_t, 256>& crc_table() {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) {
                c = (c & 1) ? (0xedb88320u ^ (c >> 1)) : (c >> 1);
            }
            t[i] = c;
        }
        return t;
    }();
    return table;
}

} // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    uint32_t c = seed ^ 0xffffffffu;
    const auto& table = crc_table();
    for (size_t i = 0; i < len; ++i) {
        c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    }
    return c ^ 0xffffffffu;
}

Block& Container::add_block(const std::string& name, std::vector<int> shape, bool f64) {
    Block b;
    b.name = name;
    b.f64 = f64;
    b.values.assign(static_cast<size_t>(Tensor::count(shape)), 0.0);
    b.shape = std::move(shape);
    blocks.push_back(std::move(b));
    return blocks.back();
}

Block& Container::add_tensor(const std::string& name, const Tensor& t, bool f64) {
    Block& b = add_block(name, t.shape, f64);
    b.values = t.data;
    return b;
}

const Block* Container::find(const std::string& name) const {
    for (const Block& b : blocks) {
        if (b.name == name) {
            return &b;
        }
    }
    return nullptr;
}

const Block& Container::at(const std::string& name) const {
    const Block* b = find(name);
    require(b != nullptr, "missing_block", "container has no block named " + name);
    return *b;
}

Tensor Container::tensor(const std::string& name) const {
    const Block& b = at(name);
    Tensor t(b.shape);
    t.data = b.values;
    return t;
}

void Container::save(const std::string& path) const {
    // payload first, so the checksum can go into the header
    std::vector<uint8_t> payload;
    for (const Block& b : blocks) {
        size_t n = b.values.size();
        size_t off = payload.size();
        if (b.f64) {
            payload.resize(off + n * sizeof(double));
            std::memcpy(payload.data() + off, b.values.data(), n * sizeof(double));
        } else {
            payload.resize(off + n * sizeof(float));
            float* dst = reinterpret_cast<float*>(payload.data() + off);
            for (size_t i = 0; i < n; ++i) {
                dst[i] = static_cast<float>(b.values[i]);
            }
        }
    }

    json header;
    header["format_version"] = kFormatVersion;
    header["kind"] = kind;
    header["meta"] = meta;
    json jblocks = json::array();
    for (const Block& b : blocks) {
        json jb;
        jb["name"] = b.name;
        jb["shape"] = b.shape;
        jb["dtype"] = b.f64 ? "f64" : "f32";
        if (b.has_trainable) {
            jb["trainable"] = b.trainable;
        }
        jblocks.push_back(std::move(jb));
    }
    header["blocks"] = std::move(jblocks);
    header["payload_crc32"] = crc32(payload.data(), payload.size());

    std::string hs = header.dump();
    uint64_t hlen = hs.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "io", "cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    require(out.good(), "io", "write failed: " + path);
}

Container Container::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "io", "cannot open: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    require(in.gcount() == sizeof(magic) && std::memcmp(magic, kMagic, sizeof(magic)) == 0,
            "bad_magic", "not a clfno container: " + path);

    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    require(in.gcount() == sizeof(hlen) && hlen > 0 && hlen < (1ull << 31), "truncated",
            "corrupt header length in " + path);

    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    require(static_cast<uint64_t>(in.gcount()) == hlen, "truncated",
            "truncated header in " + path);

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw Error("bad_header", std::string("invalid container header: ") + e.what());
    }

    int version = header.value("format_version", -1);
    require(version == kFormatVersion, "version_mismatch",
            "unsupported container format version " + std::to_string(version) + " in " + path);

    Container c;
    c.kind = header.value("kind", "");
    c.meta = header.value("meta", json::object());

    size_t payload_len = 0;
    for (const json& jb : header.at("blocks")) {
        Block b;
        b.name = jb.at("name").get<std::string>();
        b.shape = jb.at("shape").get<std::vector<int>>();
        b.f64 = jb.value("dtype", "f32") == "f64";
        if (jb.contains("trainable")) {
            b.has_trainable = true;
            b.trainable = jb.at("trainable").get<bool>();
        }
        payload_len +=
            static_cast<size_t>(b.numel()) * (b.f64 ? sizeof(double) : sizeof(float));
        c.blocks.push_back(std::move(b));
    }

    std::vector<uint8_t> payload(payload_len);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_len));
    require(static_cast<size_t>(in.gcount()) == payload_len, "truncated",
            "truncated payload in " + path);

    uint32_t expect = header.at("payload_crc32").get<uint32_t>();
    uint32_t got = crc32(payload.data(), payload.size());
    require(expect == got, "checksum", "payload checksum mismatch in " + path);

    size_t off = 0;
    for (Block& b : c.blocks) {
        size_t n = static_cast<size_t>(b.numel());
        b.values.resize(n);
        if (b.f64) {
            std::memcpy(b.values.data(), payload.data() + off, n * sizeof(double));
            off += n * sizeof(double);
        } else {
            const float* src = reinterpret_cast<const float*>(payload.data() + off);
            for (size_t i = 0; i < n; ++i) {
                b.values[i] = static_cast<double>(src[i]);
            }
            off += n * sizeof(float);
        }
    }
    return c;
}

} // namespace clfno
