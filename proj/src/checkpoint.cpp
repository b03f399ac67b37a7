#include "uad/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>

#include "uad/errors.hpp"
#include "uad/hash.hpp"

namespace uad {
namespace {

constexpr char kMagic[8] = {'U', 'A', 'D', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written little-endian");

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

nlohmann::json header_json(const CheckpointPayload& p) {
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& [name, values] : p.arrays) {
        arrays.push_back({{"name", name}, {"size", values.size()}});
    }
    return {{"kind", p.kind},
            {"config", p.config},
            {"arrays", arrays},
            {"code_version", p.code_version},
            {"config_hash", p.config_hash}};
}

}  // namespace

std::string checkpoint_digest(const CheckpointPayload& p) {
    std::uint64_t h = fnv1a64_bytes(p.kind.data(), p.kind.size());
    const std::string cfg = p.config.dump();
    h = fnv1a64_bytes(cfg.data(), cfg.size(), h);
    for (const auto& [name, values] : p.arrays) {
        h = fnv1a64_bytes(name.data(), name.size(), h);
        h = fnv1a64_bytes(values.data(), values.size() * sizeof(double), h);
    }
    return hex64(h);
}

void write_checkpoint(const CheckpointPayload& p, const std::string& path) {
    nlohmann::json hdr = header_json(p);
    hdr["digest"] = checkpoint_digest(p);
    const std::string hs = hdr.dump();

    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    bool ok = std::fwrite(kMagic, 1, sizeof(kMagic), f.get()) == sizeof(kMagic);
    const std::uint64_t hlen = hs.size();
    ok = ok && std::fwrite(&hlen, sizeof(hlen), 1, f.get()) == 1;
    ok = ok && std::fwrite(hs.data(), 1, hs.size(), f.get()) == hs.size();
    for (const auto& [name, values] : p.arrays) {
        ok = ok && std::fwrite(values.data(), sizeof(double), values.size(), f.get()) ==
                       values.size();
    }
    if (!ok || std::fflush(f.get()) != 0) throw IoError("failed writing checkpoint: " + path);
}

CheckpointPayload read_checkpoint(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[sizeof(kMagic)];
    if (std::fread(magic, 1, sizeof(magic), f.get()) != sizeof(magic) ||
        std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw DataError("not a checkpoint file (bad magic): " + path);
    }
    std::uint64_t hlen = 0;
    if (std::fread(&hlen, sizeof(hlen), 1, f.get()) != 1 || hlen == 0 || hlen > (1u << 26)) {
        throw DataError("corrupt checkpoint header length in " + path);
    }
    std::string hs(hlen, '\0');
    if (std::fread(hs.data(), 1, hlen, f.get()) != hlen) {
        throw DataError("truncated checkpoint header in " + path);
    }
    nlohmann::json hdr;
    try {
        hdr = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("unparseable checkpoint header in " + path + ": " + e.what());
    }

    CheckpointPayload p;
    try {
        p.kind = hdr.at("kind").get<std::string>();
        p.config = hdr.at("config");
        p.code_version = hdr.at("code_version").get<std::string>();
        p.config_hash = hdr.value("config_hash", "");
        for (const auto& a : hdr.at("arrays")) {
            const auto name = a.at("name").get<std::string>();
            const auto size = a.at("size").get<std::size_t>();
            std::vector<double> values(size);
            if (std::fread(values.data(), sizeof(double), size, f.get()) != size) {
                throw DataError("truncated checkpoint payload (array '" + name + "') in " + path);
            }
            p.arrays.emplace_back(name, std::move(values));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint header in " + path + ": " + e.what());
    }

    const std::string stored = hdr.value("digest", "");
    if (!stored.empty() && stored != checkpoint_digest(p)) {
        throw DataError("checkpoint digest mismatch (corrupt file?): " + path);
    }
    return p;
}

}  // namespace uad
