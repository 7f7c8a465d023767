#include "wino/model.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace wino {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char MAGIC[8] = { 'W', 'I', 'N', 'O', 'C', 'K', 'P', 'T' };

template <typename T> void put(std::string & buf, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf.append(b, sizeof(T));
}

class Reader {
  public:
    Reader(const std::string & buf, std::size_t pos, std::size_t end) : buf_(buf), pos_(pos), end_(end) {}

    template <typename T> T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

  private:
    void need(std::size_t n) const {
        if (end_ - pos_ < n) {
            throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint truncated");
        }
    }

    const std::string & buf_;
    std::size_t         pos_;
    std::size_t         end_;
};

std::uint32_t crc_of(const char * data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc       = crc32(crc, reinterpret_cast<const Bytef *>(data), static_cast<uInt>(n));
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const ModelWeights & w, const std::filesystem::path & path) {
    const std::string cfg = nlohmann::json(w.config).dump();

    std::string body;
    for (const auto & [name, m] : w.named_parameters()) {
        put<std::uint32_t>(body, static_cast<std::uint32_t>(name.size()));
        body.append(name);
        put<std::uint64_t>(body, static_cast<std::uint64_t>(m->size()));
        for (double x : m->data) {
            put<float>(body, static_cast<float>(x));
        }
    }

    std::string out(MAGIC, sizeof(MAGIC));
    put<std::uint32_t>(out, CHECKPOINT_VERSION);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(cfg.size()));
    out.append(cfg);
    out.append(body);
    put<std::uint32_t>(out, crc_of(body.data(), body.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string() + " for writing");
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) {
        throw CheckpointError(CheckpointError::Kind::io, "write failed: " + path.string());
    }
}

ModelWeights load_checkpoint(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
    }
    const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader hdr(buf, 0, buf.size());
    if (hdr.bytes(sizeof(MAGIC)) != std::string(MAGIC, sizeof(MAGIC))) {
        throw CheckpointError(CheckpointError::Kind::bad_magic, "not a checkpoint file: " + path.string());
    }
    const auto version = hdr.get<std::uint32_t>();
    if (version != CHECKPOINT_VERSION) {
        throw CheckpointError(CheckpointError::Kind::version,
                              "unsupported checkpoint version " + std::to_string(version) + " (reader supports " +
                                  std::to_string(CHECKPOINT_VERSION) + ")");
    }
    const auto cfg_len = hdr.get<std::uint64_t>();
    if (cfg_len > buf.size()) {
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint truncated in config blob");
    }
    const std::string cfg_text = hdr.bytes(static_cast<std::size_t>(cfg_len));

    ModelConfig cfg;
    try {
        cfg = nlohmann::json::parse(cfg_text).get<ModelConfig>();
        cfg.validate();
    } catch (const std::exception & e) {
        throw CheckpointError(CheckpointError::Kind::schema, std::string("bad checkpoint config: ") + e.what());
    }
    Rng          rng(0);
    ModelWeights w = init_weights(cfg, rng);

    // the config fixes the body size, so a short file is caught before the checksum
    std::size_t expected = 0;
    for (const auto & [name, m] : w.named_parameters()) {
        expected += sizeof(std::uint32_t) + name.size() + sizeof(std::uint64_t) + m->size() * sizeof(float);
    }
    const std::size_t body_begin = hdr.pos();
    if (buf.size() < body_begin + expected + sizeof(std::uint32_t)) {
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint truncated: " + path.string());
    }
    const std::size_t body_end = buf.size() - sizeof(std::uint32_t);
    std::uint32_t     stored;
    std::memcpy(&stored, buf.data() + body_end, sizeof(stored));
    if (crc_of(buf.data() + body_begin, body_end - body_begin) != stored) {
        throw CheckpointError(CheckpointError::Kind::checksum, "checkpoint checksum mismatch: " + path.string());
    }

    Reader       body(buf, body_begin, body_end);
    for (auto & [name, m] : w.named_parameters()) {
        const auto        name_len = body.get<std::uint32_t>();
        const std::string got      = body.bytes(name_len);
        if (got != name) {
            throw CheckpointError(CheckpointError::Kind::schema, "expected tensor '" + name + "', found '" + got + "'");
        }
        const auto count = body.get<std::uint64_t>();
        if (count != m->size()) {
            throw CheckpointError(CheckpointError::Kind::schema, "tensor '" + name + "' has wrong element count");
        }
        for (double & x : m->data) {
            x = static_cast<double>(body.get<float>());
        }
    }
    if (body.pos() != body_end) {
        throw CheckpointError(CheckpointError::Kind::schema, "trailing data after last tensor");
    }
    return w;
}

}  // namespace wino
