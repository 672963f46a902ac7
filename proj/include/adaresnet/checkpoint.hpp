#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaresnet/errors.hpp"
#include "adaresnet/io.hpp"
#include "adaresnet/nn.hpp"

namespace adaresnet {

// Layout (all integers little-endian):
//   "ADRNCKPT"  u32 version
//   u32 header length, header JSON {"model": ModelConfig, "metadata": {...}}
//   u32 tensor count, then per tensor:
//     u32 name length, name, u8 dtype tag (1 = f32), u8 trainable,
//     u32 rank, u32 dims[rank], f32 payload[product(dims)]

inline constexpr std::array<char, 8> kCheckpointMagic = {'A', 'D', 'R', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

namespace detail {

class ByteWriter {
  public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

  private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
  public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw ParseError(ParseErrorKind::truncated, "checkpoint ends early at byte " + std::to_string(pos_));
        }
    }
    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        }
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

  private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(Model& model, const nlohmann::json& metadata = nlohmann::json::object()) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.u32(kCheckpointVersion);
    w.str(nlohmann::json{{"model", model.config()}, {"metadata", metadata}}.dump(2));
    const auto params = model.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
        w.str(p->name);
        w.u8(kDtypeFloat32);
        w.u8(p->trainable ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(p->value.rank()));
        for (std::size_t d : p->value.shape()) {
            w.u32(static_cast<std::uint32_t>(d));
        }
        for (float v : p->value.data()) {
            w.f32(v);
        }
    }
    return w.bytes();
}

struct Checkpoint {
    Model model;
    nlohmann::json metadata;
};

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    detail::ByteReader r(bytes);
    r.need(kCheckpointMagic.size());
    if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
        throw ParseError(ParseErrorKind::bad_magic, "not a checkpoint file");
    }
    for (std::size_t i = 0; i < kCheckpointMagic.size(); ++i) {
        r.u8();
    }
    if (const auto version = r.u32(); version != kCheckpointVersion) {
        throw ParseError(ParseErrorKind::bad_format, "unsupported checkpoint version " + std::to_string(version));
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseErrorKind::bad_format, std::string("checkpoint header: ") + e.what());
    }
    ModelConfig config;
    try {
        config = header.at("model").get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseErrorKind::bad_format, std::string("checkpoint model config: ") + e.what());
    }
    Checkpoint ck{Model(config), header.value("metadata", nlohmann::json::object())};
    const auto count = r.u32();
    const auto expected = ck.model.parameters();
    if (count != expected.size()) {
        throw ParseError(ParseErrorKind::count_mismatch, "checkpoint holds " + std::to_string(count) +
                                                             " tensors, model needs " +
                                                             std::to_string(expected.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        if (r.u8() != kDtypeFloat32) {
            throw ParseError(ParseErrorKind::bad_format, "tensor " + name + " has an unknown dtype");
        }
        r.u8();
        Shape shape(r.u32());
        for (auto& d : shape) {
            d = r.u32();
        }
        Parameter* p = ck.model.find_parameter(name);
        if (p == nullptr || p->value.shape() != shape) {
            throw ParseError(ParseErrorKind::bad_format, "tensor " + name + " " + shape_string(shape) +
                                                             " does not fit the model");
        }
        for (float& v : p->value.data()) {
            v = r.f32();
        }
    }
    if (!r.at_end()) {
        throw ParseError(ParseErrorKind::trailing_bytes, "checkpoint has data after the last tensor");
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, Model& model,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
    detail::write_file_bytes(path, encode_checkpoint(model, metadata));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file_bytes(path));
}

} // namespace adaresnet
