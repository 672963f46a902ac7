#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adaresnet/errors.hpp"
#include "adaresnet/io.hpp"
#include "adaresnet/random.hpp"
#include "adaresnet/tensor.hpp"

namespace adaresnet {

/// Images in [0, 1] as N x C x H x W plus one class index per image.
struct Dataset {
    Tensor images;
    std::vector<std::uint8_t> labels;
    std::string name;
    std::size_t num_classes = 10;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_size() const { return images.size() / images.dim(0); }
};

// ---------------------------------------------------------------------------
// MNIST IDX

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxHeader {
    std::uint32_t magic = 0;
    std::uint32_t count = 0;
    std::uint32_t rows = 0;  // images only
    std::uint32_t cols = 0;  // images only

    std::size_t header_bytes() const { return magic == kIdxImagesMagic ? 16 : 8; }
};

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) {
        out.push_back(static_cast<std::uint8_t>(v >> shift));
    }
}

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L));
}

} // namespace detail

/// Parses the fixed header of an IDX image (0x803) or label (0x801) file.
inline IdxHeader parse_idx_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) {
        throw ParseError(ParseErrorKind::truncated, "IDX file shorter than its magic number");
    }
    IdxHeader h;
    h.magic = detail::read_be32(bytes, 0);
    if (h.magic != kIdxImagesMagic && h.magic != kIdxLabelsMagic) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%08X", h.magic);
        throw ParseError(ParseErrorKind::bad_magic, std::string("unexpected IDX magic ") + buf);
    }
    if (bytes.size() < h.header_bytes()) {
        throw ParseError(ParseErrorKind::truncated, "IDX header is incomplete");
    }
    h.count = detail::read_be32(bytes, 4);
    if (h.magic == kIdxImagesMagic) {
        h.rows = detail::read_be32(bytes, 8);
        h.cols = detail::read_be32(bytes, 12);
    }
    return h;
}

inline IdxHeader read_idx_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(ParseErrorKind::io, "cannot open " + path.string());
    }
    std::vector<std::uint8_t> head(16);
    in.read(reinterpret_cast<char*>(head.data()), 16);
    head.resize(static_cast<std::size_t>(in.gcount()));
    return parse_idx_header(head);
}

/// Decodes an IDX image/label pair; pixel byte v becomes v / 255.
inline Dataset decode_mnist(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                            std::string name = "mnist") {
    const IdxHeader ih = parse_idx_header(image_bytes);
    const IdxHeader lh = parse_idx_header(label_bytes);
    if (ih.magic != kIdxImagesMagic) {
        throw ParseError(ParseErrorKind::bad_magic, "image file carries the label magic");
    }
    if (lh.magic != kIdxLabelsMagic) {
        throw ParseError(ParseErrorKind::bad_magic, "label file carries the image magic");
    }
    if (ih.count == 0 || ih.rows == 0 || ih.cols == 0) {
        throw ParseError(ParseErrorKind::bad_format, "IDX image file declares an empty set");
    }
    const std::size_t pixels = static_cast<std::size_t>(ih.count) * ih.rows * ih.cols;
    const auto check_size = [](std::span<const std::uint8_t> bytes, std::size_t expected, const char* what) {
        if (bytes.size() < expected) {
            throw ParseError(ParseErrorKind::truncated, std::string(what) + " payload has " +
                                                            std::to_string(bytes.size()) + " bytes, header implies " +
                                                            std::to_string(expected));
        }
        if (bytes.size() > expected) {
            throw ParseError(ParseErrorKind::trailing_bytes, std::string(what) + " file has " +
                                                                 std::to_string(bytes.size() - expected) +
                                                                 " bytes past the payload");
        }
    };
    check_size(image_bytes, 16 + pixels, "image");
    check_size(label_bytes, 8 + std::size_t{lh.count}, "label");
    if (ih.count != lh.count) {
        throw ParseError(ParseErrorKind::count_mismatch, std::to_string(ih.count) + " images but " +
                                                             std::to_string(lh.count) + " labels");
    }
    Dataset ds;
    ds.name = std::move(name);
    ds.num_classes = 10;
    ds.images = Tensor({ih.count, 1, ih.rows, ih.cols});
    for (std::size_t i = 0; i < pixels; ++i) {
        ds.images[i] = static_cast<float>(image_bytes[16 + i]) / 255.0f;
    }
    ds.labels.assign(label_bytes.begin() + 8, label_bytes.end());
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        if (ds.labels[i] > 9) {
            throw ParseError(ParseErrorKind::bad_label, "label " + std::to_string(ds.labels[i]) + " at index " +
                                                            std::to_string(i) + " is outside 0..9");
        }
    }
    return ds;
}

inline Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                          std::string name = "mnist") {
    return decode_mnist(detail::read_file_bytes(images), detail::read_file_bytes(labels), std::move(name));
}

inline std::vector<std::uint8_t> encode_idx_images(const Dataset& ds) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + ds.images.size());
    detail::write_be32(out, kIdxImagesMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(ds.images.dim(0)));
    detail::write_be32(out, static_cast<std::uint32_t>(ds.images.dim(2)));
    detail::write_be32(out, static_cast<std::uint32_t>(ds.images.dim(3)));
    for (float v : ds.images.data()) {
        out.push_back(detail::to_byte(v));
    }
    return out;
}

inline std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + ds.labels.size());
    detail::write_be32(out, kIdxLabelsMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(ds.labels.size()));
    out.insert(out.end(), ds.labels.begin(), ds.labels.end());
    return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches

inline constexpr std::size_t kCifarImageBytes = 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarImageBytes;

/// Records of 1 label byte + 3072 channel-planar pixel bytes.
inline Dataset decode_cifar10(std::span<const std::uint8_t> bytes, std::string name = "cifar10") {
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
        throw ParseError(ParseErrorKind::bad_length, "CIFAR-10 batch of " + std::to_string(bytes.size()) +
                                                         " bytes is not a positive multiple of 3073");
    }
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    Dataset ds;
    ds.name = std::move(name);
    ds.num_classes = 10;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
        if (rec[0] > 9) {
            throw ParseError(ParseErrorKind::bad_label, "record " + std::to_string(i) + " has label " +
                                                            std::to_string(rec[0]));
        }
        ds.labels[i] = rec[0];
        float* dst = ds.images.data().data() + i * kCifarImageBytes;
        for (std::size_t j = 0; j < kCifarImageBytes; ++j) {
            dst[j] = static_cast<float>(rec[1 + j]) / 255.0f;
        }
    }
    return ds;
}

inline Dataset load_cifar10(std::span<const std::filesystem::path> files, std::string name = "cifar10") {
    if (files.empty()) {
        throw ConfigError("no CIFAR-10 batch files given");
    }
    std::vector<std::uint8_t> all;
    for (const auto& f : files) {
        auto bytes = detail::read_file_bytes(f);
        if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
            throw ParseError(ParseErrorKind::bad_length,
                             f.string() + " has " + std::to_string(bytes.size()) + " bytes, not a multiple of 3073");
        }
        all.insert(all.end(), bytes.begin(), bytes.end());
    }
    return decode_cifar10(all, std::move(name));
}

inline std::vector<std::uint8_t> encode_cifar10(const Dataset& ds) {
    std::vector<std::uint8_t> out;
    out.reserve(ds.size() * kCifarRecordBytes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out.push_back(ds.labels[i]);
        const float* src = ds.images.data().data() + i * kCifarImageBytes;
        for (std::size_t j = 0; j < kCifarImageBytes; ++j) {
            out.push_back(detail::to_byte(src[j]));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Preprocessing and batching

inline Tensor one_hot(std::span<const std::uint8_t> labels, std::size_t num_classes) {
    if (labels.empty()) {
        throw ConfigError("one_hot of an empty label list");
    }
    Tensor out({labels.size(), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw ConfigError("label " + std::to_string(labels[i]) + " does not fit " +
                              std::to_string(num_classes) + " classes");
        }
        out[i * num_classes + labels[i]] = 1.0f;
    }
    return out;
}

/// Rows of `ds` at `indices`, in that order.
inline Dataset select(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.name = ds.name;
    out.num_classes = ds.num_classes;
    Shape shape = ds.images.shape();
    shape[0] = indices.size();
    out.images = Tensor(shape);
    const std::size_t per = ds.image_size();
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const float* src = ds.images.data().data() + indices[i] * per;
        std::copy(src, src + per, out.images.data().data() + i * per);
        out.labels.push_back(ds.labels[indices[i]]);
    }
    return out;
}

/// Indices of a class-stratified sample: n / K items per class drawn without
/// replacement, remainder dropped, returned in ascending order. n == N keeps everything.
inline std::vector<std::size_t> subsample_indices(const Dataset& ds, std::size_t n, std::uint64_t seed) {
    if (n > ds.size()) {
        throw ConfigError("cannot draw " + std::to_string(n) + " items from a set of " + std::to_string(ds.size()));
    }
    std::vector<std::size_t> picked;
    if (n == ds.size()) {
        picked.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            picked[i] = i;
        }
        return picked;
    }
    const std::size_t per_class = n / ds.num_classes;
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] >= ds.num_classes) {
            throw ConfigError("label " + std::to_string(ds.labels[i]) + " out of range");
        }
        by_class[ds.labels[i]].push_back(i);
    }
    Rng rng(seed);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        auto& members = by_class[c];
        if (members.size() < per_class) {
            throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                              " items, stratified sample needs " + std::to_string(per_class));
        }
        rng.shuffle(std::span<std::size_t>(members));
        picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(per_class));
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

inline Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
    return select(ds, subsample_indices(ds, n, seed));
}

/// Index lists of ceil(N / B) batches; with `shuffle`, the order depends only on (seed, epoch).
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t seed, std::uint64_t epoch, bool shuffle) {
    if (batch_size == 0) {
        throw ConfigError("batch size must be at least 1");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    if (shuffle) {
        Rng rng(mix_seed(seed, epoch));
        rng.shuffle(std::span<std::size_t>(order));
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

struct Batch {
    Tensor images;
    Tensor targets;  // one-hot
    std::vector<std::uint8_t> labels;
};

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset part = select(ds, indices);
    Tensor targets = one_hot(part.labels, ds.num_classes);
    return Batch{std::move(part.images), std::move(targets), std::move(part.labels)};
}

inline std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch, bool shuffle) {
    std::vector<Batch> out;
    for (const auto& idx : batch_indices(ds.size(), batch_size, seed, epoch, shuffle)) {
        out.push_back(make_batch(ds, idx));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset files on disk

inline constexpr const char* kDataDirEnv = "ADARESNET_DATA_DIR";

/// Flag value, else $ADARESNET_DATA_DIR, else ./data.
inline std::filesystem::path resolve_data_dir(const std::optional<std::string>& flag) {
    if (flag && !flag->empty()) {
        return *flag;
    }
    if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') {
        return env;
    }
    return "data";
}

struct DatasetFiles {
    std::vector<std::filesystem::path> train;
    std::vector<std::filesystem::path> test;
};

/// Standard file names under <root>/mnist or <root>/cifar10 (or cifar-10-batches-bin).
inline DatasetFiles locate_dataset(const std::string& name, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    const auto first_existing = [&](std::initializer_list<fs::path> dirs, const char* probe) {
        for (const auto& d : dirs) {
            if (fs::exists(d / probe)) {
                return d;
            }
        }
        throw ParseError(ParseErrorKind::io, "no " + name + " files (looked for " + probe + ") under " + root.string());
    };
    if (name == "mnist") {
        const auto dir = first_existing({root / "mnist", root}, "train-images-idx3-ubyte");
        return {{dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"},
                {dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"}};
    }
    if (name == "cifar10") {
        const auto dir = first_existing({root / "cifar10", root / "cifar-10-batches-bin", root}, "data_batch_1.bin");
        DatasetFiles files;
        for (int i = 1; i <= 5; ++i) {
            files.train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
        }
        files.test.push_back(dir / "test_batch.bin");
        return files;
    }
    throw ConfigError("unknown dataset '" + name + "' (expected mnist or cifar10)");
}

inline std::pair<Dataset, Dataset> load_dataset(const std::string& name, const DatasetFiles& files) {
    if (name == "mnist") {
        return {load_mnist(files.train.at(0), files.train.at(1), "mnist"),
                load_mnist(files.test.at(0), files.test.at(1), "mnist")};
    }
    return {load_cifar10(files.train, "cifar10"), load_cifar10(files.test, "cifar10")};
}

} // namespace adaresnet
