#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "adaresnet/adaresnet.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("adaresnet-" + tag + "-" + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

  private:
    fs::path path_;
};

inline std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline adaresnet::Tensor random_tensor(adaresnet::Shape shape, std::uint64_t seed, float lo = -1.0f,
                                       float hi = 1.0f) {
    adaresnet::Rng rng(seed);
    adaresnet::Tensor t(std::move(shape));
    for (float& v : t.data()) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

/// Learnable toy digits: class k lights up a class-specific bar plus noise.
/// Pixel values are multiples of 1/255 so they survive an IDX round trip.
inline adaresnet::Dataset toy_digits(std::size_t per_class, std::size_t side, std::uint64_t seed) {
    adaresnet::Rng rng(seed);
    const std::size_t n = per_class * 10;
    adaresnet::Dataset ds;
    ds.name = "toy";
    ds.images = adaresnet::Tensor({n, 1, side, side});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::uint8_t>(i % 10);
        ds.labels[i] = label;
        float* img = ds.images.data().data() + i * side * side;
        for (std::size_t p = 0; p < side * side; ++p) {
            img[p] = static_cast<float>(rng.below(60)) / 255.0f;
        }
        const std::size_t row = (label * side) / 10;
        for (std::size_t x = 0; x < side; ++x) {
            img[row * side + x] = static_cast<float>(200 + rng.below(56)) / 255.0f;
        }
    }
    return ds;
}

/// Writes train/test IDX files in the standard MNIST layout under dir/mnist.
inline void write_mnist_dir(const fs::path& root, const adaresnet::Dataset& train, const adaresnet::Dataset& test) {
    const fs::path dir = root / "mnist";
    fs::create_directories(dir);
    adaresnet::detail::write_file_bytes(dir / "train-images-idx3-ubyte", adaresnet::encode_idx_images(train));
    adaresnet::detail::write_file_bytes(dir / "train-labels-idx1-ubyte", adaresnet::encode_idx_labels(train));
    adaresnet::detail::write_file_bytes(dir / "t10k-images-idx3-ubyte", adaresnet::encode_idx_images(test));
    adaresnet::detail::write_file_bytes(dir / "t10k-labels-idx1-ubyte", adaresnet::encode_idx_labels(test));
}

/// Small, fast training configuration over toy data.
inline adaresnet::TrainConfig quick_config(std::uint64_t seed = 1) {
    adaresnet::TrainConfig c;
    c.train_subsample = 0;
    c.test_subsample = 0;
    c.epochs = 2;
    c.batch_size = 16;
    c.seed = seed;
    return c;
}

} // namespace testing_support
