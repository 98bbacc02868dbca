#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcanas/rng.hpp"

namespace dcanas {

/// Malformed input file; offset() is the byte position where parsing failed.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Labelled images stored as [n, c, h, w] floats plus split indices. The
/// training pool is train + val; test is held out.
struct Dataset {
  std::string name;
  int channels = 1;
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<float> images;
  std::vector<int> labels;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::vector<float> mean;    // per channel, subtracted
  std::vector<float> stddev;  // per channel, divided

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return static_cast<std::size_t>(channels) * height * width; }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images).subspan(i * image_size(), image_size());
  }
  /// train followed by val.
  std::vector<std::size_t> training_pool() const;
  /// Throws std::invalid_argument if labels, splits or storage are inconsistent.
  void validate() const;
};

/// Raw IDX array: element type code, extents, and unsigned-byte payload.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

IdxArray read_idx(const std::filesystem::path& path);

/// MNIST-style image (0x00000803) and label (0x00000801) files. Pixels are
/// scaled to [0, 1]; every example goes to the training pool.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t take = 0);

/// CIFAR-10 binary records (1 label byte + 3072 pixel bytes, R/G/B planes).
/// `take` > 0 keeps the first `take` records.
Dataset load_cifar_binary(const std::filesystem::path& path, std::size_t take = 0);

/// Appends `test`'s examples to `train` as its held-out test split.
void attach_test_set(Dataset& train, const Dataset& test);

/// Per-channel standardisation with statistics of the training pool.
void normalize(Dataset& ds);

enum class SyntheticKind { spiral, moons, blobs };
SyntheticKind parse_synthetic_kind(std::string_view name);

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::spiral;
  std::size_t n = 1000;       // training pool size
  std::size_t test_n = 500;   // held-out examples drawn from the same law
  int classes = 2;
  double noise = 0.0;
  std::uint64_t seed = 0;
  int size = 16;
};

/// 2-D point tasks rendered as 1 x size x size textures: the x coordinate sets
/// the mean intensity and the y coordinate the contrast of a checkerboard with
/// random phase, so class information survives translation.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Deterministically re-splits the training pool into train/val.
void split_train_val(Dataset& ds, double val_fraction, std::uint64_t seed);

struct Batch {
  std::vector<float> images;  // [size, c, h, w]
  std::vector<int> labels;
  int channels = 0, height = 0, width = 0;
  std::size_t size() const { return labels.size(); }
};

/// Cycles over a fixed index set in batches; reshuffles every epoch when
/// `shuffle`. The last batch of an epoch may be short.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, std::vector<std::size_t> indices, std::size_t batch_size, bool shuffle,
              std::uint64_t seed);
  Batch next();
  std::size_t batches_per_epoch() const;
  std::size_t epoch() const { return epoch_; }
  /// Index order of the current epoch.
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Dataset* ds_;
  std::vector<std::size_t> order_;
  std::size_t batch_;
  bool shuffle_;
  Rng rng_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

struct SearchStreams {
  BatchStream train;
  BatchStream val;
};

/// Splits the training pool (val_fraction in (0, 1)) and returns independent
/// cycling streams over both halves.
SearchStreams split_and_batch(Dataset& ds, double val_fraction, std::size_t batch, std::uint64_t seed);

/// Zeroes a length x length square (clipped at the borders) centred at a
/// random pixel of every image.
void apply_cutout(Batch& batch, int length, Rng& rng);

}  // namespace dcanas
