#include "dcanas/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

namespace dcanas {

std::vector<std::size_t> Dataset::training_pool() const {
  std::vector<std::size_t> out = train;
  out.insert(out.end(), val.begin(), val.end());
  return out;
}

void Dataset::validate() const {
  if (images.size() != size() * image_size()) throw std::invalid_argument(name + ": image storage mismatch");
  for (int y : labels) {
    if (y < 0 || y >= classes) throw std::invalid_argument(name + ": label out of range");
  }
  std::vector<char> seen(size(), 0);
  for (const auto* split : {&train, &val, &test}) {
    for (std::size_t i : *split) {
      if (i >= size()) throw std::invalid_argument(name + ": split index out of range");
      if (seen[i]++) throw std::invalid_argument(name + ": example " + std::to_string(i) + " in two splits");
    }
  }
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return std::uint32_t{b[at]} << 24 | std::uint32_t{b[at + 1]} << 16 | std::uint32_t{b[at + 2]} << 8 |
         std::uint32_t{b[at + 3]};
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 4) throw DataError(path.string() + ": truncated IDX header", bytes.size());
  IdxArray arr;
  arr.magic = be32(bytes, 0);
  if ((arr.magic >> 16) != 0 || ((arr.magic >> 8) & 0xff) != 0x08) {
    throw DataError(path.string() + ": unsupported IDX magic", 0);
  }
  const std::size_t rank = arr.magic & 0xff;
  if (rank == 0) throw DataError(path.string() + ": IDX rank 0", 3);
  std::size_t offset = 4;
  std::uint64_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    if (bytes.size() < offset + 4) throw DataError(path.string() + ": truncated IDX dimensions", bytes.size());
    arr.dims.push_back(be32(bytes, offset));
    count *= arr.dims.back();
    offset += 4;
  }
  if (bytes.size() < offset + count) {
    throw DataError(path.string() + ": truncated IDX payload, expected " + std::to_string(count) + " bytes",
                    bytes.size());
  }
  if (bytes.size() > offset + count) {
    throw DataError(path.string() + ": trailing bytes after IDX payload", offset + count);
  }
  arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return arr;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t take) {
  const IdxArray img = read_idx(images);
  const IdxArray lab = read_idx(labels);
  if (img.magic != 0x00000803) throw DataError(images.string() + ": expected image magic 0x00000803", 0);
  if (lab.magic != 0x00000801) throw DataError(labels.string() + ": expected label magic 0x00000801", 0);
  if (img.dims[1] == 0 || img.dims[2] == 0) throw DataError(images.string() + ": empty image extent", 8);
  if (img.dims[0] != lab.dims[0]) {
    throw std::invalid_argument("IDX image/label counts differ: " + std::to_string(img.dims[0]) + " vs " +
                                std::to_string(lab.dims[0]));
  }
  Dataset ds;
  ds.name = images.stem().string();
  ds.channels = 1;
  ds.height = static_cast<int>(img.dims[1]);
  ds.width = static_cast<int>(img.dims[2]);
  ds.classes = 10;
  std::size_t n = img.dims[0];
  if (take > 0) n = std::min(n, take);
  const std::size_t px = ds.image_size();
  ds.images.resize(n * px);
  for (std::size_t i = 0; i < n * px; ++i) ds.images[i] = static_cast<float>(img.data[i]) / 255.0f;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = lab.data[i];
    if (y >= ds.classes) throw DataError(labels.string() + ": label " + std::to_string(y) + " out of range", 8 + i);
    ds.labels.push_back(y);
    ds.train.push_back(i);
  }
  return ds;
}

Dataset load_cifar_binary(const std::filesystem::path& path, std::size_t take) {
  constexpr std::size_t kRecord = 3073;
  const auto bytes = read_bytes(path);
  if (bytes.size() % kRecord != 0) {
    throw DataError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 3073",
                    bytes.size() - bytes.size() % kRecord);
  }
  Dataset ds;
  ds.name = path.stem().string();
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  ds.classes = 10;
  std::size_t n = bytes.size() / kRecord;
  if (take > 0) n = std::min(n, take);
  ds.images.resize(n * 3072);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t at = r * kRecord;
    const int y = bytes[at];
    if (y >= ds.classes) throw DataError(path.string() + ": label " + std::to_string(y) + " out of range", at);
    ds.labels.push_back(y);
    ds.train.push_back(r);
    for (std::size_t k = 0; k < 3072; ++k) ds.images[r * 3072 + k] = static_cast<float>(bytes[at + 1 + k]) / 255.0f;
  }
  return ds;
}

void attach_test_set(Dataset& train, const Dataset& test) {
  if (test.channels != train.channels || test.height != train.height || test.width != train.width) {
    throw std::invalid_argument("test set image shape differs from training set");
  }
  const std::size_t base = train.size();
  train.images.insert(train.images.end(), test.images.begin(), test.images.end());
  for (std::size_t i = 0; i < test.size(); ++i) {
    train.labels.push_back(test.labels[i]);
    train.test.push_back(base + i);
  }
  train.classes = std::max(train.classes, test.classes);
}

void normalize(Dataset& ds) {
  const auto pool = ds.training_pool();
  const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
  ds.mean.assign(static_cast<std::size_t>(ds.channels), 0.f);
  ds.stddev.assign(static_cast<std::size_t>(ds.channels), 1.f);
  if (pool.empty()) return;
  for (int c = 0; c < ds.channels; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t i : pool) {
      const float* p = ds.images.data() + i * ds.image_size() + static_cast<std::size_t>(c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        s += p[k];
        s2 += double(p[k]) * p[k];
      }
    }
    const double count = static_cast<double>(pool.size() * plane);
    const double mu = s / count;
    const double sd = std::sqrt(std::max(s2 / count - mu * mu, 1e-12));
    ds.mean[static_cast<std::size_t>(c)] = static_cast<float>(mu);
    ds.stddev[static_cast<std::size_t>(c)] = static_cast<float>(sd);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      float* p = ds.images.data() + i * ds.image_size() + static_cast<std::size_t>(c) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - mu) / sd);
    }
  }
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
  if (name == "spiral") return SyntheticKind::spiral;
  if (name == "moons") return SyntheticKind::moons;
  if (name == "blobs") return SyntheticKind::blobs;
  throw std::invalid_argument("unknown synthetic task '" + std::string(name) + "' (spiral, moons, blobs)");
}

namespace {

struct Point {
  double x, y;
  int label;
};

Point sample_point(const SyntheticSpec& spec, int label, Rng& rng) {
  constexpr double pi = std::numbers::pi;
  switch (spec.kind) {
    case SyntheticKind::spiral: {
      const double t = rng.uniform();
      const double theta = 2 * pi * label / spec.classes + 3.0 * pi * t;
      const double r = 0.15 + 0.85 * t;
      return {r * std::cos(theta) + spec.noise * rng.normal(), r * std::sin(theta) + spec.noise * rng.normal(),
              label};
    }
    case SyntheticKind::moons: {
      const double t = pi * rng.uniform();
      double x = label == 0 ? std::cos(t) : 1 - std::cos(t);
      double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
      x += spec.noise * rng.normal();
      y += spec.noise * rng.normal();
      return {(x - 0.5) / 1.5, (y - 0.25) / 0.75, label};
    }
    case SyntheticKind::blobs: {
      const double a = 2 * pi * label / spec.classes;
      return {0.7 * std::cos(a) + spec.noise * rng.normal(), 0.7 * std::sin(a) + spec.noise * rng.normal(), label};
    }
  }
  throw std::invalid_argument("unknown synthetic kind");
}

void rasterize(const Point& p, int size, Rng& rng, float* out) {
  const double level = 0.5 + 0.25 * std::clamp(p.x, -1.5, 1.5);
  const double contrast = 0.25 * std::clamp(p.y, -1.5, 1.5);
  const int du = static_cast<int>(rng.below(2));
  const int dv = static_cast<int>(rng.below(2));
  for (int u = 0; u < size; ++u) {
    for (int v = 0; v < size; ++v) {
      const int sign = ((u + du) / 2 + (v + dv) / 2) % 2 == 0 ? 1 : -1;
      out[u * size + v] = static_cast<float>(level + sign * contrast);
    }
  }
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("synthetic task needs at least 2 classes");
  if (spec.kind == SyntheticKind::moons && spec.classes != 2) throw std::invalid_argument("moons has exactly 2 classes");
  if (spec.n < static_cast<std::size_t>(spec.classes)) throw std::invalid_argument("synthetic task needs n >= classes");
  if (spec.size < 2) throw std::invalid_argument("synthetic image size must be >= 2");
  if (spec.noise < 0) throw std::invalid_argument("noise must be non-negative");
  Dataset ds;
  ds.name = spec.kind == SyntheticKind::spiral ? "spiral" : spec.kind == SyntheticKind::moons ? "moons" : "blobs";
  ds.channels = 1;
  ds.height = ds.width = spec.size;
  ds.classes = spec.classes;
  const std::size_t total = spec.n + spec.test_n;
  ds.images.resize(total * ds.image_size());
  Rng rng(spec.seed);
  for (std::size_t i = 0; i < total; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
    const Point p = sample_point(spec, label, rng);
    rasterize(p, spec.size, rng, ds.images.data() + i * ds.image_size());
    ds.labels.push_back(label);
    (i < spec.n ? ds.train : ds.test).push_back(i);
  }
  return ds;
}

void split_train_val(Dataset& ds, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must lie in (0, 1), got " + std::to_string(val_fraction));
  }
  auto pool = ds.training_pool();
  std::sort(pool.begin(), pool.end());
  Rng rng(seed);
  rng.shuffle(pool);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(pool.size())));
  ds.val.assign(pool.end() - static_cast<std::ptrdiff_t>(n_val), pool.end());
  ds.train.assign(pool.begin(), pool.end() - static_cast<std::ptrdiff_t>(n_val));
}

BatchStream::BatchStream(const Dataset& ds, std::vector<std::size_t> indices, std::size_t batch_size,
                         bool shuffle, std::uint64_t seed)
    : ds_(&ds), order_(std::move(indices)), batch_(batch_size), shuffle_(shuffle), rng_(seed) {
  if (batch_ == 0) throw std::invalid_argument("batch size must be positive");
  if (batch_ > order_.size()) {
    throw std::invalid_argument("batch size " + std::to_string(batch_) + " exceeds split size " +
                                std::to_string(order_.size()));
  }
  if (shuffle_) rng_.shuffle(order_);
}

std::size_t BatchStream::batches_per_epoch() const { return (order_.size() + batch_ - 1) / batch_; }

Batch BatchStream::next() {
  if (pos_ >= order_.size()) {
    pos_ = 0;
    ++epoch_;
    if (shuffle_) rng_.shuffle(order_);
  }
  const std::size_t end = std::min(order_.size(), pos_ + batch_);
  Batch b;
  b.channels = ds_->channels;
  b.height = ds_->height;
  b.width = ds_->width;
  b.images.reserve((end - pos_) * ds_->image_size());
  for (std::size_t k = pos_; k < end; ++k) {
    const auto img = ds_->image(order_[k]);
    b.images.insert(b.images.end(), img.begin(), img.end());
    b.labels.push_back(ds_->labels[order_[k]]);
  }
  pos_ = end;
  return b;
}

SearchStreams split_and_batch(Dataset& ds, double val_fraction, std::size_t batch, std::uint64_t seed) {
  split_train_val(ds, val_fraction, seed);
  return {BatchStream(ds, ds.train, batch, true, seed ^ 0x9e3779b97f4a7c15ULL),
          BatchStream(ds, ds.val, batch, true, seed ^ 0xc2b2ae3d27d4eb4fULL)};
}

void apply_cutout(Batch& batch, int length, Rng& rng) {
  if (length <= 0) return;
  const std::size_t plane = static_cast<std::size_t>(batch.height) * batch.width;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const int cy = static_cast<int>(rng.below(static_cast<std::size_t>(batch.height)));
    const int cx = static_cast<int>(rng.below(static_cast<std::size_t>(batch.width)));
    const int y0 = std::max(0, cy - length / 2), y1 = std::min(batch.height, cy + length / 2);
    const int x0 = std::max(0, cx - length / 2), x1 = std::min(batch.width, cx + length / 2);
    for (int c = 0; c < batch.channels; ++c) {
      float* p = batch.images.data() + (n * static_cast<std::size_t>(batch.channels) + static_cast<std::size_t>(c)) * plane;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) p[y * batch.width + x] = 0.f;
    }
  }
}

}  // namespace dcanas
