#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>

#include "dcanas/data.hpp"

using namespace dcanas;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("dcanas_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                   ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// n images of h x w where pixel k of image i holds (i * 7 + k) mod 256.
std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x00000803);
  put_be32(b, n);
  put_be32(b, h);
  put_be32(b, w);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t k = 0; k < h * w; ++k) b.push_back(static_cast<std::uint8_t>((i * 7 + k) % 256));
  return b;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& ys) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x00000801);
  put_be32(b, static_cast<std::uint32_t>(ys.size()));
  b.insert(b.end(), ys.begin(), ys.end());
  return b;
}

std::vector<std::uint8_t> cifar_records(const std::vector<std::uint8_t>& ys) {
  std::vector<std::uint8_t> b;
  for (std::size_t r = 0; r < ys.size(); ++r) {
    b.push_back(ys[r]);
    for (std::size_t k = 0; k < 3072; ++k) b.push_back(static_cast<std::uint8_t>((r + k) % 251));
  }
  return b;
}

std::uint64_t offset_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "expected DataError";
  return 0;
}

}  // namespace

TEST(Idx, LoadsPixelsAndLabels) {
  TempDir dir;
  write_bytes(dir / "img.idx", idx_images(4, 3, 2));
  write_bytes(dir / "lab.idx", idx_labels({1, 0, 9, 3}));
  const Dataset ds = load_idx(dir / "img.idx", dir / "lab.idx");
  EXPECT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.height, 3);
  EXPECT_EQ(ds.width, 2);
  EXPECT_EQ(ds.classes, 10);
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 0, 9, 3}));
  EXPECT_FLOAT_EQ(ds.image(2)[1], static_cast<float>(2 * 7 + 1) / 255.0f);
  EXPECT_EQ(ds.train.size(), 4u);
  EXPECT_TRUE(ds.test.empty());
  EXPECT_NO_THROW(ds.validate());
}

TEST(Idx, TakeKeepsPrefix) {
  TempDir dir;
  write_bytes(dir / "img.idx", idx_images(5, 2, 2));
  write_bytes(dir / "lab.idx", idx_labels({1, 2, 3, 4, 5}));
  const Dataset ds = load_idx(dir / "img.idx", dir / "lab.idx", 3);
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(ds.images.size(), 12u);
}

TEST(Idx, TruncationReportsByteOffset) {
  TempDir dir;
  auto img = idx_images(3, 4, 4);
  const std::size_t full = img.size();
  img.resize(full - 5);
  write_bytes(dir / "cut.idx", img);
  EXPECT_EQ(offset_of([&] { read_idx(dir / "cut.idx"); }), full - 5);
  write_bytes(dir / "hdr.idx", {0, 0, 8, 3, 0, 0});
  EXPECT_EQ(offset_of([&] { read_idx(dir / "hdr.idx"); }), 6u);
  auto extra = idx_labels({1, 2});
  extra.push_back(0);
  write_bytes(dir / "extra.idx", extra);
  EXPECT_EQ(offset_of([&] { read_idx(dir / "extra.idx"); }), 10u);
}

TEST(Idx, MagicIsChecked) {
  TempDir dir;
  auto bad = idx_images(1, 2, 2);
  bad[2] = 0x0d;  // float element type
  write_bytes(dir / "bad.idx", bad);
  EXPECT_THROW(read_idx(dir / "bad.idx"), DataError);
  // Image and label files swapped.
  write_bytes(dir / "img.idx", idx_images(2, 2, 2));
  write_bytes(dir / "lab.idx", idx_labels({0, 1}));
  EXPECT_THROW(load_idx(dir / "lab.idx", dir / "img.idx"), DataError);
  write_bytes(dir / "lab3.idx", idx_labels({0, 1, 2}));
  EXPECT_THROW(load_idx(dir / "img.idx", dir / "lab3.idx"), std::invalid_argument);
}

TEST(Idx, OutOfRangeLabelPointsAtItsByte) {
  TempDir dir;
  write_bytes(dir / "img.idx", idx_images(3, 2, 2));
  write_bytes(dir / "lab.idx", idx_labels({0, 255, 1}));
  EXPECT_EQ(offset_of([&] { load_idx(dir / "img.idx", dir / "lab.idx"); }), 9u);
}

TEST(Cifar, LoadsPlanesAndLabels) {
  TempDir dir;
  write_bytes(dir / "batch.bin", cifar_records({3, 7}));
  const Dataset ds = load_cifar_binary(dir / "batch.bin");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.channels, 3);
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 7}));
  // Green plane, pixel 5 of record 1.
  EXPECT_FLOAT_EQ(ds.image(1)[1024 + 5], static_cast<float>((1 + 1024 + 5) % 251) / 255.0f);
  EXPECT_EQ(load_cifar_binary(dir / "batch.bin", 1).size(), 1u);
}

TEST(Cifar, TruncatedRecordAndBadLabel) {
  TempDir dir;
  auto b = cifar_records({1, 2});
  b.resize(b.size() - 100);
  write_bytes(dir / "cut.bin", b);
  EXPECT_EQ(offset_of([&] { load_cifar_binary(dir / "cut.bin"); }), 3073u);
  write_bytes(dir / "lab.bin", cifar_records({1, 255}));
  EXPECT_EQ(offset_of([&] { load_cifar_binary(dir / "lab.bin"); }), 3073u);
  EXPECT_THROW(load_cifar_binary(dir / "missing.bin"), std::runtime_error);
}

TEST(Files, LoadingDoesNotModifyInputs) {
  TempDir dir;
  const auto img = idx_images(2, 2, 2);
  write_bytes(dir / "img.idx", img);
  write_bytes(dir / "lab.idx", idx_labels({0, 1}));
  const auto before = fs::last_write_time(dir / "img.idx");
  (void)load_idx(dir / "img.idx", dir / "lab.idx");
  EXPECT_EQ(read_all(dir / "img.idx"), img);
  EXPECT_EQ(fs::last_write_time(dir / "img.idx"), before);
}

TEST(TestSet, AttachAppendsHeldOutExamples) {
  TempDir dir;
  write_bytes(dir / "a.bin", cifar_records({1, 2, 3}));
  write_bytes(dir / "b.bin", cifar_records({4, 5}));
  Dataset ds = load_cifar_binary(dir / "a.bin");
  attach_test_set(ds, load_cifar_binary(dir / "b.bin"));
  EXPECT_EQ(ds.size(), 5u);
  EXPECT_EQ(ds.test, (std::vector<std::size_t>{3, 4}));
  EXPECT_EQ(ds.labels[4], 5);
  EXPECT_NO_THROW(ds.validate());
  SyntheticSpec s;
  EXPECT_THROW(attach_test_set(ds, make_synthetic(s)), std::invalid_argument);
}

TEST(Synthetic, DeterministicBalancedAndSeparated) {
  for (auto kind : {SyntheticKind::spiral, SyntheticKind::moons, SyntheticKind::blobs}) {
    SyntheticSpec s;
    s.kind = kind;
    s.n = 200;
    s.test_n = 50;
    s.classes = kind == SyntheticKind::moons ? 2 : 3;
    s.seed = 5;
    const Dataset a = make_synthetic(s), b = make_synthetic(s);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.train.size(), 200u);
    EXPECT_EQ(a.test.size(), 50u);
    EXPECT_NO_THROW(a.validate());
    std::vector<int> per(static_cast<std::size_t>(s.classes), 0);
    for (int y : a.labels) ++per[static_cast<std::size_t>(y)];
    EXPECT_LE(*std::max_element(per.begin(), per.end()) - *std::min_element(per.begin(), per.end()), 1);
    for (float v : a.images) ASSERT_TRUE(std::isfinite(v));
    s.seed = 6;
    EXPECT_NE(make_synthetic(s).images, a.images);
  }
  EXPECT_EQ(parse_synthetic_kind("moons"), SyntheticKind::moons);
  EXPECT_THROW(parse_synthetic_kind("rings"), std::invalid_argument);
  SyntheticSpec bad;
  bad.kind = SyntheticKind::moons;
  bad.classes = 3;
  EXPECT_THROW(make_synthetic(bad), std::invalid_argument);
}

TEST(Split, PartitionsPoolDeterministically) {
  SyntheticSpec s;
  s.n = 101;
  Dataset a = make_synthetic(s), b = make_synthetic(s);
  split_train_val(a, 0.3, 9);
  split_train_val(b, 0.3, 9);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.val.size(), 30u);
  EXPECT_EQ(a.train.size() + a.val.size(), 101u);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  EXPECT_EQ(all.size(), 101u);
  EXPECT_NO_THROW(a.validate());
  // Re-splitting is a function of the pool only.
  split_train_val(a, 0.3, 9);
  EXPECT_EQ(a.val, b.val);
  EXPECT_THROW(split_train_val(a, 0.0, 1), std::invalid_argument);
}

TEST(Normalize, TrainingPoolHasZeroMeanUnitVariance) {
  SyntheticSpec s;
  s.n = 300;
  Dataset ds = make_synthetic(s);
  normalize(ds);
  double sum = 0, sq = 0;
  std::size_t count = 0;
  for (std::size_t i : ds.training_pool()) {
    for (float v : ds.image(i)) {
      sum += v;
      sq += double(v) * v;
      ++count;
    }
  }
  EXPECT_NEAR(sum / count, 0.0, 1e-4);
  EXPECT_NEAR(sq / count, 1.0, 1e-3);
  EXPECT_EQ(ds.mean.size(), 1u);
}

TEST(Batches, EpochCoversEveryIndexOnce) {
  SyntheticSpec s;
  s.n = 23;
  const Dataset ds = make_synthetic(s);
  BatchStream stream(ds, ds.train, 5, true, 3);
  EXPECT_EQ(stream.batches_per_epoch(), 5u);
  std::vector<int> labels;
  std::size_t total = 0;
  for (std::size_t b = 0; b < 5; ++b) {
    const Batch batch = stream.next();
    EXPECT_EQ(batch.size(), b < 4 ? 5u : 3u);
    EXPECT_EQ(batch.images.size(), batch.size() * ds.image_size());
    total += batch.size();
  }
  EXPECT_EQ(total, 23u);
  auto order = stream.order();
  std::sort(order.begin(), order.end());
  EXPECT_EQ(order, ds.train);
  EXPECT_EQ(stream.epoch(), 0u);
  (void)stream.next();
  EXPECT_EQ(stream.epoch(), 1u);
  EXPECT_THROW(BatchStream(ds, ds.train, 24, false, 0), std::invalid_argument);
  EXPECT_THROW(BatchStream(ds, ds.train, 0, false, 0), std::invalid_argument);
}

TEST(Batches, UnshuffledStreamKeepsIndexOrder) {
  SyntheticSpec s;
  s.n = 6;
  const Dataset ds = make_synthetic(s);
  BatchStream stream(ds, {4, 1, 3}, 2, false, 0);
  const Batch b = stream.next();
  EXPECT_EQ(b.labels, (std::vector<int>{ds.labels[4], ds.labels[1]}));
  const auto img = ds.image(1);
  EXPECT_TRUE(std::equal(img.begin(), img.end(), b.images.begin() + static_cast<std::ptrdiff_t>(ds.image_size())));
}

TEST(Cutout, ZeroesBoundedSquare) {
  Batch b;
  b.channels = 2;
  b.height = b.width = 10;
  b.labels = {0, 1, 0};
  b.images.assign(3 * 2 * 100, 1.f);
  Rng rng(1);
  apply_cutout(b, 4, rng);
  for (std::size_t n = 0; n < 3; ++n) {
    const float* c0 = b.images.data() + n * 200;
    const auto zeros = std::count(c0, c0 + 100, 0.f);
    EXPECT_GT(zeros, 0);
    EXPECT_LE(zeros, 16);
    // Both channels share the mask.
    EXPECT_TRUE(std::equal(c0, c0 + 100, c0 + 100));
  }
  const auto copy = b.images;
  apply_cutout(b, 0, rng);
  EXPECT_EQ(b.images, copy);
}
