// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "shallowpi/error.hpp"

namespace shallowpi {

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  require(!indices.empty(), ErrorKind::InvalidArgument, "dataset: empty batch");
  const auto per = image_numel();
  std::vector<double> out(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < count(), ErrorKind::OutOfRange, "dataset: index out of range");
    std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor({indices.size(), static_cast<std::size_t>(channels), static_cast<std::size_t>(size),
                 static_cast<std::size_t>(size)},
                std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.channels = channels;
  out.size = size;
  const auto per = image_numel();
  out.images.reserve(indices.size() * per);
  for (auto i : indices) {
    require(i < count(), ErrorKind::OutOfRange, "dataset: index out of range");
    out.images.insert(out.images.end(), images.begin() + static_cast<std::ptrdiff_t>(i * per),
                      images.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    out.labels.push_back(labels[i]);
  }
  return out;
}

namespace {

std::vector<std::vector<double>> blob_prototypes(const BlobOptions& o) {
  Rng rng(derive_seed(o.seed, "blob.prototypes"));
  const auto per = static_cast<std::size_t>(o.channels * o.image_size * o.image_size);
  std::vector<std::vector<double>> protos;
  for (int c = 0; c < o.classes; ++c) {
    std::vector<double> p(per, 0.0);
    // A few low-frequency plane waves per channel give a smooth pattern.
    for (int ch = 0; ch < o.channels; ++ch) {
      for (int wave = 0; wave < 3; ++wave) {
        const double fx = 2.0 * uniform01(rng) - 1.0;
        const double fy = 2.0 * uniform01(rng) - 1.0;
        const double phase = 2.0 * std::numbers::pi * uniform01(rng);
        const double amp = standard_normal(rng);
        for (int y = 0; y < o.image_size; ++y) {
          for (int x = 0; x < o.image_size; ++x) {
            const double t = std::numbers::pi * (fx * x + fy * y) / o.image_size * 2.0 + phase;
            p[static_cast<std::size_t>((ch * o.image_size + y) * o.image_size + x)] += amp * std::cos(t);
          }
        }
      }
    }
    double ss = 0.0;
    for (double v : p) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(per) + 1e-12);
    for (double& v : p) v *= inv;
    protos.push_back(std::move(p));
  }
  return protos;
}

}  // namespace

Dataset make_blob_dataset(const BlobOptions& o, int samples, std::uint64_t stream) {
  require(o.classes >= 2 && o.channels >= 1 && o.image_size >= 1 && samples >= 1,
          ErrorKind::InvalidArgument, "blob dataset: classes >= 2 and positive sizes required");
  require(o.noise >= 0.0, ErrorKind::InvalidArgument, "blob dataset: noise must be >= 0");
  const auto protos = blob_prototypes(o);
  Rng rng(derive_seed(o.seed, stream));
  Dataset d;
  d.channels = o.channels;
  d.size = o.image_size;
  const auto per = d.image_numel();
  d.images.resize(static_cast<std::size_t>(samples) * per);
  d.labels.resize(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    const int label = i % o.classes;
    d.labels[static_cast<std::size_t>(i)] = label;
    const double amp = 0.5 + uniform01(rng);
    double* dst = d.images.data() + static_cast<std::size_t>(i) * per;
    const auto& p = protos[static_cast<std::size_t>(label)];
    for (std::size_t j = 0; j < per; ++j) dst[j] = amp * p[j] + o.noise * standard_normal(rng);
  }
  return d;
}

DataSplits split_validation(Dataset train, Dataset test, int num_classes, double val_fraction,
                            std::uint64_t seed) {
  require(val_fraction >= 0.0 && val_fraction < 1.0, ErrorKind::OutOfRange,
          "validation fraction must lie in [0,1)");
  std::vector<std::size_t> idx(train.count());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "split.validation"));
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
  }
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
  if (val_fraction > 0.0) n_val = std::max<std::size_t>(n_val, 1);
  require(n_val < idx.size(), ErrorKind::InvalidArgument, "validation split leaves no training data");
  std::vector<std::size_t> val_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  DataSplits s;
  s.val = train.subset(val_idx);
  s.train = train.subset(train_idx);
  s.test = std::move(test);
  s.num_classes = num_classes;
  return s;
}

DataSplits make_blob_splits(const BlobOptions& o, double val_fraction) {
  return split_validation(make_blob_dataset(o, o.train_samples, 1),
                          make_blob_dataset(o, o.test_samples, 2), o.classes, val_fraction, o.seed);
}

Dataset parse_cifar10_binary(std::span<const std::uint8_t> bytes, const Normalization& norm) {
  require(norm.mean.size() == 3 && norm.std.size() == 3, ErrorKind::InvalidArgument,
          "cifar10: normalization needs three means and three stds");
  for (double s : norm.std) {
    require(s > 0.0, ErrorKind::InvalidArgument, "cifar10: std must be positive");
  }
  if (bytes.size() % kCifarRecordBytes != 0) {
    const auto offset = (bytes.size() / kCifarRecordBytes) * kCifarRecordBytes;
    fail(ErrorKind::Format, "cifar10: truncated record at byte offset " + std::to_string(offset) +
                                " (" + std::to_string(bytes.size() - offset) + " of " +
                                std::to_string(kCifarRecordBytes) + " bytes)");
  }
  const auto records = bytes.size() / kCifarRecordBytes;
  Dataset d;
  d.channels = 3;
  d.size = 32;
  d.images.resize(records * 3072);
  d.labels.resize(records);
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    require(rec[0] < 10, ErrorKind::Format,
            "cifar10: label " + std::to_string(rec[0]) + " at byte offset " +
                std::to_string(r * kCifarRecordBytes) + " is not in [0,10)");
    d.labels[r] = rec[0];
    for (std::size_t j = 0; j < 3072; ++j) {
      const std::size_t c = j / 1024;
      d.images[r * 3072 + j] = (rec[1 + j] / 255.0 - norm.mean[c]) / norm.std[c];
    }
  }
  return d;
}

Dataset ingest_cifar10_binary(const std::filesystem::path& path, const Normalization& norm) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cifar10: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_cifar10_binary(bytes, norm);
}

Dataset downsample(const Dataset& data, int size) {
  require(size >= 1 && data.size % size == 0, ErrorKind::InvalidArgument,
          "downsample: target size must divide the source size");
  const int f = data.size / size;
  if (f == 1) return data;
  Dataset out;
  out.channels = data.channels;
  out.size = size;
  out.labels = data.labels;
  const auto per_in = data.image_numel();
  const auto per_out = out.image_numel();
  out.images.assign(data.count() * per_out, 0.0);
  const double inv = 1.0 / (f * f);
  for (std::size_t n = 0; n < data.count(); ++n) {
    for (int c = 0; c < data.channels; ++c) {
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          double s = 0.0;
          for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx)
              s += data.images[n * per_in +
                               static_cast<std::size_t>((c * data.size + y * f + dy) * data.size +
                                                        x * f + dx)];
          out.images[n * per_out + static_cast<std::size_t>((c * size + y) * size + x)] = s * inv;
        }
      }
    }
  }
  return out;
}

void augment_batch(Tensor& batch, Rng& rng, int pad) {
  require(batch.rank() == 4, ErrorKind::ShapeMismatch, "augment: batch must be [N,C,H,W]");
  const auto n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  auto d = batch.data();
  std::vector<double> tmp(c * h * w);
  for (std::size_t i = 0; i < n; ++i) {
    double* img = d.data() + i * c * h * w;
    const bool flip = (rng() & 1) != 0;
    const auto span = static_cast<std::uint64_t>(2 * pad + 1);
    const int dy = static_cast<int>(rng() % span) - pad;
    const int dx = static_cast<int>(rng() % span) - pad;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const auto sx0 = flip ? static_cast<std::ptrdiff_t>(w - 1 - x) : static_cast<std::ptrdiff_t>(x);
          const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
          const auto sx = sx0 + dx;
          const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                              sx < static_cast<std::ptrdiff_t>(w);
          tmp[(ch * h + y) * w + x] =
              inside ? img[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)]
                     : 0.0;
        }
      }
    }
    std::copy(tmp.begin(), tmp.end(), img);
  }
}

}  // namespace shallowpi
