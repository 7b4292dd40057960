#include "fedbif/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

namespace fedbif {

void Dataset::validate() const {
  if (features.rows == 0) throw DataError("Dataset: empty");
  if (labels.size() != features.rows) throw DataError("Dataset: labels/features mismatch");
  if (num_classes < 1) throw DataError("Dataset: class count must be >= 1");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw DataError("Dataset: label out of range");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features = Mat(indices.size(), features.cols);
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::size_t src = indices[r];
    std::copy_n(&features.data[src * features.cols], features.cols,
                &out.features.data[r * features.cols]);
    out.labels.push_back(labels[src]);
  }
  return out;
}

void BlobSpec::validate() const {
  if (classes < 1) throw SpecError("BlobSpec: classes must be >= 1");
  if (dim == 0) throw SpecError("BlobSpec: dim must be >= 1");
  if (n_train < static_cast<std::size_t>(classes)) {
    throw SpecError("BlobSpec: need at least one train sample per class");
  }
  if (n_test == 0) throw SpecError("BlobSpec: need a held-out test split");
  if (!(separation >= 0.0)) throw SpecError("BlobSpec: separation must be >= 0");
}

namespace {

Dataset draw_blob_samples(std::size_t n, const Mat& centroids, Rng& rng) {
  Dataset ds;
  ds.num_classes = static_cast<int>(centroids.rows);
  ds.features = Mat(n, centroids.cols);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int c = static_cast<int>(i % centroids.rows);  // class-balanced by construction
    ds.labels[i] = c;
    for (std::size_t j = 0; j < centroids.cols; ++j) {
      ds.features(i, j) = centroids(static_cast<std::size_t>(c), j) + rng.normal();
    }
  }
  return ds;
}

}  // namespace

BlobData make_blobs(const BlobSpec& spec) {
  spec.validate();
  BlobData out;
  Rng centroid_rng(derive_stream(spec.seed, {0xb10b5ULL, 0}));
  out.centroids = Mat(static_cast<std::size_t>(spec.classes), spec.dim);
  for (double& v : out.centroids.data) v = spec.separation * centroid_rng.normal();

  Rng train_rng(derive_stream(spec.seed, {0xb10b5ULL, 1}));
  Rng test_rng(derive_stream(spec.seed, {0xb10b5ULL, 2}));
  out.train = draw_blob_samples(spec.n_train, out.centroids, train_rng);
  out.test = draw_blob_samples(spec.n_test, out.centroids, test_rng);
  return out;
}

void PartitionSpec::validate() const {
  if (clients == 0) throw SpecError("PartitionSpec: clients must be >= 1");
  if (scheme == PartitionScheme::dirichlet && !(beta > 0.0)) {
    throw SpecError("PartitionSpec: beta must be positive");
  }
  if (scheme == PartitionScheme::label_subset &&
      !(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw SpecError("PartitionSpec: label fraction must lie in (0,1]");
  }
}

std::vector<double> dirichlet_proportions(double beta, std::size_t clients, Rng& rng) {
  if (!(beta > 0.0)) throw SpecError("dirichlet_proportions: beta must be positive");
  std::vector<double> q(clients);
  double sum = 0.0;
  for (double& v : q) {
    v = rng.gamma(beta);
    sum += v;
  }
  if (sum <= 0.0) {
    // Vanishingly unlikely underflow; fall back to a uniform draw.
    std::fill(q.begin(), q.end(), 1.0 / static_cast<double>(clients));
    return q;
  }
  for (double& v : q) v /= sum;
  return q;
}

namespace {

// Largest-remainder rounding of n into buckets proportional to q.
std::vector<std::size_t> apportion(std::size_t n, std::span<const double> q) {
  std::vector<std::size_t> counts(q.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    double exact = q[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    remainders.push_back({exact - std::floor(exact), k});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) {
    counts[remainders[r % remainders.size()].second] += 1;
  }
  return counts;
}

std::vector<std::vector<std::size_t>> indices_by_label(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.n(); ++i) {
    by_label[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  return by_label;
}

void repair_empty_shards(std::vector<std::vector<std::size_t>>& shards) {
  for (auto& shard : shards) {
    if (!shard.empty()) continue;
    auto largest = std::max_element(
        shards.begin(), shards.end(),
        [](const auto& a, const auto& b) { return a.size() < b.size(); });
    if (largest->size() <= 1) {
      throw PartitionError("not enough samples to give every client one");
    }
    shard.push_back(largest->back());
    largest->pop_back();
  }
}

}  // namespace

std::vector<std::vector<std::size_t>> partition_indices(const Dataset& ds,
                                                        const PartitionSpec& spec) {
  spec.validate();
  ds.validate();
  if (ds.n() < spec.clients) {
    throw PartitionError("dataset has fewer samples than clients");
  }
  Rng rng(derive_stream(spec.seed, {0x9a47ULL}));
  std::vector<std::vector<std::size_t>> shards(spec.clients);

  switch (spec.scheme) {
    case PartitionScheme::iid: {
      std::vector<std::size_t> order(ds.n());
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      for (std::size_t i = 0; i < order.size(); ++i) {
        shards[i % spec.clients].push_back(order[i]);
      }
      break;
    }
    case PartitionScheme::dirichlet: {
      auto by_label = indices_by_label(ds);
      for (auto& pool : by_label) {
        rng.shuffle(pool);
        auto q = dirichlet_proportions(spec.beta, spec.clients, rng);
        auto counts = apportion(pool.size(), q);
        std::size_t cursor = 0;
        for (std::size_t k = 0; k < spec.clients; ++k) {
          for (std::size_t c = 0; c < counts[k]; ++c) {
            shards[k].push_back(pool[cursor++]);
          }
        }
      }
      break;
    }
    case PartitionScheme::label_subset: {
      std::size_t per_client = static_cast<std::size_t>(
          std::ceil(spec.label_fraction * ds.num_classes));
      per_client = std::min<std::size_t>(
          std::max<std::size_t>(per_client, 1), static_cast<std::size_t>(ds.num_classes));
      std::vector<std::vector<std::size_t>> holders(static_cast<std::size_t>(ds.num_classes));
      std::vector<std::size_t> all_labels(static_cast<std::size_t>(ds.num_classes));
      std::iota(all_labels.begin(), all_labels.end(), 0);
      for (std::size_t k = 0; k < spec.clients; ++k) {
        std::vector<std::size_t> pick = all_labels;
        rng.shuffle(pick);
        for (std::size_t j = 0; j < per_client; ++j) holders[pick[j]].push_back(k);
      }
      for (std::size_t label = 0; label < holders.size(); ++label) {
        if (holders[label].empty()) {
          throw PartitionError("label " + std::to_string(label) +
                               " is held by no client; reseed or raise the label fraction");
        }
      }
      auto by_label = indices_by_label(ds);
      for (std::size_t label = 0; label < by_label.size(); ++label) {
        auto& pool = by_label[label];
        rng.shuffle(pool);
        for (std::size_t i = 0; i < pool.size(); ++i) {
          shards[holders[label][i % holders[label].size()]].push_back(pool[i]);
        }
      }
      break;
    }
  }

  repair_empty_shards(shards);
  for (auto& shard : shards) std::sort(shard.begin(), shard.end());
  return shards;
}

std::vector<Dataset> partition(const Dataset& ds, const PartitionSpec& spec) {
  auto indices = partition_indices(ds, spec);
  std::vector<Dataset> shards;
  shards.reserve(indices.size());
  for (const auto& idx : indices) shards.push_back(ds.subset(idx));
  return shards;
}

namespace {

std::uint32_t read_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError(std::string("idx: truncated ") + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(std::istream& images, std::istream& labels) {
  std::uint32_t img_magic = read_be32(images, "image magic");
  if ((img_magic & 0xffffff00u) != 0x00000800u) {
    throw DataError("idx: bad image magic");
  }
  int dims = static_cast<int>(img_magic & 0xff);
  if (dims < 1 || dims > 3) throw DataError("idx: unsupported image rank");
  std::uint32_t n = read_be32(images, "image count");
  std::size_t per_sample = 1;
  for (int d = 1; d < dims; ++d) per_sample *= read_be32(images, "image dim");

  std::uint32_t lbl_magic = read_be32(labels, "label magic");
  if (lbl_magic != 0x00000801u) throw DataError("idx: bad label magic");
  std::uint32_t ln = read_be32(labels, "label count");
  if (ln != n) throw DataError("idx: image/label count mismatch");

  Dataset ds;
  ds.features = Mat(n, per_sample);
  ds.labels.resize(n);
  std::vector<unsigned char> row(per_sample);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!images.read(reinterpret_cast<char*>(row.data()),
                     static_cast<std::streamsize>(per_sample))) {
      throw DataError("idx: truncated image data");
    }
    for (std::size_t j = 0; j < per_sample; ++j) {
      ds.features(i, j) = static_cast<double>(row[j]) / 255.0;
    }
    char y;
    if (!labels.read(&y, 1)) throw DataError("idx: truncated label data");
    ds.labels[i] = static_cast<int>(static_cast<unsigned char>(y));
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::ifstream fi(images, std::ios::binary);
  if (!fi) throw IoError("cannot open " + images.string());
  std::ifstream fl(labels, std::ios::binary);
  if (!fl) throw IoError("cannot open " + labels.string());
  return load_idx(fi, fl);
}

Dataset load_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError("csv line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (values.size() < 2) {
      throw DataError("csv line " + std::to_string(lineno) + ": need features and a label");
    }
    double y = values.back();
    values.pop_back();
    if (y != std::floor(y) || y < 0) {
      throw DataError("csv line " + std::to_string(lineno) + ": label must be a non-negative integer");
    }
    if (!rows.empty() && values.size() != rows.front().size()) {
      throw DataError("csv line " + std::to_string(lineno) + ": inconsistent column count");
    }
    rows.push_back(std::move(values));
    labels.push_back(static_cast<int>(y));
  }
  if (rows.empty()) throw DataError("csv: no samples");
  Dataset ds;
  ds.features = Mat(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), &ds.features.data[i * ds.features.cols]);
  }
  ds.labels = std::move(labels);
  ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.validate();
  return ds;
}

Dataset load_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  return load_csv(in);
}

}  // namespace fedbif
