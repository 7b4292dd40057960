#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <vector>

#include "fedbif/matrix.hpp"
#include "fedbif/rng.hpp"

namespace fedbif {

struct Dataset {
  Mat features;             // n x d
  std::vector<int> labels;  // values in [0, num_classes)
  int num_classes = 0;

  std::size_t n() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
  void validate() const;

  Dataset subset(std::span<const std::size_t> indices) const;
};

struct BlobSpec {
  std::size_t n_train = 1000;
  std::size_t n_test = 2000;
  std::size_t dim = 32;
  int classes = 10;
  double separation = 1.0;  // centroid scale relative to unit cluster noise
  std::uint64_t seed = 0;

  void validate() const;
};

struct BlobData {
  Dataset train;
  Dataset test;  // fixed held-out split drawn from the same centroids
  Mat centroids;  // classes x dim
};

/// Gaussian clusters with class-balanced labels (sample j gets class
/// j mod C). Unit-variance noise around centroids drawn from
/// separation * Normal(0, I). Deterministic under the seed.
BlobData make_blobs(const BlobSpec& spec);

enum class PartitionScheme { iid, dirichlet, label_subset };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::iid;
  std::size_t clients = 8;
  double beta = 0.3;            // dirichlet concentration
  double label_fraction = 0.3;  // fraction of labels each client holds
  std::uint64_t seed = 0;

  void validate() const;
};

/// Client shard indices into the dataset: disjoint, covering every sample.
/// Clients that would end up empty receive one sample moved from the
/// largest shard.
std::vector<std::vector<std::size_t>> partition_indices(const Dataset& ds,
                                                        const PartitionSpec& spec);

/// Materialized shards.
std::vector<Dataset> partition(const Dataset& ds, const PartitionSpec& spec);

/// Proportion vector over `clients` drawn from Dirichlet(beta); sums to 1.
std::vector<double> dirichlet_proportions(double beta, std::size_t clients, Rng& rng);

/// IDX-format loader (the classic big-endian image/label container).
/// Image values are scaled to [0,1]; each image is flattened row-major.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset load_idx(std::istream& images, std::istream& labels);

/// CSV loader: one sample per line, feature columns followed by one integer
/// label column. Lines starting with '#' are skipped.
Dataset load_csv(const std::filesystem::path& file);
Dataset load_csv(std::istream& in);

}  // namespace fedbif
