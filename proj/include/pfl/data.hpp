#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfl {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major feature matrix with one class label per row.
struct LabeledDataset {
  std::size_t num_features = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * num_features, num_features};
  }

  /// Throws DataError if shapes disagree or a label is out of range.
  void validate() const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (magic 0x00000801).
/// Pixels are scaled to [0, 1]; num_classes is max label + 1.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes features (expected in [0, 1]) as an n x 1 x F ubyte IDX image file plus labels.
void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

struct PartitionSpec {
  std::size_t n_clients = 1;
  double similarity = 100.0;  // percent of each shard drawn from the shuffled i.i.d. pool
  std::uint64_t seed = 0;
};

/// Index form of the similarity partition. Shard sizes differ by at most one, and
/// client order follows the label-sorted pool, so low client ids see low labels.
std::vector<std::vector<std::size_t>> partition_indices(std::span<const std::uint32_t> labels,
                                                        const PartitionSpec& spec);

std::vector<LabeledDataset> partition_by_similarity(const LabeledDataset& ds, const PartitionSpec& spec);

/// `client,label,count` rows for every client and every label in [0, num_classes).
std::string label_histogram_csv(const std::vector<LabeledDataset>& shards);

enum class SyntheticDataKind { blobs };

struct BlobParams {
  std::size_t num_classes = 2;
  std::size_t num_features = 2;
  std::size_t num_samples = 100;
  double separation = 3.0;  // std of the class-mean coordinates
  double noise = 1.0;       // within-class std per coordinate
};

/// Gaussian blobs with balanced labels. Means depend only on seed, so two calls
/// differing only in num_samples share class centers.
LabeledDataset make_synthetic_dataset(SyntheticDataKind kind, const BlobParams& params, std::uint64_t seed,
                                      std::uint64_t sample_stream = 0);

/// Min-max scales features of all given datasets jointly into [0, 1].
void scale_to_unit_range(std::span<LabeledDataset* const> datasets);

}  // namespace pfl
