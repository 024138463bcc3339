#include "pfl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pfl/rng.hpp"

namespace pfl {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw DataError("truncated IDX header in " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                 static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

void shuffle(std::vector<std::size_t>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

void LabeledDataset::validate() const {
  if (features.size() != labels.size() * num_features)
    throw DataError("feature rows do not match label count");
  for (auto l : labels)
    if (l >= num_classes) throw DataError("label " + std::to_string(l) + " out of range");
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.num_features = num_features;
  out.num_classes = num_classes;
  out.features.reserve(indices.size() * num_features);
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    if (i >= size()) throw DataError("subset index out of range");
    auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  auto img = open_binary(images_path);
  if (read_be32(img, images_path) != kImageMagic) throw DataError("bad image magic in " + images_path.string());
  const std::uint32_t n_images = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);

  auto lab = open_binary(labels_path);
  if (read_be32(lab, labels_path) != kLabelMagic) throw DataError("bad label magic in " + labels_path.string());
  const std::uint32_t n_labels = read_be32(lab, labels_path);
  if (n_images != n_labels)
    throw DataError("count mismatch: " + std::to_string(n_images) + " images vs " + std::to_string(n_labels) +
                    " labels");

  LabeledDataset ds;
  ds.num_features = std::size_t{rows} * cols;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n_images) * ds.num_features);
  if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size())))
    throw DataError("truncated image data in " + images_path.string());
  std::vector<unsigned char> raw_labels(n_labels);
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(raw_labels.size())))
    throw DataError("truncated label data in " + labels_path.string());

  ds.features.resize(pixels.size());
  std::transform(pixels.begin(), pixels.end(), ds.features.begin(), [](unsigned char p) { return p / 255.0; });
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  ds.validate();
  if (ds.num_classes > 256) throw DataError("IDX labels are single bytes");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw DataError("cannot write IDX files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(ds.size()));
  write_be32(img, 1);
  write_be32(img, static_cast<std::uint32_t>(ds.num_features));
  for (double v : ds.features) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (auto l : ds.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
  if (!img || !lab) throw DataError("write failed");
}

std::vector<std::vector<std::size_t>> partition_indices(std::span<const std::uint32_t> labels,
                                                        const PartitionSpec& spec) {
  const std::size_t n = labels.size();
  const std::size_t clients = spec.n_clients;
  if (clients == 0) throw DataError("partition needs at least one client");
  if (clients > n) throw DataError("more clients (" + std::to_string(clients) + ") than samples (" +
                                   std::to_string(n) + ")");
  if (!(spec.similarity >= 0.0 && spec.similarity <= 100.0)) throw DataError("similarity must be in [0, 100]");

  std::vector<std::size_t> shard_size(clients, n / clients);
  for (std::size_t i = 0; i < n % clients; ++i) ++shard_size[i];
  std::size_t iid_total = 0;
  for (std::size_t i = 0; i < clients; ++i)
    iid_total += std::min<std::size_t>(
        shard_size[i], static_cast<std::size_t>(std::llround(spec.similarity / 100.0 * shard_size[i])));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng({.seed = spec.seed, .purpose = RngPurpose::partition});
  shuffle(order, rng);

  const auto by_label = [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; };
  std::vector<std::size_t> iid_pool(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(iid_total));
  std::vector<std::size_t> sorted_pool(order.begin() + static_cast<std::ptrdiff_t>(iid_total), order.end());
  // The i.i.d. pool is dealt round-robin in label order (shuffled within each
  // label), so every client's i.i.d. part is a stratified sample: per-label
  // counts within one of proportional.
  std::stable_sort(iid_pool.begin(), iid_pool.end(), by_label);
  std::sort(sorted_pool.begin(), sorted_pool.end(), [&](std::size_t a, std::size_t b) {
    return labels[a] != labels[b] ? labels[a] < labels[b] : a < b;
  });

  std::vector<std::vector<std::size_t>> shards(clients);
  for (std::size_t j = 0; j < iid_total; ++j) shards[j % clients].push_back(iid_pool[j]);
  std::size_t sorted_at = 0;
  for (std::size_t i = 0; i < clients; ++i) {
    auto& shard = shards[i];
    // shard_size[i] >= shards[i].size(): both are floor/ceil splits and iid_total <= n.
    const std::size_t rest = shard_size[i] - shard.size();
    shard.insert(shard.end(), sorted_pool.begin() + static_cast<std::ptrdiff_t>(sorted_at),
                 sorted_pool.begin() + static_cast<std::ptrdiff_t>(sorted_at + rest));
    sorted_at += rest;
  }
  return shards;
}

std::vector<LabeledDataset> partition_by_similarity(const LabeledDataset& ds, const PartitionSpec& spec) {
  std::vector<LabeledDataset> out;
  for (const auto& idx : partition_indices(ds.labels, spec)) out.push_back(ds.subset(idx));
  return out;
}

std::string label_histogram_csv(const std::vector<LabeledDataset>& shards) {
  std::string out = "client,label,count\n";
  for (std::size_t c = 0; c < shards.size(); ++c) {
    std::vector<std::size_t> counts(shards[c].num_classes, 0);
    for (auto l : shards[c].labels) ++counts[l];
    for (std::size_t l = 0; l < counts.size(); ++l)
      out += std::to_string(c) + ',' + std::to_string(l) + ',' + std::to_string(counts[l]) + '\n';
  }
  return out;
}

LabeledDataset make_synthetic_dataset(SyntheticDataKind kind, const BlobParams& p, std::uint64_t seed,
                                      std::uint64_t sample_stream) {
  if (kind != SyntheticDataKind::blobs) throw DataError("unknown synthetic dataset kind");
  if (p.num_samples == 0) throw DataError("synthetic dataset needs at least one sample");
  if (p.num_classes == 0 || p.num_features == 0) throw DataError("synthetic dataset needs classes and features");

  std::vector<double> means(p.num_classes * p.num_features);
  RngStream mean_rng({.seed = seed, .purpose = RngPurpose::init});
  mean_rng.fill_gaussian(means, p.separation);

  LabeledDataset ds;
  ds.num_features = p.num_features;
  ds.num_classes = p.num_classes;
  ds.features.resize(p.num_samples * p.num_features);
  ds.labels.resize(p.num_samples);

  std::vector<std::size_t> order(p.num_samples);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng({.seed = seed, .step = sample_stream + 1, .purpose = RngPurpose::init});
  shuffle(order, rng);
  for (std::size_t i = 0; i < p.num_samples; ++i) {
    const auto label = static_cast<std::uint32_t>(order[i] % p.num_classes);
    ds.labels[i] = label;
    for (std::size_t f = 0; f < p.num_features; ++f)
      ds.features[i * p.num_features + f] = means[label * p.num_features + f] + rng.gaussian(p.noise);
  }
  return ds;
}

void scale_to_unit_range(std::span<LabeledDataset* const> datasets) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto* ds : datasets)
    for (double v : ds->features) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) return;
  for (auto* ds : datasets)
    for (double& v : ds->features) v = (v - lo) / (hi - lo);
}

}  // namespace pfl
