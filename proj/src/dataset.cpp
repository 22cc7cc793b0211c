#include "reprompt/dataset.hpp"

#include <fstream>
#include <stdexcept>

#include "reprompt/io.hpp"
#include "reprompt/ops.hpp"
#include "reprompt/rng.hpp"

namespace reprompt {

Tensor Dataset::feature_row(std::size_t i) const {
  std::size_t d = dim();
  Tensor row({d});
  std::copy(features.data() + i * d, features.data() + (i + 1) * d, row.data());
  return row;
}

namespace {
Tensor random_unit(RngStream& rng, std::size_t d) {
  Tensor v = rng.normal_tensor({d}, 1.0);
  return ops::l2_normalize(v);
}

void fill_split(Dataset& out, const std::vector<Tensor>& means, std::uint32_t per_class,
                double sigma, std::size_t d, RngStream& rng) {
  std::uint32_t classes = static_cast<std::uint32_t>(means.size());
  out.class_count = classes;
  out.features = Tensor({static_cast<std::size_t>(classes) * per_class, d});
  out.labels.resize(static_cast<std::size_t>(classes) * per_class);
  std::size_t row = 0;
  for (std::uint32_t c = 0; c < classes; ++c) {
    for (std::uint32_t s = 0; s < per_class; ++s, ++row) {
      Tensor v({d});
      for (std::size_t i = 0; i < d; ++i) v[i] = means[c][i] + sigma * rng.next_normal();
      Tensor unit = ops::l2_normalize(v);
      std::copy(unit.data(), unit.data() + d, out.features.data() + row * d);
      out.labels[row] = c;
    }
  }
}
}  // namespace

SyntheticData gen_synthetic(const DatasetSpec& spec) {
  if (spec.dim < 2) throw std::invalid_argument("gen_synthetic: dim must be >= 2");
  if (spec.classes < 1 || spec.shots < 1 || spec.test_per_class < 1) {
    throw std::invalid_argument("gen_synthetic: counts must be positive");
  }
  if (spec.sigma < 0.0) throw std::invalid_argument("gen_synthetic: sigma must be >= 0");

  RngStream mean_rng(spec.seed, 1);
  std::vector<Tensor> means;
  means.reserve(spec.classes);
  for (std::uint32_t c = 0; c < spec.classes; ++c) means.push_back(random_unit(mean_rng, spec.dim));

  std::vector<Tensor> test_means = means;
  if (spec.shift != 0.0) {
    RngStream shift_rng(spec.seed, 2);
    for (std::uint32_t c = 0; c < spec.classes; ++c) {
      Tensor dir = random_unit(shift_rng, spec.dim);
      for (std::size_t i = 0; i < spec.dim; ++i) test_means[c][i] += spec.shift * dir[i];
    }
  }

  SyntheticData data;
  RngStream train_rng(spec.seed, 3);
  fill_split(data.train, means, spec.shots, spec.sigma, spec.dim, train_rng);
  RngStream test_rng(spec.seed, 4);
  fill_split(data.test, test_means, spec.test_per_class, spec.sigma, spec.dim, test_rng);
  return data;
}

void save_embeddings(const std::filesystem::path& path, const Tensor& features) {
  if (features.rank() != 2) throw std::invalid_argument("save_embeddings: features must be n x d");
  io::atomic_write(path, [&](std::ostream& os) {
    io::write_magic(os, "RPEM");
    io::write_u32(os, 1);
    io::write_u32(os, static_cast<std::uint32_t>(features.extent(0)));
    io::write_u32(os, static_cast<std::uint32_t>(features.extent(1)));
    io::write_f32_array(os, features.data(), features.size());
  });
}

Tensor load_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open embeddings: " + path.string());
  io::expect_magic(is, "RPEM", "embeddings");
  io::expect_version(is, 1, "embeddings");
  std::uint32_t count = io::read_u32(is, "count");
  std::uint32_t dim = io::read_u32(is, "dim");
  if (count == 0 || dim == 0) throw std::runtime_error("embeddings: empty file");
  Tensor features({count, dim});
  io::read_f32_array(is, features.data(), features.size(), "embedding rows");
  return features;
}

void save_labels(const std::filesystem::path& path, const std::vector<std::uint32_t>& labels,
                 std::uint32_t class_count) {
  io::atomic_write(path, [&](std::ostream& os) {
    io::write_magic(os, "RPLB");
    io::write_u32(os, 1);
    io::write_u32(os, static_cast<std::uint32_t>(labels.size()));
    io::write_u32(os, class_count);
    for (std::uint32_t y : labels) io::write_u32(os, y);
  });
}

std::pair<std::vector<std::uint32_t>, std::uint32_t> load_labels(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open labels: " + path.string());
  io::expect_magic(is, "RPLB", "labels");
  io::expect_version(is, 1, "labels");
  std::uint32_t count = io::read_u32(is, "count");
  std::uint32_t class_count = io::read_u32(is, "class count");
  std::vector<std::uint32_t> labels(count);
  for (std::uint32_t i = 0; i < count; ++i) labels[i] = io::read_u32(is, "label");
  return {std::move(labels), class_count};
}

Dataset ingest_embeddings(const std::filesystem::path& features_path,
                          const std::filesystem::path& labels_path) {
  Dataset ds;
  ds.features = load_embeddings(features_path);
  auto [labels, class_count] = load_labels(labels_path);
  ds.labels = std::move(labels);
  ds.class_count = class_count;
  if (ds.labels.size() != ds.features.extent(0)) {
    throw std::runtime_error("ingest: feature row count does not match label count");
  }
  if (class_count == 0) throw std::runtime_error("ingest: class count must be positive");
  std::vector<bool> seen(class_count, false);
  for (std::uint32_t y : ds.labels) {
    if (y >= class_count) throw std::runtime_error("ingest: label value out of range");
    seen[y] = true;
  }
  for (std::uint32_t c = 0; c < class_count; ++c) {
    if (!seen[c]) {
      throw std::runtime_error("ingest: labels not contiguous, class " + std::to_string(c) + " missing");
    }
  }
  return ds;
}

VarianceReport intra_class_variance(const Tensor& features,
                                    const std::vector<std::uint32_t>& labels,
                                    std::uint32_t class_count) {
  if (features.rank() != 2) throw std::invalid_argument("intra_class_variance: features must be n x d");
  std::size_t n = features.extent(0), d = features.extent(1);
  if (labels.size() != n) throw std::invalid_argument("intra_class_variance: label count mismatch");

  std::vector<std::size_t> counts(class_count, 0);
  std::vector<Tensor> means(class_count, Tensor({d}));
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t y = labels[i];
    if (y >= class_count) throw std::invalid_argument("intra_class_variance: label out of range");
    ++counts[y];
    for (std::size_t j = 0; j < d; ++j) means[y][j] += features[i * d + j];
  }
  for (std::uint32_t c = 0; c < class_count; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("intra_class_variance: empty class " + std::to_string(c));
    for (std::size_t j = 0; j < d; ++j) means[c][j] /= static_cast<double>(counts[c]);
  }

  VarianceReport report;
  report.per_class.assign(class_count, Tensor({d}));
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t y = labels[i];
    for (std::size_t j = 0; j < d; ++j) {
      double dev = features[i * d + j] - means[y][j];
      report.per_class[y][j] += dev * dev;
    }
  }
  report.mean_over_classes = Tensor({d});
  for (std::uint32_t c = 0; c < class_count; ++c) {
    for (std::size_t j = 0; j < d; ++j) {
      report.per_class[c][j] /= static_cast<double>(counts[c]);
      report.mean_over_classes[j] += report.per_class[c][j] / static_cast<double>(class_count);
    }
  }
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += report.mean_over_classes[j];
  report.scalar = s / static_cast<double>(d);
  return report;
}

}  // namespace reprompt
