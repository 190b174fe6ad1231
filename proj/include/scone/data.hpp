#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace scone {

using Vector = std::vector<double>;
using FeatureSet = std::vector<Vector>;

/// Labeled samples; labels are 0-based class indices.
struct LabeledSet {
  FeatureSet xs;
  std::vector<std::size_t> ys;

  std::size_t size() const { return xs.size(); }
  bool empty() const { return xs.empty(); }
  std::size_t dim() const { return xs.empty() ? 0 : xs.front().size(); }
  void validate() const;

  LabeledSet subset(std::span<const std::size_t> indices) const;
};

// ---------------------------------------------------------------------------
// Wild mixture

struct WildConfig {
  double pi_c = 0.5;
  double pi_s = 0.1;

  void validate() const;
};

enum class Component : std::uint8_t { Id, Covariate, Semantic };

const char* component_name(Component c);

/// The only view of wild data the training objective accepts: features, no
/// labels, no provenance.
struct WildBatch {
  FeatureSet xs;

  std::size_t size() const { return xs.size(); }
};

/// A wild batch together with the hidden component of every sample. Used by
/// evaluation code only.
struct TaggedWildBatch {
  WildBatch batch;
  std::vector<Component> provenance;
};

/// Sampler over (1 - pi_c - pi_s) * ID + pi_c * covariate + pi_s * semantic.
class WildMixture {
 public:
  WildMixture(FeatureSet id_pool, LabeledSet cov_pool, FeatureSet sem_pool, WildConfig config,
              std::uint64_t seed);

  /// i.i.d. component choice per sample, then a uniform draw from that pool.
  /// Throws ConfigError if a component with positive weight has an empty pool.
  TaggedWildBatch sample(std::size_t batch_size);

  const WildConfig& config() const { return config_; }
  const FeatureSet& id_pool() const { return id_pool_; }
  const LabeledSet& cov_pool() const { return cov_pool_; }
  const FeatureSet& sem_pool() const { return sem_pool_; }

  std::size_t dim() const;

 private:
  FeatureSet id_pool_;
  LabeledSet cov_pool_;
  FeatureSet sem_pool_;
  WildConfig config_;
  std::mt19937_64 rng_;
};

TaggedWildBatch sample_wild_batch(WildMixture& mix, std::size_t batch_size);

// ---------------------------------------------------------------------------
// Synthetic Gaussian shifts

struct SyntheticSpec {
  std::vector<std::array<double, 2>> id_means{{2.0, 0.0}, {-2.0, 0.0}};
  double id_std = 0.5;
  std::array<double, 2> cov_shift{0.0, 2.5};
  double cov_extra_std = 0.1;
  std::array<double, 2> sem_mean{0.0, -8.0};
  double sem_std = 0.5;
  std::size_t n_per_class = 500;

  /// Throws ConfigError; requires the semantic cluster to sit more than
  /// 5 * (id_std + sem_std) from every ID mean.
  void validate() const;
  std::size_t num_classes() const { return id_means.size(); }
};

struct SyntheticData {
  LabeledSet id;
  LabeledSet cov;
  FeatureSet sem;
};

/// ID clusters N(mean_k, id_std^2 I); covariate clusters translated by
/// cov_shift with std id_std + cov_extra_std; one semantic cluster with
/// n_per_class * K samples. Deterministic per seed.
SyntheticData gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// CSV `x1,x2,label,role`; semantic rows leave the label empty.
void write_synthetic_csv(std::ostream& out, const SyntheticData& data);

// ---------------------------------------------------------------------------
// IDX files

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t item_count() const { return dims.empty() ? 0 : dims.front(); }
  std::size_t item_size() const;
};

/// Big-endian header, then raw bytes. Throws FormatError on a bad magic or a
/// payload whose length differs from the product of dims.
IdxFile parse_idx(std::span<const std::uint8_t> bytes);
IdxFile load_idx(const std::string& path);
std::vector<std::uint8_t> encode_idx(const IdxFile& file);

/// Image items scaled to [0, 1]; at most `limit` items (0 = all).
FeatureSet idx_images(const IdxFile& file, std::size_t limit = 0);
std::vector<std::size_t> idx_labels(const IdxFile& file, std::size_t limit = 0);

/// x + N(0, sigma^2) clipped to [0, 1], deterministic per seed.
FeatureSet corrupt_gaussian(const FeatureSet& images, double sigma, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Partitions

/// Seeded shuffle of 0..n-1 cut into consecutive blocks. Block boundaries are
/// round(n * cumulative fraction); the last block ends at n.
std::vector<std::vector<std::size_t>> split(std::size_t n, std::span<const double> fractions,
                                            std::uint64_t seed);

std::vector<LabeledSet> split(const LabeledSet& set, std::span<const double> fractions, std::uint64_t seed);
std::vector<FeatureSet> split(const FeatureSet& set, std::span<const double> fractions, std::uint64_t seed);

}  // namespace scone
