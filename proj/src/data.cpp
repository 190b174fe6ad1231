#include "scone/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numeric>
#include <ostream>
#include <sstream>

#include "scone/errors.hpp"

namespace scone {

void LabeledSet::validate() const {
  if (xs.size() != ys.size()) throw ShapeError("labeled set: |xs| != |ys|");
  for (const auto& x : xs)
    if (x.size() != dim()) throw ShapeError("labeled set: ragged feature vectors");
}

LabeledSet LabeledSet::subset(std::span<const std::size_t> indices) const {
  LabeledSet out;
  out.xs.reserve(indices.size());
  out.ys.reserve(indices.size());
  for (std::size_t i : indices) {
    out.xs.push_back(xs.at(i));
    out.ys.push_back(ys.at(i));
  }
  return out;
}

void WildConfig::validate() const {
  if (!(pi_c >= 0.0 && pi_c <= 1.0) || !(pi_s >= 0.0 && pi_s <= 1.0))
    throw ConfigError("wild mixture: pi_c and pi_s must lie in [0, 1]");
  if (pi_c + pi_s > 1.0 + 1e-12) throw ConfigError("wild mixture: pi_c + pi_s must not exceed 1");
}

const char* component_name(Component c) {
  switch (c) {
    case Component::Id: return "id";
    case Component::Covariate: return "cov";
    case Component::Semantic: return "sem";
  }
  return "?";
}

WildMixture::WildMixture(FeatureSet id_pool, LabeledSet cov_pool, FeatureSet sem_pool, WildConfig config,
                         std::uint64_t seed)
    : id_pool_(std::move(id_pool)),
      cov_pool_(std::move(cov_pool)),
      sem_pool_(std::move(sem_pool)),
      config_(config),
      rng_(seed) {
  config_.validate();
  cov_pool_.validate();
  const std::size_t d = dim();
  auto check = [d](const FeatureSet& xs) {
    for (const auto& x : xs)
      if (x.size() != d) throw ShapeError("wild mixture: pool dimensions disagree");
  };
  check(id_pool_);
  check(cov_pool_.xs);
  check(sem_pool_);
}

std::size_t WildMixture::dim() const {
  if (!id_pool_.empty()) return id_pool_.front().size();
  if (!cov_pool_.empty()) return cov_pool_.dim();
  if (!sem_pool_.empty()) return sem_pool_.front().size();
  return 0;
}

TaggedWildBatch WildMixture::sample(std::size_t batch_size) {
  const double p_id = 1.0 - config_.pi_c - config_.pi_s;
  if (p_id > 0.0 && id_pool_.empty()) throw ConfigError("wild mixture: ID pool is empty");
  if (config_.pi_c > 0.0 && cov_pool_.empty()) throw ConfigError("wild mixture: covariate pool is empty");
  if (config_.pi_s > 0.0 && sem_pool_.empty()) throw ConfigError("wild mixture: semantic pool is empty");

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TaggedWildBatch out;
  out.batch.xs.reserve(batch_size);
  out.provenance.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const double u = unit(rng_);
    Component c = Component::Id;
    if (u < config_.pi_c)
      c = Component::Covariate;
    else if (u < config_.pi_c + config_.pi_s)
      c = Component::Semantic;
    const FeatureSet& pool = c == Component::Id ? id_pool_ : c == Component::Covariate ? cov_pool_.xs : sem_pool_;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    out.batch.xs.push_back(pool[pick(rng_)]);
    out.provenance.push_back(c);
  }
  return out;
}

TaggedWildBatch sample_wild_batch(WildMixture& mix, std::size_t batch_size) { return mix.sample(batch_size); }

void SyntheticSpec::validate() const {
  if (id_means.size() < 2) throw ConfigError("synthetic spec: need at least 2 classes");
  if (!(id_std > 0.0) || !(sem_std > 0.0) || !(cov_extra_std >= 0.0))
    throw ConfigError("synthetic spec: standard deviations must be positive");
  if (n_per_class == 0) throw ConfigError("synthetic spec: n_per_class must be positive");
  const double min_gap = 5.0 * (id_std + sem_std);
  for (const auto& m : id_means) {
    if (std::hypot(m[0] - sem_mean[0], m[1] - sem_mean[1]) <= min_gap)
      throw ConfigError("synthetic spec: semantic mean is within 5*(id_std+sem_std) of an ID mean");
  }
}

SyntheticData gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SyntheticData out;
  const std::size_t k = spec.num_classes();
  const double cov_std = spec.id_std + spec.cov_extra_std;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      const double a = gauss(rng);
      const double b = gauss(rng);
      out.id.xs.push_back({spec.id_means[c][0] + spec.id_std * a, spec.id_means[c][1] + spec.id_std * b});
      out.id.ys.push_back(c);
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      const double a = gauss(rng);
      const double b = gauss(rng);
      out.cov.xs.push_back({spec.id_means[c][0] + spec.cov_shift[0] + cov_std * a,
                            spec.id_means[c][1] + spec.cov_shift[1] + cov_std * b});
      out.cov.ys.push_back(c);
    }
  }
  for (std::size_t i = 0; i < spec.n_per_class * k; ++i) {
    const double a = gauss(rng);
    const double b = gauss(rng);
    out.sem.push_back({spec.sem_mean[0] + spec.sem_std * a, spec.sem_mean[1] + spec.sem_std * b});
  }
  return out;
}

void write_synthetic_csv(std::ostream& out, const SyntheticData& data) {
  out << "x1,x2,label,role\n" << std::setprecision(17);
  for (std::size_t i = 0; i < data.id.size(); ++i)
    out << data.id.xs[i][0] << ',' << data.id.xs[i][1] << ',' << data.id.ys[i] << ",id\n";
  for (std::size_t i = 0; i < data.cov.size(); ++i)
    out << data.cov.xs[i][0] << ',' << data.cov.xs[i][1] << ',' << data.cov.ys[i] << ",cov\n";
  for (const auto& x : data.sem) out << x[0] << ',' << x[1] << ",,sem\n";
}

std::size_t IdxFile::item_size() const {
  std::size_t n = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) n *= dims[i];
  return n;
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxFile parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("idx: file shorter than the magic number");
  IdxFile f;
  f.magic = read_be32(bytes, 0);
  if (f.magic != kIdxLabelMagic && f.magic != kIdxImageMagic) {
    std::ostringstream msg;
    msg << "idx: bad magic 0x" << std::hex << std::setw(8) << std::setfill('0') << f.magic;
    throw FormatError(msg.str());
  }
  // The low byte of the magic is the number of dimensions.
  const std::size_t ndims = f.magic & 0xFF;
  if (bytes.size() < 4 + 4 * ndims) throw FormatError("idx: truncated header");
  std::size_t expected = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    f.dims.push_back(read_be32(bytes, 4 + 4 * i));
    expected *= f.dims.back();
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() - header != expected)
    throw FormatError("idx: payload has " + std::to_string(bytes.size() - header) + " bytes, dims imply " +
                      std::to_string(expected));
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return f;
}

IdxFile load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("idx: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

std::vector<std::uint8_t> encode_idx(const IdxFile& file) {
  std::vector<std::uint8_t> out;
  write_be32(out, file.magic);
  for (std::uint32_t d : file.dims) write_be32(out, d);
  out.insert(out.end(), file.payload.begin(), file.payload.end());
  return out;
}

FeatureSet idx_images(const IdxFile& file, std::size_t limit) {
  if (file.magic != kIdxImageMagic) throw FormatError("idx: not an image file");
  const std::size_t n = limit == 0 ? file.item_count() : std::min(limit, file.item_count());
  const std::size_t sz = file.item_size();
  FeatureSet out(n, Vector(sz));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < sz; ++j) out[i][j] = file.payload[i * sz + j] / 255.0;
  return out;
}

std::vector<std::size_t> idx_labels(const IdxFile& file, std::size_t limit) {
  if (file.magic != kIdxLabelMagic) throw FormatError("idx: not a label file");
  const std::size_t n = limit == 0 ? file.item_count() : std::min(limit, file.item_count());
  return {file.payload.begin(), file.payload.begin() + static_cast<std::ptrdiff_t>(n)};
}

FeatureSet corrupt_gaussian(const FeatureSet& images, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  FeatureSet out = images;
  for (auto& img : out)
    for (double& p : img) p = std::clamp(p + noise(rng), 0.0, 1.0);
  return out;
}

std::vector<std::vector<std::size_t>> split(std::size_t n, std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError("split: no fractions given");
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ConfigError("split: negative fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> blocks;
  double cum = 0.0;
  std::size_t begin = 0;
  for (std::size_t b = 0; b < fractions.size(); ++b) {
    cum += fractions[b];
    std::size_t end = b + 1 == fractions.size() ? n : static_cast<std::size_t>(std::llround(cum * n));
    end = std::clamp(end, begin, n);
    blocks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
    begin = end;
  }
  return blocks;
}

std::vector<LabeledSet> split(const LabeledSet& set, std::span<const double> fractions, std::uint64_t seed) {
  std::vector<LabeledSet> out;
  for (const auto& block : split(set.size(), fractions, seed)) out.push_back(set.subset(block));
  return out;
}

std::vector<FeatureSet> split(const FeatureSet& set, std::span<const double> fractions, std::uint64_t seed) {
  std::vector<FeatureSet> out;
  for (const auto& block : split(set.size(), fractions, seed)) {
    FeatureSet part;
    part.reserve(block.size());
    for (std::size_t i : block) part.push_back(set[i]);
    out.push_back(std::move(part));
  }
  return out;
}

}  // namespace scone
