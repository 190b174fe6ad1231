#include "scone/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "scone/errors.hpp"

namespace scone {

double threshold_at_id_quantile(std::span<const double> id_energies, double keep) {
  if (id_energies.empty()) throw std::invalid_argument("threshold_at_id_quantile: empty score list");
  if (!(keep > 0.0 && keep <= 1.0)) throw std::invalid_argument("threshold_at_id_quantile: keep must lie in (0, 1]");
  std::vector<double> sorted(id_energies.begin(), id_energies.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // Slack absorbs keep*n landing a hair above an integer (0.95 * 100).
  auto k = static_cast<std::size_t>(std::ceil(keep * n - 1e-9));
  k = std::clamp<std::size_t>(k, 1, sorted.size());
  return sorted[k - 1];
}

double fpr_at_tpr(std::span<const double> id_energies, std::span<const double> ood_energies, double tpr) {
  if (ood_energies.empty()) throw std::invalid_argument("fpr_at_tpr: empty OOD score list");
  const double t = threshold_at_id_quantile(id_energies, tpr);
  const auto in = std::count_if(ood_energies.begin(), ood_energies.end(), [t](double e) { return e <= t; });
  return static_cast<double>(in) / static_cast<double>(ood_energies.size());
}

double auroc_pairwise(std::span<const double> id, std::span<const double> ood) {
  if (id.empty() || ood.empty()) throw std::invalid_argument("auroc: empty score list");
  double wins = 0.0;
  for (double o : ood)
    for (double i : id) wins += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

double auroc_rank_sum(std::span<const double> id, std::span<const double> ood) {
  if (id.empty() || ood.empty()) throw std::invalid_argument("auroc: empty score list");
  struct Entry {
    double score;
    bool is_ood;
  };
  std::vector<Entry> all;
  all.reserve(id.size() + ood.size());
  for (double v : id) all.push_back({v, false});
  for (double v : ood) all.push_back({v, true});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Midranks for ties; twice the rank keeps the sum in exact integers.
  long double twice_rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t ood_in_group = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      if (all[j].is_ood) ++ood_in_group;
      ++j;
    }
    // ranks i+1..j, midrank (i+1+j)/2
    twice_rank_sum += static_cast<long double>(ood_in_group) * static_cast<long double>(i + 1 + j);
    i = j;
  }
  const long double m = static_cast<long double>(ood.size());
  const long double n = static_cast<long double>(id.size());
  const long double u = twice_rank_sum / 2 - m * (m + 1) / 2;
  return static_cast<double>(u / (m * n));
}

double auroc(std::span<const double> id, std::span<const double> ood) {
  if (id.size() * ood.size() <= 1'000'000) return auroc_pairwise(id, ood);
  return auroc_rank_sum(id, ood);
}

std::vector<double> energies(const MlpModel& model, const FeatureSet& xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(energy(logits(model, x)));
  return out;
}

double accuracy(const MlpModel& model, const LabeledSet& set) {
  if (set.empty()) throw std::invalid_argument("accuracy: empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (predict(logits(model, set.xs[i])) == set.ys[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(set.size());
}

double out_fraction(const MlpModel& model, const FeatureSet& wild_val) {
  if (wild_val.empty()) throw std::invalid_argument("out_fraction: empty set");
  std::size_t out = 0;
  for (const auto& x : wild_val)
    if (detect(energy(logits(model, x))) == Decision::Out) ++out;
  return static_cast<double>(out) / static_cast<double>(wild_val.size());
}

MetricsReport evaluate(const MlpModel& model, const EvalSets& sets, double tpr) {
  MetricsReport r;
  r.id_acc = accuracy(model, sets.id_test);
  r.ood_acc = accuracy(model, sets.cov_test);
  const auto id_e = energies(model, sets.id_test.xs);
  const auto sem_e = energies(model, sets.sem_test);
  r.threshold = threshold_at_id_quantile(id_e, tpr);
  r.fpr95 = fpr_at_tpr(id_e, sem_e, tpr);
  r.auroc = auroc(id_e, sem_e);
  r.out_frac = sets.wild_val.empty() ? 0.0 : out_fraction(model, sets.wild_val);
  return r;
}

void MarginGrid::validate() const {
  if (etas.empty()) throw ConfigError("margin grid: no eta values");
  for (std::size_t i = 0; i < etas.size(); ++i) {
    if (!(etas[i] <= 0.0)) throw ConfigError("margin grid: eta values must be <= 0");
    if (i > 0 && !(etas[i] < etas[i - 1])) throw ConfigError("margin grid: eta values must be strictly decreasing");
  }
  if (!out_fracs.empty() && out_fracs.size() != etas.size())
    throw ConfigError("margin grid: out_frac count does not match eta count");
}

std::size_t select_margin_index(const MarginGrid& grid) {
  grid.validate();
  if (grid.out_fracs.size() != grid.etas.size()) throw ConfigError("margin grid: out_frac values missing");
  std::size_t best = 0;
  double best_drop = 0.0;
  for (std::size_t i = 1; i < grid.etas.size(); ++i) {
    const double drop = grid.out_fracs[i - 1] - grid.out_fracs[i];
    if (drop > best_drop) {
      best_drop = drop;
      best = i;
    }
  }
  return best_drop >= kMinPhaseDrop ? best : 0;
}

double select_margin(const MarginGrid& grid) { return grid.etas[select_margin_index(grid)]; }

void write_metrics_csv_header(std::ostream& out) {
  out << "run_id,eta,pi_c,pi_s,id_acc,ood_acc,fpr95,auroc,out_frac,threshold\n";
}

void write_metrics_csv_row(std::ostream& out, const MetricsRow& row) {
  const auto& r = row.report;
  std::ostringstream s;
  s << std::setprecision(17) << row.run_id << ',' << row.eta << ',' << row.pi_c << ',' << row.pi_s << ',' << r.id_acc
    << ',' << r.ood_acc << ',' << r.fpr95 << ',' << r.auroc << ',' << r.out_frac << ',' << r.threshold << '\n';
  out << s.str();
}

std::string metrics_json(const MetricsRow& row) {
  const auto& r = row.report;
  nlohmann::ordered_json j;
  j["run_id"] = row.run_id;
  j["eta"] = row.eta;
  j["pi_c"] = row.pi_c;
  j["pi_s"] = row.pi_s;
  j["id_acc"] = r.id_acc;
  j["ood_acc"] = r.ood_acc;
  j["fpr95"] = r.fpr95;
  j["auroc"] = r.auroc;
  j["out_frac"] = r.out_frac;
  j["threshold"] = r.threshold;
  return j.dump(2);
}

EnergyHistogram energy_histogram(std::span<const double> id, std::span<const double> cov, std::span<const double> sem,
                                 std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("energy_histogram: need at least one bin");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (auto s : {id, cov, sem})
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  if (hi <= lo) hi = lo + 1.0;
  EnergyHistogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  h.id.assign(bins, 0);
  h.cov.assign(bins, 0);
  h.sem.assign(bins, 0);
  auto fill = [&](std::span<const double> values, std::vector<std::size_t>& counts) {
    for (double v : values) {
      auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
      counts[std::min(b, bins - 1)]++;
    }
  };
  fill(id, h.id);
  fill(cov, h.cov);
  fill(sem, h.sem);
  return h;
}

void write_histogram_csv(std::ostream& out, const EnergyHistogram& h) {
  out << "bin_left,bin_right,count_id,count_cov,count_sem\n" << std::setprecision(17);
  for (std::size_t b = 0; b < h.id.size(); ++b)
    out << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.id[b] << ',' << h.cov[b] << ',' << h.sem[b] << '\n';
}

}  // namespace scone
