#include "scone/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "scone/errors.hpp"
#include "scone/gradcheck.hpp"

namespace scone {

namespace {

// Offsets that keep the independent draws of one experiment apart.
constexpr std::uint64_t kTestOffset = 1000;
constexpr std::uint64_t kValOffset = 2000;
constexpr std::uint64_t kValMixOffset = 3;
constexpr std::uint64_t kWildMixOffset = 7;
constexpr std::uint64_t kSplitOffset = 11;
constexpr std::uint64_t kCorruptOffset = 13;

const double kNaN = std::numeric_limits<double>::quiet_NaN();

MetricsReport nan_report() { return {kNaN, kNaN, kNaN, kNaN, kNaN, kNaN}; }

std::vector<std::size_t> model_dims(const RunConfig& cfg, const ExperimentData& data) {
  std::vector<std::size_t> dims{data.input_dim()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(data.num_classes);
  return dims;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream o;
  o << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return o.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

nlohmann::ordered_json report_json(const MetricsRow& row) { return nlohmann::ordered_json::parse(metrics_json(row)); }

MetricsRow make_row(const RunConfig& cfg, const RunOutcome& run) {
  return {metrics_run_id(cfg, run.eta), run.eta, cfg.wild.pi_c, cfg.wild.pi_s, run.report};
}

}  // namespace

ExperimentData prepare_synthetic(const RunConfig& cfg) {
  const SyntheticData train = gen_synthetic(cfg.synth, cfg.seed);
  const SyntheticData test = gen_synthetic(cfg.synth, cfg.seed + kTestOffset);
  const SyntheticData val = gen_synthetic(cfg.synth, cfg.seed + kValOffset);

  ExperimentData d;
  const double halves[] = {0.5, 0.5};
  auto parts = split(train.id, halves, cfg.seed);
  d.id_train = std::move(parts[0]);
  d.wild_id_pool = std::move(parts[1].xs);
  d.wild_cov_pool = train.cov;
  d.wild_sem_pool = train.sem;
  d.num_classes = cfg.synth.num_classes();

  WildMixture val_mix(val.id.xs, val.cov, val.sem, cfg.wild, cfg.seed + kValMixOffset);
  d.eval = {test.id, test.cov, test.sem, val_mix.sample(cfg.val_size).batch.xs};
  return d;
}

ExperimentData prepare_idx(const RunConfig& cfg) {
  const IdxFile images = load_idx(cfg.id_images);
  const IdxFile labels = load_idx(cfg.id_labels);
  const IdxFile sem = load_idx(cfg.semantic_images);
  if (images.item_count() != labels.item_count()) throw FormatError("idx: image and label counts differ");
  if (sem.item_size() != images.item_size()) throw FormatError("idx: semantic images differ in size from ID images");

  // Training subset of size N plus four N/2 blocks: wild ID, wild covariate,
  // ID test and covariate test.
  const std::size_t n = cfg.idx_subset;
  const std::size_t id_total = std::min<std::size_t>(3 * n, images.item_count());
  LabeledSet all{idx_images(images, id_total), idx_labels(labels, id_total)};
  std::size_t k = 0;
  for (auto y : all.ys) k = std::max(k, y + 1);

  const double sixth = 1.0 / 6.0;
  const double id_fracs[] = {1.0 / 3.0, sixth, sixth, sixth, sixth};
  auto parts = split(all, id_fracs, cfg.seed + kSplitOffset);

  const double val_fracs[] = {0.8, 0.2};
  auto wild_id = split(parts[1].xs, val_fracs, cfg.seed + kSplitOffset + 1);
  LabeledSet cov_src = parts[2];
  cov_src.xs = corrupt_gaussian(cov_src.xs, cfg.corruption_sigma, cfg.seed + kCorruptOffset);
  auto wild_cov = split(cov_src, val_fracs, cfg.seed + kSplitOffset + 2);
  LabeledSet cov_test = parts[4];
  cov_test.xs = corrupt_gaussian(cov_test.xs, cfg.corruption_sigma, cfg.seed + kCorruptOffset + 1);

  const std::size_t sem_total = std::min<std::size_t>(2 * n, sem.item_count());
  const double sem_fracs[] = {0.6, 0.2, 0.2};
  auto sem_parts = split(idx_images(sem, sem_total), sem_fracs, cfg.seed + kSplitOffset + 3);

  ExperimentData d;
  d.id_train = std::move(parts[0]);
  d.wild_id_pool = std::move(wild_id[0]);
  d.wild_cov_pool = std::move(wild_cov[0]);
  d.wild_sem_pool = std::move(sem_parts[0]);
  d.num_classes = k;

  WildMixture val_mix(wild_id[1], wild_cov[1], sem_parts[1], cfg.wild, cfg.seed + kValMixOffset);
  d.eval = {std::move(parts[3]), std::move(cov_test), std::move(sem_parts[2]), val_mix.sample(cfg.val_size).batch.xs};
  return d;
}

ExperimentData prepare_data(const RunConfig& cfg) {
  return cfg.kind == RunKind::Idx ? prepare_idx(cfg) : prepare_synthetic(cfg);
}

MlpModel initial_model(const RunConfig& cfg, const ExperimentData& data, std::uint64_t seed) {
  return init_model(model_dims(cfg, data), cfg.activation, seed);
}

RunOutcome run_training(const RunConfig& cfg, const ExperimentData& data, double eta, std::uint64_t seed) {
  RunOutcome out;
  out.eta = eta;
  out.seed = seed;
  out.spec = cfg.constraints;
  out.spec.eta = eta;
  WildMixture wild(data.wild_id_pool, data.wild_cov_pool, data.wild_sem_pool, cfg.wild, seed + kWildMixOffset);
  try {
    TrainResult r = train(initial_model(cfg, data, seed), data.id_train, wild, out.spec, cfg.opt, seed);
    out.report = evaluate(r.model, data.eval);
    out.model = std::move(r.model);
    out.history = std::move(r.history);
    out.spec = r.spec;
  } catch (const TrainingError& e) {
    out.diverged = true;
    out.error = e.what();
    out.history = e.history();
    out.report = nan_report();
  }
  return out;
}

std::size_t select_margin_robust(const MarginGrid& grid) {
  const std::size_t i = select_margin_index(grid);
  if (std::isfinite(grid.out_fracs[i])) return i;
  for (std::size_t j = 0; j < grid.out_fracs.size(); ++j)
    if (std::isfinite(grid.out_fracs[j])) return j;
  return 0;
}

SweepOutcome run_sweep(const RunConfig& cfg, const ExperimentData& data) {
  SweepOutcome s;
  s.grid.etas = cfg.eta_grid;
  s.grid.validate();
  const std::size_t n = s.grid.etas.size();
  s.runs.resize(n);

  auto job = [&](std::size_t i) { s.runs[i] = run_training(cfg, data, s.grid.etas[i], cfg.seed + i); };
  const std::size_t workers = std::min(cfg.threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) job(i);
      });
    for (auto& t : pool) t.join();
  }

  for (const auto& r : s.runs) s.grid.out_fracs.push_back(r.diverged ? kNaN : r.report.out_frac);
  s.chosen = select_margin_robust(s.grid);
  return s;
}

// ---------------------------------------------------------------------------

std::filesystem::path output_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("SCONE_OUT_DIR"); env && *env) return env;
  return cfg.out_dir;
}

std::filesystem::path create_run_dir(const RunConfig& cfg) {
  const std::filesystem::path root = output_root(cfg);
  std::filesystem::create_directories(root);
  const std::string base = cfg.run_id.empty() ? std::string(run_kind_name(cfg.kind)) + "-" + timestamp() : cfg.run_id;
  for (int i = 0;; ++i) {
    const auto dir = root / (i == 0 ? base : base + "-" + std::to_string(i));
    if (std::filesystem::create_directory(dir)) return dir;
  }
}

std::string metrics_run_id(const RunConfig& cfg, double eta) {
  std::ostringstream o;
  o << (cfg.run_id.empty() ? std::string(run_kind_name(cfg.kind)) : cfg.run_id) << "-seed" << cfg.seed << "-eta"
    << eta;
  return o.str();
}

void write_artifacts(const RunArtifacts& a, const RunConfig& cfg, const ExperimentData& data) {
  write_file(a.dir / kConfigFile, echo_config(cfg));

  {
    std::ostringstream csv;
    write_metrics_csv_header(csv);
    for (const auto& row : a.rows) write_metrics_csv_row(csv, row);
    write_file(a.dir / kMetricsCsv, csv.str());
  }

  nlohmann::ordered_json j;
  j["final"] = a.rows.empty() ? nlohmann::ordered_json() : report_json(a.rows.back());
  j["diverged"] = a.final_run.diverged;
  if (a.final_run.diverged) j["error"] = a.final_run.error;
  j["tau"] = a.final_run.history.tau;
  if (!a.final_run.history.outer.empty()) {
    const auto& last = a.final_run.history.outer.back();
    j["residual_c1"] = last.c1;
    j["residual_c2"] = last.c2;
  }
  if (a.sweep) {
    nlohmann::ordered_json s;
    s["etas"] = a.sweep->grid.etas;
    auto& fr = s["out_fracs"] = nlohmann::ordered_json::array();
    for (double v : a.sweep->grid.out_fracs) fr.push_back(std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json());
    s["chosen_eta"] = a.sweep->chosen_eta();
    auto& runs = s["runs"] = nlohmann::ordered_json::array();
    for (const auto& r : a.sweep->runs) {
      nlohmann::ordered_json e = report_json(make_row(cfg, r));
      e["seed"] = r.seed;
      e["diverged"] = r.diverged;
      runs.push_back(std::move(e));
    }
    j["sweep"] = std::move(s);
  }
  write_file(a.dir / kMetricsJson, j.dump(2) + "\n");

  {
    std::ostringstream h;
    write_history_csv(h, a.final_run.history);
    write_file(a.dir / kHistoryCsv, h.str());
  }

  if (!a.final_run.model) return;
  const MlpModel& m = *a.final_run.model;
  save_model((a.dir / kModelFile).string(), m);
  const auto e_id = energies(m, data.eval.id_test.xs);
  const auto e_cov = energies(m, data.eval.cov_test.xs);
  const auto e_sem = energies(m, data.eval.sem_test);
  std::ostringstream h;
  write_histogram_csv(h, energy_histogram(e_id, e_cov, e_sem, cfg.hist_bins));
  write_file(a.dir / kHistogramCsv, h.str());
}

namespace {

void print_report(const MetricsRow& row) {
  const auto& r = row.report;
  std::cout << "eta " << row.eta << "  id_acc " << r.id_acc << "  ood_acc " << r.ood_acc << "  fpr95 " << r.fpr95
            << "  auroc " << r.auroc << "  out_frac " << r.out_frac << '\n';
}

ExitCode finish(RunArtifacts& a, const RunConfig& cfg, const ExperimentData& data, std::filesystem::path* dir_out) {
  a.rows.push_back(make_row(cfg, a.final_run));
  write_artifacts(a, cfg, data);
  if (dir_out) *dir_out = a.dir;
  if (a.final_run.diverged) {
    std::cerr << "scone: " << a.final_run.error << " (partial artifacts in " << a.dir.string() << ")\n";
    return ExitCode::Diverged;
  }
  print_report(a.rows.back());
  std::cout << "artifacts: " << a.dir.string() << '\n';
  return ExitCode::Ok;
}

void add_sweep_rows(RunArtifacts& a, const RunConfig& cfg, const SweepOutcome& s) {
  for (const auto& r : s.runs) {
    MetricsRow row = make_row(cfg, r);
    row.run_id += "-sweep";
    a.rows.push_back(row);
    print_report(row);
  }
  std::cout << "chosen eta " << s.chosen_eta() << '\n';
}

}  // namespace

ExitCode execute_run(const RunConfig& cfg, std::filesystem::path* dir_out) {
  cfg.validate();
  const ExperimentData data = prepare_data(cfg);
  RunArtifacts a;
  a.dir = create_run_dir(cfg);
  double eta = cfg.constraints.eta;
  if (cfg.eta_auto) {
    a.sweep = run_sweep(cfg, data);
    add_sweep_rows(a, cfg, *a.sweep);
    eta = a.sweep->chosen_eta();
  }
  a.final_run = run_training(cfg, data, eta, cfg.seed);
  return finish(a, cfg, data, dir_out);
}

ExitCode execute_sweep(const RunConfig& cfg, std::filesystem::path* dir_out) {
  cfg.validate();
  const ExperimentData data = prepare_data(cfg);
  RunArtifacts a;
  a.dir = create_run_dir(cfg);
  a.sweep = run_sweep(cfg, data);
  add_sweep_rows(a, cfg, *a.sweep);
  a.final_run = a.sweep->runs[a.sweep->chosen];
  return finish(a, cfg, data, dir_out);
}

prop::LipschitzCase linear_case(double lipschitz, double delta, double eta) {
  prop::LipschitzCase c;
  c.fbar = [lipschitz](std::span<const double> x) { return lipschitz * x[0]; };
  c.lipschitz = lipschitz;
  c.lipschitz_asserted = true;
  c.delta = delta;
  c.eta = eta;
  const double z = 2.0;
  const double shift = delta / 2.0;
  c.pairs = {{{z}, {z - shift}, 0}, {{-z}, {-z + shift}, 1}};
  return c;
}

prop::LipschitzCase breach_case(double delta, double eta) {
  prop::LipschitzCase c = linear_case(1.0, delta, eta);
  const double cut = 2.0 - delta / 4.0;
  c.fbar = [cut](std::span<const double> x) { return std::abs(x[0]) > cut ? x[0] : -x[0]; };
  c.lipschitz_asserted = false;
  return c;
}

ExitCode execute_propcheck(const RunConfig& cfg, std::filesystem::path* dir_out) {
  cfg.validate();
  const auto dir = create_run_dir(cfg);
  if (dir_out) *dir_out = dir;
  write_file(dir / kConfigFile, echo_config(cfg));

  const double eta = cfg.constraints.eta;
  nlohmann::ordered_json j;
  const auto analytic = prop::verify_proposition(linear_case(cfg.prop_lipschitz, cfg.prop_delta, eta));
  const auto breach = prop::verify_proposition(breach_case(cfg.prop_delta, eta));
  j["analytic"] = nlohmann::ordered_json::parse(prop::to_json(analytic));
  j["breach"] = nlohmann::ordered_json::parse(prop::to_json(breach));
  bool ok = !analytic.eta_below_bound || analytic.premise_count() < analytic.premises_hold.size() ||
            analytic.violations.empty();

  if (cfg.prop_trained) {
    if (cfg.synth.num_classes() != 2) throw ConfigError("propcheck: trained check needs two synthetic classes");
    RunConfig synth = cfg;
    synth.kind = RunKind::Synth;
    const ExperimentData data = prepare_synthetic(synth);
    const RunOutcome run = run_training(synth, data, eta, cfg.seed);
    if (run.diverged) {
      std::cerr << "scone: " << run.error << '\n';
      write_file(dir / "propcheck.json", j.dump(2) + "\n");
      return ExitCode::Diverged;
    }
    const auto trained = prop::verify_proposition(prop::model_case(*run.model, data.eval.id_test, data.eval.cov_test, eta));
    j["trained"] = nlohmann::ordered_json::parse(prop::to_json(trained));
    std::cout << "trained model: " << trained.premise_count() << "/" << trained.premises_hold.size()
              << " premises, " << trained.conclusion_count() << " conclusions, " << trained.violations.size()
              << " violations (estimate only, bound " << trained.eta_bound << ")\n";
  }
  write_file(dir / "propcheck.json", j.dump(2) + "\n");
  std::cout << "analytic case: eta " << eta << " bound " << analytic.eta_bound << ", " << analytic.violations.size()
            << " violations\nbreach case: " << breach.violations.size() << " violations\n";
  return ok ? ExitCode::Ok : ExitCode::Failure;
}

ExitCode execute_gradcheck(const RunConfig& cfg, std::filesystem::path* dir_out) {
  cfg.validate();
  const auto dir = create_run_dir(cfg);
  if (dir_out) *dir_out = dir;
  write_file(dir / kConfigFile, echo_config(cfg));
  const GradcheckReport r = run_gradcheck(cfg.seed, cfg.gradcheck_models);
  write_file(dir / "gradcheck.json", r.to_json() + "\n");
  for (const auto& t : r.terms)
    std::cout << t.name << ": " << t.coordinates << " coordinates, max rel error " << t.max_rel_error << '\n';
  const bool ok = r.max_rel_error() < 1e-5;
  std::cout << "gradcheck " << (ok ? "passed" : "FAILED") << " (max rel error " << r.max_rel_error() << ")\n";
  return ok ? ExitCode::Ok : ExitCode::Failure;
}

}  // namespace scone
