// Command-line harness: synthetic data generation, two-stage training,
// source-free adaptation, retrieval evaluation, component ablations and
// report rendering. All outputs are deterministic given the config seed;
// the only timestamp lives in the gen-data manifest.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aida/config.hpp"
#include "aida/log.hpp"
#include "aida/oracles.hpp"
#include "aida/pipeline.hpp"
#include "aida/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

aida::RunConfig load_config_with_overrides(const CommonOpts& opts) {
  std::ifstream in(opts.config_path);
  if (!in) throw aida::IoError("cannot open config file: " + opts.config_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw aida::ConfigError("malformed JSON in " + opts.config_path + ": " + e.what());
  }
  if (opts.seed) j["seed"] = *opts.seed;
  return aida::parse_config(j);
}

void ensure_out_dir(const std::string& dir) {
  if (dir.empty()) throw aida::ConfigError("--out directory is required");
  fs::create_directories(dir);
}

std::string checksum_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw aida::IoError("cannot read back for checksum: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(aida::fnv1a(ss.str())));
  return buf;
}

std::vector<aida::DomainDataset> load_sources(const std::vector<std::string>& paths) {
  if (paths.empty()) throw aida::ConfigError("train.sources must list at least one dataset file");
  std::vector<aida::DomainDataset> sources;
  for (const std::string& p : paths) sources.push_back(aida::load_dataset(p));
  return aida::make_disjoint(std::move(sources));
}

void write_training_plots(const std::string& out_dir,
                          const std::vector<aida::StepRecord>& trace, std::size_t num_domains) {
  aida::Series total{"loss_total", {}}, id{"loss_id", {}}, tri{"loss_tri", {}},
      point{"loss_pmr_point", {}}, rel{"loss_rel", {}};
  aida::Series lambda{"lambda_pmr", {}};
  std::vector<aida::Series> alphas;
  for (std::size_t k = 1; k <= num_domains; ++k) {
    alphas.push_back(aida::Series{"alpha_" + std::to_string(k), {}});
  }
  for (const aida::StepRecord& r : trace) {
    total.values.push_back(r.loss_total);
    id.values.push_back(r.loss_id);
    tri.values.push_back(r.loss_tri);
    point.values.push_back(r.loss_pmr_point);
    rel.values.push_back(r.loss_rel);
    lambda.values.push_back(r.lambda_pmr);
    for (std::size_t k = 0; k < num_domains; ++k) {
      alphas[k].values.push_back(k < r.alpha.size() ? r.alpha[k] : 0.0);
    }
  }
  aida::write_line_chart(out_dir + "/loss.svg", "training losses",
                         {total, id, tri, point, rel});
  std::vector<aida::Series> controller_series = {lambda};
  controller_series.insert(controller_series.end(), alphas.begin(), alphas.end());
  aida::write_line_chart(out_dir + "/controller.svg", "controller state", controller_series);
}

void print_report(const aida::MetricsReport& r) {
  const auto row = [](const char* name, double v) {
    std::printf("%-12s %.17g\n", name, v);
  };
  row("rank1", r.rank1);
  row("rank5", r.rank5);
  row("rank10", r.rank10);
  row("map", r.map);
  row("nmi", r.nmi);
  row("silhouette", r.silhouette);
  std::printf("%-12s %zu\n", "queries", r.num_queries);
  std::printf("%-12s %zu\n", "skipped", r.skipped_queries);
}

// Appends one evaluation row; an identical row already present is not
// duplicated, so rerunning the same command leaves the file byte-identical.
void append_eval_csv(const std::string& path, const std::string& tag,
                     const aida::MetricsReport& r) {
  std::ostringstream row;
  row << tag << ',' << aida::format_double(r.rank1) << ',' << aida::format_double(r.rank5) << ','
      << aida::format_double(r.rank10) << ',' << aida::format_double(r.map) << ','
      << aida::format_double(r.nmi) << ',' << aida::format_double(r.silhouette) << ','
      << r.num_queries << ',' << r.skipped_queries << '\n';
  const bool fresh = !fs::exists(path);
  if (!fresh) {
    std::ifstream in(path);
    std::ostringstream existing;
    existing << in.rdbuf();
    if (existing.str().find(row.str()) != std::string::npos) return;
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw aida::IoError("cannot open eval csv: " + path);
  if (fresh) out << "tag,rank1,rank5,rank10,map,nmi,silhouette,queries,skipped\n";
  out << row.str();
}

// --- commands --------------------------------------------------------------

int cmd_gen_data(const CommonOpts& opts) {
  const aida::RunConfig cfg = load_config_with_overrides(opts);
  if (!cfg.has_gen || cfg.gen.sources.empty() || !cfg.gen.has_target) {
    throw aida::ConfigError("gen-data needs a gen section with sources and a target");
  }
  ensure_out_dir(opts.out_dir);

  std::vector<aida::DomainDataset> sources;
  for (const aida::DomainSpec& spec : cfg.gen.sources) sources.push_back(generate_domain(spec));
  sources = aida::make_disjoint(std::move(sources));
  const aida::DomainDataset target = generate_domain(cfg.gen.target);

  json files = json::array();
  const auto record = [&](const aida::DomainDataset& ds, const std::string& name) {
    const std::string path = opts.out_dir + "/" + name;
    aida::save_dataset(ds, path);
    files.push_back(json{{"path", name},
                         {"seed", ds.spec.seed},
                         {"checksum", checksum_file(path)},
                         {"samples", ds.size()}});
    aida::log_info("wrote " + path + " (" + std::to_string(ds.size()) + " samples)");
  };
  for (std::size_t k = 0; k < sources.size(); ++k) {
    record(sources[k], "source_" + std::to_string(k) + ".json");
  }
  record(target, "target.json");

  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const json manifest = {
      {"format_version", 1},
      {"root_seed", cfg.seed},
      {"created_at_unix_ms",
       std::chrono::duration_cast<std::chrono::milliseconds>(now).count()},
      {"files", files}};
  std::ofstream mf(opts.out_dir + "/manifest.json");
  mf << manifest.dump(1) << '\n';
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& stage,
              const std::string& controller_mode) {
  aida::RunConfig cfg = load_config_with_overrides(opts);
  if (!cfg.has_train) throw aida::ConfigError("train needs a train section");
  if (!controller_mode.empty()) {
    cfg.train.controller.mode = aida::controller_mode_from_string(controller_mode);
  }
  ensure_out_dir(opts.out_dir);
  const auto sources = load_sources(cfg.train_sources);

  aida::TrainState state;
  if (stage == "sup") {
    state = aida::stage1_supervised(cfg.train, sources);
  } else if (stage == "aida") {
    state = aida::init_train_state(cfg.train, sources);
    state = aida::stage2_aida(std::move(state), cfg.train, sources);
  } else if (stage == "all") {
    state = aida::train_pipeline(cfg.train, sources);
  } else {
    throw aida::ConfigError("--stage must be sup|aida|all, got '" + stage + "'");
  }
  for (const aida::EpochStats& e : state.epoch_stats) {
    aida::log_info(e.stage + " epoch " + std::to_string(e.epoch) + ": loss " +
                   aida::format_double(e.mean_loss) + ", accuracy " +
                   aida::format_double(e.train_accuracy));
  }

  aida::save_checkpoint(state.params, opts.out_dir + "/checkpoint.bin");
  aida::write_trace_csv(opts.out_dir + "/metrics.csv", state.trace, sources.size());
  write_training_plots(opts.out_dir, state.trace, sources.size());
  aida::log_info("wrote " + opts.out_dir + "/checkpoint.bin and metrics.csv");
  return 0;
}

int cmd_adapt(const CommonOpts& opts, const std::string& checkpoint_path,
              const std::string& target_flag) {
  const aida::RunConfig cfg = load_config_with_overrides(opts);
  // Source-free guard: adaptation must not see any source dataset reference.
  if (cfg.references_sources()) {
    throw aida::ConfigError(
        "source-free guard: adapt refuses configs that reference source datasets "
        "(remove gen.sources / train.sources)");
  }
  const std::string target_path =
      !target_flag.empty() ? target_flag : (cfg.has_adapt ? cfg.adapt.target_path : "");
  if (target_path.empty()) {
    throw aida::ConfigError("adapt needs a target dataset (--target or adapt.target)");
  }
  if (checkpoint_path.empty()) throw aida::ConfigError("adapt needs --checkpoint");
  ensure_out_dir(opts.out_dir);

  const aida::DomainDataset target = aida::load_dataset(target_path);
  aida::TrainConfig tcfg = cfg.train;  // defaults if no train section present
  tcfg.seed = cfg.seed;

  aida::TrainState state;
  state.params = aida::load_checkpoint(checkpoint_path);
  tcfg.embed_dim = state.params.config.embed_dim;
  tcfg.hidden_dims = state.params.config.hidden_dims;
  state.adam = aida::AdamState::init(aida::detail::param_copies(state.params));
  state.controller = aida::ControllerState::init(tcfg.controller, 1);

  const aida::MetricsReport before = aida::evaluate_dataset(state.params, target, cfg.seed);
  aida::log_info("target mAP before refinement: " + aida::format_double(before.map));

  std::vector<std::vector<double>> vectors;  // labels never cross this boundary
  for (const aida::Sample& s : target.samples) vectors.push_back(s.raw_vector);
  state = aida::sf_refine(std::move(state), tcfg, vectors);

  const aida::MetricsReport after = aida::evaluate_dataset(state.params, target, cfg.seed);
  aida::log_info("target mAP after refinement:  " + aida::format_double(after.map));

  aida::save_checkpoint(state.params, opts.out_dir + "/checkpoint.bin");
  aida::write_trace_csv(opts.out_dir + "/metrics.csv", state.trace, 1);
  std::ofstream(opts.out_dir + "/eval_before.json") << before.to_json().dump(1) << '\n';
  std::ofstream(opts.out_dir + "/eval_after.json") << after.to_json().dump(1) << '\n';
  append_eval_csv(opts.out_dir + "/eval.csv", "before", before);
  append_eval_csv(opts.out_dir + "/eval.csv", "after", after);
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path,
             const std::string& dataset_path) {
  if (checkpoint_path.empty() || dataset_path.empty()) {
    throw aida::ConfigError("eval needs --checkpoint and --dataset");
  }
  const aida::ModelParams params = aida::load_checkpoint(checkpoint_path);
  const aida::DomainDataset ds = aida::load_dataset(dataset_path);
  const std::uint64_t seed = opts.seed.value_or(0);
  const aida::MetricsReport report = aida::evaluate_dataset(params, ds, seed);
  print_report(report);
  if (!opts.out_dir.empty()) {
    ensure_out_dir(opts.out_dir);
    std::ofstream(opts.out_dir + "/metrics.json") << report.to_json().dump(1) << '\n';
    append_eval_csv(opts.out_dir + "/eval.csv",
                    fs::path(dataset_path).filename().string(), report);
  }
  return 0;
}

struct AblationSetting {
  std::string name;
  bool msidg, pmr, dfc;
};

int cmd_ablate(const CommonOpts& opts) {
  const aida::RunConfig cfg = load_config_with_overrides(opts);
  if (!cfg.has_gen || cfg.gen.sources.empty() || !cfg.gen.has_target || !cfg.has_train) {
    throw aida::ConfigError("ablate needs gen (sources + target) and train sections");
  }
  ensure_out_dir(opts.out_dir);

  const std::vector<AblationSetting> settings = {
      {"A", false, false, false},
      {"B", true, false, false},
      {"C", true, true, false},
      {"D", true, true, true},
  };

  // metric means over seeds, per setting
  std::vector<double> rank1_mean(settings.size(), 0.0), map_mean(settings.size(), 0.0);

  for (const std::uint64_t seed : cfg.ablate.seeds) {
    // Fresh benchmark per seed, shared across the four settings.
    std::vector<aida::DomainDataset> sources;
    for (std::size_t k = 0; k < cfg.gen.sources.size(); ++k) {
      aida::DomainSpec spec = cfg.gen.sources[k];
      spec.seed = aida::derive_seed(seed, "ablate-domain", k);
      sources.push_back(generate_domain(spec));
    }
    sources = aida::make_disjoint(std::move(sources));
    aida::DomainSpec tspec = cfg.gen.target;
    tspec.seed = aida::derive_seed(seed, "ablate-target");
    const aida::DomainDataset target = generate_domain(tspec);

    for (std::size_t si = 0; si < settings.size(); ++si) {
      const AblationSetting& s = settings[si];
      aida::TrainConfig t = cfg.train;
      t.seed = seed;
      t.use_msidg = s.msidg;
      t.use_pmr = s.pmr;
      t.use_dfc = s.dfc;
      // Without consistency regularization the generator contributes through
      // supervised training on the mixed embeddings.
      t.sup_on_intermediate = s.msidg;
      const aida::TrainState state = aida::train_pipeline(t, sources);
      const aida::MetricsReport r = aida::evaluate_dataset(state.params, target, seed);
      rank1_mean[si] += r.rank1;
      map_mean[si] += r.map;
      aida::log_info("seed " + std::to_string(seed) + " setting " + s.name + ": R1 " +
                     aida::format_double(r.rank1) + ", mAP " + aida::format_double(r.map));
    }
  }
  const double n = static_cast<double>(cfg.ablate.seeds.size());
  for (std::size_t si = 0; si < settings.size(); ++si) {
    rank1_mean[si] /= n;
    map_mean[si] /= n;
  }

  std::ofstream csv(opts.out_dir + "/table.csv");
  std::ofstream md(opts.out_dir + "/table.md");
  csv << "setting,msidg,pmr,dfc,rank1,map,avg_gain_vs_A\n";
  md << "| setting | MS-IDG | PMR | DFC | R1 | mAP | avg gain vs A |\n";
  md << "|---|---|---|---|---|---|---|\n";
  for (std::size_t si = 0; si < settings.size(); ++si) {
    const AblationSetting& s = settings[si];
    const double gain =
        0.5 * ((rank1_mean[si] - rank1_mean[0]) + (map_mean[si] - map_mean[0]));
    csv << s.name << ',' << (s.msidg ? 1 : 0) << ',' << (s.pmr ? 1 : 0) << ',' << (s.dfc ? 1 : 0)
        << ',' << aida::format_double(rank1_mean[si]) << ',' << aida::format_double(map_mean[si])
        << ',' << aida::format_double(gain) << '\n';
    char r1[32], mp[32], gn[32];
    std::snprintf(r1, sizeof(r1), "%.4f", rank1_mean[si]);
    std::snprintf(mp, sizeof(mp), "%.4f", map_mean[si]);
    std::snprintf(gn, sizeof(gn), "%+.4f", gain);
    md << "| " << s.name << " | " << (s.msidg ? "x" : "-") << " | " << (s.pmr ? "x" : "-")
       << " | " << (s.dfc ? "x" : "-") << " | " << r1 << " | " << mp << " | " << gn << " |\n";
  }
  aida::log_info("wrote " + opts.out_dir + "/table.csv and table.md");
  return 0;
}

int cmd_report(const std::string& run_dir) {
  if (run_dir.empty()) throw aida::ConfigError("report needs --out pointing at a run directory");
  const std::string csv_path = run_dir + "/metrics.csv";
  if (!fs::exists(csv_path)) {
    throw aida::IoError("report: no metrics.csv in " + run_dir);
  }
  const std::vector<aida::StepRecord> trace = aida::read_trace_csv(csv_path);
  if (trace.empty()) throw aida::IoError("report: metrics.csv has no rows in " + run_dir);
  const std::size_t num_domains = trace.front().alpha.size();
  write_training_plots(run_dir, trace, num_domains);

  std::ofstream md(run_dir + "/report.md");
  md << "# run report\n\n";
  md << "steps: " << trace.size() << "\n\n";
  const aida::StepRecord& last = trace.back();
  md << "final step (" << last.stage << ", epoch " << last.epoch << "):\n\n";
  md << "| metric | value |\n|---|---|\n";
  md << "| loss_total | " << aida::format_double(last.loss_total) << " |\n";
  md << "| loss_id | " << aida::format_double(last.loss_id) << " |\n";
  md << "| loss_tri | " << aida::format_double(last.loss_tri) << " |\n";
  md << "| loss_pmr_point | " << aida::format_double(last.loss_pmr_point) << " |\n";
  md << "| loss_rel | " << aida::format_double(last.loss_rel) << " |\n";
  md << "| lambda_pmr | " << aida::format_double(last.lambda_pmr) << " |\n";
  for (std::size_t k = 0; k < last.alpha.size(); ++k) {
    md << "| alpha_" << (k + 1) << " | " << aida::format_double(last.alpha[k]) << " |\n";
  }
  md << "\n![losses](loss.svg)\n\n![controller](controller.svg)\n";

  if (fs::exists(run_dir + "/table.csv")) {
    md << "\n## ablation table\n\n```\n";
    md << std::ifstream(run_dir + "/table.csv").rdbuf() << "```\n";
  }
  if (fs::exists(run_dir + "/eval.csv")) {
    md << "\n## evaluations\n\n```\n";
    md << std::ifstream(run_dir + "/eval.csv").rdbuf() << "```\n";
  }
  aida::log_info("wrote " + run_dir + "/report.md");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic multi-domain retrieval benchmark harness"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string stage = "all";
  std::string controller_mode;
  std::string checkpoint_path, dataset_path, target_path;

  const auto add_common = [&](CLI::App* cmd, bool need_config, bool need_out) {
    if (need_config) cmd->add_option("--config", opts.config_path, "config file")->required();
    auto* out = cmd->add_option("--out", opts.out_dir, "output directory");
    if (need_out) out->required();
    cmd->add_option("--seed", opts.seed, "override the config seed");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate source and target datasets");
  add_common(gen, true, true);

  CLI::App* train = app.add_subcommand("train", "run the training pipeline");
  add_common(train, true, true);
  train->add_option("--stage", stage, "sup|aida|all")->default_val("all");
  train->add_option("--controller-mode", controller_mode, "literal|per_domain");

  CLI::App* adapt = app.add_subcommand("adapt", "source-free target refinement");
  add_common(adapt, true, true);
  adapt->add_option("--checkpoint", checkpoint_path, "pretrained checkpoint")->required();
  adapt->add_option("--target", target_path, "target dataset file");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval, false, false);
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--dataset", dataset_path, "dataset file")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "run the A/B/C/D component ablation");
  add_common(ablate, true, true);

  CLI::App* report = app.add_subcommand("report", "render plots and summary for a run directory");
  report->add_option("--out", opts.out_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(opts);
    if (train->parsed()) return cmd_train(opts, stage, controller_mode);
    if (adapt->parsed()) return cmd_adapt(opts, checkpoint_path, target_path);
    if (eval->parsed()) return cmd_eval(opts, checkpoint_path, dataset_path);
    if (ablate->parsed()) return cmd_ablate(opts);
    if (report->parsed()) return cmd_report(opts.out_dir);
  } catch (const std::exception& e) {
    aida::log_error(e.what());
    return 1;
  }
  return 1;
}
