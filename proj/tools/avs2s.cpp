// Command-line front end: corpus generation, the training stages,
// evaluation, the ablation pipeline, and the full experiment runner.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "avs2s/experiment.hpp"
#include "avs2s/rng.hpp"
#include "avs2s/vocoder.hpp"

namespace fs = std::filesystem;
using namespace avs2s;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void persist_resolved_config(const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir / "resolved_config.json", std::ios::binary | std::ios::trunc);
  f << config.to_json().dump(2) << '\n';
}

// On runtime failure, leave a manifest of whatever was produced.
int fail_with_partial_manifest(const fs::path& dir, const std::string& what) {
  std::cerr << "error: " << what << "\n";
  try {
    if (fs::exists(dir)) {
      write_manifest(dir);
      std::cerr << "partial results manifest written to " << (dir / "MANIFEST.json") << "\n";
    }
  } catch (...) {
  }
  return kExitRuntime;
}

int cmd_gen_corpus(const std::string& config_path, const std::string& out_dir,
                   std::optional<uint64_t> seed) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (seed) config.seed = *seed;
  try {
    CorpusArtifacts artifacts = build_corpus(config);
    write_corpus_artifacts(artifacts, out_dir);
    persist_resolved_config(config, out_dir);
    write_manifest(out_dir);
    std::cout << "wrote " << artifacts.train.samples.size() << " train / "
              << artifacts.test.samples.size() << " test samples to " << out_dir << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    return fail_with_partial_manifest(out_dir, e.what());
  }
}

int cmd_train(const std::string& stage, const std::string& config_path,
              const std::string& corpus_dir, const std::string& out_dir,
              std::optional<uint64_t> seed) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (seed) config.seed = *seed;
  if (!fs::exists(fs::path(corpus_dir) / "pair.json")) {
    throw ConfigError("corpus not found at " + corpus_dir + " (missing pair.json)");
  }
  try {
    CorpusArtifacts artifacts = load_corpus_artifacts(corpus_dir);
    fs::create_directories(out_dir);
    persist_resolved_config(config, out_dir);
    const fs::path out = out_dir;

    if (stage == "sync") {
      SyncTrainConfig cfg;
      cfg.steps = config.sync_expert.steps;
      cfg.batch = config.sync_expert.batch;
      cfg.lr = config.sync_expert.lr;
      SyncTrainResult r = train_sync_expert(artifacts.train, artifacts.pair, cfg,
                                            derive_seed(config.seed, "sync"));
      save_sync_expert(out / "sync_expert.ckpt", r.expert);
      write_loss_curve_csv(out / "sync_expert_curve.csv", {{"loss", r.loss_curve}});
      write_loss_curve_svg(out / "sync_expert_curve.svg", r.loss_curve, "sync expert loss");
    } else if (stage == "translator") {
      TranslatorTrainConfig cfg;
      cfg.steps = config.translator.steps;
      cfg.batch = config.translator.batch;
      cfg.lr = config.translator.lr;
      TranslatorTrainResult r = train_translator(artifacts.train, artifacts.pair, cfg,
                                                 derive_seed(config.seed, "translator"));
      save_translator(out / "translator.ckpt", r.model);
      write_loss_curve_csv(out / "translator_curve.csv", {{"loss", r.loss_curve}});
      write_loss_curve_svg(out / "translator_curve.svg", r.loss_curve, "translator loss");
    } else if (stage == "duration-pretrain") {
      PretrainConfig cfg;
      cfg.steps = config.duration.pretrain_steps;
      cfg.accumulation = config.duration.accumulation;
      cfg.lr = config.duration.lr;
      DurationTrainResult r = pretrain_duration(artifacts.train, artifacts.pair, cfg,
                                                derive_seed(config.seed, "durpre"));
      save_duration_model(out / "duration_pretrain.ckpt", r.model, "dur_only", "scratch", 0.0);
      write_loss_curve_csv(out / "duration_pretrain_curve.csv", {{"dur", r.dur_curve}});
      write_loss_curve_svg(out / "duration_pretrain_curve.svg", r.dur_curve,
                           "duration pretrain loss");
    } else {
      throw ConfigError("unknown stage: " + stage);
    }
    write_manifest(out_dir);
    std::cout << "stage " << stage << " complete; artifacts in " << out_dir << "\n";
    return kExitOk;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    return fail_with_partial_manifest(out_dir, e.what());
  }
}

int cmd_finetune(const std::string& config_path, const std::string& corpus_dir,
                 const std::string& init_path, const std::string& expert_path,
                 const std::string& translator_path, const std::string& losses,
                 std::optional<double> lambda, std::optional<int> steps, const std::string& init_mode,
                 const std::string& out_dir, std::optional<uint64_t> seed) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (seed) config.seed = *seed;
  if (!losses.empty()) config.duration.losses = losses;
  if (lambda) config.duration.lambda = *lambda;
  if (steps) config.duration.steps = *steps;
  if (!init_mode.empty()) config.duration.init = init_mode;
  loss_mix_from_name(config.duration.losses);  // validate before any work
  if (config.duration.init != "pretrained" && config.duration.init != "scratch") {
    throw ConfigError("--init-mode must be pretrained|scratch");
  }
  try {
    CorpusArtifacts artifacts = load_corpus_artifacts(corpus_dir);
    DurationPredictor init = load_duration_model(init_path);
    SyncExpert expert = load_sync_expert(expert_path);
    std::optional<Seq2SeqModel> translator;
    if (!translator_path.empty()) translator = load_translator(translator_path);

    fs::create_directories(out_dir);
    persist_resolved_config(config, out_dir);
    FinetuneConfig ft = finetune_config_from(config.duration, derive_seed(config.seed, "finetune"));
    DurationTrainResult r =
        finetune_duration(init, expert, translator ? &*translator : nullptr, artifacts.train,
                          artifacts.pair, ft, nullptr);
    const fs::path out = out_dir;
    save_duration_model(out / "duration_finetuned.ckpt", r.model, config.duration.losses,
                        config.duration.init, config.duration.lambda);
    write_loss_curve_csv(out / "duration_finetuned_curve.csv",
                         {{"total", r.total_curve}, {"dur", r.dur_curve}, {"sync", r.sync_curve}});
    write_loss_curve_svg(out / "duration_finetuned_curve.svg", r.total_curve,
                         "duration fine-tune total loss");
    write_manifest(out_dir);
    std::cout << "fine-tune complete; checkpoint in " << out_dir << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    return fail_with_partial_manifest(out_dir, e.what());
  }
}

int cmd_evaluate(const std::string& config_path, const std::string& corpus_dir,
                 const std::string& expert_path, const std::string& duration_path,
                 const std::string& translator_path, const std::string& units,
                 const std::string& system_label, const std::string& report_path,
                 const std::string& plots_dir, bool no_plots, int jobs, int dump_audio,
                 std::optional<uint64_t> seed) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (seed) config.seed = *seed;
  if (jobs > 0) config.eval.jobs = jobs;
  try {
    CorpusArtifacts artifacts = load_corpus_artifacts(corpus_dir);
    SyncExpert expert = load_sync_expert(expert_path);
    std::optional<DurationPredictor> duration;
    if (!duration_path.empty()) duration = load_duration_model(duration_path);
    std::optional<Seq2SeqModel> translator;
    if (!translator_path.empty()) translator = load_translator(translator_path);

    EvalOptions options = eval_options_from(config.eval, system_label, config.seed);
    if (units == "translator") {
      options.unit_source = EvalOptions::UnitSource::Translator;
    } else if (units == "ground_truth") {
      options.unit_source = EvalOptions::UnitSource::GroundTruth;
    } else if (units == "source_self") {
      options.unit_source = EvalOptions::UnitSource::SourceSelf;
    } else if (units == "original_translation") {
      options.unit_source = EvalOptions::UnitSource::OriginalTranslation;
    } else if (!units.empty()) {
      throw ConfigError("unknown --units value: " + units);
    }
    if (options.unit_source == EvalOptions::UnitSource::Translator && !translator) {
      throw ConfigError("--units translator requires --translator");
    }
    if ((options.unit_source == EvalOptions::UnitSource::Translator ||
         options.unit_source == EvalOptions::UnitSource::GroundTruth) &&
        !duration) {
      throw ConfigError("this unit source requires --duration");
    }

    MetricReport report = evaluate_system_parallel(
        artifacts.test, artifacts.pair, translator ? &*translator : nullptr,
        duration ? &*duration : nullptr, expert, options, config.eval.jobs);

    const fs::path rp = report_path;
    if (rp.has_parent_path()) fs::create_directories(rp.parent_path());
    write_report_files(rp, report);

    if (!no_plots) {
      const fs::path pd = plots_dir.empty() ? rp.parent_path() / "plots" : fs::path(plots_dir);
      fs::create_directories(pd);
      for (const auto& rec : report.samples) {
        if (rec.offset_curve.empty()) continue;
        write_offset_curve_svg(pd / ("offset_curve_" + rec.id + ".svg"), rec.offset_curve,
                               options.max_offset, "D(o), " + system_label + ", " + rec.id);
      }
    }
    if (dump_audio > 0) {
      const fs::path ad = rp.has_parent_path() ? rp.parent_path() / "audio" : fs::path("audio");
      fs::create_directories(ad);
      TrackCache cache(artifacts.pair);
      int written = 0;
      for (const auto& rec : report.samples) {
        if (written >= dump_audio) break;
        if (rec.gen_units.empty()) continue;
        UnitSequence seq;
        seq.lang = options.unit_source == EvalOptions::UnitSource::SourceSelf ? Lang::Src
                                                                              : Lang::Tgt;
        seq.units = rec.gen_units;
        seq.durations = rec.gen_durations;
        const Waveform wav = cache.waveform_for_sequence(seq);
        write_wav(ad / (rec.id + ".wav"), wav);
        write_feature_dump(ad / (rec.id + ".f64"), extract_audio_features(wav, artifacts.pair));
        ++written;
      }
    }
    std::cout << "evaluated " << report.samples.size() << " samples ("
              << report.failures.size() << " failures); report at " << report_path << "\n";
    return kExitOk;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    return fail_with_partial_manifest(fs::path(report_path).parent_path(), e.what());
  }
}

int cmd_ablate(const std::string& config_path, const std::string& corpus_dir,
               const std::string& out_dir, std::optional<uint64_t> seed) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (seed) config.seed = *seed;
  try {
    CorpusArtifacts artifacts = corpus_dir.empty() ? build_corpus(config)
                                                   : load_corpus_artifacts(corpus_dir);
    fs::create_directories(out_dir);
    persist_resolved_config(config, out_dir);
    auto runs = run_ablation_table3(artifacts, config, out_dir);
    std::vector<MetricReport> reports;
    for (const auto& r : runs) reports.push_back(r.report);
    std::ofstream md(fs::path(out_dir) / "table3.md", std::ios::binary | std::ios::trunc);
    md << report_markdown(reports);
    write_manifest(out_dir);
    std::cout << "ablation complete; reports in " << out_dir << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    return fail_with_partial_manifest(out_dir, e.what());
  }
}

int cmd_run_paper(const std::string& config_path, const std::string& out_dir,
                  std::optional<uint64_t> seed) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (seed) config.seed = *seed;
  if (!out_dir.empty()) config.output_dir = out_dir;
  try {
    return run_paper_pipeline(config);
  } catch (const std::exception& e) {
    return fail_with_partial_manifest(config.output_dir, e.what());
  }
}

int cmd_report(const std::vector<std::string>& report_paths, const std::string& out_path) {
  try {
    std::vector<MetricReport> reports;
    for (const auto& p : report_paths) {
      std::ifstream f(p);
      if (!f) throw ConfigError("cannot open report: " + p);
      reports.push_back(report_from_json(nlohmann::json::parse(f)));
    }
    const std::string md = report_markdown(reports);
    if (out_path.empty()) {
      std::cout << md;
    } else {
      std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
      f << md;
    }
    return kExitOk;
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad report json: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale audio-visual dubbing lip-sync experiments"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, out_dir, stage;
  std::string init_path, expert_path, duration_path, translator_path;
  std::string losses, init_mode, units, system_label = "system", report_path, plots_dir;
  std::vector<std::string> report_inputs;
  std::optional<uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> steps;
  bool no_plots = false;
  int jobs = 0, dump_audio = 0;

  auto add_seed = [&seed](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override the config seed");
  };

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic bilingual corpus");
  gen->add_option("--config", config_path, "experiment config JSON");
  gen->add_option("--out", out_dir, "output directory")->required();
  add_seed(gen);

  auto* train = app.add_subcommand("train", "train one stage");
  train->add_option("--stage", stage, "sync | translator | duration-pretrain")->required();
  train->add_option("--config", config_path, "experiment config JSON");
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  add_seed(train);

  auto* ft = app.add_subcommand("finetune", "fine-tune the duration predictor");
  ft->add_option("--config", config_path, "experiment config JSON");
  ft->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ft->add_option("--init", init_path, "initial duration checkpoint")->required();
  ft->add_option("--sync-expert", expert_path, "sync expert checkpoint")->required();
  ft->add_option("--translator", translator_path, "translator checkpoint (optional)");
  ft->add_option("--losses", losses, "sync+dur | sync_only | dur_only");
  ft->add_option("--lambda", lambda, "duration loss weight");
  ft->add_option("--steps", steps, "optimizer steps");
  ft->add_option("--init-mode", init_mode, "pretrained | scratch");
  ft->add_option("--out", out_dir, "output directory")->required();
  add_seed(ft);

  auto* ev = app.add_subcommand("evaluate", "evaluate a system on the test split");
  ev->add_option("--config", config_path, "experiment config JSON");
  ev->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ev->add_option("--sync-expert", expert_path, "sync expert checkpoint")->required();
  ev->add_option("--duration", duration_path, "duration checkpoint");
  ev->add_option("--translator", translator_path, "translator checkpoint");
  ev->add_option("--units", units,
                 "translator | ground_truth | source_self | original_translation");
  ev->add_option("--system", system_label, "system label for the report");
  ev->add_option("--report", report_path, "report JSON output path")->required();
  ev->add_option("--plots", plots_dir, "directory for offset-curve SVGs");
  ev->add_flag("--no-plots", no_plots, "skip SVG output");
  ev->add_option("--jobs", jobs, "parallel evaluation workers");
  ev->add_option("--dump-audio", dump_audio, "write WAV + feature dumps for the first N samples");
  add_seed(ev);

  auto* ab = app.add_subcommand("ablate-table3", "loss/init ablation across seeds");
  ab->add_option("--config", config_path, "experiment config JSON");
  ab->add_option("--corpus", corpus_dir, "corpus directory (generated if omitted)");
  ab->add_option("--out", out_dir, "output directory")->required();
  add_seed(ab);

  auto* rp = app.add_subcommand("run-paper", "full pipeline: corpus, training, ablations, summary");
  rp->add_option("--config", config_path, "experiment config JSON");
  rp->add_option("--out", out_dir, "override output_dir");
  add_seed(rp);

  auto* rep = app.add_subcommand("report", "merge report JSONs into one markdown table");
  rep->add_option("reports", report_inputs, "report JSON files")->required();
  rep->add_option("--out", report_path, "markdown output (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(config_path, out_dir, seed);
    if (train->parsed()) return cmd_train(stage, config_path, corpus_dir, out_dir, seed);
    if (ft->parsed()) {
      return cmd_finetune(config_path, corpus_dir, init_path, expert_path, translator_path,
                          losses, lambda, steps, init_mode, out_dir, seed);
    }
    if (ev->parsed()) {
      return cmd_evaluate(config_path, corpus_dir, expert_path, duration_path, translator_path,
                          units, system_label, report_path, plots_dir, no_plots, jobs,
                          dump_audio, seed);
    }
    if (ab->parsed()) return cmd_ablate(config_path, corpus_dir, out_dir, seed);
    if (rp->parsed()) return cmd_run_paper(config_path, out_dir, seed);
    if (rep->parsed()) return cmd_report(report_inputs, report_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
