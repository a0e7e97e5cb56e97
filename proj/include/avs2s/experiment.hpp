#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avs2s/corpus.hpp"
#include "avs2s/duration.hpp"
#include "avs2s/metrics.hpp"
#include "avs2s/sync_expert.hpp"
#include "avs2s/translator.hpp"

namespace avs2s {

struct CorpusSection {
  int train_samples = 2000;
  int test_samples = 200;
  int vocab_size = 40;
};

struct SyncSection {
  int steps = 3000;
  int batch = 32;
  double lr = 1e-3;
};

struct TranslatorSection {
  int steps = 4000;
  int batch = 16;
  double lr = 1e-3;
  int paraphrase_steps = 1500;
  int paraphrase_groups = 4;
  int length_match_steps = 400;
};

struct DurationSection {
  double lambda = 10.0;
  double lr = 2e-4;
  int accumulation = 32;
  int steps = 600;          // fine-tune optimizer steps (desk-scale budget)
  int pretrain_steps = 400;
  std::string init = "pretrained";
  std::string losses = "sync+dur";
  std::string dur_targets = "source_scaled";
  double sigma = 1.0;
  int sync_windows = 32;
  bool translator_units = false;
};

struct EvalSection {
  int window = 5;
  int max_offset = 15;
  std::string duration_mode = "free";
  std::string unit_source = "translator";
  int keep_curves = 3;
  int jobs = 1;
};

struct ExperimentConfig {
  uint64_t seed = 1234;
  std::vector<uint64_t> seeds = {1, 2, 3};
  std::string output_dir = "out";
  CorpusSection corpus;
  SyncSection sync_expert;
  TranslatorSection translator;
  DurationSection duration;
  EvalSection eval;

  // Strict: unknown keys anywhere are an error.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Reads a config file (or defaults when path is empty) and applies the
// AVS2S_SEED environment override.
ExperimentConfig load_experiment_config(const std::string& path);

FinetuneConfig finetune_config_from(const DurationSection& d, uint64_t seed);
EvalOptions eval_options_from(const EvalSection& e, const std::string& label, uint64_t seed);

// --- stage artifacts -------------------------------------------------------

struct CorpusArtifacts {
  LanguagePair pair;
  Corpus train;
  Corpus test;
};

CorpusArtifacts build_corpus(const ExperimentConfig& config);
void write_corpus_artifacts(const CorpusArtifacts& artifacts, const std::filesystem::path& dir);
CorpusArtifacts load_corpus_artifacts(const std::filesystem::path& dir);

void save_sync_expert(const std::filesystem::path& path, const SyncExpert& expert);
SyncExpert load_sync_expert(const std::filesystem::path& path);
void save_duration_model(const std::filesystem::path& path, const DurationPredictor& model,
                         const std::string& losses, const std::string& init, double lambda);
DurationPredictor load_duration_model(const std::filesystem::path& path);
void save_translator(const std::filesystem::path& path, const Seq2SeqModel& model);
Seq2SeqModel load_translator(const std::filesystem::path& path);

void write_loss_curve_csv(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series);

// --- plots and reports ------------------------------------------------------

void write_offset_curve_svg(const std::filesystem::path& path, const std::vector<double>& curve,
                            int max_offset, const std::string& title);
void write_loss_curve_svg(const std::filesystem::path& path, const std::vector<double>& curve,
                          const std::string& title);
void write_report_files(const std::filesystem::path& json_path, const MetricReport& report);

// Parallel per-sample evaluation with deterministic, index-ordered output.
MetricReport evaluate_system_parallel(const Corpus& test, const LanguagePair& pair,
                                      const Seq2SeqModel* translator,
                                      const DurationPredictor* duration, const SyncExpert& expert,
                                      const EvalOptions& options, int jobs);

// SHA-256 of every regular file under dir, written to dir/MANIFEST.json.
void write_manifest(const std::filesystem::path& dir);
std::string sha256_file(const std::filesystem::path& path);

// --- full pipelines ---------------------------------------------------------

struct AblationRun {
  std::string system;    // "LS+D FT" | "LS+D" | "LS FT"
  uint64_t seed = 0;
  MetricReport report;
};

// Trains the three loss/init arms per seed and evaluates each with
// ground-truth target units, so differences are attributable to the
// duration models alone.
std::vector<AblationRun> run_ablation_table3(const CorpusArtifacts& artifacts,
                                             const ExperimentConfig& config,
                                             const std::filesystem::path& out_dir);

// Full paper-shaped pipeline: corpus, stage training, the three-system
// ablation, paraphrase arms, and a summary with directional badges.
int run_paper_pipeline(const ExperimentConfig& config);

}  // namespace avs2s
