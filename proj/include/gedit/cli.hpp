#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gedit/corpus.hpp"
#include "gedit/encoder.hpp"
#include "gedit/extract.hpp"
#include "gedit/tagger.hpp"

namespace gedit::cli {

// Every experiment knob, with defaults. Config files are flat key=value
// lines ('#' comments, include=<path> pulls in another file); CLI flags
// override file values; unknown keys are errors.
struct RunConfig {
  // model
  std::string schema = "joint";  // joint | separate
  std::string fusion = "hard";   // hard | soft | bypass
  int dim = 128;
  int hidden_dim = 0;  // 0 -> 2 * dim
  int window = 2;
  std::string pretrained;  // encoder checkpoint to load; empty = fresh

  // optimizer / training
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 42;
  int threads = 1;

  // files
  std::string relations;  // relation vocabulary; empty = default inventory
  std::string vocab;      // token vocabulary; empty = build from train corpus
  std::string train_path;
  std::string dev_path;
  std::string test_path;
  std::string input;  // corpus for prune / extract
  std::string out = "out";
  std::string checkpoint;
  std::string records;  // MLM pretrain records
  std::string gazetteer;
  std::string keywords;

  // synthetic corpus
  int synth_docs_per_label = 100;
  int synth_poi_pool = 24;
  int synth_poi_vocab = 30;
  int synth_filler_vocab = 20;
  int synth_cues_per_label = 2;
  int synth_poi_len_min = 1;
  int synth_poi_len_max = 3;
  double train_frac = 0.7;
  double dev_frac = 0.1;

  // MLM pretraining
  int pretrain_epochs = 5;
  int pretrain_batch_size = 32;
  double pretrain_lr = 0.001;
  int pretrain_record_count = 200;

  corpus::Setting setting() const;
  fusion::FusionMode fusion_mode() const;
  tagger::ModelConfig model_config() const;
  numcore::AdamConfig adam_config() const;
};

void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
RunConfig load_config_file(const std::filesystem::path& path);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
// Flat key=value text, fixed key order; echoed next to every output.
std::string serialize_config(const RunConfig& cfg);

struct SynthOutputs {
  std::filesystem::path train, dev, test;
  std::filesystem::path relations, vocab, gazetteer, keywords, pretrain_records;
  std::size_t train_count = 0, dev_count = 0, test_count = 0;
};

SynthOutputs cmd_synth(const RunConfig& cfg);
corpus::PruneReport cmd_prune(const RunConfig& cfg);
encoder::PretrainResult cmd_pretrain(const RunConfig& cfg);
tagger::TrainResult cmd_train(const RunConfig& cfg);
extract::EvalReport cmd_eval(const RunConfig& cfg);
std::size_t cmd_extract(const RunConfig& cfg);
double cmd_gradcheck(const RunConfig& cfg);

inline constexpr double kGradcheckTolerance = 1e-4;

struct AblationRow {
  std::string variant;
  std::string setting;
  std::string fusion;
  bool pretrained = false;
  double new_f1 = 0.0, close_f1 = 0.0, reloc_f1 = 0.0, rename_f1 = 0.0;
  double macro_f1 = 0.0, micro_f1 = 0.0;
};

// Trains and evaluates the joint variants (hard, soft, bypass, no-pretrain)
// plus a separate-setting baseline on the same seed and corpus.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg);
std::string ablation_table(const std::vector<AblationRow>& rows);

// Runs one subcommand, mapping ValidationError -> 1 and NumericalError -> 2
// (also used for a gradient-check error above tolerance).
int run_command(const std::string& name, const RunConfig& cfg);

}  // namespace gedit::cli
