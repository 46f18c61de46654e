#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gedit/corpus.hpp"
#include "gedit/encoder.hpp"
#include "gedit/fusion.hpp"
#include "gedit/numcore.hpp"

namespace gedit::tagger {

using numcore::Matrix;

// ---- Linear-chain CRF ----------------------------------------------------

// start[y_1] + sum_i emissions[i][y_i] + sum_i trans[y_i][y_{i+1}] + end[y_L].
double sequence_score(const Matrix& emissions, const Matrix& trans,
                      std::span<const double> start, std::span<const double> end,
                      std::span<const int> tags);

// Forward algorithm in log space; equals logsumexp of sequence_score over
// all K^L tag sequences.
double log_partition(const Matrix& emissions, const Matrix& trans,
                     std::span<const double> start, std::span<const double> end);

// log_partition - sequence_score; non-negative.
double nll_loss(const Matrix& emissions, const Matrix& trans,
                std::span<const double> start, std::span<const double> end,
                std::span<const int> tags);

// Gradients of nll_loss via forward-backward marginals.
void crf_backward(const Matrix& emissions, const Matrix& trans,
                  std::span<const double> start, std::span<const double> end,
                  std::span<const int> tags, Matrix& demissions, Matrix& dtrans,
                  std::vector<double>& dstart, std::vector<double>& dend);

// Decode-time hard constraints: disallowed entries are replaced by -1e4.
struct Constraints {
  Matrix trans_allowed;                     // K x K, nonzero = allowed
  std::vector<std::uint8_t> start_allowed;  // size K
};

inline constexpr double kConstraintScore = -1e4;

// Forbids I-X after anything but B-X/I-X and I-X at sequence start.
// Label sets without B-/I- structure (T^s) come back unconstrained.
Constraints bio_constraints(const std::vector<std::string>& labels);

struct ViterbiResult {
  std::vector<int> tags;
  double score = 0.0;
};

// Argmax path; ties break toward the lowest label index.
ViterbiResult viterbi(const Matrix& emissions, const Matrix& trans,
                      std::span<const double> start, std::span<const double> end,
                      const Constraints* constraints = nullptr);

// ---- Full model ------------------------------------------------------------

struct ModelConfig {
  corpus::Setting setting = corpus::Setting::joint;
  fusion::FusionMode fusion_mode = fusion::FusionMode::hard;
  int dim = 128;
  int hidden_dim = 0;  // 0 -> 2 * dim
  int window = 2;

  int resolved_hidden() const { return hidden_dim > 0 ? hidden_dim : 2 * dim; }
  encoder::EncoderConfig encoder_config() const { return {dim, window}; }
};

// CRF head parameter prefix per setting: "crf.joint" or "crf.p" / "crf.s".
// Each head owns emit_w (K x d), emit_b, trans (K x K), start, end.
struct TaggerModel {
  ModelConfig config;
  corpus::TagSet schema;
  encoder::Vocab vocab;
  depgraph::RelationVocab relations;
  numcore::ParamStore params;

  static TaggerModel create(const ModelConfig& config, const encoder::Vocab& vocab,
                            const depgraph::RelationVocab& relations,
                            std::uint64_t seed);

  // Copies every "encoder.*" tensor whose name and shape match, e.g. from a
  // pretrain checkpoint. Returns the number of tensors loaded.
  int load_pretrained_encoder(const std::map<std::string, Matrix>& tensors);

  std::string header_json() const;
  void save(const std::filesystem::path& path) const;
  static TaggerModel load(const std::filesystem::path& path);
};

struct HeadOutput {
  std::string prefix;
  Matrix emissions;  // L x K
};

struct ForwardCache {
  encoder::EncoderCache enc;
  depgraph::RgcnCache rgcn;
  numcore::Matrix node_features;
  fusion::FusionCache fuse;
  fusion::ProjectCache proj;
  bool used_graph = false;
};

// encode -> node features -> RGCN -> fuse -> project -> emission heads.
std::vector<HeadOutput> forward_document(const TaggerModel& model,
                                         const corpus::Document& doc,
                                         ForwardCache* cache = nullptr);

double loss_document(const TaggerModel& model, const corpus::Document& doc);

// Analytic gradients of loss_document for every parameter.
numcore::GradMap backward_document(const TaggerModel& model,
                                   const corpus::Document& doc);

// Viterbi decode (with BIO constraints by default) into tag sequences.
corpus::TagSequences decode_document(const TaggerModel& model,
                                     const corpus::Document& doc,
                                     bool constrained = true);

struct TrainConfig {
  numcore::AdamConfig adam;
  int epochs = 10;
  int batch_size = 32;
  int threads = 1;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;   // mean per document
  double dev_micro_f1 = 0.0;
  double wall_seconds = 0.0;  // reporting only; never serialized
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 1-based; 0 when no epochs ran
};

// Minibatch Adam on summed per-document nll (both heads in the separate
// setting). Deterministic per seed: fixed shuffle, in-order gradient
// reduction. The best-dev parameters are restored into the model at the end.
TrainResult train(TaggerModel& model, std::span<const corpus::Document> train_docs,
                  std::span<const corpus::Document> dev_docs, const TrainConfig& cfg,
                  std::uint64_t seed);

// Micro F1 of the model's extractions against gold, used for dev scoring.
double micro_f1(const TaggerModel& model, std::span<const corpus::Document> docs,
                int threads = 1);

}  // namespace gedit::tagger
