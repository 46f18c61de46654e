#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gedit/numcore.hpp"

namespace gedit::encoder {

// Reserved token ids. Vocabulary files list one token per line; the line
// number is the id, and the first four lines must be the reserved tokens.
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kSep = 2;
inline constexpr int kMask = 3;
inline constexpr int kReservedTokens = 4;

class Vocab {
 public:
  Vocab() = default;

  // Prepends the reserved tokens, then the given words (deduplicated,
  // order preserved).
  static Vocab build(const std::vector<std::string>& words);
  // Exact token list, which must already start with the reserved tokens.
  static Vocab from_tokens(const std::vector<std::string>& tokens);
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(const std::string& token) const;  // kUnk for out-of-vocabulary
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

std::vector<int> to_ids(const std::vector<std::string>& tokens, const Vocab& vocab);

struct EncoderConfig {
  int dim = 128;   // d: embedding and output width
  int window = 2;  // mean-pool radius
};

// Parameters: "encoder.embed" (V x d) and "encoder.proj" (d x 2d).
void add_encoder_params(numcore::ParamStore& params, int vocab_size,
                        const EncoderConfig& cfg);

struct EncoderCache {
  std::vector<int> ids;
  numcore::Matrix concat;  // L x 2d: [e_i ; window mean]
  numcore::Matrix pre;     // L x d
  numcore::Matrix out;     // L x d
};

// Row i = ReLU(proj @ concat(e_i, mean of embeddings in window i +- w)).
numcore::Matrix encode(const std::vector<int>& ids, const numcore::ParamStore& params,
                       const EncoderConfig& cfg, EncoderCache* cache = nullptr);

void encode_backward(const EncoderCache& cache, const numcore::ParamStore& params,
                     const EncoderConfig& cfg, const numcore::Matrix& upstream,
                     numcore::GradMap& grads);

// One MLM document: query ++ [SEP] ++ poi name ++ address ++ poi type.
// entity_segments are [start, end) phrase spans over that concatenation;
// they are disjoint and never cover the separator position.
struct PretrainRecord {
  std::vector<std::string> query, poi_name, address, poi_type;
  std::vector<std::pair<int, int>> entity_segments;

  std::vector<std::string> layout_tokens() const;
  int sep_position() const { return static_cast<int>(query.size()); }
};

void validate_record(const PretrainRecord& rec);
std::vector<PretrainRecord> load_pretrain_records(const std::filesystem::path& path);
void save_pretrain_records(const std::filesystem::path& path,
                           std::span<const PretrainRecord> records);

enum class CorruptKind { mask_token, misspelled, random_word, unchanged };

struct MaskedBatch {
  std::vector<int> ids;  // corrupted sequence
  std::vector<std::pair<int, int>> targets;  // (position, original id)
  std::vector<CorruptKind> kinds;            // parallel to targets
  int misspell_fallbacks = 0;  // misspelled draws served by the random branch
  bool empty_segments = false;
};

// Each entity segment is selected with probability 0.15; within a selected
// segment every word is masked 70%, misspelled 10%, replaced by a random
// vocabulary word 10%, or left unchanged 10%. All positions of selected
// segments become prediction targets.
MaskedBatch mask_entities(const PretrainRecord& rec, const Vocab& vocab,
                          const std::vector<int>& misspell_pool, numcore::Rng& rng);

// Query words absent from the paired POI name, deduplicated.
std::vector<std::string> build_misspelling_pool(std::span<const PretrainRecord> records);

struct PretrainConfig {
  EncoderConfig enc;
  int epochs = 5;
  int batch_size = 32;
  double lr = 0.001;
};

struct PretrainResult {
  std::vector<double> epoch_loss;  // mean cross-entropy per target
  long total_targets = 0;
};

// Trains the window encoder plus a softmax head ("mlm.head_w", "mlm.head_b")
// to restore the original ids at masked positions.
numcore::ParamStore pretrain_mlm(std::span<const PretrainRecord> records,
                                 const Vocab& vocab, const PretrainConfig& cfg,
                                 std::uint64_t seed, PretrainResult* result = nullptr);

}  // namespace gedit::encoder
