#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gedit/corpus.hpp"
#include "gedit/encoder.hpp"

namespace gedit::synth {

// Grammar for the synthetic corpus. Every document holds one target POI
// carrying the document label plus one distractor POI labeled NONE; the cue
// word sits between them, equidistant from both, and attaches to the target
// only through the dependency tree (relation "cue" vs "mention").
struct SynthConfig {
  int docs_per_label = 100;  // per label, NONE included
  int poi_pool = 24;         // distinct POI names
  int poi_word_vocab = 30;   // words POI names draw from
  int filler_vocab = 20;
  int cues_per_label = 2;
  int poi_len_min = 1;
  int poi_len_max = 3;
  std::vector<std::string> relation_names = {"cue", "mention", "mod", "adv"};
};

// Lexical inventory derived deterministically from (config, seed).
struct SynthWorld {
  std::vector<std::vector<std::string>> poi_names;
  std::vector<std::string> poi_words;
  std::vector<std::string> filler_words;
  std::map<corpus::AccessLabel, std::vector<std::string>> cue_words;

  // All distinct words, in a stable order, for vocabulary building.
  std::vector<std::string> all_words() const;
};

SynthWorld build_world(const SynthConfig& cfg, std::uint64_t seed);

// Deterministic per (config, seed). Documents are interleaved by label so
// contiguous splits stay label-balanced.
std::vector<corpus::Document> generate_synthetic_corpus(const SynthConfig& cfg,
                                                        std::uint64_t seed,
                                                        SynthWorld* world_out = nullptr);

// MLM records for the same world: query = POI name plus one extra filler
// word, entities at phrase granularity.
std::vector<encoder::PretrainRecord> generate_pretrain_records(const SynthWorld& world,
                                                               int count,
                                                               std::uint64_t seed);

}  // namespace gedit::synth
