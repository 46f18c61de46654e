#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gedit/depgraph.hpp"
#include "gedit/error.hpp"

namespace gedit::corpus {

enum class AccessLabel { NEW, RELOC, RENAME, CLOSE, NONE };

inline constexpr std::array<AccessLabel, 5> kAccessLabels = {
    AccessLabel::NEW, AccessLabel::RELOC, AccessLabel::RENAME, AccessLabel::CLOSE,
    AccessLabel::NONE};
// The four labels that denote an actual change; NONE is excluded from metrics.
inline constexpr std::array<AccessLabel, 4> kChangeLabels = {
    AccessLabel::NEW, AccessLabel::CLOSE, AccessLabel::RELOC, AccessLabel::RENAME};

const char* to_string(AccessLabel label);
std::optional<AccessLabel> access_label_from_string(const std::string& s);

enum class Source { web, official, synthetic };
const char* to_string(Source s);
std::optional<Source> source_from_string(const std::string& s);

struct PoiSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  AccessLabel access = AccessLabel::NONE;
  bool operator==(const PoiSpan&) const = default;
};

struct Document {
  std::string id;
  std::vector<std::string> tokens;  // pre-segmented sub-words
  std::vector<PoiSpan> poi_spans;   // sorted by start, pairwise non-overlapping
  std::optional<depgraph::DepGraph> dep_graph;
  Source source = Source::web;

  std::size_t length() const { return tokens.size(); }
  bool operator==(const Document&) const = default;
};

// Checks span bounds, overlap, and (when present) graph validity.
void validate_document(const Document& doc);

enum class Setting { joint, separate };
const char* to_string(Setting s);

// Labeling schema with a fixed, serialized label order.
//   joint:    one 11-label vocabulary (B-X/I-X for the five labels, plus O)
//   separate: primary = T^p (B-POI, I-POI, O), secondary = T^s (five labels + O)
struct TagSet {
  Setting setting = Setting::joint;
  std::vector<std::string> primary;
  std::vector<std::string> secondary;  // empty for the joint setting

  static TagSet make(Setting setting);
  int primary_size() const { return static_cast<int>(primary.size()); }
  int secondary_size() const { return static_cast<int>(secondary.size()); }
  int primary_index(const std::string& label) const;
  int secondary_index(const std::string& label) const;
  bool operator==(const TagSet&) const = default;
};

struct TagSequences {
  std::vector<int> primary;
  std::vector<int> secondary;  // empty for the joint setting
};

TagSequences encode_tags(const Document& doc, const TagSet& schema);

struct DecodedSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  AccessLabel label = AccessLabel::NONE;
  bool operator==(const DecodedSpan&) const = default;
  auto operator<=>(const DecodedSpan&) const = default;
};

struct DecodeResult {
  std::vector<DecodedSpan> spans;  // sorted by start
  int repairs = 0;                 // ill-formed I-X chunk openings repaired
};

// Inverse of encode_tags. Ill-formed predicted runs (I-X without a matching
// B-X) open a new chunk and are counted as repairs. In the separate setting
// each span's label comes from majority vote over its in-span T^s tags
// (O dropped; all-O falls back to NONE).
DecodeResult decode_tags(const TagSequences& tags, const TagSet& schema);

// Span decoding for one BIO sequence (used for T^p and by the joint path).
struct RawSpan {
  std::size_t start = 0, end = 0;
  std::string label;  // chunk label, e.g. "POI" or "CLOSE"
};
std::vector<RawSpan> decode_bio(std::span<const int> tags,
                                const std::vector<std::string>& labels, int* repairs);

// Corpus file: one JSON document per line with fields
//   "id", "tokens", "spans" ([start, end, label]), optional "dep"
//   ([head, dependent, relation_name]) and "node_map"
//   ([node, subword_start, subword_end]), optional "source".
// Relation names resolve against `relations`; a document with dependency
// fields fails to load when the vocabulary lacks one of its relations.
std::vector<Document> load_corpus(const std::filesystem::path& path,
                                  const depgraph::RelationVocab& relations = {});
void save_corpus(const std::filesystem::path& path, std::span<const Document> docs);
std::string document_to_json(const Document& doc);
Document document_from_json(const std::string& line,
                            const depgraph::RelationVocab& relations);

// Longest-match lexicon standing in for the deployed POI recognizer.
struct Gazetteer {
  std::vector<std::vector<std::string>> entries;

  static Gazetteer load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  // Greedy longest-match count over the token sequence.
  int count_matches(std::span<const std::string> tokens) const;
};

struct KeywordLexicon {
  std::set<std::string> words;

  static KeywordLexicon load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  bool hits(std::span<const std::string> tokens) const;
};

struct PruneReport {
  std::size_t kept = 0;
  std::size_t dropped_few_pois = 0;   // fewer than two recognizer matches
  std::size_t dropped_no_keyword = 0;
};

// Keeps documents with >= 2 recognizer matches and >= 1 keyword hit.
std::vector<Document> prune_documents(std::span<const Document> docs,
                                      const Gazetteer& recognizer,
                                      const KeywordLexicon& keywords,
                                      PruneReport* report = nullptr);

// Number of Unicode code points in a UTF-8 string.
std::size_t utf8_length(const std::string& s);

}  // namespace gedit::corpus
