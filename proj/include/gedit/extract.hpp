#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "gedit/corpus.hpp"

namespace gedit::extract {

using corpus::AccessLabel;

// <POI span, accessibility label> output unit.
struct ExtractionPair {
  std::string doc_id;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string surface;  // span tokens joined with single spaces
  AccessLabel label = AccessLabel::NONE;

  bool operator==(const ExtractionPair&) const = default;
  auto operator<=>(const ExtractionPair&) const = default;
};

// Majority vote; count ties go to the label whose first occurrence in the
// sequence is earliest. Input must be non-empty (callers drop O positions
// and fall back to NONE on all-O spans).
AccessLabel vote_accessibility(std::span<const AccessLabel> labels);

std::string span_surface(const corpus::Document& doc, std::size_t start,
                         std::size_t end);

// Decoded tags -> extraction pairs. Joint tags decode directly; separate
// tags take spans from T^p and labels from vote_accessibility over T^s.
std::vector<ExtractionPair> assemble_pairs(const corpus::Document& doc,
                                           const corpus::TagSequences& tags,
                                           const corpus::TagSet& schema);

// Gold pairs straight from the annotated spans.
std::vector<ExtractionPair> gold_pairs(const corpus::Document& doc);

struct Metrics {
  long tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  bool zero_pred = false;  // precision denominator was zero
  bool zero_gold = false;  // recall denominator was zero (no support)
  long support() const { return tp + fn; }
};

Metrics make_metrics(long tp, long fp, long fn);

struct BucketRow {
  std::string name;  // short / medium / long
  Metrics pte;
};

struct EvalReport {
  // Keyed in reporting order NEW, CLOSE, RELOC, RENAME.
  std::vector<std::pair<AccessLabel, Metrics>> per_label;
  Metrics micro;      // pooled TP/FP/FN over the four change labels
  double macro_f1 = 0.0;
  Metrics pte;        // span-only match, all labels including NONE
  std::vector<BucketRow> buckets;

  std::string to_text() const;
  std::string to_json() const;
};

// Exact-match evaluation. Accessibility TP needs span and label to agree;
// PTE ignores labels. NONE pairs are excluded from the per-label, micro and
// macro numbers but count for PTE. Throws on duplicate predicted spans
// within one document.
EvalReport evaluate(std::span<const ExtractionPair> gold,
                    std::span<const ExtractionPair> predicted,
                    std::pair<int, int> bucket_bounds = {3, 5});

// PTE metrics bucketed by surface length in code points:
// short <= first bound, medium <= second bound, long above it. Predictions
// bucket by their own surface for precision, gold spans by theirs for recall.
std::vector<BucketRow> length_bucket_report(std::span<const ExtractionPair> gold,
                                            std::span<const ExtractionPair> predicted,
                                            std::pair<int, int> bucket_bounds = {3, 5});

void save_pairs(const std::filesystem::path& path,
                std::span<const ExtractionPair> pairs);
std::vector<ExtractionPair> load_pairs(const std::filesystem::path& path);

}  // namespace gedit::extract
