#include "gedit/extract.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gedit::extract {

using nlohmann::ordered_json;

AccessLabel vote_accessibility(std::span<const AccessLabel> labels) {
  if (labels.empty())
    throw ValidationError("vote_accessibility: empty label sequence");
  std::map<AccessLabel, int> counts;
  for (AccessLabel l : labels) ++counts[l];
  int best = 0;
  for (const auto& [_, c] : counts) best = std::max(best, c);
  // Tie rule: among labels with the maximal count, the one occurring first.
  for (AccessLabel l : labels)
    if (counts[l] == best) return l;
  return labels[0];  // unreachable
}

std::string span_surface(const corpus::Document& doc, std::size_t start,
                         std::size_t end) {
  std::string s;
  for (std::size_t i = start; i < end; ++i) {
    if (i > start) s += ' ';
    s += doc.tokens.at(i);
  }
  return s;
}

std::vector<ExtractionPair> assemble_pairs(const corpus::Document& doc,
                                           const corpus::TagSequences& tags,
                                           const corpus::TagSet& schema) {
  if (tags.primary.size() != doc.tokens.size())
    throw ValidationError("assemble_pairs: tag/token length mismatch for " + doc.id);
  const auto decoded = corpus::decode_tags(tags, schema);
  std::vector<ExtractionPair> pairs;
  pairs.reserve(decoded.spans.size());
  for (const auto& s : decoded.spans)
    pairs.push_back(
        {doc.id, s.start, s.end, span_surface(doc, s.start, s.end), s.label});
  return pairs;
}

std::vector<ExtractionPair> gold_pairs(const corpus::Document& doc) {
  std::vector<ExtractionPair> pairs;
  for (const auto& s : doc.poi_spans)
    pairs.push_back(
        {doc.id, s.start, s.end, span_surface(doc, s.start, s.end), s.access});
  return pairs;
}

Metrics make_metrics(long tp, long fp, long fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.zero_pred = (tp + fp == 0);
  m.zero_gold = (tp + fn == 0);
  m.precision = m.zero_pred ? 0.0
                            : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall =
      m.zero_gold ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f1 = (m.precision + m.recall == 0.0)
             ? 0.0
             : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

namespace {

using SpanKey = std::tuple<std::string, std::size_t, std::size_t>;

SpanKey key_of(const ExtractionPair& p) { return {p.doc_id, p.start, p.end}; }

}  // namespace

std::vector<BucketRow> length_bucket_report(std::span<const ExtractionPair> gold,
                                            std::span<const ExtractionPair> predicted,
                                            std::pair<int, int> bucket_bounds) {
  std::set<SpanKey> gold_spans;
  for (const auto& g : gold) gold_spans.insert(key_of(g));
  std::set<SpanKey> pred_spans;
  for (const auto& p : predicted) pred_spans.insert(key_of(p));

  auto bucket_of = [&](const std::string& surface) {
    const auto n = static_cast<int>(corpus::utf8_length(surface));
    if (n <= bucket_bounds.first) return 0;
    if (n <= bucket_bounds.second) return 1;
    return 2;
  };

  long pred_total[3] = {0, 0, 0}, pred_tp[3] = {0, 0, 0};
  long gold_total[3] = {0, 0, 0}, gold_tp[3] = {0, 0, 0};
  for (const auto& p : predicted) {
    const int b = bucket_of(p.surface);
    ++pred_total[b];
    if (gold_spans.count(key_of(p))) ++pred_tp[b];
  }
  for (const auto& g : gold) {
    const int b = bucket_of(g.surface);
    ++gold_total[b];
    if (pred_spans.count(key_of(g))) ++gold_tp[b];
  }

  const char* names[3] = {"short", "medium", "long"};
  std::vector<BucketRow> rows;
  for (int b = 0; b < 3; ++b) {
    // Matched pairs share a surface, so pred_tp[b] == gold_tp[b]; keep the
    // precision and recall denominators separate.
    Metrics m = make_metrics(pred_tp[b], pred_total[b] - pred_tp[b],
                             gold_total[b] - gold_tp[b]);
    rows.push_back({names[b], m});
  }
  return rows;
}

EvalReport evaluate(std::span<const ExtractionPair> gold,
                    std::span<const ExtractionPair> predicted,
                    std::pair<int, int> bucket_bounds) {
  std::set<SpanKey> seen;
  for (const auto& p : predicted) {
    if (!seen.insert(key_of(p)).second)
      throw ValidationError("duplicate predicted span [" + std::to_string(p.start) +
                            "," + std::to_string(p.end) + ") in document " + p.doc_id);
  }

  using FullKey = std::tuple<std::string, std::size_t, std::size_t, AccessLabel>;
  std::set<FullKey> gold_full;
  std::set<SpanKey> gold_spans;
  for (const auto& g : gold) {
    gold_full.insert({g.doc_id, g.start, g.end, g.label});
    gold_spans.insert(key_of(g));
  }
  std::set<FullKey> pred_full;
  for (const auto& p : predicted) pred_full.insert({p.doc_id, p.start, p.end, p.label});

  EvalReport report;
  long micro_tp = 0, micro_fp = 0, micro_fn = 0;
  double macro_sum = 0.0;
  for (AccessLabel label : corpus::kChangeLabels) {
    long tp = 0, fp = 0, fn = 0;
    for (const auto& p : predicted) {
      if (p.label != label) continue;
      if (gold_full.count({p.doc_id, p.start, p.end, p.label}))
        ++tp;
      else
        ++fp;
    }
    for (const auto& g : gold) {
      if (g.label != label) continue;
      if (!pred_full.count({g.doc_id, g.start, g.end, g.label})) ++fn;
    }
    const Metrics m = make_metrics(tp, fp, fn);
    report.per_label.emplace_back(label, m);
    micro_tp += tp;
    micro_fp += fp;
    micro_fn += fn;
    macro_sum += m.f1;
  }
  report.micro = make_metrics(micro_tp, micro_fp, micro_fn);
  report.macro_f1 = macro_sum / 4.0;

  long pte_tp = 0;
  for (const auto& p : predicted)
    if (gold_spans.count(key_of(p))) ++pte_tp;
  long gold_matched = 0;
  {
    std::set<SpanKey> pred_spans;
    for (const auto& p : predicted) pred_spans.insert(key_of(p));
    for (const auto& g : gold)
      if (pred_spans.count(key_of(g))) ++gold_matched;
  }
  report.pte = make_metrics(pte_tp, static_cast<long>(predicted.size()) - pte_tp,
                            static_cast<long>(gold.size()) - gold_matched);
  report.buckets = length_bucket_report(gold, predicted, bucket_bounds);
  return report;
}

namespace {

void metrics_to_json(ordered_json& j, const Metrics& m) {
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["fn"] = m.fn;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  if (m.zero_pred) j["zero_predictions"] = true;
  if (m.zero_gold) j["zero_support"] = true;
}

}  // namespace

std::string EvalReport::to_json() const {
  ordered_json j;
  for (const auto& [label, m] : per_label) {
    ordered_json entry;
    metrics_to_json(entry, m);
    j["labels"][corpus::to_string(label)] = entry;
  }
  j["macro_f1"] = macro_f1;
  ordered_json micro_j;
  metrics_to_json(micro_j, micro);
  j["micro"] = micro_j;
  ordered_json pte_j;
  metrics_to_json(pte_j, pte);
  j["pte"] = pte_j;
  for (const auto& row : buckets) {
    ordered_json b;
    metrics_to_json(b, row.pte);
    j["pte_by_length"][row.name] = b;
  }
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "label      P      R      F1   support\n";
  for (const auto& [label, m] : per_label) {
    os << corpus::to_string(label);
    for (std::size_t i = std::strlen(corpus::to_string(label)); i < 8; ++i) os << ' ';
    os << m.precision << "  " << m.recall << "  " << m.f1 << "  " << m.support();
    if (m.zero_gold) os << "  (no support)";
    os << "\n";
  }
  os << "macro F1 " << macro_f1 << "\n";
  os << "micro    " << micro.precision << "  " << micro.recall << "  " << micro.f1
     << "\n";
  os << "PTE      " << pte.precision << "  " << pte.recall << "  " << pte.f1 << "\n";
  for (const auto& row : buckets) {
    os << "PTE/" << row.name;
    for (std::size_t i = row.name.size(); i < 7; ++i) os << ' ';
    os << row.pte.precision << "  " << row.pte.recall << "  " << row.pte.f1 << "  "
       << row.pte.support() << "\n";
  }
  return os.str();
}

void save_pairs(const std::filesystem::path& path,
                std::span<const ExtractionPair> pairs) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write pairs file: " + path.string());
  for (const auto& p : pairs) {
    ordered_json j;
    j["doc_id"] = p.doc_id;
    j["start"] = p.start;
    j["end"] = p.end;
    j["surface"] = p.surface;
    j["label"] = corpus::to_string(p.label);
    os << j.dump() << "\n";
  }
}

std::vector<ExtractionPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open pairs file: " + path.string());
  std::vector<ExtractionPair> pairs;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line);
    const auto label = corpus::access_label_from_string(j.at("label"));
    if (!label) throw ValidationError("bad label in pairs file");
    pairs.push_back({j.at("doc_id").get<std::string>(), j.at("start").get<std::size_t>(),
                     j.at("end").get<std::size_t>(), j.at("surface").get<std::string>(),
                     *label});
  }
  return pairs;
}

}  // namespace gedit::extract
