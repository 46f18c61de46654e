#include "gedit/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "gedit/extract.hpp"
#include "json.hpp"

namespace gedit::corpus {

using nlohmann::ordered_json;

const char* to_string(AccessLabel label) {
  switch (label) {
    case AccessLabel::NEW: return "NEW";
    case AccessLabel::RELOC: return "RELOC";
    case AccessLabel::RENAME: return "RENAME";
    case AccessLabel::CLOSE: return "CLOSE";
    case AccessLabel::NONE: return "NONE";
  }
  return "?";
}

std::optional<AccessLabel> access_label_from_string(const std::string& s) {
  for (AccessLabel l : kAccessLabels)
    if (s == to_string(l)) return l;
  return std::nullopt;
}

const char* to_string(Source s) {
  switch (s) {
    case Source::web: return "web";
    case Source::official: return "official";
    case Source::synthetic: return "synthetic";
  }
  return "?";
}

std::optional<Source> source_from_string(const std::string& s) {
  for (Source v : {Source::web, Source::official, Source::synthetic})
    if (s == to_string(v)) return v;
  return std::nullopt;
}

const char* to_string(Setting s) {
  return s == Setting::joint ? "joint" : "separate";
}

void validate_document(const Document& doc) {
  const std::size_t length = doc.tokens.size();
  if (length == 0) throw ValidationError("document " + doc.id + " has no tokens");
  std::vector<PoiSpan> spans = doc.poi_spans;
  std::sort(spans.begin(), spans.end(), [](const PoiSpan& a, const PoiSpan& b) {
    return a.start < b.start;
  });
  std::size_t cursor = 0;
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > length)
      throw ValidationError("document " + doc.id + ": span [" +
                            std::to_string(s.start) + "," + std::to_string(s.end) +
                            ") out of range for length " + std::to_string(length));
    if (s.start < cursor)
      throw ValidationError("document " + doc.id + ": overlapping spans at token " +
                            std::to_string(s.start));
    cursor = s.end;
  }
  if (doc.dep_graph) depgraph::ensure_valid(*doc.dep_graph, length);
}

TagSet TagSet::make(Setting setting) {
  TagSet t;
  t.setting = setting;
  if (setting == Setting::joint) {
    t.primary = {"B-NEW",  "I-NEW",  "B-RELOC",  "I-RELOC", "B-RENAME", "I-RENAME",
                 "B-CLOSE", "I-CLOSE", "B-NONE",  "I-NONE",  "O"};
  } else {
    t.primary = {"B-POI", "I-POI", "O"};
    t.secondary = {"NEW", "RELOC", "RENAME", "CLOSE", "NONE", "O"};
  }
  return t;
}

namespace {

int index_of(const std::vector<std::string>& labels, const std::string& label) {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw ValidationError("unknown tag label: " + label);
  return static_cast<int>(it - labels.begin());
}

}  // namespace

int TagSet::primary_index(const std::string& label) const {
  return index_of(primary, label);
}

int TagSet::secondary_index(const std::string& label) const {
  return index_of(secondary, label);
}

TagSequences encode_tags(const Document& doc, const TagSet& schema) {
  validate_document(doc);
  const std::size_t length = doc.tokens.size();
  TagSequences out;
  if (schema.setting == Setting::joint) {
    out.primary.assign(length, schema.primary_index("O"));
    for (const auto& s : doc.poi_spans) {
      const std::string name = to_string(s.access);
      out.primary[s.start] = schema.primary_index("B-" + name);
      for (std::size_t i = s.start + 1; i < s.end; ++i)
        out.primary[i] = schema.primary_index("I-" + name);
    }
  } else {
    out.primary.assign(length, schema.primary_index("O"));
    out.secondary.assign(length, schema.secondary_index("O"));
    for (const auto& s : doc.poi_spans) {
      out.primary[s.start] = schema.primary_index("B-POI");
      for (std::size_t i = s.start + 1; i < s.end; ++i)
        out.primary[i] = schema.primary_index("I-POI");
      const int access = schema.secondary_index(to_string(s.access));
      for (std::size_t i = s.start; i < s.end; ++i) out.secondary[i] = access;
    }
  }
  return out;
}

std::vector<RawSpan> decode_bio(std::span<const int> tags,
                                const std::vector<std::string>& labels, int* repairs) {
  std::vector<RawSpan> spans;
  std::string open_label;
  std::size_t open_start = 0;
  auto close = [&](std::size_t end) {
    if (!open_label.empty()) {
      spans.push_back({open_start, end, open_label});
      open_label.clear();
    }
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = labels.at(tags[i]);
    if (tag == "O") {
      close(i);
    } else if (tag.starts_with("B-")) {
      close(i);
      open_label = tag.substr(2);
      open_start = i;
    } else if (tag.starts_with("I-")) {
      const std::string chunk = tag.substr(2);
      if (open_label != chunk) {
        // Ill-formed run: I-X without a matching open chunk opens a new one.
        close(i);
        open_label = chunk;
        open_start = i;
        if (repairs) ++*repairs;
      }
    } else {
      throw ValidationError("decode_bio: non-BIO label " + tag);
    }
  }
  close(tags.size());
  return spans;
}

DecodeResult decode_tags(const TagSequences& tags, const TagSet& schema) {
  DecodeResult result;
  if (schema.setting == Setting::joint) {
    auto raw = decode_bio(tags.primary, schema.primary, &result.repairs);
    for (const auto& s : raw) {
      auto label = access_label_from_string(s.label);
      if (!label) throw ValidationError("decode_tags: bad chunk label " + s.label);
      result.spans.push_back({s.start, s.end, *label});
    }
  } else {
    if (tags.secondary.size() != tags.primary.size())
      throw ValidationError("decode_tags: separate setting needs both sequences");
    auto raw = decode_bio(tags.primary, schema.primary, &result.repairs);
    for (const auto& s : raw) {
      std::vector<AccessLabel> votes;
      for (std::size_t i = s.start; i < s.end; ++i) {
        const std::string& tag = schema.secondary.at(tags.secondary[i]);
        if (tag == "O") continue;
        auto label = access_label_from_string(tag);
        if (!label) throw ValidationError("decode_tags: bad T^s label " + tag);
        votes.push_back(*label);
      }
      const AccessLabel label =
          votes.empty() ? AccessLabel::NONE : extract::vote_accessibility(votes);
      result.spans.push_back({s.start, s.end, label});
    }
  }
  std::sort(result.spans.begin(), result.spans.end());
  return result;
}

std::string document_to_json(const Document& doc) {
  ordered_json j;
  j["id"] = doc.id;
  j["tokens"] = doc.tokens;
  auto spans = ordered_json::array();
  for (const auto& s : doc.poi_spans)
    spans.push_back({s.start, s.end, to_string(s.access)});
  j["spans"] = std::move(spans);
  j["source"] = to_string(doc.source);
  if (doc.dep_graph) {
    const auto& g = *doc.dep_graph;
    auto dep = ordered_json::array();
    for (const auto& e : g.edges)
      dep.push_back({e.head, e.dep, g.relation_names.at(e.rel)});
    j["dep"] = std::move(dep);
    auto node_map = ordered_json::array();
    for (int v = 0; v < g.node_count; ++v)
      node_map.push_back({v, g.node_map[v].first, g.node_map[v].second});
    j["node_map"] = std::move(node_map);
  }
  return j.dump();
}

Document document_from_json(const std::string& line,
                            const depgraph::RelationVocab& relations) {
  ordered_json j = ordered_json::parse(line);
  Document doc;
  doc.id = j.at("id").get<std::string>();
  doc.tokens = j.at("tokens").get<std::vector<std::string>>();
  if (j.contains("spans")) {
    for (const auto& s : j.at("spans")) {
      if (!s.is_array() || s.size() != 3)
        throw ValidationError("span must be [start, end, label]");
      const auto label = access_label_from_string(s.at(2).get<std::string>());
      if (!label)
        throw ValidationError("unknown accessibility value: " +
                              s.at(2).get<std::string>());
      doc.poi_spans.push_back(
          {s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), *label});
    }
    std::sort(doc.poi_spans.begin(), doc.poi_spans.end(),
              [](const PoiSpan& a, const PoiSpan& b) { return a.start < b.start; });
  }
  if (j.contains("source")) {
    const auto src = source_from_string(j.at("source").get<std::string>());
    if (!src)
      throw ValidationError("unknown source: " + j.at("source").get<std::string>());
    doc.source = *src;
  }
  if (j.contains("node_map") || j.contains("dep")) {
    if (!j.contains("node_map"))
      throw ValidationError("dep edges without node_map");
    depgraph::DepGraph g;
    const auto& node_map = j.at("node_map");
    g.node_count = static_cast<int>(node_map.size());
    g.node_map.assign(g.node_count, {-1, -1});
    for (const auto& entry : node_map) {
      if (!entry.is_array() || entry.size() != 3)
        throw ValidationError("node_map entry must be [node, start, end]");
      const int v = entry.at(0).get<int>();
      if (v < 0 || v >= g.node_count || g.node_map[v].first != -1)
        throw ValidationError("node_map ids must be 0..|V|-1, each once");
      g.node_map[v] = {entry.at(1).get<int>(), entry.at(2).get<int>()};
    }
    g.relation_names = relations.names;
    if (j.contains("dep")) {
      for (const auto& entry : j.at("dep")) {
        if (!entry.is_array() || entry.size() != 3)
          throw ValidationError("dep entry must be [head, dependent, relation]");
        const std::string rel_name = entry.at(2).get<std::string>();
        const auto rel = relations.id(rel_name);
        if (!rel)
          throw ValidationError("relation '" + rel_name +
                                "' is not in the relation vocabulary");
        g.edges.push_back({entry.at(0).get<int>(), entry.at(1).get<int>(), *rel});
      }
    }
    doc.dep_graph = std::move(g);
  }
  validate_document(doc);
  return doc;
}

std::vector<Document> load_corpus(const std::filesystem::path& path,
                                  const depgraph::RelationVocab& relations) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open corpus file: " + path.string());
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    try {
      docs.push_back(document_from_json(line, relations));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": malformed record: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " +
                            e.what());
    }
  }
  return docs;
}

void save_corpus(const std::filesystem::path& path, std::span<const Document> docs) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write corpus file: " + path.string());
  for (const auto& doc : docs) os << document_to_json(doc) << "\n";
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open lexicon file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream iss(s);
  std::vector<std::string> out;
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

Gazetteer Gazetteer::load(const std::filesystem::path& path) {
  Gazetteer g;
  for (const auto& line : read_lines(path)) g.entries.push_back(split_ws(line));
  return g;
}

void Gazetteer::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write lexicon file: " + path.string());
  for (const auto& entry : entries) {
    for (std::size_t i = 0; i < entry.size(); ++i)
      os << (i ? " " : "") << entry[i];
    os << "\n";
  }
}

int Gazetteer::count_matches(std::span<const std::string> tokens) const {
  int count = 0;
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t best = 0;
    for (const auto& entry : entries) {
      if (entry.empty() || entry.size() > tokens.size() - i ||
          entry.size() <= best)
        continue;
      if (std::equal(entry.begin(), entry.end(), tokens.begin() + i))
        best = entry.size();
    }
    if (best > 0) {
      ++count;
      i += best;
    } else {
      ++i;
    }
  }
  return count;
}

KeywordLexicon KeywordLexicon::load(const std::filesystem::path& path) {
  KeywordLexicon k;
  for (const auto& line : read_lines(path))
    for (const auto& word : split_ws(line)) k.words.insert(word);
  return k;
}

void KeywordLexicon::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write lexicon file: " + path.string());
  for (const auto& w : words) os << w << "\n";
}

bool KeywordLexicon::hits(std::span<const std::string> tokens) const {
  return std::any_of(tokens.begin(), tokens.end(),
                     [&](const std::string& t) { return words.count(t) > 0; });
}

std::vector<Document> prune_documents(std::span<const Document> docs,
                                      const Gazetteer& recognizer,
                                      const KeywordLexicon& keywords,
                                      PruneReport* report) {
  if (recognizer.entries.empty()) throw ValidationError("POI lexicon is empty");
  if (keywords.words.empty()) throw ValidationError("keyword lexicon is empty");
  PruneReport local;
  std::vector<Document> kept;
  for (const auto& doc : docs) {
    if (recognizer.count_matches(doc.tokens) < 2) {
      ++local.dropped_few_pois;
      continue;
    }
    if (!keywords.hits(doc.tokens)) {
      ++local.dropped_no_keyword;
      continue;
    }
    ++local.kept;
    kept.push_back(doc);
  }
  if (report) *report = local;
  return kept;
}

std::size_t utf8_length(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

}  // namespace gedit::corpus
