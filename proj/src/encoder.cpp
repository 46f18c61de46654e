#include "gedit/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace gedit::encoder {

using numcore::Matrix;
using nlohmann::ordered_json;

namespace {
const std::vector<std::string> kReserved = {"[PAD]", "[UNK]", "[SEP]", "[MASK]"};
}

Vocab Vocab::build(const std::vector<std::string>& words) {
  Vocab v;
  for (const auto& t : kReserved) {
    v.index_.emplace(t, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(t);
  }
  for (const auto& w : words) {
    if (v.index_.count(w)) continue;
    v.index_.emplace(w, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(w);
  }
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) {
    if (v.index_.count(t)) throw ValidationError("duplicate vocabulary token: " + t);
    v.index_.emplace(t, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(t);
  }
  if (v.tokens_.size() < kReserved.size() ||
      !std::equal(kReserved.begin(), kReserved.end(), v.tokens_.begin()))
    throw ValidationError("vocabulary must start with [PAD] [UNK] [SEP] [MASK]");
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open vocabulary: " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  try {
    return from_tokens(tokens);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(e.what()) + ": " + path.string());
  }
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write vocabulary: " + path.string());
  for (const auto& t : tokens_) os << t << "\n";
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> to_ids(const std::vector<std::string>& tokens, const Vocab& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

void add_encoder_params(numcore::ParamStore& params, int vocab_size,
                        const EncoderConfig& cfg) {
  params.add("encoder.embed", vocab_size, cfg.dim);
  params.add("encoder.proj", cfg.dim, 2 * cfg.dim);
}

Matrix encode(const std::vector<int>& ids, const numcore::ParamStore& params,
              const EncoderConfig& cfg, EncoderCache* cache) {
  const Matrix& embed = params.at("encoder.embed");
  const Matrix& proj = params.at("encoder.proj");
  const std::size_t length = ids.size();
  const std::size_t d = cfg.dim;
  if (length == 0) throw ValidationError("encode: empty token sequence");

  Matrix concat(length, 2 * d);
  for (std::size_t i = 0; i < length; ++i) {
    const auto e = embed.row(ids[i]);
    const std::size_t lo = i >= static_cast<std::size_t>(cfg.window)
                               ? i - cfg.window
                               : 0;
    const std::size_t hi = std::min(length - 1, i + cfg.window);
    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
    for (std::size_t c = 0; c < d; ++c) concat(i, c) = e[c];
    for (std::size_t j = lo; j <= hi; ++j) {
      const auto ej = embed.row(ids[j]);
      for (std::size_t c = 0; c < d; ++c) concat(i, d + c) += inv * ej[c];
    }
  }

  Matrix pre(length, d), out(length, d);
  for (std::size_t i = 0; i < length; ++i) {
    const auto y = numcore::matvec(proj, concat.row(i));
    for (std::size_t c = 0; c < d; ++c) {
      pre(i, c) = y[c];
      out(i, c) = std::max(0.0, y[c]);
    }
  }
  if (cache) {
    cache->ids = ids;
    cache->concat = concat;
    cache->pre = pre;
    cache->out = out;
  }
  return out;
}

void encode_backward(const EncoderCache& cache, const numcore::ParamStore& params,
                     const EncoderConfig& cfg, const Matrix& upstream,
                     numcore::GradMap& grads) {
  if (cache.pre.rows() == 0) throw ValidationError("encode_backward: missing cache");
  const Matrix& embed = params.at("encoder.embed");
  const Matrix& proj = params.at("encoder.proj");
  const std::size_t length = cache.ids.size();
  const std::size_t d = cfg.dim;

  auto& dproj = numcore::grad_slot(grads, "encoder.proj", proj.rows(), proj.cols());
  auto& dembed = numcore::grad_slot(grads, "encoder.embed", embed.rows(), embed.cols());

  std::vector<double> dpre(d);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t c = 0; c < d; ++c)
      dpre[c] = cache.pre(i, c) > 0.0 ? upstream(i, c) : 0.0;
    numcore::add_outer(dproj, dpre, cache.concat.row(i));
    const auto dx = numcore::matvec_t(proj, dpre);
    for (std::size_t c = 0; c < d; ++c) dembed(cache.ids[i], c) += dx[c];
    const std::size_t lo = i >= static_cast<std::size_t>(cfg.window)
                               ? i - cfg.window
                               : 0;
    const std::size_t hi = std::min(length - 1, i + cfg.window);
    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
    for (std::size_t j = lo; j <= hi; ++j)
      for (std::size_t c = 0; c < d; ++c)
        dembed(cache.ids[j], c) += inv * dx[d + c];
  }
}

std::vector<std::string> PretrainRecord::layout_tokens() const {
  std::vector<std::string> out = query;
  out.push_back("[SEP]");
  out.insert(out.end(), poi_name.begin(), poi_name.end());
  out.insert(out.end(), address.begin(), address.end());
  out.insert(out.end(), poi_type.begin(), poi_type.end());
  return out;
}

void validate_record(const PretrainRecord& rec) {
  const int length = static_cast<int>(rec.query.size() + 1 + rec.poi_name.size() +
                                      rec.address.size() + rec.poi_type.size());
  const int sep = rec.sep_position();
  std::vector<std::pair<int, int>> segs = rec.entity_segments;
  std::sort(segs.begin(), segs.end());
  int cursor = -1;
  for (const auto& [s, e] : segs) {
    if (s < 0 || e <= s || e > length)
      throw ValidationError("entity segment out of bounds");
    if (s < cursor) throw ValidationError("entity segments overlap");
    if (s <= sep && sep < e)
      throw ValidationError("entity segment crosses the [SEP] token");
    cursor = e;
  }
}

std::vector<PretrainRecord> load_pretrain_records(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open pretrain records: " + path.string());
  std::vector<PretrainRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      ordered_json j = ordered_json::parse(line);
      PretrainRecord rec;
      rec.query = j.at("query").get<std::vector<std::string>>();
      rec.poi_name = j.at("name").get<std::vector<std::string>>();
      rec.address = j.at("address").get<std::vector<std::string>>();
      rec.poi_type = j.at("type").get<std::vector<std::string>>();
      for (const auto& s : j.at("segments"))
        rec.entity_segments.emplace_back(s.at(0).get<int>(), s.at(1).get<int>());
      validate_record(rec);
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": malformed record: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " +
                            e.what());
    }
  }
  return records;
}

void save_pretrain_records(const std::filesystem::path& path,
                           std::span<const PretrainRecord> records) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write pretrain records: " + path.string());
  for (const auto& rec : records) {
    ordered_json j;
    j["query"] = rec.query;
    j["name"] = rec.poi_name;
    j["address"] = rec.address;
    j["type"] = rec.poi_type;
    auto segs = ordered_json::array();
    for (const auto& [s, e] : rec.entity_segments) segs.push_back({s, e});
    j["segments"] = std::move(segs);
    os << j.dump() << "\n";
  }
}

MaskedBatch mask_entities(const PretrainRecord& rec, const Vocab& vocab,
                          const std::vector<int>& misspell_pool, numcore::Rng& rng) {
  validate_record(rec);
  MaskedBatch batch;
  batch.ids = to_ids(rec.layout_tokens(), vocab);
  if (rec.entity_segments.empty()) {
    batch.empty_segments = true;
    return batch;
  }
  const int real_words = vocab.size() - kReservedTokens;
  if (real_words <= 0)
    throw ValidationError("mask_entities: vocabulary has no real words");
  for (const auto& [s, e] : rec.entity_segments) {
    if (rng.uniform() >= 0.15) continue;
    for (int pos = s; pos < e; ++pos) {
      const int original = batch.ids[pos];
      const double u = rng.uniform();
      CorruptKind kind;
      if (u < 0.70) {
        kind = CorruptKind::mask_token;
        batch.ids[pos] = kMask;
      } else if (u < 0.80) {
        kind = CorruptKind::misspelled;
        if (misspell_pool.empty()) {
          // Documented fallback: empty pool serves a random word instead.
          ++batch.misspell_fallbacks;
          batch.ids[pos] =
              kReservedTokens + static_cast<int>(rng.integer(real_words));
        } else {
          batch.ids[pos] =
              misspell_pool[rng.integer(misspell_pool.size())];
        }
      } else if (u < 0.90) {
        kind = CorruptKind::random_word;
        batch.ids[pos] = kReservedTokens + static_cast<int>(rng.integer(real_words));
      } else {
        kind = CorruptKind::unchanged;
      }
      batch.targets.emplace_back(pos, original);
      batch.kinds.push_back(kind);
    }
  }
  return batch;
}

std::vector<std::string> build_misspelling_pool(
    std::span<const PretrainRecord> records) {
  std::vector<std::string> pool;
  std::set<std::string> seen;
  for (const auto& rec : records) {
    std::set<std::string> name_words(rec.poi_name.begin(), rec.poi_name.end());
    for (const auto& w : rec.query) {
      if (name_words.count(w) || seen.count(w)) continue;
      seen.insert(w);
      pool.push_back(w);
    }
  }
  return pool;
}

numcore::ParamStore pretrain_mlm(std::span<const PretrainRecord> records,
                                 const Vocab& vocab, const PretrainConfig& cfg,
                                 std::uint64_t seed, PretrainResult* result) {
  numcore::ParamStore params(seed);
  add_encoder_params(params, vocab.size(), cfg.enc);
  params.add("mlm.head_w", vocab.size(), cfg.enc.dim);
  params.add("mlm.head_b", vocab.size(), 1);

  PretrainResult local;
  const auto pool_words = build_misspelling_pool(records);
  std::vector<int> pool;
  for (const auto& w : pool_words) {
    const int id = vocab.id(w);
    if (id != kUnk) pool.push_back(id);
  }

  numcore::Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  numcore::AdamState adam({cfg.lr});
  const std::size_t d = cfg.enc.dim;

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Deterministic shuffle.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.integer(i)]);
    double epoch_loss = 0.0;
    long epoch_targets = 0;
    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += cfg.batch_size) {
      const std::size_t batch_end =
          std::min(order.size(), batch_start + cfg.batch_size);
      numcore::GradMap grads;
      bool any_target = false;
      for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
        const auto& rec = records[order[bi]];
        const auto batch = mask_entities(rec, vocab, pool, rng);
        if (batch.targets.empty()) continue;
        any_target = true;

        EncoderCache cache;
        encode(batch.ids, params, cfg.enc, &cache);
        const Matrix& head_w = params.at("mlm.head_w");
        const Matrix& head_b = params.at("mlm.head_b");
        Matrix dout(cache.out.rows(), cache.out.cols());
        auto& dhead_w =
            numcore::grad_slot(grads, "mlm.head_w", head_w.rows(), head_w.cols());
        auto& dhead_b = numcore::grad_slot(grads, "mlm.head_b", head_b.rows(), 1);

        for (const auto& [pos, original] : batch.targets) {
          auto logits = numcore::matvec(head_w, cache.out.row(pos));
          for (int k = 0; k < vocab.size(); ++k) logits[k] += head_b(k, 0);
          const double mx = *std::max_element(logits.begin(), logits.end());
          double z = 0.0;
          for (double v : logits) z += std::exp(v - mx);
          const double log_z = mx + std::log(z);
          const double loss = log_z - logits[original];
          if (!std::isfinite(loss))
            throw NumericalError("pretrain_mlm: non-finite loss at epoch " +
                                 std::to_string(epoch + 1));
          epoch_loss += loss;
          ++epoch_targets;
          // dlogits = softmax - onehot
          std::vector<double> dlogits(logits.size());
          for (std::size_t k = 0; k < logits.size(); ++k)
            dlogits[k] = std::exp(logits[k] - log_z);
          dlogits[original] -= 1.0;
          numcore::add_outer(dhead_w, dlogits, cache.out.row(pos));
          for (std::size_t k = 0; k < dlogits.size(); ++k)
            dhead_b(k, 0) += dlogits[k];
          const auto drow = numcore::matvec_t(head_w, dlogits);
          for (std::size_t c = 0; c < d; ++c) dout(pos, c) += drow[c];
        }
        encode_backward(cache, params, cfg.enc, dout, grads);
      }
      if (any_target) adam.step(params, grads);
    }
    local.epoch_loss.push_back(epoch_targets > 0 ? epoch_loss / epoch_targets : 0.0);
    local.total_targets += epoch_targets;
  }
  if (result) *result = local;
  return params;
}

}  // namespace gedit::encoder
