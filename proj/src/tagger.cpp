#include "gedit/tagger.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "gedit/extract.hpp"
#include "json.hpp"

namespace gedit::tagger {

using nlohmann::ordered_json;

namespace {

double logsumexp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

void check_tags(std::span<const int> tags, std::size_t k) {
  for (int t : tags)
    if (t < 0 || static_cast<std::size_t>(t) >= k)
      throw ValidationError("tag index " + std::to_string(t) + " outside [0," +
                            std::to_string(k) + ")");
}

// Runs fn(0..n-1); per-index work must write only to its own slots.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min<std::size_t>(threads, n);
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

double sequence_score(const Matrix& emissions, const Matrix& trans,
                      std::span<const double> start, std::span<const double> end,
                      std::span<const int> tags) {
  const std::size_t length = emissions.rows();
  if (tags.size() != length)
    throw ValidationError("sequence_score: tag/emission length mismatch");
  check_tags(tags, emissions.cols());
  double score = start[tags[0]] + end[tags[length - 1]];
  for (std::size_t i = 0; i < length; ++i) score += emissions(i, tags[i]);
  for (std::size_t i = 0; i + 1 < length; ++i) score += trans(tags[i], tags[i + 1]);
  return score;
}

double log_partition(const Matrix& emissions, const Matrix& trans,
                     std::span<const double> start, std::span<const double> end) {
  const std::size_t length = emissions.rows();
  const std::size_t k = emissions.cols();
  std::vector<double> alpha(k), next(k), scratch(k);
  for (std::size_t c = 0; c < k; ++c) alpha[c] = start[c] + emissions(0, c);
  for (std::size_t i = 1; i < length; ++i) {
    for (std::size_t b = 0; b < k; ++b) {
      for (std::size_t a = 0; a < k; ++a) scratch[a] = alpha[a] + trans(a, b);
      next[b] = emissions(i, b) + logsumexp(scratch);
    }
    alpha.swap(next);
  }
  for (std::size_t c = 0; c < k; ++c) alpha[c] += end[c];
  return logsumexp(alpha);
}

double nll_loss(const Matrix& emissions, const Matrix& trans,
                std::span<const double> start, std::span<const double> end,
                std::span<const int> tags) {
  return log_partition(emissions, trans, start, end) -
         sequence_score(emissions, trans, start, end, tags);
}

void crf_backward(const Matrix& emissions, const Matrix& trans,
                  std::span<const double> start, std::span<const double> end,
                  std::span<const int> tags, Matrix& demissions, Matrix& dtrans,
                  std::vector<double>& dstart, std::vector<double>& dend) {
  const std::size_t length = emissions.rows();
  const std::size_t k = emissions.cols();
  check_tags(tags, k);

  Matrix log_alpha(length, k), log_beta(length, k);
  std::vector<double> scratch(k);
  for (std::size_t c = 0; c < k; ++c) log_alpha(0, c) = start[c] + emissions(0, c);
  for (std::size_t i = 1; i < length; ++i)
    for (std::size_t b = 0; b < k; ++b) {
      for (std::size_t a = 0; a < k; ++a) scratch[a] = log_alpha(i - 1, a) + trans(a, b);
      log_alpha(i, b) = emissions(i, b) + logsumexp(scratch);
    }
  for (std::size_t c = 0; c < k; ++c) log_beta(length - 1, c) = end[c];
  for (std::size_t i = length - 1; i-- > 0;)
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b)
        scratch[b] = trans(a, b) + emissions(i + 1, b) + log_beta(i + 1, b);
      log_beta(i, a) = logsumexp(scratch);
    }
  for (std::size_t c = 0; c < k; ++c) scratch[c] = log_alpha(length - 1, c) + end[c];
  const double log_z = logsumexp(scratch);

  demissions = Matrix(length, k);
  dtrans = Matrix(k, k);
  dstart.assign(k, 0.0);
  dend.assign(k, 0.0);

  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t c = 0; c < k; ++c)
      demissions(i, c) = std::exp(log_alpha(i, c) + log_beta(i, c) - log_z);
  for (std::size_t i = 0; i + 1 < length; ++i)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        dtrans(a, b) += std::exp(log_alpha(i, a) + trans(a, b) + emissions(i + 1, b) +
                                 log_beta(i + 1, b) - log_z);
  for (std::size_t c = 0; c < k; ++c) {
    dstart[c] = std::exp(log_alpha(0, c) + log_beta(0, c) - log_z);
    dend[c] = std::exp(log_alpha(length - 1, c) + log_beta(length - 1, c) - log_z);
  }

  // Subtract the gold path statistics.
  for (std::size_t i = 0; i < length; ++i) demissions(i, tags[i]) -= 1.0;
  for (std::size_t i = 0; i + 1 < length; ++i) dtrans(tags[i], tags[i + 1]) -= 1.0;
  dstart[tags[0]] -= 1.0;
  dend[tags[length - 1]] -= 1.0;
}

Constraints bio_constraints(const std::vector<std::string>& labels) {
  const std::size_t k = labels.size();
  Constraints c;
  c.trans_allowed = Matrix(k, k, 1.0);
  c.start_allowed.assign(k, 1);
  for (std::size_t b = 0; b < k; ++b) {
    if (!labels[b].starts_with("I-")) continue;
    const std::string chunk = labels[b].substr(2);
    c.start_allowed[b] = 0;
    for (std::size_t a = 0; a < k; ++a) {
      const bool ok = labels[a] == "B-" + chunk || labels[a] == "I-" + chunk;
      if (!ok) c.trans_allowed(a, b) = 0.0;
    }
  }
  return c;
}

ViterbiResult viterbi(const Matrix& emissions, const Matrix& trans,
                      std::span<const double> start, std::span<const double> end,
                      const Constraints* constraints) {
  const std::size_t length = emissions.rows();
  const std::size_t k = emissions.cols();
  auto start_score = [&](std::size_t c) {
    if (constraints && !constraints->start_allowed[c]) return kConstraintScore;
    return start[c];
  };
  auto trans_score = [&](std::size_t a, std::size_t b) {
    if (constraints && constraints->trans_allowed(a, b) == 0.0)
      return kConstraintScore;
    return trans(a, b);
  };

  Matrix delta(length, k);
  std::vector<std::vector<int>> back(length, std::vector<int>(k, 0));
  for (std::size_t c = 0; c < k; ++c) delta(0, c) = start_score(c) + emissions(0, c);
  for (std::size_t i = 1; i < length; ++i) {
    for (std::size_t b = 0; b < k; ++b) {
      double best = -1e300;
      int arg = 0;
      for (std::size_t a = 0; a < k; ++a) {
        const double s = delta(i - 1, a) + trans_score(a, b);
        if (s > best) {  // strict: ties keep the lowest label index
          best = s;
          arg = static_cast<int>(a);
        }
      }
      delta(i, b) = best + emissions(i, b);
      back[i][b] = arg;
    }
  }
  double best = -1e300;
  int arg = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double s = delta(length - 1, c) + end[c];
    if (s > best) {
      best = s;
      arg = static_cast<int>(c);
    }
  }
  ViterbiResult result;
  result.score = best;
  result.tags.assign(length, 0);
  result.tags[length - 1] = arg;
  for (std::size_t i = length - 1; i-- > 0;)
    result.tags[i] = back[i + 1][result.tags[i + 1]];
  return result;
}

// ---- Full model ------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, int>> head_specs(const corpus::TagSet& schema) {
  if (schema.setting == corpus::Setting::joint)
    return {{"crf.joint", schema.primary_size()}};
  return {{"crf.p", schema.primary_size()}, {"crf.s", schema.secondary_size()}};
}

const std::vector<std::string>& head_labels(const corpus::TagSet& schema,
                                            std::size_t head) {
  if (schema.setting == corpus::Setting::joint || head == 0) return schema.primary;
  return schema.secondary;
}

std::span<const double> vec_span(const Matrix& m) { return {m.data(), m.size()}; }

}  // namespace

TaggerModel TaggerModel::create(const ModelConfig& config, const encoder::Vocab& vocab,
                                const depgraph::RelationVocab& relations,
                                std::uint64_t seed) {
  if (relations.size() == 0) throw ValidationError("empty relation vocabulary");
  TaggerModel model{config, corpus::TagSet::make(config.setting), vocab, relations,
                    numcore::ParamStore(seed)};
  encoder::add_encoder_params(model.params, vocab.size(), config.encoder_config());
  depgraph::add_rgcn_params(model.params, relations.size(), config.dim);
  fusion::add_fusion_params(model.params, config.fusion_mode, config.dim,
                            config.resolved_hidden());
  for (const auto& [prefix, k] : head_specs(model.schema)) {
    model.params.add(prefix + ".emit_w", k, config.dim);
    model.params.add(prefix + ".emit_b", k, 1);
    model.params.add(prefix + ".trans", k, k);
    model.params.add(prefix + ".start", k, 1);
    model.params.add(prefix + ".end", k, 1);
  }
  return model;
}

int TaggerModel::load_pretrained_encoder(const std::map<std::string, Matrix>& tensors) {
  int loaded = 0;
  for (const auto& [name, tensor] : tensors) {
    if (!name.starts_with("encoder.")) continue;
    if (!params.has(name)) continue;
    Matrix& dst = params.at(name);
    if (!dst.same_shape(tensor))
      throw ValidationError("pretrained tensor " + name + " has shape " +
                            std::to_string(tensor.rows()) + "x" +
                            std::to_string(tensor.cols()) + ", expected " +
                            std::to_string(dst.rows()) + "x" +
                            std::to_string(dst.cols()));
    dst = tensor;
    ++loaded;
  }
  return loaded;
}

std::string TaggerModel::header_json() const {
  ordered_json j;
  j["format_version"] = numcore::kCheckpointVersion;
  j["kind"] = "tagger";
  j["setting"] = corpus::to_string(config.setting);
  j["fusion"] = fusion::to_string(config.fusion_mode);
  j["dim"] = config.dim;
  j["hidden_dim"] = config.resolved_hidden();
  j["window"] = config.window;
  j["labels"]["primary"] = schema.primary;
  j["labels"]["secondary"] = schema.secondary;
  j["vocab"] = vocab.tokens();
  j["relations"] = relations.names;
  return j.dump();
}

void TaggerModel::save(const std::filesystem::path& path) const {
  numcore::save_checkpoint(path, params, header_json());
}

TaggerModel TaggerModel::load(const std::filesystem::path& path) {
  auto ckpt = numcore::load_checkpoint(path);
  ordered_json j = ordered_json::parse(ckpt.header_json);
  if (j.at("kind").get<std::string>() != "tagger")
    throw ValidationError("checkpoint is not a tagger model: " + path.string());
  ModelConfig config;
  config.setting = j.at("setting").get<std::string>() == "joint"
                       ? corpus::Setting::joint
                       : corpus::Setting::separate;
  const std::string fusion_name = j.at("fusion").get<std::string>();
  config.fusion_mode = fusion_name == "hard"   ? fusion::FusionMode::hard
                       : fusion_name == "soft" ? fusion::FusionMode::soft
                                               : fusion::FusionMode::bypass;
  config.dim = j.at("dim").get<int>();
  config.hidden_dim = j.at("hidden_dim").get<int>();
  config.window = j.at("window").get<int>();
  auto vocab = encoder::Vocab::from_tokens(
      j.at("vocab").get<std::vector<std::string>>());
  depgraph::RelationVocab relations{
      j.at("relations").get<std::vector<std::string>>()};
  TaggerModel model{config, corpus::TagSet::make(config.setting), std::move(vocab),
                    std::move(relations), numcore::ParamStore(0)};
  if (model.schema.primary != j.at("labels").at("primary").get<std::vector<std::string>>())
    throw ValidationError("checkpoint label vocabulary mismatch");
  for (auto& [name, tensor] : ckpt.params) model.params.assign(name, std::move(tensor));
  return model;
}

std::vector<HeadOutput> forward_document(const TaggerModel& model,
                                         const corpus::Document& doc,
                                         ForwardCache* cache) {
  const auto& cfg = model.config;
  const auto ids = encoder::to_ids(doc.tokens, model.vocab);
  ForwardCache local;
  ForwardCache* fc = cache ? cache : &local;

  const Matrix enc = encoder::encode(ids, model.params, cfg.encoder_config(), &fc->enc);

  const depgraph::DepGraph* graph =
      doc.dep_graph.has_value() ? &doc.dep_graph.value() : nullptr;
  Matrix h2;
  if (cfg.fusion_mode != fusion::FusionMode::bypass) {
    if (!graph)
      throw ValidationError("document " + doc.id +
                            " has no dependency graph (required unless bypass)");
    depgraph::ensure_valid(*graph, doc.tokens.size());
    fc->node_features = depgraph::init_node_features(enc, *graph);
    h2 = depgraph::rgcn_forward(*graph, fc->node_features, model.params, &fc->rgcn);
    fc->used_graph = true;
  }

  const Matrix fused = fusion::fuse(cfg.fusion_mode, enc, graph, h2, model.params,
                                    &fc->fuse);
  const Matrix shat =
      fusion::project(fused, model.params.at("fusion.w1"),
                      model.params.at("fusion.w2"), model.params.at("fusion.b"),
                      &fc->proj);

  std::vector<HeadOutput> heads;
  for (const auto& [prefix, k] : head_specs(model.schema)) {
    const Matrix& emit_w = model.params.at(prefix + ".emit_w");
    const Matrix& emit_b = model.params.at(prefix + ".emit_b");
    Matrix emissions(shat.rows(), k);
    for (std::size_t i = 0; i < shat.rows(); ++i) {
      const auto y = numcore::matvec(emit_w, shat.row(i));
      for (int c = 0; c < k; ++c) emissions(i, c) = y[c] + emit_b(c, 0);
    }
    heads.push_back({prefix, std::move(emissions)});
  }
  return heads;
}

namespace {

double heads_loss(const TaggerModel& model, const corpus::Document& doc,
                  const std::vector<HeadOutput>& heads,
                  const corpus::TagSequences& gold) {
  double loss = 0.0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& head = heads[h];
    const auto& tags = h == 0 ? gold.primary : gold.secondary;
    loss += nll_loss(head.emissions, model.params.at(head.prefix + ".trans"),
                     vec_span(model.params.at(head.prefix + ".start")),
                     vec_span(model.params.at(head.prefix + ".end")), tags);
  }
  return loss;
}

}  // namespace

double loss_document(const TaggerModel& model, const corpus::Document& doc) {
  const auto heads = forward_document(model, doc);
  const auto gold = corpus::encode_tags(doc, model.schema);
  return heads_loss(model, doc, heads, gold);
}

numcore::GradMap backward_document(const TaggerModel& model,
                                   const corpus::Document& doc) {
  const auto& cfg = model.config;
  ForwardCache cache;
  const auto heads = forward_document(model, doc, &cache);
  const auto gold = corpus::encode_tags(doc, model.schema);

  numcore::GradMap grads;
  const std::size_t length = doc.tokens.size();
  const std::size_t d = cfg.dim;
  Matrix dshat(length, d);

  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& head = heads[h];
    const auto& tags = h == 0 ? gold.primary : gold.secondary;
    const Matrix& trans = model.params.at(head.prefix + ".trans");
    const Matrix& start = model.params.at(head.prefix + ".start");
    const Matrix& end = model.params.at(head.prefix + ".end");
    const std::size_t k = head.emissions.cols();

    Matrix demissions, dtrans;
    std::vector<double> dstart, dend;
    crf_backward(head.emissions, trans, vec_span(start), vec_span(end), tags,
                 demissions, dtrans, dstart, dend);

    grads.emplace(head.prefix + ".trans", std::move(dtrans));
    Matrix dstart_m(k, 1), dend_m(k, 1);
    for (std::size_t c = 0; c < k; ++c) {
      dstart_m(c, 0) = dstart[c];
      dend_m(c, 0) = dend[c];
    }
    grads.emplace(head.prefix + ".start", std::move(dstart_m));
    grads.emplace(head.prefix + ".end", std::move(dend_m));

    const Matrix& emit_w = model.params.at(head.prefix + ".emit_w");
    auto& demit_w = numcore::grad_slot(grads, head.prefix + ".emit_w", k, d);
    auto& demit_b = numcore::grad_slot(grads, head.prefix + ".emit_b", k, 1);
    for (std::size_t i = 0; i < length; ++i) {
      numcore::add_outer(demit_w, demissions.row(i), cache.proj.out.row(i));
      for (std::size_t c = 0; c < k; ++c) demit_b(c, 0) += demissions(i, c);
      const auto ds = numcore::matvec_t(emit_w, demissions.row(i));
      for (std::size_t c = 0; c < d; ++c) dshat(i, c) += ds[c];
    }
  }

  Matrix dfused(length, 2 * d);
  fusion::project_backward(cache.proj, model.params.at("fusion.w1"),
                           model.params.at("fusion.w2"), dshat, dfused, grads);

  const depgraph::DepGraph* graph =
      doc.dep_graph.has_value() ? &doc.dep_graph.value() : nullptr;
  Matrix denc(length, d);
  Matrix dh2(cache.used_graph ? cache.rgcn.l2.out.rows() : 1, d);
  fusion::fuse_backward(cache.fuse, graph, model.params, dfused, denc, dh2, grads);

  if (cache.used_graph) {
    const Matrix dx = depgraph::rgcn_backward(*graph, cache.rgcn, model.params, dh2,
                                              grads);
    depgraph::init_node_features_backward(*graph, dx, denc);
  }
  encoder::encode_backward(cache.enc, model.params, cfg.encoder_config(), denc, grads);

  // Every parameter gets a slot so optimizers and checkers see full coverage.
  for (const auto& [name, p] : model.params.entries())
    numcore::grad_slot(grads, name, p.rows(), p.cols());
  return grads;
}

corpus::TagSequences decode_document(const TaggerModel& model,
                                     const corpus::Document& doc, bool constrained) {
  const auto heads = forward_document(model, doc);
  corpus::TagSequences out;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& head = heads[h];
    const auto& labels = head_labels(model.schema, h);
    Constraints c;
    const Constraints* cp = nullptr;
    if (constrained) {
      c = bio_constraints(labels);
      cp = &c;
    }
    auto result = viterbi(head.emissions, model.params.at(head.prefix + ".trans"),
                          vec_span(model.params.at(head.prefix + ".start")),
                          vec_span(model.params.at(head.prefix + ".end")), cp);
    (h == 0 ? out.primary : out.secondary) = std::move(result.tags);
  }
  return out;
}

double micro_f1(const TaggerModel& model, std::span<const corpus::Document> docs,
                int threads) {
  if (docs.empty()) return 0.0;
  std::vector<std::vector<extract::ExtractionPair>> pred(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t i) {
    pred[i] = extract::assemble_pairs(docs[i], decode_document(model, docs[i]),
                                      model.schema);
  });
  std::vector<extract::ExtractionPair> all_pred, all_gold;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto g = extract::gold_pairs(docs[i]);
    all_gold.insert(all_gold.end(), g.begin(), g.end());
    all_pred.insert(all_pred.end(), pred[i].begin(), pred[i].end());
  }
  return extract::evaluate(all_gold, all_pred).micro.f1;
}

TrainResult train(TaggerModel& model, std::span<const corpus::Document> train_docs,
                  std::span<const corpus::Document> dev_docs, const TrainConfig& cfg,
                  std::uint64_t seed) {
  if (train_docs.empty()) throw ValidationError("train: empty corpus");
  TrainResult result;
  numcore::AdamState adam(cfg.adam);
  numcore::Rng rng(seed ^ 0x7f4a7c15ull);

  std::vector<std::size_t> order(train_docs.size());
  std::iota(order.begin(), order.end(), 0);

  std::map<std::string, Matrix> best_params;
  double best_f1 = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.integer(i)]);

    double epoch_loss = 0.0;
    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += cfg.batch_size) {
      const std::size_t batch_end =
          std::min(order.size(), batch_start + cfg.batch_size);
      const std::size_t batch_n = batch_end - batch_start;
      std::vector<numcore::GradMap> doc_grads(batch_n);
      std::vector<double> doc_loss(batch_n);
      parallel_for(batch_n, cfg.threads, [&](std::size_t bi) {
        const auto& doc = train_docs[order[batch_start + bi]];
        doc_loss[bi] = loss_document(model, doc);
        if (!std::isfinite(doc_loss[bi]))
          throw NumericalError("non-finite loss on document " + doc.id);
        doc_grads[bi] = backward_document(model, doc);
      });
      // Summed batch gradient, reduced in document order for determinism.
      numcore::GradMap batch_grads;
      for (std::size_t bi = 0; bi < batch_n; ++bi) {
        numcore::accumulate(batch_grads, doc_grads[bi]);
        epoch_loss += doc_loss[bi];
      }
      adam.step(model.params, batch_grads);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = epoch_loss / static_cast<double>(train_docs.size());
    record.dev_micro_f1 =
        dev_docs.empty() ? 0.0 : micro_f1(model, dev_docs, cfg.threads);
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(record);

    if (!dev_docs.empty() && record.dev_micro_f1 > best_f1) {
      best_f1 = record.dev_micro_f1;
      best_params = model.params.entries();
      result.best_epoch = epoch;
    }
  }

  if (!best_params.empty()) {
    for (auto& [name, tensor] : best_params)
      model.params.assign(name, std::move(tensor));
  } else if (!result.history.empty()) {
    result.best_epoch = static_cast<int>(result.history.size());
  }
  return result;
}

}  // namespace gedit::tagger
