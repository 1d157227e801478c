#include "semiroute/centroids.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <map>
#include <thread>

#include "http.hpp"
#include "semiroute/corpus.hpp"
#include "semiroute/util.hpp"

namespace semiroute {

namespace {

std::string le64(std::uint64_t v) {
  std::string out(8, '\0');
  for (int b = 0; b < 8; ++b) out[static_cast<std::size_t>(b)] = static_cast<char>((v >> (8 * b)) & 0xff);
  return out;
}

}  // namespace

double mock_token_component(std::uint64_t seed, std::string_view token, std::uint64_t i) {
  std::uint64_t h = fnv1a64(le64(seed));
  h = fnv1a64(token, h);
  h = fnv1a64(le64(i), h);
  h = mix64(h);
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

EmbeddingVector embed_mock(std::string_view text_value, Eigen::Index dim, std::uint64_t seed) {
  if (dim < 2) {
    throw Error(ErrorCategory::config, "mock embedding dim must be at least 2");
  }
  const auto tokens = text::split_whitespace(text_value);
  if (tokens.empty()) {
    throw Error(ErrorCategory::degenerate_input, "cannot embed empty text");
  }
  Embedding<double> sum = Embedding<double>::Zero(dim);
  for (const auto& token : tokens) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      sum[i] += mock_token_component(seed, token, static_cast<std::uint64_t>(i));
    }
  }
  const Embedding<double> mean = sum / static_cast<double>(tokens.size());
  const double norm = mean.norm();
  if (!(norm > 0.0)) {
    throw Error(ErrorCategory::degenerate_input, "token vectors cancel to zero");
  }
  return (mean / norm).cast<float>();
}

MockEmbedder::MockEmbedder(Eigen::Index dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 2) throw Error(ErrorCategory::config, "mock embedding dim must be at least 2");
}

std::vector<EmbeddingVector> MockEmbedder::embed(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_mock(normalize(t), dim_, seed_));
  return out;
}

std::string MockEmbedder::id() {
  return "mock-hash/dim=" + std::to_string(dim_) + "/seed=" + std::to_string(seed_);
}

HttpEmbedder::HttpEmbedder(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {}

EmbedResponse parse_embed_response(const nlohmann::json& body, std::size_t text_count) {
  EmbedResponse response;
  try {
    response.model_id = body.at("model_id").get<std::string>();
    response.dim = body.at("dim").get<Eigen::Index>();
    const auto& vectors = body.at("vectors");
    if (!vectors.is_array() || vectors.size() != text_count) {
      throw Error(ErrorCategory::embedder, "embed response must hold one vector per text (" +
                                               std::to_string(text_count) + ")");
    }
    if (response.dim <= 0) throw Error(ErrorCategory::embedder, "embed response has dim <= 0");
    for (const auto& row : vectors) {
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != response.dim) {
        throw Error(ErrorCategory::embedder, "embed vector length differs from the declared dim");
      }
      EmbeddingVector v(response.dim);
      for (Eigen::Index i = 0; i < response.dim; ++i) {
        v[i] = row[static_cast<std::size_t>(i)].get<float>();
        if (!std::isfinite(v[i])) throw Error(ErrorCategory::embedder, "non-finite embedding value");
      }
      response.vectors.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::embedder, std::string("malformed embed response: ") + e.what());
  }
  return response;
}

std::vector<EmbeddingVector> HttpEmbedder::embed(std::span<const std::string> texts) {
  const nlohmann::json request = {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  auto response = parse_embed_response(
      http::post_json(base_url_, "/embed", request, timeout_, ErrorCategory::embedder), texts.size());
  std::lock_guard lock(mutex_);
  if (model_id_ && *model_id_ != response.model_id) {
    throw Error(ErrorCategory::embedder, "embedder model changed from '" + *model_id_ + "' to '" +
                                             response.model_id + "'");
  }
  if (dim_ && *dim_ != response.dim) {
    throw Error(ErrorCategory::embedder, "embedder dim changed");
  }
  model_id_ = response.model_id;
  dim_ = response.dim;
  return std::move(response.vectors);
}

std::string HttpEmbedder::id() {
  {
    std::lock_guard lock(mutex_);
    if (model_id_) return *model_id_;
  }
  const std::string probe_text = "a";
  embed(std::span<const std::string>(&probe_text, 1));
  std::lock_guard lock(mutex_);
  return *model_id_;
}

std::vector<EmbeddingVector> embed_batched(std::span<const std::string> texts,
                                           EmbedderClient& embedder, const BatchOptions& batching) {
  const std::size_t batch_size = std::max<std::size_t>(1, batching.batch_size);
  const std::size_t batch_count = (texts.size() + batch_size - 1) / batch_size;
  std::vector<EmbeddingVector> out(texts.size());
  std::vector<std::exception_ptr> errors(batch_count);

  auto run_batch = [&](std::size_t b) {
    const std::size_t begin = b * batch_size;
    const std::size_t end = std::min(texts.size(), begin + batch_size);
    try {
      auto vectors = embedder.embed(texts.subspan(begin, end - begin));
      if (vectors.size() != end - begin) {
        throw Error(ErrorCategory::embedder, "embedder returned a misaligned batch");
      }
      for (std::size_t i = begin; i < end; ++i) out[i] = std::move(vectors[i - begin]);
    } catch (...) {
      errors[b] = std::current_exception();
    }
  };

  const std::size_t workers = std::min(std::max<std::size_t>(1, batching.max_in_flight), batch_count);
  if (workers <= 1) {
    for (std::size_t b = 0; b < batch_count; ++b) run_batch(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < batch_count; b = next++) run_batch(b);
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CentroidIndex

CentroidIndex::CentroidIndex(std::string embedder_id, std::vector<DomainLabel> domains,
                             std::vector<std::uint64_t> counts, Eigen::MatrixXf centroids,
                             BuildMetadata metadata)
    : embedder_id_(std::move(embedder_id)),
      domains_(std::move(domains)),
      counts_(std::move(counts)),
      centroids_(std::move(centroids)),
      metadata_(std::move(metadata)) {
  if (domains_.empty()) throw Error(ErrorCategory::validation, "centroid index needs at least one domain");
  if (centroids_.rows() < 1) throw Error(ErrorCategory::validation, "centroid dim must be positive");
  if (counts_.size() != domains_.size() ||
      static_cast<std::size_t>(centroids_.cols()) != domains_.size()) {
    throw Error(ErrorCategory::validation, "centroid index parts disagree on the domain count");
  }
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    if (counts_[i] == 0) {
      throw Error(ErrorCategory::validation, "domain '" + domains_[i] + "' has a zero count");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (domains_[j] == domains_[i]) {
        throw Error(ErrorCategory::validation, "duplicate domain '" + domains_[i] + "'");
      }
    }
    const auto col = centroid(i);
    if (!col.allFinite()) {
      throw Error(ErrorCategory::validation, "domain '" + domains_[i] + "' has a non-finite centroid");
    }
    if (!(col.cast<double>().norm() > 0.0)) {
      throw Error(ErrorCategory::degenerate_centroid, "domain '" + domains_[i] + "' has a zero centroid");
    }
  }
}

std::optional<std::size_t> CentroidIndex::find(const DomainLabel& domain) const {
  auto it = std::find(domains_.begin(), domains_.end(), domain);
  if (it == domains_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - domains_.begin());
}

bool operator==(const CentroidIndex& a, const CentroidIndex& b) {
  return a.embedder_id_ == b.embedder_id_ && a.domains_ == b.domains_ && a.counts_ == b.counts_ &&
         a.metadata_ == b.metadata_ && a.centroids_.rows() == b.centroids_.rows() &&
         a.centroids_.cols() == b.centroids_.cols() && a.centroids_ == b.centroids_;
}

BuildResult build_index(std::span<const LabeledPair> labeled_train, EmbedderClient& embedder,
                        const BuildOptions& options) {
  if (labeled_train.empty()) {
    throw Error(ErrorCategory::validation, "cannot build an index from an empty training set");
  }
  std::vector<std::string> texts;
  texts.reserve(labeled_train.size());
  for (const auto& item : labeled_train) texts.push_back(item.pair.source_text);
  const auto embeddings = embed_batched(texts, embedder, options.batching);
  const std::string embedder_id = embedder.id();

  struct Accumulator {
    Embedding<double> sum;
    std::uint64_t count = 0;
  };
  std::map<DomainLabel, Accumulator> acc;
  Eigen::Index dim = -1;
  for (std::size_t i = 0; i < labeled_train.size(); ++i) {
    const auto& e = embeddings[i];
    if (dim < 0) dim = e.size();
    if (e.size() != dim || dim < 1) {
      throw Error(ErrorCategory::embedder, "embedder produced inconsistent dims");
    }
    const Embedding<double> ed = e.cast<double>();
    const double norm = ed.norm();
    if (!(norm > 0.0) || !ed.allFinite()) {
      throw Error(ErrorCategory::degenerate_input,
                  "zero or non-finite embedding for line " + std::to_string(labeled_train[i].pair.line_no) +
                      " of '" + labeled_train[i].pair.origin + "'");
    }
    auto& a = acc[labeled_train[i].domain];
    if (a.count == 0) a.sum = Embedding<double>::Zero(dim);
    a.sum += ed / norm;
    ++a.count;
  }

  std::vector<DomainLabel> order;
  std::vector<std::string> warnings;
  for (const auto& domain : options.domain_order) {
    if (acc.count(domain)) {
      order.push_back(domain);
    } else {
      warnings.push_back("domain '" + domain + "' has no training pairs; omitted from the index");
    }
  }
  for (const auto& [domain, a] : acc) {
    if (std::find(order.begin(), order.end(), domain) == order.end()) order.push_back(domain);
  }

  Eigen::MatrixXf centroids(dim, static_cast<Eigen::Index>(order.size()));
  std::vector<std::uint64_t> counts;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& a = acc.at(order[k]);
    const Embedding<double> mean = a.sum / static_cast<double>(a.count);
    if (mean.norm() <= 1e-9) {
      throw Error(ErrorCategory::degenerate_centroid,
                  "embeddings of domain '" + order[k] + "' average to the zero vector");
    }
    centroids.col(static_cast<Eigen::Index>(k)) = mean.cast<float>();
    counts.push_back(a.count);
  }
  return {CentroidIndex(embedder_id, std::move(order), std::move(counts), std::move(centroids),
                        options.metadata),
          std::move(warnings)};
}

// ---------------------------------------------------------------------------
// Routing

double RoutingDecision::similarity(const DomainLabel& domain) const {
  for (const auto& [d, s] : similarities) {
    if (d == domain) return s;
  }
  throw Error(ErrorCategory::validation, "no similarity recorded for '" + domain + "'");
}

RoutingDecision route_embedding(const EmbeddingVector& embedding, const CentroidIndex& index) {
  if (embedding.size() != index.dim()) {
    throw Error(ErrorCategory::routing, "embedding dim " + std::to_string(embedding.size()) +
                                            " differs from index dim " + std::to_string(index.dim()));
  }
  RoutingDecision decision;
  decision.similarities.reserve(index.size());
  std::size_t best = 0;
  double best_sim = -2.0;
  double runner_up = -2.0;
  for (std::size_t k = 0; k < index.size(); ++k) {
    const double sim = cosine(embedding, index.centroid(k));
    decision.similarities.emplace_back(index.domains()[k], sim);
    if (sim > best_sim) {
      runner_up = best_sim;
      best_sim = sim;
      best = k;
    } else if (sim > runner_up) {
      runner_up = sim;
    }
  }
  decision.chosen = index.domains()[best];
  decision.margin = index.size() > 1 ? best_sim - runner_up : 0.0;
  return decision;
}

namespace {

void check_embedder(const CentroidIndex& index, EmbedderClient& embedder) {
  const std::string id = embedder.id();
  if (id != index.embedder_id()) {
    throw Error(ErrorCategory::config, "embedder '" + id + "' does not match the index embedder '" +
                                           index.embedder_id() + "'");
  }
}

}  // namespace

RoutingDecision route(const std::string& text_value, const CentroidIndex& index,
                      EmbedderClient& embedder) {
  if (normalize(text_value).empty()) {
    throw Error(ErrorCategory::validation, "cannot route empty text");
  }
  check_embedder(index, embedder);
  std::vector<EmbeddingVector> embedded;
  try {
    embedded = embedder.embed(std::span<const std::string>(&text_value, 1));
  } catch (const Error& e) {
    throw Error(ErrorCategory::routing, std::string("embedding failed: ") + e.what());
  }
  if (embedded.size() != 1) throw Error(ErrorCategory::routing, "embedder returned no vector");
  return route_embedding(embedded.front(), index);
}

std::vector<RoutingDecision> route_batch(std::span<const std::string> texts,
                                         const CentroidIndex& index, EmbedderClient& embedder,
                                         const BatchOptions& batching) {
  for (const auto& t : texts) {
    if (normalize(t).empty()) throw Error(ErrorCategory::validation, "cannot route empty text");
  }
  check_embedder(index, embedder);
  std::vector<EmbeddingVector> embedded;
  try {
    embedded = embed_batched(texts, embedder, batching);
  } catch (const Error& e) {
    throw Error(ErrorCategory::routing, std::string("embedding failed: ") + e.what());
  }
  std::vector<RoutingDecision> out;
  out.reserve(texts.size());
  for (const auto& e : embedded) out.push_back(route_embedding(e, index));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::string_view kMagic = "SRCENTRD";

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(std::string_view s) {
    if (s.size() > 0xffffffffULL) throw Error(ErrorCategory::format, "string too long to serialize");
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(ErrorCategory::format, "index file is truncated");
  }
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int b = 0; b < bytes; ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + static_cast<std::size_t>(b)])) << (8 * b);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_index(const CentroidIndex& index) {
  Writer w;
  w.raw(kMagic);
  w.u32(kIndexFormatVersion);
  w.u32(static_cast<std::uint32_t>(index.dim()));
  w.u32(static_cast<std::uint32_t>(index.size()));
  w.str(index.embedder_id());
  w.str(index.metadata().regime);
  w.str(index.metadata().config_id);
  w.u64(index.metadata().seed);
  w.u64(static_cast<std::uint64_t>(index.metadata().timestamp));
  for (std::size_t k = 0; k < index.size(); ++k) {
    w.str(index.domains()[k]);
    w.u64(index.counts()[k]);
    const auto col = index.centroid(k);
    for (Eigen::Index i = 0; i < col.size(); ++i) w.f32(col[i]);
  }
  return w.take();
}

CentroidIndex deserialize_index(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kMagic.size() || r.raw(kMagic.size()) != kMagic) {
    throw Error(ErrorCategory::format, "not a centroid index (bad magic bytes)");
  }
  const std::uint32_t version = r.u32();
  if (version != kIndexFormatVersion) {
    throw Error(ErrorCategory::format, "unsupported index format version " + std::to_string(version) +
                                           " (expected " + std::to_string(kIndexFormatVersion) + ")");
  }
  const std::uint32_t dim = r.u32();
  const std::uint32_t domain_count = r.u32();
  if (dim == 0) throw Error(ErrorCategory::format, "index dim is zero");
  if (domain_count == 0) throw Error(ErrorCategory::format, "index has no domains");
  // Reject sizes the payload cannot hold before allocating.
  if (static_cast<std::uint64_t>(dim) * domain_count * 4 > bytes.size()) {
    throw Error(ErrorCategory::format, "index dim or domain count exceeds the file size");
  }
  std::string embedder_id = r.str();
  BuildMetadata metadata;
  metadata.regime = r.str();
  metadata.config_id = r.str();
  metadata.seed = r.u64();
  metadata.timestamp = static_cast<std::int64_t>(r.u64());
  std::vector<DomainLabel> domains;
  std::vector<std::uint64_t> counts;
  Eigen::MatrixXf centroids(dim, domain_count);
  for (std::uint32_t k = 0; k < domain_count; ++k) {
    domains.push_back(r.str());
    counts.push_back(r.u64());
    for (std::uint32_t i = 0; i < dim; ++i) centroids(i, k) = r.f32();
  }
  if (!r.done()) throw Error(ErrorCategory::format, "trailing bytes after the last centroid (dim mismatch)");
  try {
    return CentroidIndex(std::move(embedder_id), std::move(domains), std::move(counts),
                         std::move(centroids), std::move(metadata));
  } catch (const Error& e) {
    throw Error(ErrorCategory::format, std::string("invalid index contents: ") + e.what());
  }
}

void save_index(const CentroidIndex& index, const std::filesystem::path& path) {
  write_file(path, serialize_index(index));
}

CentroidIndex load_index(const std::filesystem::path& path) { return deserialize_index(read_file(path)); }

nlohmann::json to_json(const RoutingDecision& decision) {
  nlohmann::json sims = nlohmann::json::object();
  nlohmann::json order = nlohmann::json::array();
  for (const auto& [d, s] : decision.similarities) {
    sims[d] = s;
    order.push_back(d);
  }
  return {{"chosen", decision.chosen}, {"similarities", sims}, {"order", order}, {"margin", decision.margin}};
}

RoutingDecision routing_from_json(const nlohmann::json& record) {
  try {
    RoutingDecision decision;
    decision.chosen = record.at("chosen").get<std::string>();
    decision.margin = record.at("margin").get<double>();
    const auto& sims = record.at("similarities");
    if (record.contains("order")) {
      for (const auto& d : record.at("order")) {
        decision.similarities.emplace_back(d.get<std::string>(), sims.at(d.get<std::string>()).get<double>());
      }
    } else {
      for (const auto& [d, s] : sims.items()) decision.similarities.emplace_back(d, s.get<double>());
    }
    return decision;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::parse, std::string("bad routing record: ") + e.what());
  }
}

nlohmann::json describe(const CentroidIndex& index) {
  nlohmann::json domains = nlohmann::json::array();
  for (std::size_t k = 0; k < index.size(); ++k) {
    domains.push_back({{"name", index.domains()[k]}, {"count", index.counts()[k]}});
  }
  return {{"format_version", kIndexFormatVersion},
          {"embedder_id", index.embedder_id()},
          {"dim", index.dim()},
          {"domains", domains},
          {"build", {{"regime", index.metadata().regime},
                     {"config_id", index.metadata().config_id},
                     {"seed", index.metadata().seed},
                     {"timestamp", index.metadata().timestamp}}}};
}

}  // namespace semiroute
