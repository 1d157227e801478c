#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "semiroute/error.hpp"
#include "semiroute/labeler.hpp"

namespace semiroute {

template <typename Scalar>
using Embedding = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using EmbeddingVector = Embedding<float>;

/// Cosine similarity, accumulated in double and clamped to [-1, 1].
template <typename DerivedA, typename DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCategory::degenerate_input,
                "cosine of vectors with dims " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()));
  }
  const auto ad = a.template cast<double>();
  const auto bd = b.template cast<double>();
  const double na = ad.norm();
  const double nb = bd.norm();
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw Error(ErrorCategory::degenerate_input, "cosine of a zero-norm vector");
  }
  return std::clamp(ad.dot(bd) / (na * nb), -1.0, 1.0);
}

/// One component of the mock embedder's per-token pseudo-vector:
/// h = mix64(fnv1a64(le64(seed) ++ token ++ le64(i))), mapped from the top
/// 53 bits of h affinely onto [-1, 1).
double mock_token_component(std::uint64_t seed, std::string_view token, std::uint64_t i);

/// L2-normalized mean of the per-token pseudo-vectors of the whitespace
/// tokens of `text`.
EmbeddingVector embed_mock(std::string_view text, Eigen::Index dim, std::uint64_t seed);

class EmbedderClient {
 public:
  virtual ~EmbedderClient() = default;
  /// Must tolerate concurrent calls.
  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
  virtual std::string id() = 0;
};

class MockEmbedder final : public EmbedderClient {
 public:
  MockEmbedder(Eigen::Index dim, std::uint64_t seed);

  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
  std::string id() override;

  Eigen::Index dim() const { return dim_; }

 private:
  Eigen::Index dim_;
  std::uint64_t seed_;
};

/// Client for the sidecar's POST /embed {texts} -> {vectors, dim, model_id}.
/// The embedder id is the sidecar's model_id, learned from the first reply.
class HttpEmbedder final : public EmbedderClient {
 public:
  explicit HttpEmbedder(std::string base_url,
                        std::chrono::milliseconds timeout = std::chrono::seconds(30));

  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
  std::string id() override;

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
  std::mutex mutex_;
  std::optional<std::string> model_id_;
  std::optional<Eigen::Index> dim_;
};

/// Validates a /embed response against the request size.
struct EmbedResponse {
  std::vector<EmbeddingVector> vectors;
  Eigen::Index dim = 0;
  std::string model_id;
};
EmbedResponse parse_embed_response(const nlohmann::json& body, std::size_t text_count);

/// Chunked, concurrent embedding with order preserved.
std::vector<EmbeddingVector> embed_batched(std::span<const std::string> texts,
                                           EmbedderClient& embedder, const BatchOptions& batching);

struct BuildMetadata {
  std::string regime;
  std::string config_id;
  std::uint64_t seed = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const BuildMetadata&, const BuildMetadata&) = default;
};

/// Per-domain centroids as the columns of a dim x k matrix. Immutable once
/// built; column order is the routing tie-break order.
class CentroidIndex {
 public:
  CentroidIndex(std::string embedder_id, std::vector<DomainLabel> domains,
                std::vector<std::uint64_t> counts, Eigen::MatrixXf centroids,
                BuildMetadata metadata);

  const std::string& embedder_id() const { return embedder_id_; }
  Eigen::Index dim() const { return centroids_.rows(); }
  std::size_t size() const { return domains_.size(); }
  const std::vector<DomainLabel>& domains() const { return domains_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  const Eigen::MatrixXf& centroids() const { return centroids_; }
  auto centroid(std::size_t i) const { return centroids_.col(static_cast<Eigen::Index>(i)); }
  const BuildMetadata& metadata() const { return metadata_; }

  std::optional<std::size_t> find(const DomainLabel& domain) const;

  /// Structural equality; centroid values compared exactly.
  friend bool operator==(const CentroidIndex& a, const CentroidIndex& b);

 private:
  std::string embedder_id_;
  std::vector<DomainLabel> domains_;
  std::vector<std::uint64_t> counts_;
  Eigen::MatrixXf centroids_;
  BuildMetadata metadata_;
};

struct BuildOptions {
  /// Column order of the index. Domains absent here follow in name order.
  std::vector<DomainLabel> domain_order = default_domains();
  BatchOptions batching{64, 4};
  BuildMetadata metadata;
};

struct BuildResult {
  CentroidIndex index;
  std::vector<std::string> warnings;
};

/// Centroid = mean of the L2-normalized source-text embeddings per domain.
BuildResult build_index(std::span<const LabeledPair> labeled_train, EmbedderClient& embedder,
                        const BuildOptions& options = {});

struct RoutingDecision {
  DomainLabel chosen;
  /// Cosine per domain, in index order.
  std::vector<std::pair<DomainLabel, double>> similarities;
  /// Best minus runner-up similarity; 0 for a single-domain index.
  double margin = 0.0;

  double similarity(const DomainLabel& domain) const;

  friend bool operator==(const RoutingDecision&, const RoutingDecision&) = default;
};

RoutingDecision route_embedding(const EmbeddingVector& embedding, const CentroidIndex& index);
RoutingDecision route(const std::string& text, const CentroidIndex& index, EmbedderClient& embedder);
std::vector<RoutingDecision> route_batch(std::span<const std::string> texts,
                                         const CentroidIndex& index, EmbedderClient& embedder,
                                         const BatchOptions& batching = {});

/// Binary container, little-endian:
///   "SRCENTRD" | u32 format_version | u32 dim | u32 domain_count
///   | str embedder_id | str regime | str config_id | u64 seed | i64 timestamp
///   | domain_count x (str name | u64 count | dim x f32)
/// where str is u32 byte length followed by UTF-8 bytes.
inline constexpr std::uint32_t kIndexFormatVersion = 1;

std::string serialize_index(const CentroidIndex& index);
CentroidIndex deserialize_index(std::string_view bytes);
void save_index(const CentroidIndex& index, const std::filesystem::path& path);
CentroidIndex load_index(const std::filesystem::path& path);

nlohmann::json to_json(const RoutingDecision& decision);
RoutingDecision routing_from_json(const nlohmann::json& record);
/// Summary for health reports: embedder id, dim, domains with counts.
nlohmann::json describe(const CentroidIndex& index);

}  // namespace semiroute
