#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "groupdiff/rng.hpp"
#include "groupdiff/toy_data.hpp"

namespace groupdiff {

inline constexpr double kDefaultSimilarityThreshold = 0.7;

/// Feature rows of a dataset in dataset order, searchable by cosine similarity.
class DatasetIndex {
 public:
  DatasetIndex() = default;
  DatasetIndex(std::vector<std::uint64_t> ids, std::vector<int> class_ids, std::size_t feature_dim,
               std::vector<double> features, double tau);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  double tau() const noexcept { return tau_; }
  void set_tau(double tau);

  const std::vector<std::uint64_t>& ids() const noexcept { return ids_; }
  const std::vector<int>& class_ids() const noexcept { return class_ids_; }
  const std::vector<double>& features() const noexcept { return features_; }
  std::span<const double> row(std::size_t position) const;

  /// Row position of an id; throws ValidationError for unknown ids.
  std::size_t position_of(std::uint64_t id) const;
  bool contains(std::uint64_t id) const { return position_.contains(id); }

 private:
  std::vector<std::uint64_t> ids_;
  std::vector<int> class_ids_;
  std::size_t feature_dim_ = 0;
  std::vector<double> features_;
  double tau_ = kDefaultSimilarityThreshold;
  std::unordered_map<std::uint64_t, std::size_t> position_;
};

using Encoder = std::function<std::vector<double>(const ToyImage&)>;

DatasetIndex build_index(const Dataset& dataset, double tau = kDefaultSimilarityThreshold,
                         const Encoder& encoder = {});

/// Ids i ≠ anchor with cos(f_anchor, f_i) ≥ tau, in index order.
std::vector<std::uint64_t> query(std::uint64_t anchor_id, const DatasetIndex& index);
std::vector<std::uint64_t> query(std::uint64_t anchor_id, const DatasetIndex& index, double tau);

enum class QueryMode { kRandom, kClass, kSimilarity };

std::string to_string(QueryMode mode);
QueryMode parse_query_mode(const std::string& text);

struct GroupSpec {
  std::size_t group_size = 1;
  QueryMode mode = QueryMode::kSimilarity;
  double tau = kDefaultSimilarityThreshold;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GroupSpec&) const = default;
};

struct AssembledGroup {
  std::vector<std::uint64_t> ids;  // ids[0] is the anchor
  QueryMode mode_used = QueryMode::kSimilarity;
  bool padded_with_replacement = false;
  /// Human-readable account of any fallback, empty when none happened.
  std::string fallback_note;
};

/// Anchor followed by N−1 members drawn without replacement from the mode's
/// candidate pool. A pool smaller than N−1 is padded by drawing from it with
/// replacement; an empty pool downgrades similarity → class → random.
AssembledGroup assemble_group(std::uint64_t anchor_id, const GroupSpec& spec, const DatasetIndex& index, Rng& rng);
AssembledGroup assemble_group(std::uint64_t anchor_id, const GroupSpec& spec, const DatasetIndex& index);

/// "GDI1" u32 count, u32 F, f64 tau, per row (u64 id, u32 class_id), then count×F f64 features.
void write_index(const std::string& path, const DatasetIndex& index);
DatasetIndex read_index(const std::string& path);

}  // namespace groupdiff
