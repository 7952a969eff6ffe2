#include "groupdiff/grouping.hpp"

#include <cmath>

#include "groupdiff/binary_io.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/tolerances.hpp"

namespace groupdiff {

DatasetIndex::DatasetIndex(std::vector<std::uint64_t> ids, std::vector<int> class_ids, std::size_t feature_dim,
                           std::vector<double> features, double tau)
    : ids_(std::move(ids)), class_ids_(std::move(class_ids)), feature_dim_(feature_dim), features_(std::move(features)) {
  if (class_ids_.size() != ids_.size() || features_.size() != ids_.size() * feature_dim_) {
    throw DimensionError("DatasetIndex: inconsistent sizes");
  }
  set_tau(tau);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!position_.emplace(ids_[i], i).second) {
      throw ValidationError("DatasetIndex: duplicate id " + std::to_string(ids_[i]));
    }
    const double n = l2_norm(row(i));
    if (std::abs(n - 1.0) > tol::kIndexUnitNorm) {
      throw ValidationError("DatasetIndex: feature row " + std::to_string(i) + " is not unit-norm");
    }
  }
}

void DatasetIndex::set_tau(double tau) {
  if (!(tau >= -1.0 && tau <= 1.0)) throw ValidationError("similarity threshold must lie in [-1, 1]");
  tau_ = tau;
}

std::span<const double> DatasetIndex::row(std::size_t position) const {
  if (position >= ids_.size()) throw DimensionError("DatasetIndex: row out of range");
  return std::span<const double>(features_).subspan(position * feature_dim_, feature_dim_);
}

std::size_t DatasetIndex::position_of(std::uint64_t id) const {
  auto it = position_.find(id);
  if (it == position_.end()) throw ValidationError("unknown image id " + std::to_string(id));
  return it->second;
}

DatasetIndex build_index(const Dataset& dataset, double tau, const Encoder& encoder) {
  if (dataset.images.empty()) throw ValidationError("build_index: empty dataset");
  std::vector<std::uint64_t> ids;
  std::vector<int> classes;
  std::vector<double> features;
  std::size_t dim = 0;
  for (const auto& img : dataset.images) {
    const auto f = encoder ? encoder(img) : encode(img);
    if (dim == 0) dim = f.size();
    if (f.size() != dim || dim == 0) throw DimensionError("build_index: encoder returned inconsistent widths");
    ids.push_back(img.id);
    classes.push_back(img.class_id);
    features.insert(features.end(), f.begin(), f.end());
  }
  return DatasetIndex(std::move(ids), std::move(classes), dim, std::move(features), tau);
}

std::vector<std::uint64_t> query(std::uint64_t anchor_id, const DatasetIndex& index, double tau) {
  const std::size_t a = index.position_of(anchor_id);
  const auto fa = index.row(a);
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (i == a) continue;
    if (dot(fa, index.row(i)) >= tau) out.push_back(index.ids()[i]);
  }
  return out;
}

std::vector<std::uint64_t> query(std::uint64_t anchor_id, const DatasetIndex& index) {
  return query(anchor_id, index, index.tau());
}

std::string to_string(QueryMode mode) {
  switch (mode) {
    case QueryMode::kRandom: return "random";
    case QueryMode::kClass: return "class";
    case QueryMode::kSimilarity: return "similarity";
  }
  return "?";
}

QueryMode parse_query_mode(const std::string& text) {
  if (text == "random") return QueryMode::kRandom;
  if (text == "class") return QueryMode::kClass;
  if (text == "similarity") return QueryMode::kSimilarity;
  throw ValidationError("unknown query mode '" + text + "'");
}

void GroupSpec::validate() const {
  if (group_size < 1) throw ValidationError("group size must be >= 1");
  if (!(tau >= -1.0 && tau <= 1.0)) throw ValidationError("similarity threshold must lie in [-1, 1]");
}

namespace {

std::vector<std::uint64_t> candidate_pool(std::uint64_t anchor_id, QueryMode mode, double tau,
                                          const DatasetIndex& index) {
  const std::size_t a = index.position_of(anchor_id);
  switch (mode) {
    case QueryMode::kSimilarity: return query(anchor_id, index, tau);
    case QueryMode::kClass: {
      std::vector<std::uint64_t> out;
      for (std::size_t i = 0; i < index.size(); ++i) {
        if (i != a && index.class_ids()[i] == index.class_ids()[a]) out.push_back(index.ids()[i]);
      }
      return out;
    }
    case QueryMode::kRandom: {
      std::vector<std::uint64_t> out;
      out.reserve(index.size());
      for (std::size_t i = 0; i < index.size(); ++i) {
        if (i != a) out.push_back(index.ids()[i]);
      }
      return out;
    }
  }
  return {};
}

}  // namespace

AssembledGroup assemble_group(std::uint64_t anchor_id, const GroupSpec& spec, const DatasetIndex& index, Rng& rng) {
  spec.validate();
  index.position_of(anchor_id);
  AssembledGroup group;
  group.ids.push_back(anchor_id);
  group.mode_used = spec.mode;
  const std::size_t need = spec.group_size - 1;
  if (need == 0) return group;

  std::vector<std::uint64_t> pool = candidate_pool(anchor_id, spec.mode, spec.tau, index);
  while (pool.empty()) {
    const QueryMode from = group.mode_used;
    if (from == QueryMode::kRandom) {
      throw ValidationError("assemble_group: dataset has no image other than the anchor");
    }
    group.mode_used = from == QueryMode::kSimilarity ? QueryMode::kClass : QueryMode::kRandom;
    if (!group.fallback_note.empty()) group.fallback_note += "; ";
    group.fallback_note += "empty " + to_string(from) + " pool, fell back to " + to_string(group.mode_used);
    pool = candidate_pool(anchor_id, group.mode_used, spec.tau, index);
  }

  const std::size_t take = std::min(need, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(pool.size() - 1)));
    std::swap(pool[i], pool[j]);
    group.ids.push_back(pool[i]);
  }
  if (take < need) {
    group.padded_with_replacement = true;
    if (!group.fallback_note.empty()) group.fallback_note += "; ";
    group.fallback_note += "pool of " + std::to_string(pool.size()) + " < " + std::to_string(need) +
                           ", padded with replacement";
    for (std::size_t i = take; i < need; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(pool.size() - 1)));
      group.ids.push_back(pool[j]);
    }
  }
  return group;
}

AssembledGroup assemble_group(std::uint64_t anchor_id, const GroupSpec& spec, const DatasetIndex& index) {
  Rng rng(derive_seed(spec.seed, anchor_id));
  return assemble_group(anchor_id, spec, index, rng);
}

void write_index(const std::string& path, const DatasetIndex& index) {
  io::BinaryWriter w(path);
  w.magic("GDI1");
  w.u32(static_cast<std::uint32_t>(index.size()));
  w.u32(static_cast<std::uint32_t>(index.feature_dim()));
  w.f64(index.tau());
  for (std::size_t i = 0; i < index.size(); ++i) {
    w.u64(index.ids()[i]);
    w.u32(static_cast<std::uint32_t>(index.class_ids()[i]));
  }
  w.f64s(index.features());
  w.close();
}

DatasetIndex read_index(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic("GDI1");
  const auto count = r.u32();
  const auto dim = r.u32();
  const double tau = r.f64();
  if (dim == 0 || dim > 1u << 16) throw IoError(path + ": implausible feature width");
  std::vector<std::uint64_t> ids(count);
  std::vector<int> classes(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ids[i] = r.u64();
    classes[i] = static_cast<int>(r.u32());
  }
  std::vector<double> features(static_cast<std::size_t>(count) * dim);
  r.f64s(features);
  if (!r.at_end()) throw IoError(path + ": trailing bytes after index");
  return DatasetIndex(std::move(ids), std::move(classes), dim, std::move(features), tau);
}

}  // namespace groupdiff
