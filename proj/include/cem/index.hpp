#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cem/core.hpp"

namespace cem {

// Exact flat inner-product index over encyclopedia entry-title embeddings.
// All vectors are unit-norm, so inner product equals cosine similarity.
// Immutable after build; concurrent searches need no synchronization.
class TitleIndex {
 public:
  struct Entry {
    std::string entry_id;
    std::string title;
  };

  struct Hit {
    std::size_t row;
    double score;
  };

  TitleIndex() = default;

  // Validates uniform dimension, finite components and unique entry ids;
  // re-normalizes rows (zero vectors are an error).
  static TitleIndex build(
      std::vector<Entry> entries,
      const std::vector<std::vector<double>>& vectors);

  // The k largest inner products, descending (fewer if the index is smaller).
  std::vector<Hit> search(const std::vector<double>& query, int k) const;

  std::size_t size() const { return entries_.size(); }
  int dimension() const { return dim_; }
  const Entry& entry(std::size_t row) const { return entries_[row]; }

  void save(const std::filesystem::path& path) const;
  static TitleIndex load(const std::filesystem::path& path);

 private:
  int dim_ = 0;
  std::vector<Entry> entries_;
  std::vector<float> data_;  // row-major, row i at data_[i * dim_]
};

// Appendix-style threshold rule over a descending score list: every hit
// scoring >= hi (the list is already capped at k); if none, the single best
// hit if it scores strictly above lo; otherwise empty.
std::vector<TitleIndex::Hit> threshold_select(
    const std::vector<TitleIndex::Hit>& sorted_desc, double hi = 0.80,
    double lo = 0.70);

}  // namespace cem
