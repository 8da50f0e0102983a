#include "cem/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "cem/jsonl.hpp"

namespace cem {

namespace {
constexpr char kMagic[8] = {'C', 'E', 'M', 'I', 'D', 'X', '1', '\0'};
}

TitleIndex TitleIndex::build(std::vector<Entry> entries,
                             const std::vector<std::vector<double>>& vectors) {
  if (entries.size() != vectors.size())
    throw ValidationError("index build: entries/vectors size mismatch");
  TitleIndex idx;
  if (entries.empty()) return idx;
  idx.dim_ = static_cast<int>(vectors[0].size());
  if (idx.dim_ == 0) throw ValidationError("index build: zero dimension");
  std::set<std::string> ids;
  idx.data_.reserve(entries.size() * idx.dim_);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto& v = vectors[i];
    if (static_cast<int>(v.size()) != idx.dim_)
      throw ValidationError("index build: dimension mismatch at row " +
                            std::to_string(i));
    double sq = 0.0;
    for (double x : v) {
      if (!std::isfinite(x))
        throw ValidationError("index build: non-finite component at row " +
                              std::to_string(i));
      sq += x * x;
    }
    double norm = std::sqrt(sq);
    if (norm < 1e-12)
      throw ValidationError("index build: zero vector at row " +
                            std::to_string(i));
    if (!ids.insert(entries[i].entry_id).second)
      throw ValidationError("index build: duplicate entry_id " +
                            entries[i].entry_id);
    for (double x : v) idx.data_.push_back(static_cast<float>(x / norm));
  }
  idx.entries_ = std::move(entries);
  return idx;
}

std::vector<TitleIndex::Hit> TitleIndex::search(
    const std::vector<double>& query, int k) const {
  if (static_cast<int>(query.size()) != dim_)
    throw ValidationError("search: query dimension " +
                          std::to_string(query.size()) + " != index " +
                          std::to_string(dim_));
  if (k <= 0) return {};
  std::vector<Hit> hits;
  hits.reserve(entries_.size());
  for (std::size_t row = 0; row < entries_.size(); ++row) {
    const float* p = data_.data() + row * dim_;
    double s = 0.0;
    for (int d = 0; d < dim_; ++d) s += p[d] * query[d];
    hits.push_back({row, s});
  }
  auto cmp = [](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.row < b.row;  // stable tie order
  };
  std::size_t kk = std::min<std::size_t>(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + kk, hits.end(), cmp);
  hits.resize(kk);
  return hits;
}

void TitleIndex::save(const std::filesystem::path& path) const {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  json meta = json::array();
  for (const auto& e : entries_)
    meta.push_back(json{{"id", e.entry_id}, {"title", e.title}});
  std::string meta_str = meta.dump();
  std::uint32_t version = 1;
  std::uint32_t dim = static_cast<std::uint32_t>(dim_);
  std::uint64_t count = entries_.size();
  std::uint64_t meta_len = meta_str.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(&meta_len), sizeof meta_len);
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  out.write(reinterpret_cast<const char*>(data_.data()),
            static_cast<std::streamsize>(data_.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

TitleIndex TitleIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0, dim = 0;
  std::uint64_t count = 0, meta_len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IoError("not an index file: " + path.string());
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&dim), sizeof dim);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  in.read(reinterpret_cast<char*>(&meta_len), sizeof meta_len);
  if (!in || version != 1)
    throw IoError("unsupported index version in " + path.string());
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  TitleIndex idx;
  idx.dim_ = static_cast<int>(dim);
  for (const auto& e : json::parse(meta_str)) {
    idx.entries_.push_back(
        {e.at("id").get<std::string>(), e.at("title").get<std::string>()});
  }
  if (idx.entries_.size() != count)
    throw IoError("index metadata count mismatch in " + path.string());
  idx.data_.resize(count * dim);
  in.read(reinterpret_cast<char*>(idx.data_.data()),
          static_cast<std::streamsize>(idx.data_.size() * sizeof(float)));
  if (!in) throw IoError("truncated index file: " + path.string());
  return idx;
}

std::vector<TitleIndex::Hit> threshold_select(
    const std::vector<TitleIndex::Hit>& sorted_desc, double hi, double lo) {
  std::vector<TitleIndex::Hit> out;
  for (const auto& h : sorted_desc) {
    if (h.score >= hi) out.push_back(h);
  }
  if (!out.empty()) return out;
  if (!sorted_desc.empty() && sorted_desc.front().score > lo)
    return {sorted_desc.front()};
  return {};
}

}  // namespace cem
