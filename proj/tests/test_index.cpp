#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cem/index.hpp"
#include "cem/rng.hpp"
#include "fixtures.hpp"

using namespace cem;

namespace {

std::vector<std::vector<double>> random_unit_vectors(Rng& rng, std::size_t n,
                                                     int d) {
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (auto& v : out) {
    double sq = 0.0;
    for (auto& x : v) {
      x = rng.next_unit() * 2.0 - 1.0;
      sq += x * x;
    }
    double norm = std::sqrt(sq);
    for (auto& x : v) x /= norm;
  }
  return out;
}

std::vector<TitleIndex::Entry> entries_for(std::size_t n) {
  std::vector<TitleIndex::Entry> e;
  for (std::size_t i = 0; i < n; ++i)
    e.push_back({"id" + std::to_string(i), "title " + std::to_string(i)});
  return e;
}

// Brute-force oracle: full scan with double accumulation over the float32
// rows the index actually stores, matching its score arithmetic.
std::vector<TitleIndex::Hit> brute_force(
    const std::vector<std::vector<double>>& rows,
    const std::vector<double>& q, int k) {
  std::vector<TitleIndex::Hit> hits;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double sq = 0.0;
    for (double x : rows[i]) sq += x * x;
    double norm = std::sqrt(sq);
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j)
      s += static_cast<double>(static_cast<float>(rows[i][j] / norm)) * q[j];
    hits.push_back({i, s});
  }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.row < b.row;
  });
  if (static_cast<int>(hits.size()) > k) hits.resize(k);
  return hits;
}

}  // namespace

TEST_CASE("three orthonormal vectors index and score exactly") {
  std::vector<std::vector<double>> vecs = {
      {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  auto idx = TitleIndex::build(entries_for(3), vecs);
  CHECK(idx.size() == 3);
  CHECK(idx.dimension() == 3);
  auto hits = idx.search({1, 0, 0}, 2);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].row == 0);
  CHECK(hits[0].score == doctest::Approx(1.0));
  CHECK(hits[1].score == doctest::Approx(0.0));
}

TEST_CASE("build validates input") {
  auto e2 = entries_for(2);
  CHECK_THROWS_AS(TitleIndex::build(e2, {{1, 0}, {1, 0, 0}}),
                  ValidationError);  // mixed dimension
  CHECK_THROWS_AS(TitleIndex::build(e2, {{1, 0}}),
                  ValidationError);  // count mismatch
  CHECK_THROWS_AS(
      TitleIndex::build(e2, {{1.0, 0.0}, {std::nan(""), 1.0}}),
      ValidationError);  // non-finite
  CHECK_THROWS_AS(TitleIndex::build(e2, {{1, 0}, {0, 0}}),
                  ValidationError);  // zero vector
  auto dup = e2;
  dup[1].entry_id = dup[0].entry_id;
  CHECK_THROWS_AS(TitleIndex::build(dup, {{1, 0}, {0, 1}}),
                  ValidationError);  // duplicate ids
}

TEST_CASE("search equals brute force on 1000 random vectors, d=64") {
  Rng rng(31337);
  auto rows = random_unit_vectors(rng, 1000, 64);
  auto idx = TitleIndex::build(entries_for(1000), rows);
  auto queries = random_unit_vectors(rng, 100, 64);
  for (const auto& q : queries) {
    for (int k : {1, 4, 10}) {
      auto got = idx.search(q, k);
      auto want = brute_force(rows, q, k);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].row == want[i].row);
        CHECK(got[i].score == doctest::Approx(want[i].score).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("threshold_select reproduces all three branches") {
  using Hits = std::vector<TitleIndex::Hit>;
  // branch 1: everything >= hi survives
  Hits strong = {{0, 0.95}, {1, 0.85}, {2, 0.80}, {3, 0.75}};
  auto got = threshold_select(strong, 0.80, 0.70);
  REQUIRE(got.size() == 3);
  CHECK(got[2].score == doctest::Approx(0.80));

  // branch 2: nothing >= hi, best strictly above lo survives alone
  Hits middling = {{4, 0.78}, {5, 0.76}, {6, 0.71}};
  got = threshold_select(middling, 0.80, 0.70);
  REQUIRE(got.size() == 1);
  CHECK(got[0].row == 4);

  // branch 3: best not strictly above lo yields nothing; 0.70 exactly is out
  Hits weak = {{7, 0.70}, {8, 0.60}};
  CHECK(threshold_select(weak, 0.80, 0.70).empty());
  CHECK(threshold_select({}, 0.80, 0.70).empty());

  // just above the boundary is in
  Hits boundary = {{9, std::nextafter(0.70, 1.0)}};
  CHECK(threshold_select(boundary, 0.80, 0.70).size() == 1);
}

TEST_CASE("save/load round-trips bytes and results") {
  Rng rng(99);
  auto rows = random_unit_vectors(rng, 50, 16);
  auto idx = TitleIndex::build(entries_for(50), rows);
  auto dir = fixtures::scratch("index_io");
  idx.save(dir / "x.bin");
  auto back = TitleIndex::load(dir / "x.bin");
  CHECK(back.size() == idx.size());
  CHECK(back.dimension() == idx.dimension());
  CHECK(back.entry(7).entry_id == idx.entry(7).entry_id);
  auto q = random_unit_vectors(rng, 1, 16)[0];
  auto a = idx.search(q, 5);
  auto b = back.search(q, 5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].row == b[i].row);
    CHECK(a[i].score == b[i].score);
  }
  CHECK_THROWS_AS(TitleIndex::load(dir / "missing.bin"), IoError);
  write_file(dir / "junk.bin", "not an index file at all");
  CHECK_THROWS_AS(TitleIndex::load(dir / "junk.bin"), IoError);
}

TEST_CASE("search caps k at index size and rejects bad queries") {
  auto idx = TitleIndex::build(entries_for(3),
                               {{1.0, 0}, {0, 1.0}, {-1.0, 0}});
  CHECK(idx.search({1, 0}, 10).size() == 3);
  CHECK_THROWS_AS(idx.search({1, 0, 0}, 2), ValidationError);
}
