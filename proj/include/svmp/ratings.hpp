#pragma once

// Sparse observed ratings with per-user and per-item child indexes,
// the tab-separated loader, and the synthetic generator.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "svmp/rng.hpp"

namespace svmp {

struct Rating {
  std::size_t user = 0;
  std::size_t item = 0;
  double value = 0.0;

  friend bool operator==(const Rating&, const Rating&) = default;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Immutable set of observed ratings. `user_children(m)` and
/// `item_children(n)` list indices into `ratings()` in ascending order; they
/// are exact inverted indexes of the triplets.
class SparseRatings {
 public:
  SparseRatings() = default;

  SparseRatings(std::size_t num_users, std::size_t num_items, std::vector<Rating> ratings)
      : num_users_(num_users), num_items_(num_items), ratings_(std::move(ratings)) {
    user_children_.resize(num_users_);
    item_children_.resize(num_items_);
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(ratings_.size());
    for (std::size_t r = 0; r < ratings_.size(); ++r) {
      const Rating& x = ratings_[r];
      if (x.user >= num_users_ || x.item >= num_items_) {
        throw DataError("rating " + std::to_string(r) + " has an index out of range");
      }
      if (!std::isfinite(x.value)) {
        throw DataError("rating " + std::to_string(r) + " is not finite");
      }
      const std::uint64_t key = static_cast<std::uint64_t>(x.user) * num_items_ + x.item;
      if (!seen.insert(key).second) {
        throw DataError("duplicate (user, item) pair (" + std::to_string(x.user) + ", " +
                        std::to_string(x.item) + ")");
      }
      user_children_[x.user].push_back(r);
      item_children_[x.item].push_back(r);
    }
  }

  std::size_t num_users() const noexcept { return num_users_; }
  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t size() const noexcept { return ratings_.size(); }
  bool empty() const noexcept { return ratings_.empty(); }

  std::span<const Rating> ratings() const noexcept { return ratings_; }
  const Rating& operator[](std::size_t r) const { return ratings_[r]; }

  std::span<const std::size_t> user_children(std::size_t m) const {
    return user_children_.at(m);
  }
  std::span<const std::size_t> item_children(std::size_t n) const {
    return item_children_.at(n);
  }

  std::size_t max_children() const noexcept {
    std::size_t best = 0;
    for (const auto& c : user_children_) best = std::max(best, c.size());
    for (const auto& c : item_children_) best = std::max(best, c.size());
    return best;
  }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<Rating> ratings_;
  std::vector<std::vector<std::size_t>> user_children_;
  std::vector<std::vector<std::size_t>> item_children_;
};

struct LoadedRatings {
  SparseRatings data;
  std::vector<std::string> user_ids;  // dense index -> original id
  std::vector<std::string> item_ids;
};

/// Reads `user<TAB>item<TAB>rating` records. Lines starting with '#' and
/// blank lines are skipped. Ids are re-indexed densely in order of first
/// appearance.
inline LoadedRatings load_ratings(std::istream& in) {
  LoadedRatings out;
  std::unordered_map<std::string, std::size_t> users;
  std::unordered_map<std::string, std::size_t> items;
  std::vector<Rating> ratings;
  std::set<std::pair<std::size_t, std::size_t>> pairs;

  auto intern = [](std::unordered_map<std::string, std::size_t>& index,
                   std::vector<std::string>& names, std::string_view id) {
    auto [it, inserted] = index.try_emplace(std::string(id), names.size());
    if (inserted) names.emplace_back(id);
    return it->second;
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;

    const auto fail = [&](const std::string& why) {
      return DataError("line " + std::to_string(line_no) + ": " + why);
    };
    const std::size_t tab1 = line.find('\t');
    const std::size_t tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos || line.find('\t', tab2 + 1) != std::string::npos) {
      throw fail("expected three tab-separated fields");
    }
    const std::string_view view(line);
    const auto user = view.substr(0, tab1);
    const auto item = view.substr(tab1 + 1, tab2 - tab1 - 1);
    const auto value = view.substr(tab2 + 1);
    if (user.empty() || item.empty()) throw fail("empty id");

    double rating = 0.0;
    const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), rating);
    if (ec != std::errc{} || end != value.data() + value.size() || !std::isfinite(rating)) {
      throw fail("rating '" + std::string(value) + "' is not a decimal number");
    }
    const std::size_t m = intern(users, out.user_ids, user);
    const std::size_t n = intern(items, out.item_ids, item);
    if (!pairs.insert({m, n}).second) {
      throw fail("duplicate pair (" + std::string(user) + ", " + std::string(item) + ")");
    }
    ratings.push_back({m, n, rating});
  }
  if (ratings.empty()) throw DataError("no ratings in input");

  out.data = SparseRatings(out.user_ids.size(), out.item_ids.size(), std::move(ratings));
  return out;
}

/// Ground-truth factors of a synthetic dataset, row-major M x K and N x K.
struct SyntheticTruth {
  std::size_t K = 0;
  std::vector<double> U;
  std::vector<double> V;

  double u(std::size_t m, std::size_t k) const { return U[m * K + k]; }
  double v(std::size_t n, std::size_t k) const { return V[n * K + k]; }
};

struct SyntheticSpec {
  std::size_t M = 200;
  std::size_t N = 300;
  std::size_t K = 5;
  double density = 0.08;
  double noise_sd = 1.0;
};

inline constexpr int kSyntheticMaxRetries = 1000;

/// Draws U, V from N(0, 1), includes each cell independently with
/// probability `density` (redrawing the pattern until every user and item
/// has a rating), and sets r = u^T v + N(0, noise_sd^2).
inline std::pair<SparseRatings, SyntheticTruth> generate_synthetic(const SyntheticSpec& spec,
                                                                   std::uint64_t seed) {
  if (spec.M == 0 || spec.N == 0 || spec.K == 0) {
    throw std::invalid_argument("generate_synthetic: dimensions must be positive");
  }
  if (!(spec.density > 0.0 && spec.density <= 1.0)) {
    throw std::invalid_argument("generate_synthetic: density must lie in (0, 1]");
  }
  if (!(spec.noise_sd >= 0.0) || !std::isfinite(spec.noise_sd)) {
    throw std::invalid_argument("generate_synthetic: noise_sd must be non-negative");
  }

  Rng rng = Rng::stream(seed, Stream::data);
  SyntheticTruth truth{spec.K, std::vector<double>(spec.M * spec.K),
                       std::vector<double>(spec.N * spec.K)};
  for (double& x : truth.U) x = rng.normal();
  for (double& x : truth.V) x = rng.normal();

  std::vector<std::pair<std::size_t, std::size_t>> cells;
  bool covered = false;
  for (int attempt = 0; attempt < kSyntheticMaxRetries && !covered; ++attempt) {
    cells.clear();
    std::vector<char> user_hit(spec.M, 0);
    std::vector<char> item_hit(spec.N, 0);
    for (std::size_t m = 0; m < spec.M; ++m) {
      for (std::size_t n = 0; n < spec.N; ++n) {
        if (rng.uniform() < spec.density) {
          cells.emplace_back(m, n);
          user_hit[m] = item_hit[n] = 1;
        }
      }
    }
    covered = std::find(user_hit.begin(), user_hit.end(), 0) == user_hit.end() &&
              std::find(item_hit.begin(), item_hit.end(), 0) == item_hit.end();
  }
  if (!covered) {
    throw DataError("generate_synthetic: could not give every user and item a rating within " +
                    std::to_string(kSyntheticMaxRetries) + " attempts");
  }

  std::vector<Rating> ratings;
  ratings.reserve(cells.size());
  for (const auto& [m, n] : cells) {
    double dot = 0.0;
    for (std::size_t k = 0; k < spec.K; ++k) dot += truth.u(m, k) * truth.v(n, k);
    const double noise = spec.noise_sd > 0.0 ? rng.normal(0.0, spec.noise_sd) : 0.0;
    ratings.push_back({m, n, dot + noise});
  }
  return {SparseRatings(spec.M, spec.N, std::move(ratings)), std::move(truth)};
}

}  // namespace svmp
