#pragma once

// Gaussian bilinear matrix factorization, r_mn ~ N(u_m^T v_n, 1), with
// N(0, 1) priors on every u_mk and v_nk and a fully factorized Gaussian q.
//
// Hidden factors are addressed either by FactorAddress or by a flat index:
// users first, row-major by (row, coordinate), then items in the same order.
// The flat order is also the sweep order of every optimizer.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "svmp/expfam.hpp"
#include "svmp/ratings.hpp"

namespace svmp {

enum class Side { user, item };

struct FactorAddress {
  Side side = Side::user;
  std::size_t row = 0;
  std::size_t coordinate = 0;

  friend bool operator==(const FactorAddress&, const FactorAddress&) = default;
};

inline std::string to_string(const FactorAddress& a) {
  return std::string(a.side == Side::user ? "u" : "v") + "[" + std::to_string(a.row) + "," +
         std::to_string(a.coordinate) + "]";
}

/// One child's additive term in the natural-parameter update.
struct ChildContribution {
  double precision_add = 0.0;
  double mtp_add = 0.0;
};

/// Unvalidated (precision, mtp) pair, used while accumulating updates that
/// may overflow before they are committed to a GaussianNatural.
struct NaturalSum {
  double precision = 0.0;
  double mtp = 0.0;

  bool valid() const noexcept { return GaussianNatural::is_valid(precision, mtp); }
  GaussianNatural to_natural() const { return {precision, mtp}; }
};

/// Variational parameters for all user and item coordinates.
class FactorState {
 public:
  FactorState() = default;

  FactorState(std::size_t M, std::size_t N, std::size_t K, GaussianNatural fill = {})
      : M_(M), N_(N), K_(K), factors_((M + N) * K, fill) {}

  FactorState(std::size_t M, std::size_t N, std::size_t K, std::vector<GaussianNatural> flat)
      : M_(M), N_(N), K_(K), factors_(std::move(flat)) {
    if (factors_.size() != (M + N) * K) {
      throw std::invalid_argument("FactorState: expected " + std::to_string((M + N) * K) +
                                  " factors, got " + std::to_string(factors_.size()));
    }
  }

  std::size_t num_users() const noexcept { return M_; }
  std::size_t num_items() const noexcept { return N_; }
  std::size_t K() const noexcept { return K_; }
  std::size_t size() const noexcept { return factors_.size(); }

  std::size_t flat_index(const FactorAddress& a) const {
    const std::size_t rows = a.side == Side::user ? M_ : N_;
    if (a.row >= rows || a.coordinate >= K_) {
      throw std::out_of_range("FactorState: address " + to_string(a) + " out of range");
    }
    return (a.side == Side::user ? 0 : M_ * K_) + a.row * K_ + a.coordinate;
  }

  FactorAddress address(std::size_t flat) const {
    if (flat >= factors_.size()) throw std::out_of_range("FactorState: flat index out of range");
    if (flat < M_ * K_) return {Side::user, flat / K_, flat % K_};
    flat -= M_ * K_;
    return {Side::item, flat / K_, flat % K_};
  }

  GaussianNatural& operator[](std::size_t flat) { return factors_[flat]; }
  const GaussianNatural& operator[](std::size_t flat) const { return factors_[flat]; }
  GaussianNatural& at(const FactorAddress& a) { return factors_[flat_index(a)]; }
  const GaussianNatural& at(const FactorAddress& a) const { return factors_[flat_index(a)]; }

  std::span<const GaussianNatural> user_row(std::size_t m) const {
    return std::span(factors_).subspan(m * K_, K_);
  }
  std::span<const GaussianNatural> item_row(std::size_t n) const {
    return std::span(factors_).subspan(M_ * K_ + n * K_, K_);
  }
  std::span<const GaussianNatural> row(Side side, std::size_t r) const {
    return side == Side::user ? user_row(r) : item_row(r);
  }

  std::span<const GaussianNatural> flat() const noexcept { return factors_; }

  friend bool operator==(const FactorState&, const FactorState&) = default;

 private:
  std::size_t M_ = 0;
  std::size_t N_ = 0;
  std::size_t K_ = 0;
  std::vector<GaussianNatural> factors_;
};

inline GaussianNatural prior() noexcept { return {}; }

namespace detail {

inline Moments moments_of(const Moments& m) noexcept { return m; }
inline Moments moments_of(const GaussianNatural& g) noexcept { return moments(g); }

template <class Row>
void require_length(const Row& row, std::size_t K, const char* what) {
  if (row.size() != K) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(K) +
                                " coordinates, got " + std::to_string(row.size()));
  }
}

template <class OwnRow, class OtherRow>
ChildContribution contribution(std::size_t k, double rating, const OwnRow& own,
                               const OtherRow& other) {
  double others = 0.0;
  for (std::size_t j = 0; j < own.size(); ++j) {
    if (j == k) continue;
    others += moments_of(own[j]).mean * moments_of(other[j]).mean;
  }
  const Moments o = moments_of(other[k]);
  return {o.variance + o.mean * o.mean, o.mean * (rating - others)};
}

template <class UserRow, class ItemRow>
double expected_residual_sq(double rating, const UserRow& user, const ItemRow& item) {
  double dot = 0.0;
  double extra = 0.0;
  for (std::size_t k = 0; k < user.size(); ++k) {
    const Moments u = moments_of(user[k]);
    const Moments v = moments_of(item[k]);
    const double mu2 = u.mean * u.mean;
    const double mv2 = v.mean * v.mean;
    dot += u.mean * v.mean;
    extra += (u.variance + mu2) * (v.variance + mv2) - mu2 * mv2;
  }
  return rating * rating - 2.0 * rating * dot + dot * dot + extra;
}

}  // namespace detail

/// Term added to the addressed factor's natural parameters by one rating.
/// `own_row` holds the q-moments of the row containing the factor, and
/// `other_row` those of the co-parent row (the item row for a user factor and
/// vice versa).
inline ChildContribution child_contribution(const FactorAddress& addr, double rating,
                                            std::span<const Moments> own_row,
                                            std::span<const Moments> other_row) {
  if (own_row.size() != other_row.size()) {
    throw std::invalid_argument("child_contribution: row lengths differ");
  }
  if (addr.coordinate >= own_row.size()) {
    throw std::invalid_argument("child_contribution: coordinate out of range");
  }
  return detail::contribution(addr.coordinate, rating, own_row, other_row);
}

/// E_q[(r - u^T v)^2] under the fully factorized q.
inline double expected_residual_sq(double rating, std::span<const Moments> user_row,
                                   std::span<const Moments> item_row) {
  if (user_row.size() != item_row.size()) {
    throw std::invalid_argument("expected_residual_sq: row lengths differ");
  }
  return detail::expected_residual_sq(rating, user_row, item_row);
}

inline double predict(std::span<const Moments> user_row, std::span<const Moments> item_row) {
  if (user_row.size() != item_row.size()) {
    throw std::invalid_argument("predict: row lengths differ");
  }
  double dot = 0.0;
  for (std::size_t k = 0; k < user_row.size(); ++k) dot += user_row[k].mean * item_row[k].mean;
  return dot;
}

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// Conjugate network contract used by the optimizers and diagnostics. A
/// network exposes flat-indexed factors with their child lists and the
/// per-child natural-parameter contributions, plus the ELBO.
template <class Net>
concept ConjugateNetwork = requires(const Net& net, const FactorState& state, std::size_t i) {
  { net.num_factors() } -> std::convertible_to<std::size_t>;
  { net.children(i) } -> std::convertible_to<std::span<const std::size_t>>;
  { net.prior(i) } -> std::convertible_to<GaussianNatural>;
  { net.contribution(i, i, state) } -> std::convertible_to<ChildContribution>;
  { net.elbo(state) } -> std::convertible_to<double>;
  { net.local_elbo(state, i) } -> std::convertible_to<double>;
  { net.num_observations() } -> std::convertible_to<std::size_t>;
  { net.observation_parents(i) } -> std::convertible_to<std::vector<std::size_t>>;
};

/// The bilinear ratings model bound to one dataset and trait count K.
class BmfModel {
 public:
  BmfModel(const SparseRatings& data, std::size_t K) : data_(&data), K_(K) {
    if (K == 0) throw std::invalid_argument("BmfModel: K must be positive");
  }

  const SparseRatings& data() const noexcept { return *data_; }
  std::size_t K() const noexcept { return K_; }
  std::size_t num_factors() const noexcept {
    return (data_->num_users() + data_->num_items()) * K_;
  }
  std::size_t num_observations() const noexcept { return data_->size(); }

  FactorAddress address(std::size_t flat) const {
    const std::size_t users = data_->num_users() * K_;
    if (flat < users) return {Side::user, flat / K_, flat % K_};
    flat -= users;
    return {Side::item, flat / K_, flat % K_};
  }

  std::size_t flat_index(const FactorAddress& a) const {
    return (a.side == Side::user ? 0 : data_->num_users() * K_) + a.row * K_ + a.coordinate;
  }

  FactorState make_state(GaussianNatural fill = {}) const {
    return FactorState(data_->num_users(), data_->num_items(), K_, fill);
  }

  void check_state(const FactorState& state) const {
    if (state.num_users() != data_->num_users() || state.num_items() != data_->num_items() ||
        state.K() != K_) {
      throw std::invalid_argument("BmfModel: state dimensions do not match the data");
    }
  }

  std::span<const std::size_t> children(std::size_t flat) const {
    const FactorAddress a = address(flat);
    return a.side == Side::user ? data_->user_children(a.row) : data_->item_children(a.row);
  }

  GaussianNatural prior(std::size_t) const noexcept { return svmp::prior(); }

  ChildContribution contribution(std::size_t flat, std::size_t rating_index,
                                 const FactorState& state) const {
    const FactorAddress a = address(flat);
    const Rating& r = (*data_)[rating_index];
    if (a.side == Side::user) {
      return detail::contribution(a.coordinate, r.value, state.user_row(r.user),
                                  state.item_row(r.item));
    }
    return detail::contribution(a.coordinate, r.value, state.item_row(r.item),
                                state.user_row(r.user));
  }

  /// Flat indices of every factor with the given rating as a child, in
  /// sweep order.
  std::vector<std::size_t> observation_parents(std::size_t rating_index) const {
    const Rating& r = (*data_)[rating_index];
    std::vector<std::size_t> out;
    out.reserve(2 * K_);
    for (std::size_t k = 0; k < K_; ++k) out.push_back(r.user * K_ + k);
    for (std::size_t k = 0; k < K_; ++k) out.push_back((data_->num_users() + r.item) * K_ + k);
    return out;
  }

  double rating_term(const FactorState& state, std::size_t rating_index) const {
    const Rating& r = (*data_)[rating_index];
    return -kHalfLog2Pi -
           0.5 * detail::expected_residual_sq(r.value, state.user_row(r.user),
                                              state.item_row(r.item));
  }

  /// Evidence lower bound in nats, including the -ln(2 pi)/2 constant per
  /// rating. Sums left to right in rating order, then factor order, so the
  /// result is bit-reproducible. Non-finite values propagate.
  double elbo(const FactorState& state) const {
    check_state(state);
    double likelihood = 0.0;
    for (std::size_t r = 0; r < data_->size(); ++r) likelihood += rating_term(state, r);
    double kl = 0.0;
    for (const GaussianNatural& f : state.flat()) kl += kl_to_standard_normal(f);
    return likelihood - kl;
  }

  /// The ELBO terms that depend on one factor: its children's likelihood
  /// terms minus its own KL. Differs from elbo() by a quantity constant in
  /// that factor's parameters.
  double local_elbo(const FactorState& state, std::size_t flat) const {
    double total = 0.0;
    for (std::size_t r : children(flat)) total += rating_term(state, r);
    return total - kl_to_standard_normal(state[flat]);
  }

 private:
  const SparseRatings* data_;
  std::size_t K_;
};

static_assert(ConjugateNetwork<BmfModel>);

/// prior + (N_i / |sample|) * sum of the sampled children's contributions.
/// `sample` holds rating indices. With the full child list the scale is
/// exactly 1.
template <ConjugateNetwork Net>
NaturalSum accumulate_temp(const Net& net, const FactorState& state, std::size_t flat,
                           std::span<const std::size_t> sample, std::size_t num_children) {
  double precision = 0.0;
  double mtp = 0.0;
  for (std::size_t r : sample) {
    const ChildContribution c = net.contribution(flat, r, state);
    precision += c.precision_add;
    mtp += c.mtp_add;
  }
  const GaussianNatural p = net.prior(flat);
  if (sample.empty()) return {p.precision(), p.mean_times_precision()};
  const double scale =
      static_cast<double>(num_children) / static_cast<double>(sample.size());
  return {p.precision() + scale * precision, p.mean_times_precision() + scale * mtp};
}

template <ConjugateNetwork Net>
GaussianNatural full_vb_target(const Net& net, const FactorState& state, std::size_t flat) {
  const auto ch = net.children(flat);
  return accumulate_temp(net, state, flat, ch, ch.size()).to_natural();
}

inline GaussianNatural full_vb_target(const FactorAddress& addr, const FactorState& state,
                                      const SparseRatings& data) {
  const BmfModel model(data, state.K());
  model.check_state(state);
  return full_vb_target(model, state, state.flat_index(addr));
}

template <ConjugateNetwork Net>
GaussianNatural lambda_temp(const Net& net, const FactorState& state, std::size_t flat,
                            std::span<const std::size_t> sampled_children,
                            std::size_t num_children) {
  if (sampled_children.empty()) {
    throw std::invalid_argument("lambda_temp: sample of children is empty");
  }
  return accumulate_temp(net, state, flat, sampled_children, num_children).to_natural();
}

inline GaussianNatural lambda_temp(const FactorAddress& addr, const FactorState& state,
                                   const SparseRatings& data,
                                   std::span<const std::size_t> sampled_children,
                                   std::size_t num_children) {
  const BmfModel model(data, state.K());
  model.check_state(state);
  return lambda_temp(model, state, state.flat_index(addr), sampled_children, num_children);
}

inline double elbo(const FactorState& state, const SparseRatings& data) {
  return BmfModel(data, state.K()).elbo(state);
}

}  // namespace svmp
