#include <catch2/catch_amalgamated.hpp>

#include <trialign/losses.hpp>
#include <trialign/rng.hpp>

#include "oracles.hpp"

#include <algorithm>
#include <set>

using namespace trialign;

namespace {

Mat unit_rows(int rows, int cols, uint64_t seed) {
  RngEngine rng = make_rng(seed);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (int c = 0; c < cols; ++c) {
      m(r, c) = gauss(rng, 0.0, 1.0);
      n2 += m(r, c) * m(r, c);
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (int c = 0; c < cols; ++c) m(r, c) *= inv;
  }
  return m;
}

Temperature tau_of(double v) { return Temperature::init(v, 1e-4, 1e6); }

}  // namespace

TEST_CASE("pair loss vanishes for a single-sample batch", "[losses]") {
  Mat xs = unit_rows(1, 6, 1);
  Mat xt = unit_rows(1, 6, 2);
  const PairLoss loss = info_nce_pair(xs, xt, tau_of(0.5));
  CHECK(loss.value == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("pair loss closed form for orthogonal identical batches", "[losses]") {
  // two samples, x_S == x_T, rows orthogonal, tau = 1: every anchor sees
  // softmax(e / (e + 1)), so the loss is log(1 + exp(-1)) per anchor.
  Mat x(2, 4);
  x.fill(0.0);
  x(0, 0) = 1.0;
  x(1, 2) = 1.0;
  const PairLoss loss = info_nce_pair(x, x, tau_of(1.0));
  const double want = std::log(1.0 + std::exp(-1.0));
  CHECK(loss.value == Catch::Approx(want).margin(1e-12));
  CHECK(want == Catch::Approx(0.3133).margin(5e-5));
}

TEST_CASE("pair loss matches direct summation on random batches", "[losses]") {
  for (uint64_t seed = 0; seed < 40; ++seed) {
    const int b = 2 + static_cast<int>(seed % 5);
    Mat xs = unit_rows(b, 8, derive_seed(900, seed));
    Mat xt = unit_rows(b, 8, derive_seed(901, seed));
    const double tau = 0.3 + 0.1 * static_cast<double>(seed % 7);
    const PairLoss loss = info_nce_pair(xs, xt, tau_of(tau));
    CHECK(loss.value == Catch::Approx(oracle::direct_pair_infonce(xs, xt, tau)).margin(1e-10));
  }
}

TEST_CASE("pair loss gradients match finite differences on the seed-9 batch", "[losses]") {
  Mat xs = unit_rows(3, 5, 9);
  Mat xt = unit_rows(3, 5, 10);
  const double tau = 0.7;
  const PairLoss loss = info_nce_pair(xs, xt, tau_of(tau));
  const double h = 1e-6;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) {
      Mat xp = xs, xm = xs;
      xp(r, c) += h;
      xm(r, c) -= h;
      const double fd = (info_nce_pair(xp, xt, tau_of(tau)).value -
                         info_nce_pair(xm, xt, tau_of(tau)).value) /
                        (2 * h);
      const double rel = std::abs(fd - loss.grad_s(r, c)) /
                         std::max(1e-6, std::abs(fd) + std::abs(loss.grad_s(r, c)));
      REQUIRE(rel < 1e-5);
    }
  const double fd_tau = (info_nce_pair(xs, xt, tau_of(tau + h)).value -
                         info_nce_pair(xs, xt, tau_of(tau - h)).value) /
                        (2 * h);
  CHECK(loss.grad_tau == Catch::Approx(fd_tau).margin(1e-6));
}

TEST_CASE("negative pool enumeration has size 3B^2-3B", "[losses]") {
  for (int b = 2; b <= 5; ++b) {
    const auto pool = oracle::enumerate_pool(b, b / 2);
    CHECK(static_cast<int>(pool.size()) == 3 * b * b - 3 * b);
  }
}

TEST_CASE("B=2 sampler draws exactly one negative from the six valid triples", "[losses]") {
  const auto pool = oracle::enumerate_pool(2, 0);
  REQUIRE(pool.size() == 6);
  for (uint64_t seed = 0; seed < 200; ++seed) {
    RngEngine rng = make_rng(seed);
    const auto negs = sample_negative_triplets(2, 0, rng);
    REQUIRE(negs.size() == 1);
    REQUIRE(std::find(pool.begin(), pool.end(), negs[0]) != pool.end());
  }
}

TEST_CASE("sampled negatives live in the pool without duplicates", "[losses]") {
  for (int b = 2; b <= 6; ++b) {
    const int anchor = b - 1;
    const auto pool = oracle::enumerate_pool(b, anchor);
    const std::set<IndexTriple> pool_set(pool.begin(), pool.end());
    for (uint64_t seed = 0; seed < 50; ++seed) {
      RngEngine rng = make_rng(derive_seed(77, seed));
      const auto negs = sample_negative_triplets(b, anchor, rng);
      REQUIRE(static_cast<int>(negs.size()) == b - 1);
      std::set<IndexTriple> seen;
      for (const auto& t : negs) {
        REQUIRE(pool_set.count(t) == 1);
        REQUIRE(seen.insert(t).second);  // no duplicates
      }
    }
  }
}

TEST_CASE("negative sampling is deterministic for a fixed seed", "[losses]") {
  const NegativeTripletSet a = sample_negative_set(5, 1234, 7);
  const NegativeTripletSet b = sample_negative_set(5, 1234, 7);
  REQUIRE(a.per_anchor == b.per_anchor);
  const NegativeTripletSet c = sample_negative_set(5, 1234, 8);
  CHECK(a.per_anchor != c.per_anchor);
}

TEST_CASE("triplet loss on orthogonal identical modalities matches the closed form", "[losses]") {
  // x_img = x_2d = x_3d rowwise, rows mutually orthogonal across samples.
  // Positive triples stack one row three times: lambda1 = 3. Negatives mix
  // two distinct orthogonal rows: gram has a duplicated pair, lambda1 = 2.
  const int b = 3;
  Mat x(b, 6);
  x.fill(0.0);
  x(0, 0) = 1.0;
  x(1, 2) = 1.0;
  x(2, 4) = 1.0;
  const double tau = 0.8;
  const NegativeTripletSet negs = sample_negative_set(b, 42, 0);
  const TripletLoss loss = info_nce_triplet(x, x, x, tau_of(tau), negs);

  double want = 0.0;
  for (int anchor = 0; anchor < b; ++anchor) {
    double denom = std::exp(3.0 / tau);
    for (const auto& t : negs.per_anchor[static_cast<size_t>(anchor)]) {
      // any mixed triple over orthonormal rows with one duplicated row has
      // lambda1 = 2; fully distinct rows would give 1 (cannot happen here,
      // negatives share the anchor index)
      const bool all_same = (t.img == t.p2d && t.p2d == t.p3d);
      REQUIRE_FALSE(all_same);
      const bool two_same = (t.img == t.p2d || t.p2d == t.p3d || t.img == t.p3d);
      const double lam = two_same ? 2.0 : 1.0;
      denom += std::exp(lam / tau);
    }
    want += -std::log(std::exp(3.0 / tau) / denom);
  }
  want /= b;
  CHECK(loss.value == Catch::Approx(want).margin(1e-10));
}

TEST_CASE("triplet loss matches the Jacobi-based direct oracle", "[losses]") {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    const int b = 2 + static_cast<int>(seed % 4);
    Mat xi = unit_rows(b, 7, derive_seed(500, seed));
    Mat x2 = unit_rows(b, 7, derive_seed(501, seed));
    Mat x3 = unit_rows(b, 7, derive_seed(502, seed));
    const double tau = 0.5 + 0.05 * static_cast<double>(seed);
    const NegativeTripletSet negs = sample_negative_set(b, derive_seed(503, seed), seed);
    const TripletLoss loss = info_nce_triplet(xi, x2, x3, tau_of(tau), negs);
    const double want = oracle::direct_triplet_infonce(xi, x2, x3, tau, negs);
    REQUIRE(loss.value == Catch::Approx(want).margin(1e-9));
  }
}

TEST_CASE("triplet gradients match finite differences on the seed-13 batch", "[losses]") {
  const int b = 3, d = 6;
  Mat xi = unit_rows(b, d, 13);
  Mat x2 = unit_rows(b, d, 14);
  Mat x3 = unit_rows(b, d, 15);
  const double tau = 0.6;
  const NegativeTripletSet negs = sample_negative_set(b, 99, 0);

  // all eigen-gaps comfortably clear of the skip threshold
  const TripletLoss probe = info_nce_triplet(xi, x2, x3, tau_of(tau), negs, 1e-4);
  REQUIRE(probe.degenerate_skips == 0);

  const TripletLoss loss = info_nce_triplet(xi, x2, x3, tau_of(tau), negs);
  const double h = 1e-6;
  auto fd_entry = [&](Mat& target, int r, int c) {
    const double save = target(r, c);
    target(r, c) = save + h;
    const double fp = info_nce_triplet(xi, x2, x3, tau_of(tau), negs).value;
    target(r, c) = save - h;
    const double fm = info_nce_triplet(xi, x2, x3, tau_of(tau), negs).value;
    target(r, c) = save;
    return (fp - fm) / (2 * h);
  };
  for (int r = 0; r < b; ++r)
    for (int c = 0; c < d; ++c) {
      const double fd = fd_entry(xi, r, c);
      const double g = loss.grad_img(r, c);
      REQUIRE(std::abs(fd - g) / std::max(1e-6, std::abs(fd) + std::abs(g)) < 1e-4);
      const double fd2 = fd_entry(x2, r, c);
      const double g2 = loss.grad_2d(r, c);
      REQUIRE(std::abs(fd2 - g2) / std::max(1e-6, std::abs(fd2) + std::abs(g2)) < 1e-4);
      const double fd3 = fd_entry(x3, r, c);
      const double g3 = loss.grad_3d(r, c);
      REQUIRE(std::abs(fd3 - g3) / std::max(1e-6, std::abs(fd3) + std::abs(g3)) < 1e-4);
    }
}

TEST_CASE("triplet loss rejects a negative set containing the positive", "[losses]") {
  Mat x = unit_rows(3, 5, 21);
  NegativeTripletSet negs = sample_negative_set(3, 7, 0);
  negs.per_anchor[1][0] = {1, 1, 1};  // the positive for anchor 1
  CHECK_THROWS_AS(info_nce_triplet(x, x, x, tau_of(1.0), negs), Error);
}

TEST_CASE("contrastive loss with alpha 0 equals the pairwise part", "[losses]") {
  Mat xi = unit_rows(4, 6, 31);
  Mat x2 = unit_rows(4, 6, 32);
  Mat x3 = unit_rows(4, 6, 33);
  StageLossFlags flags;
  flags.pair_2d3d = flags.pair_img2d = flags.pair_img3d = flags.triplet = true;
  const NegativeTripletSet negs = sample_negative_set(4, 5, 0);
  const ContrastiveLoss with = contrastive_loss(xi, x2, x3, tau_of(0.5), tau_of(0.5), 0.0, flags,
                                                &negs);
  CHECK(with.value == Catch::Approx(with.pair_value).margin(1e-15));

  const double direct = (oracle::direct_pair_infonce(x2, x3, 0.5) +
                         oracle::direct_pair_infonce(xi, x2, 0.5) +
                         oracle::direct_pair_infonce(xi, x3, 0.5)) /
                        3.0;
  CHECK(with.pair_value == Catch::Approx(direct).margin(1e-10));
}

TEST_CASE("contrastive loss with only the triplet active equals info_nce_triplet", "[losses]") {
  Mat xi = unit_rows(3, 6, 41);
  Mat x2 = unit_rows(3, 6, 42);
  Mat x3 = unit_rows(3, 6, 43);
  StageLossFlags flags;
  flags.triplet = true;
  const NegativeTripletSet negs = sample_negative_set(3, 6, 0);
  const ContrastiveLoss combined =
      contrastive_loss(xi, x2, x3, tau_of(0.5), tau_of(0.9), 1.0, flags, &negs);
  const TripletLoss alone = info_nce_triplet(xi, x2, x3, tau_of(0.9), negs);
  CHECK(combined.value == Catch::Approx(alone.value).margin(1e-14));
  CHECK(combined.pair_value == 0.0);
}

TEST_CASE("contrastive loss equals the sum of independently computed parts", "[losses]") {
  Mat xi = unit_rows(4, 8, 17);
  Mat x2 = unit_rows(4, 8, 18);
  Mat x3 = unit_rows(4, 8, 19);
  StageLossFlags flags;
  flags.pair_2d3d = flags.pair_img2d = flags.pair_img3d = flags.triplet = true;
  const NegativeTripletSet negs = sample_negative_set(4, 11, 3);
  const double alpha = 0.7;
  const ContrastiveLoss combined =
      contrastive_loss(xi, x2, x3, tau_of(0.4), tau_of(0.8), alpha, flags, &negs);

  const double pair_part = (info_nce_pair(x2, x3, tau_of(0.4)).value +
                            info_nce_pair(xi, x2, tau_of(0.4)).value +
                            info_nce_pair(xi, x3, tau_of(0.4)).value) /
                           3.0;
  const double trip_part = info_nce_triplet(xi, x2, x3, tau_of(0.8), negs).value;
  REQUIRE(combined.value == Catch::Approx(pair_part + alpha * trip_part).margin(1e-12));
  REQUIRE(combined.pair_value == Catch::Approx(pair_part).margin(1e-12));
  REQUIRE(combined.triplet_value == Catch::Approx(trip_part).margin(1e-12));
}

TEST_CASE("l2 pose loss basics and direct-sum agreement", "[losses]") {
  Mat pred(3, 6), gt(3, 6);
  RngEngine rng = make_rng(2);
  for (double& v : gt.data) v = gauss(rng, 0.0, 1.0);
  pred = gt;
  CHECK(l2_pose_loss_batch(pred, gt).value == Catch::Approx(0.0).margin(1e-15));

  for (double& v : pred.data) v += 1.0;
  CHECK(l2_pose_loss_batch(pred, gt).value == Catch::Approx(1.0).margin(1e-12));

  for (double& v : pred.data) v = gauss(rng, 0.0, 2.0);
  double direct = 0.0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    direct += d * d;
  }
  direct /= static_cast<double>(pred.data.size());
  CHECK(l2_pose_loss_batch(pred, gt).value == Catch::Approx(direct).margin(1e-12));
}

TEST_CASE("temperature clamps into its bounds", "[losses]") {
  Temperature t = Temperature::init(1.0, 0.5, 2.0);
  t.log_tau = std::log(10.0);
  t.clamp();
  CHECK(t.value() == Catch::Approx(2.0).margin(1e-12));
  t.log_tau = std::log(0.01);
  t.clamp();
  CHECK(t.value() == Catch::Approx(0.5).margin(1e-12));
  CHECK_THROWS_AS(Temperature::init(0.1, 0.5, 2.0), Error);
  CHECK_THROWS_AS(Temperature::init(1.0, -1.0, 2.0), Error);
}
