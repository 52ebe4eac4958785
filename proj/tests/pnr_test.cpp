#include <gtest/gtest.h>

#include <cmath>

#include "twinphoton/pnr.hpp"

namespace tp = twinphoton;

namespace {

tp::PhotonNumberDist dist(std::vector<double> p, tp::Plane plane = tp::Plane::source) {
  tp::PhotonNumberDist d;
  d.p = std::move(p);
  d.plane = plane;
  return d;
}

tp::Ratios ratios_of(const tp::PhotonNumberDist& q) { return {q.p[2] / q.p[1], q.p[1] / q.p[0]}; }

const tp::PhotonNumberDist kMeasured = dist({0.858, 0.062, 0.080});

}  // namespace

TEST(ThinBinomial, LosslessIsIdentity) {
  const auto q = tp::thin_binomial(kMeasured, 1.0);
  for (std::size_t n = 0; n < 3; ++n) EXPECT_DOUBLE_EQ(q.p[n], kMeasured.p[n]);
  EXPECT_EQ(q.plane, tp::Plane::detector);
}

TEST(ThinBinomial, SinglePair) {
  const double s = 0.3;
  const auto q = tp::thin_binomial(dist({0.0, 0.0, 1.0}), s);
  EXPECT_NEAR(q.p[2], s * s, 1e-15);
  EXPECT_NEAR(q.p[1], 2.0 * s * (1.0 - s), 1e-15);
  EXPECT_NEAR(q.p[0], (1.0 - s) * (1.0 - s), 1e-15);
}

TEST(ThinBinomial, MeasuredSourceRatios) {
  const auto q = tp::thin_binomial(kMeasured, 5.04e-4);
  EXPECT_NEAR(q.p[2] / q.p[1], 1.8e-4, 0.05e-4);
  EXPECT_NEAR(q.p[1] / q.p[0], 1.1e-4, 0.05e-4);
}

TEST(ThinBinomial, PreservesNormalization) {
  tp::RandomStream rng(1);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> p(4);
    double sum = 0.0;
    for (double& v : p) sum += (v = rng.uniform());
    for (double& v : p) v /= sum;
    const auto q = tp::thin_binomial(dist(p), rng.uniform_open());
    double qs = 0.0;
    for (double v : q.p) qs += v;
    EXPECT_NEAR(qs, 1.0, 1e-14);
  }
}

TEST(ThinBinomial, RejectsBadInput) {
  EXPECT_THROW(tp::thin_binomial(kMeasured, 0.0), tp::InvalidParameter);
  EXPECT_THROW(tp::thin_binomial(dist({0.5, 0.6}), 0.5), tp::InvalidParameter);
}

TEST(Reconstruct, MeasuredRatios) {
  const auto d = tp::reconstruct(tp::Ratios{1.81e-4, 1.1e-4}, 5.04e-4);
  EXPECT_NEAR(d.p[2], 0.080, 0.005);
  EXPECT_NEAR(d.p[1], 0.062, 0.005);
  EXPECT_NEAR(d.p[0] + d.p[1] + d.p[2], 1.0, 1e-12);
}

TEST(Reconstruct, RoundTrips) {
  tp::RandomStream rng(2);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> p(3);
    double sum = 0.0;
    for (double& v : p) sum += (v = rng.uniform_open());
    for (double& v : p) v /= sum;
    const double s = std::exp(std::log(1e-4) * rng.uniform());
    const auto source = dist(p);
    const auto back = tp::reconstruct(ratios_of(tp::thin_binomial(source, s)), s);
    for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(back.p[n], p[n], 1e-9);
    const tp::Ratios r{0.3 * s, 2.0 * s * rng.uniform_open()};
    try {
      const auto d = tp::reconstruct(r, s);
      const auto again = ratios_of(tp::thin_binomial(d, s));
      EXPECT_NEAR(again.r21, r.r21, 1e-9 * r.r21);
      EXPECT_NEAR(again.r10, r.r10, 1e-9 * r.r10);
    } catch (const tp::InfeasibleData&) {
    }
  }
}

TEST(Reconstruct, NoPairsWithoutTwoPhotonEvents) {
  const auto d = tp::reconstruct(tp::Ratios{0.0, 1e-4}, 5e-4);
  EXPECT_EQ(d.p[2], 0.0);
  const auto q = tp::thin_binomial(d, 5e-4);
  EXPECT_NEAR(q.p[1] / q.p[0], 1e-4, 1e-15);
}

TEST(Reconstruct, MonotoneInTwoPhotonRatio) {
  double prev = 0.0;
  for (double r21 = 1e-5; r21 < 2.5e-4; r21 += 1e-5) {
    const double p2 = tp::reconstruct(tp::Ratios{r21, 1.1e-4}, 5.04e-4).p[2];
    EXPECT_GE(p2, prev);
    prev = p2;
  }
}

TEST(Reconstruct, InfeasibleAndInvalid) {
  EXPECT_THROW(tp::reconstruct(tp::Ratios{1e-3, 1e-4}, 5e-4), tp::InfeasibleData);  // above s/(2(1-s))
  EXPECT_THROW(tp::reconstruct(tp::Ratios{1e-4, 0.5}, 5e-4), tp::InfeasibleData);   // p0 < 0
  EXPECT_THROW(tp::reconstruct(tp::Ratios{1e-4, 1e-4}, 1.0), tp::InvalidParameter);
  EXPECT_THROW(tp::reconstruct(tp::Ratios{-1.0, 1e-4}, 0.5), tp::InvalidParameter);
}

TEST(BackgroundSubtract, Arithmetic) {
  tp::CountRecord r;
  r.trigger_mode = tp::TriggerMode::photon_triggered;
  r.counts = {0.0, 2000.0, 215.0, 0.0};
  r.background_per_hour = {0.0, 36.0, 3.6, 0.0};
  r.acquisition_time_s = 4.5 * 3600.0;
  const auto out = tp::background_subtract(r);
  EXPECT_NEAR(out.counts[2], 198.8, 1e-9);
  EXPECT_NEAR(out.counts[1], 2000.0 - 162.0, 1e-9);
  EXPECT_FALSE(out.clamped);
  r.background_per_hour = {0.0, 0.0, 0.0, 0.0};
  EXPECT_EQ(tp::background_subtract(r).counts, r.counts);
  r.background_per_hour = {0.0, 1000.0, 0.0, 0.0};
  const auto clamped = tp::background_subtract(r);
  EXPECT_EQ(clamped.counts[1], 0.0);
  EXPECT_TRUE(clamped.clamped);
}

TEST(Tes, VacuumOnly) {
  const tp::TesModel model;
  const auto a = tp::simulate_tes(dist({1.0, 0.0, 0.0, 0.0}, tp::Plane::detector), model, 20000, 3);
  double m = 0.0, m2 = 0.0;
  for (double v : a) {
    m += v;
    m2 += v * v;
  }
  m /= 20000.0;
  EXPECT_NEAR(m, 0.0, 4.0 * model.sigma[0] / std::sqrt(20000.0));
  EXPECT_NEAR(std::sqrt(m2 / 20000.0 - m * m), model.sigma[0], 0.02 * model.sigma[0]);
}

TEST(Tes, DeltaPeaksAndExactClassification) {
  const auto model = tp::TesModel::with_midpoint_thresholds(2.0, {0.0, 0.0, 0.0, 0.0});
  const auto q = dist({0.4, 0.3, 0.2, 0.1}, tp::Plane::detector);
  const auto a = tp::simulate_tes(q, model, 100000, 4);
  for (double v : a) EXPECT_EQ(v, 2.0 * std::round(v / 2.0));
  const auto rec = tp::classify(a, model);
  for (std::size_t n = 0; n < 4; ++n) {
    const double want = q.p[n] * 100000.0;
    EXPECT_NEAR(rec.counts[n], want, 4.0 * std::sqrt(want * (1.0 - q.p[n])));
  }
}

TEST(Tes, WellSeparatedPeaksClassifyWithoutLeakage) {
  // Means 1 apart, sigma <= 1/12: 6 sigma from each mean to the threshold.
  const auto model = tp::TesModel::with_midpoint_thresholds(1.0, {0.08, 0.08, 0.08, 0.08});
  const auto q = dist({0.25, 0.25, 0.25, 0.25}, tp::Plane::detector);
  const auto a = tp::simulate_tes(q, model, 200000, 5);
  std::vector<double> exact(4, 0.0);
  for (double v : a) exact[static_cast<std::size_t>(std::llround(v))] += 1.0;
  EXPECT_EQ(tp::classify(a, model).counts, exact);
}

TEST(Tes, ClassifyEdgeCases) {
  const tp::TesModel model;
  const auto empty = tp::classify({}, model);
  for (double c : empty.counts) EXPECT_EQ(c, 0.0);
  const auto at_means = tp::classify({0.0, 1.0, 2.0, 3.0}, model);
  for (double c : at_means.counts) EXPECT_EQ(c, 1.0);
  tp::TesModel bad;
  bad.thresholds = {0.5, 2.5, 2.7};
  EXPECT_THROW(tp::classify({}, bad), tp::InvalidParameter);
}

TEST(Tes, PhotonTriggeredModeHasNoVacuum) {
  const tp::TesModel model;
  const auto a = tp::simulate_tes(dist({0.9, 0.08, 0.02, 0.0}, tp::Plane::detector), model, 50000, 6,
                                  tp::TriggerMode::photon_triggered);
  const auto rec = tp::classify(a, model, tp::TriggerMode::photon_triggered);
  EXPECT_EQ(rec.counts[0], 0.0);
  EXPECT_NEAR(rec.counts[2] / rec.counts[1], 0.25, 4.0 * 0.25 * std::sqrt(1.0 / rec.counts[2] + 1.0 / rec.counts[1]));
}

TEST(Reconstruct, EndToEndWithinBootstrapIntervals) {
  const double s = 5e-4;
  const auto q = tp::thin_binomial(kMeasured, s);
  const tp::TesModel model;
  constexpr std::int64_t n = 10000000;
  const auto twins = tp::classify(tp::simulate_tes(q, model, n, 7, tp::TriggerMode::photon_triggered), model,
                                  tp::TriggerMode::photon_triggered);
  const auto vacuum = tp::classify(tp::simulate_tes(q, model, n, 8), model);
  tp::BootstrapOptions opts;
  opts.lower_quantile = 0.005;
  opts.upper_quantile = 0.995;
  opts.seed = 9;
  const auto rec = tp::reconstruct(twins, vacuum, s, opts);
  ASSERT_EQ(rec.source.intervals.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_LE(rec.source.intervals[k].lower, kMeasured.p[k]) << k;
    EXPECT_GE(rec.source.intervals[k].upper, kMeasured.p[k]) << k;
    EXPECT_LE(rec.source.intervals[k].lower, rec.source.p[k]);
    EXPECT_GE(rec.source.intervals[k].upper, rec.source.p[k]);
  }
  EXPECT_EQ(rec.infeasible_resamples, 0);
}

TEST(Reconstruct, RecordChecks) {
  tp::CountRecord triggered;
  triggered.trigger_mode = tp::TriggerMode::photon_triggered;
  triggered.counts = {0.0, 100.0, 2.0, 0.0};
  EXPECT_THROW(tp::reconstruct(triggered, 5e-4), tp::PreconditionError);
  tp::CountRecord empty;
  EXPECT_THROW(tp::reconstruct(empty, 5e-4), tp::InsufficientData);
}

TEST(Reconstruct, BootstrapIsDeterministic) {
  tp::CountRecord r;
  r.counts = {1e7, 1100.0, 0.0, 0.0};
  tp::CountRecord t;
  t.trigger_mode = tp::TriggerMode::photon_triggered;
  t.counts = {0.0, 1e5, 18.0, 0.0};
  tp::BootstrapOptions o;
  o.resamples = 2000;
  o.seed = 4;
  const auto a = tp::reconstruct(t, r, 5.04e-4, o), b = tp::reconstruct(t, r, 5.04e-4, o);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(a.source.intervals[k].lower, b.source.intervals[k].lower);
    EXPECT_EQ(a.source.intervals[k].upper, b.source.intervals[k].upper);
  }
}
