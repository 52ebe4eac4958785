#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>

#include "stats.hpp"
#include "twinphoton/mc.hpp"

namespace tp = twinphoton;

namespace {

struct Counts {
  std::map<std::pair<tp::Species, tp::Polarization>, double> n;
  double get(tp::Species s, tp::Polarization p) const {
    auto it = n.find({s, p});
    return it == n.end() ? 0.0 : it->second;
  }
};

Counts count(const std::vector<tp::EmissionEvent>& ev) {
  Counts c;
  for (const auto& e : ev) c.n[{e.species, e.polarization}] += 1.0;
  return c;
}

}  // namespace

TEST(CascadeTrajectory, TimeFractionsMatchSteadyState) {
  const auto rates = tp::RateSet::equal_pump(1.0, 1.0, 1.0);
  tp::CascadeTrajectory traj(rates, tp::State::G, tp::RandomStream(1));
  constexpr int batches = 100;
  constexpr double batch_ns = 1e4;  // 10^6 ns in total
  std::array<std::array<double, 4>, batches> frac{};
  double t_in_batch = 0.0;
  int b = 0;
  while (b < batches) {
    const tp::State s = traj.state();
    double dwell = traj.step().dwell_ns;
    while (dwell > 0.0 && b < batches) {
      const double take = std::min(dwell, batch_ns - t_in_batch);
      frac[b][static_cast<int>(s)] += take / batch_ns;
      t_in_batch += take;
      dwell -= take;
      if (t_in_batch >= batch_ns) {
        t_in_batch = 0.0;
        ++b;
      }
    }
  }
  for (int s = 0; s < 4; ++s) {
    double m = 0.0, m2 = 0.0;
    for (const auto& f : frac) {
      m += f[s];
      m2 += f[s] * f[s];
    }
    m /= batches;
    const double sem = std::sqrt((m2 / batches - m * m) / (batches - 1));
    EXPECT_NEAR(m, 0.25, 3.0 * sem) << "state " << s;
  }
}

TEST(CascadeTrajectory, HoldingTimesAreExponential) {
  const tp::RateSet rates{0.8, 1.3, 0.6, 0.9};
  tp::CascadeTrajectory traj(rates, tp::State::G, tp::RandomStream(2));
  std::array<std::vector<double>, 4> dwell;
  while (std::min({dwell[0].size(), dwell[1].size() + dwell[2].size(), dwell[3].size()}) < 100000) {
    const tp::State s = traj.state();
    dwell[static_cast<int>(s)].push_back(traj.step().dwell_ns);
  }
  for (int s = 0; s < 4; ++s) {
    const double rate = traj.exit_rate(static_cast<tp::State>(s));
    const double d = tp::testing::ks_statistic(dwell[s], [&](double x) { return 1.0 - std::exp(-rate * x); });
    EXPECT_LT(d, tp::testing::ks_critical_1pct(dwell[s].size())) << "state " << s;
  }
}

TEST(SimulateCw, EmissionRatesMatchSteadyStateFluxes) {
  // Gamma_B = Gamma_X = 1, P = 0.1: X_H rate = Gamma_X rho_HH = 0.1/1.21 per ns,
  // XX_H rate = Gamma_B rho_BB = 0.01/1.21 per ns.
  const auto rates = tp::RateSet::equal_pump(1.0, 1.0, 0.1);
  const double t_ns = 1e6;
  const auto c = count(tp::simulate_cw(rates, t_ns * 1e3, 3));
  const double want_x = 0.1 / 1.21 * t_ns, want_xx = 0.01 / 1.21 * t_ns;
  EXPECT_NEAR(c.get(tp::Species::X, tp::Polarization::H), want_x, 3.0 * std::sqrt(want_x));
  EXPECT_NEAR(c.get(tp::Species::XX, tp::Polarization::H), want_xx, 3.0 * std::sqrt(want_xx));
  EXPECT_NEAR(c.get(tp::Species::X, tp::Polarization::V), want_x, 3.0 * std::sqrt(want_x));
}

TEST(SimulateCw, FluxBalanceWhenBiexcitonPumpEqualsExcitonDecay) {
  const tp::RateSet rates{0.7, 1.2, 1.2, 0.5};
  const auto c = count(tp::simulate_cw(rates, 1e9, 4));
  for (auto pol : {tp::Polarization::H, tp::Polarization::V}) {
    const double xx = c.get(tp::Species::XX, pol), x = c.get(tp::Species::X, pol);
    EXPECT_NEAR(xx, x, 3.0 * std::sqrt(xx + x));
  }
}

TEST(SimulateCw, XxToXRatioIsPumpOverExcitonDecay) {
  const tp::RateSet rates{1.0, 1.0, 0.4, 0.4};
  const auto c = count(tp::simulate_cw(rates, 2e9, 5));
  const double xx = c.get(tp::Species::XX, tp::Polarization::H) + c.get(tp::Species::XX, tp::Polarization::V);
  const double x = c.get(tp::Species::X, tp::Polarization::H) + c.get(tp::Species::X, tp::Polarization::V);
  EXPECT_NEAR(xx / x, 0.4, 3.0 * 0.4 * std::sqrt(1.0 / xx + 1.0 / x));
}

TEST(SimulateCw, NoPumpingLeavesAtMostTheRelaxationCascade) {
  const tp::RateSet rates{1.0, 1.0, 0.0, 0.0};
  tp::CwOptions opts;
  opts.initial_state = tp::State::B;
  const auto ev = tp::simulate_cw(rates, 1e7, 6, opts);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].species, tp::Species::XX);
  EXPECT_EQ(ev[1].species, tp::Species::X);
  EXPECT_EQ(ev[0].polarization, ev[1].polarization);
  EXPECT_TRUE(tp::simulate_cw(rates, 1e7, 6).empty());
}

TEST(SimulateCw, ZeroDurationIsEmpty) {
  EXPECT_TRUE(tp::simulate_cw(tp::RateSet::equal_pump(1, 1, 1), 0.0, 1).empty());
}

TEST(SimulateCw, EventsAreSortedAndDeterministic) {
  const auto rates = tp::RateSet::equal_pump(1.0, 1.0, 0.5);
  tp::CwOptions a;
  a.shards = 6;
  a.threads = 1;
  tp::CwOptions b = a;
  b.threads = 3;
  const auto ea = tp::simulate_cw(rates, 1e8, 9, a);
  const auto eb = tp::simulate_cw(rates, 1e8, 9, b);
  ASSERT_EQ(ea, eb);
  for (std::size_t k = 1; k < ea.size(); ++k) ASSERT_LE(ea[k - 1].time_ps, ea[k].time_ps);
  EXPECT_NE(ea, tp::simulate_cw(rates, 1e8, 10, a));
}

TEST(SimulateCw, ShardingKeepsRates) {
  const auto rates = tp::RateSet::equal_pump(1.0, 1.0, 1.0);
  tp::CwOptions opts;
  opts.shards = 16;
  const auto c = count(tp::simulate_cw(rates, 1e9, 11, opts));
  const double want = 0.25 * 1e6;  // X_H: Gamma_X rho_HH
  EXPECT_NEAR(c.get(tp::Species::X, tp::Polarization::H), want, 3.0 * std::sqrt(want));
}

// ---------------------------------------------------------------------------

TEST(SimulatePulsed, BiexcitonLifetime) {
  // tau_XX = 1 / (2 gamma_B) = 0.95 ns, tau_X = 1 / gamma_X = 1.77 ns.
  const tp::RateSet decay{1.0 / 1.9, 1.0 / 1.77, 0.0, 0.0};
  tp::PulsePrep prep{80e6, 1.0, 0.0, 0.0};
  constexpr int n = 200000;
  const auto ev = tp::simulate_pulsed(prep, decay, n, 12);
  double sum = 0.0;
  int m = 0;
  for (const auto& e : ev) {
    if (e.species != tp::Species::XX) continue;
    sum += e.time_ps - static_cast<double>(*e.pulse_index) * prep.period_ps();
    ++m;
  }
  EXPECT_GE(m, n - 5);  // a slow decay can be overtaken by the next pulse
  EXPECT_NEAR(sum / m / 1e3, 0.95, 3.0 * 0.95 / std::sqrt(m));
}

TEST(SimulatePulsed, NoPreparationNoPhotons) {
  const tp::RateSet decay{1.0, 1.0, 0.0, 0.0};
  EXPECT_TRUE(tp::simulate_pulsed({80e6, 0.0, 0.0, 0.0}, decay, 10000, 1).empty());
}

TEST(SimulatePulsed, CascadeOrdering) {
  const tp::RateSet decay{1.0 / 1.9, 1.0 / 1.77, 0.0, 0.0};
  constexpr int n = 50000;
  const auto ev = tp::simulate_pulsed({1e6, 1.0, 0.0, 0.0}, decay, n, 13);
  ASSERT_EQ(ev.size(), 2u * n);
  for (std::size_t k = 0; k < ev.size(); k += 2) {
    ASSERT_EQ(*ev[k].pulse_index, *ev[k + 1].pulse_index);
    ASSERT_EQ(ev[k].species, tp::Species::XX);
    ASSERT_EQ(ev[k + 1].species, tp::Species::X);
    ASSERT_LT(ev[k].time_ps, ev[k + 1].time_ps);
    ASSERT_EQ(ev[k].polarization, ev[k + 1].polarization);
  }
}

TEST(SimulatePulsed, SinglePreparations) {
  const tp::RateSet decay{1.0, 1.0, 0.0, 0.0};
  const auto ev = tp::simulate_pulsed({1e6, 0.0, 0.3, 0.2}, decay, 100000, 14);
  double h = 0.0, v = 0.0;
  for (const auto& e : ev) {
    ASSERT_EQ(e.species, tp::Species::X);
    (e.polarization == tp::Polarization::H ? h : v) += 1.0;
  }
  EXPECT_NEAR(h, 30000.0, 3.0 * std::sqrt(100000 * 0.3 * 0.7));
  EXPECT_NEAR(v, 20000.0, 3.0 * std::sqrt(100000 * 0.2 * 0.8));
}

TEST(SimulatePulsed, RejectsBadPreparation) {
  const tp::RateSet decay{1.0, 1.0, 0.0, 0.0};
  EXPECT_THROW(tp::simulate_pulsed({80e6, 0.6, 0.3, 0.2}, decay, 1, 1), tp::InvalidParameter);
  EXPECT_THROW(tp::simulate_pulsed({0.0, 0.1, 0.0, 0.0}, decay, 1, 1), tp::InvalidParameter);
}

// ---------------------------------------------------------------------------

TEST(Detect, IdentityChain) {
  const auto ev = tp::simulate_cw(tp::RateSet::equal_pump(1.0, 1.0, 1.0), 1e6, 15);
  const auto tags = tp::detect(ev, {}, 1);
  ASSERT_EQ(tags.d0.size(), ev.size());
  EXPECT_TRUE(tags.d1.empty());
  for (std::size_t k = 0; k < ev.size(); ++k) EXPECT_EQ(tags.d0[k].time_ps, std::llround(ev[k].time_ps));
}

TEST(Detect, ZeroEfficiencyLeavesDarkCounts) {
  const auto ev = tp::simulate_cw(tp::RateSet::equal_pump(1.0, 1.0, 1.0), 1e9, 16);
  tp::DetectionConfig cfg;
  cfg.efficiency = 0.0;
  cfg.dark_rate_hz = 1e6;  // 1 per microsecond
  cfg.splitter = tp::Splitter::fifty_fifty;
  const auto tags = tp::detect(ev, cfg, 2, 1e9);
  for (const auto& d : {tags.d0, tags.d1}) EXPECT_NEAR(static_cast<double>(d.size()), 1000.0, 3.0 * std::sqrt(1000.0));
  cfg.dark_rate_hz = 0.0;
  const auto none = tp::detect(ev, cfg, 2, 1e9);
  EXPECT_TRUE(none.d0.empty() && none.d1.empty());
}

TEST(Detect, PolarizationFilteredThinning) {
  const auto ev = tp::simulate_cw(tp::RateSet::equal_pump(1.0, 1.0, 0.5), 1e9, 17);
  double h_events = 0.0;
  for (const auto& e : ev) h_events += e.polarization == tp::Polarization::H;
  tp::DetectionConfig cfg;
  cfg.polarization_filter = tp::PolarizationFilter::H;
  cfg.efficiency = 0.3;
  cfg.splitter = tp::Splitter::fifty_fifty;
  const auto tags = tp::detect(ev, cfg, 3);
  const double detected = static_cast<double>(tags.d0.size() + tags.d1.size());
  EXPECT_NEAR(detected, 0.3 * h_events, 3.0 * std::sqrt(h_events * 0.3 * 0.7));
  EXPECT_NEAR(static_cast<double>(tags.d0.size()), detected / 2.0, 3.0 * std::sqrt(detected / 4.0));
}

TEST(Detect, SpeciesSplitterAndJitter) {
  const auto ev = tp::simulate_pulsed({1e6, 1.0, 0.0, 0.0}, {1.0, 1.0, 0.0, 0.0}, 20000, 18);
  tp::DetectionConfig cfg;
  cfg.splitter = tp::Splitter::species;
  const auto tags = tp::detect(ev, cfg, 4);
  ASSERT_EQ(tags.d0.size(), 20000u);
  ASSERT_EQ(tags.d1.size(), 20000u);
  std::size_t i = 0, j = 0;
  for (const auto& e : ev) {
    if (e.species == tp::Species::XX) {
      EXPECT_EQ(tags.d0[i++].time_ps, std::llround(e.time_ps));
    } else {
      EXPECT_EQ(tags.d1[j++].time_ps, std::llround(e.time_ps));
    }
  }
  cfg.jitter_fwhm_ps = 350.0;
  const auto jittered = tp::detect(ev, cfg, 5);
  // Pulses are 1 us apart, so the order of XX tags is preserved.
  double s2 = 0.0;
  i = 0;
  for (const auto& e : ev) {
    if (e.species != tp::Species::XX) continue;
    const double d = static_cast<double>(jittered.d0[i++].time_ps) - e.time_ps;
    s2 += d * d;
  }
  const double sigma = 350.0 / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  EXPECT_NEAR(std::sqrt(s2 / 20000.0), sigma, 0.03 * sigma);
}

TEST(Detect, DeadTimeSuppressesCloseTags) {
  const auto ev = tp::simulate_cw(tp::RateSet::equal_pump(1.0, 1.0, 2.0), 1e7, 19);
  tp::DetectionConfig cfg;
  cfg.dead_time_ps = 2000.0;
  const auto tags = tp::detect(ev, cfg, 6);
  ASSERT_LT(tags.d0.size(), ev.size());
  for (std::size_t k = 1; k < tags.d0.size(); ++k) ASSERT_GE(tags.d0[k].time_ps - tags.d0[k - 1].time_ps, 2000);
}

TEST(Detect, DeterministicAndSorted) {
  const auto ev = tp::simulate_cw(tp::RateSet::equal_pump(1.0, 1.0, 1.0), 1e8, 20);
  tp::DetectionConfig cfg;
  cfg.splitter = tp::Splitter::fifty_fifty;
  cfg.jitter_fwhm_ps = 250.0;
  cfg.dark_rate_hz = 5e5;
  cfg.efficiency = 0.5;
  const auto a = tp::detect(ev, cfg, 7);
  const auto b = tp::detect(ev, cfg, 7);
  EXPECT_EQ(a.d0, b.d0);
  EXPECT_EQ(a.d1, b.d1);
  for (const auto* s : {&a.d0, &a.d1}) {
    for (std::size_t k = 1; k < s->size(); ++k) ASSERT_LE((*s)[k - 1].time_ps, (*s)[k].time_ps);
  }
}

TEST(Detect, RejectsUnsortedEventsAndBadConfig) {
  std::vector<tp::EmissionEvent> ev{{10.0, tp::Species::X, tp::Polarization::H, {}},
                                    {5.0, tp::Species::X, tp::Polarization::H, {}}};
  EXPECT_THROW(tp::detect(ev, {}, 1), tp::PreconditionError);
  tp::DetectionConfig bad;
  bad.efficiency = 1.5;
  EXPECT_THROW(tp::detect({}, bad, 1), tp::InvalidParameter);
}
