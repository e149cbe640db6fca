#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "ptsynth/error.hpp"
#include "ptsynth/parallel.hpp"
#include "ptsynth/pseudo.hpp"
#include "support/oracles.hpp"

using namespace ptsynth;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidArgument;
}

// Straight re-implementation of the perturbation with a different RNG.
long double mc_mean_alignment(const std::vector<float>& f, double xi, int draws, std::uint64_t seed) {
  oracle::Rng rng(seed);
  std::normal_distribution<double> nd;
  const long double fn = oracle::norm(f);
  long double total = 0;
  std::vector<long double> eps(f.size()), h(f.size());
  for (int d = 0; d < draws; ++d) {
    long double en = 0;
    for (auto& e : eps) {
      e = nd(rng);
      en += e * e;
    }
    en = std::sqrt(en);
    for (std::size_t i = 0; i < f.size(); ++i) h[i] = f[i] + xi * fn * eps[i] / en;
    total += oracle::cosine(h, f);
  }
  return total / draws;
}

double lib_mean_alignment(const std::vector<float>& f, double xi, int draws, std::uint64_t seed) {
  PerturbConfig cfg{xi, seed};
  std::vector<double> cos(draws);
  parallel_for(draws, 0, [&](std::size_t j) {
    auto h = gaussian_pseudo_feature("img", f, cfg, j);
    cos[j] = static_cast<double>(oracle::cosine(h.values(), f));
  });
  double s = 0;
  for (double c : cos) s += c;
  return s / draws;
}

std::vector<PseudoCaption> pool_of(std::size_t n, std::size_t dim, oracle::Rng& rng) {
  std::vector<PseudoCaption> pool;
  for (std::size_t i = 0; i < n; ++i) {
    pool.push_back({"caption " + std::to_string(i), {}, normalize(oracle::unit_vec(rng, dim)), 0.5});
  }
  return pool;
}

}  // namespace

TEST_CASE("xi = 0 reproduces normalize bit for bit") {
  oracle::Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    auto f = oracle::gaussian_vec(rng, 1 + rng() % 600);
    auto h = gaussian_pseudo_feature("id" + std::to_string(t), f, {0.0, 7}, t);
    auto n = normalize(f);
    REQUIRE(h.dim() == n.dim());
    CHECK(std::memcmp(h.values().data(), n.values().data(), h.dim() * sizeof(float)) == 0);
  }
}

TEST_CASE("outputs are unit-norm and deterministic per key") {
  oracle::Rng rng(2);
  auto f = oracle::gaussian_vec(rng, 512);
  for (double xi : {0.1, 0.5, 1.0, 3.0, 10.0}) {
    for (std::uint64_t j = 0; j < 40; ++j) {
      PerturbConfig cfg{xi, 5};
      auto a = gaussian_pseudo_feature("img_9", f, cfg, j);
      auto b = gaussian_pseudo_feature("img_9", f, cfg, j);
      CHECK(a == b);
      CHECK(std::abs(l2_norm(a) - 1.0) <= 1e-6);
      CHECK(a.is_unit());
    }
  }
  PerturbConfig cfg{3.0, 5};
  CHECK_FALSE(gaussian_pseudo_feature("a", f, cfg, 0) == gaussian_pseudo_feature("b", f, cfg, 0));
  CHECK_FALSE(gaussian_pseudo_feature("a", f, cfg, 0) == gaussian_pseudo_feature("a", f, cfg, 1));
  CHECK_FALSE(gaussian_pseudo_feature("a", f, cfg, 0) == gaussian_pseudo_feature("a", f, {3.0, 6}, 0));
}

TEST_CASE("perturbation errors") {
  std::vector<float> z(8, 0.0f), f(8, 1.0f);
  CHECK(code_of([&] { gaussian_pseudo_feature("a", z, {3.0, 0}, 0); }) == ErrorCode::ZeroVector);
  CHECK(code_of([&] { gaussian_pseudo_feature("a", f, {-1.0, 0}, 0); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { gaussian_pseudo_feature("a", f, {NAN, 0}, 0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("mean alignment at xi = 3 agrees with an independent Monte-Carlo oracle") {
  oracle::Rng rng(3);
  auto f = oracle::gaussian_vec(rng, 512);
  const int draws = 100000;
  const double lib = lib_mean_alignment(f, 3.0, draws, 11);
  const double ref = static_cast<double>(mc_mean_alignment(f, 3.0, draws, 12));
  CHECK(std::abs(lib - ref) < 0.005);
  // Closed-form large-D value: 1/sqrt(1 + xi^2).
  CHECK(lib == doctest::Approx(1.0 / std::sqrt(10.0)).epsilon(0.02));
}

TEST_CASE("mean alignment strictly decreases with xi") {
  oracle::Rng rng(4);
  auto f = oracle::gaussian_vec(rng, 512);
  const double a = lib_mean_alignment(f, 0.5, 10000, 1);
  const double b = lib_mean_alignment(f, 1.0, 10000, 1);
  const double c = lib_mean_alignment(f, 3.0, 10000, 1);
  CHECK(a > b);
  CHECK(b > c);
}

TEST_CASE("schedule examples") {
  MixingSchedule lin{ScheduleKind::Linear, 1000, 1, 0.0};
  CHECK(schedule_value(lin, 500) == doctest::Approx(0.5));
  CHECK(schedule_value(lin, 0) == 1.0);
  CHECK(schedule_value(lin, 1000) == 0.0);
  MixingSchedule step{ScheduleKind::Step, 1000, 300, 0.2};
  CHECK(schedule_value(step, 299) == 1.0);
  CHECK(schedule_value(step, 300) == doctest::Approx(0.2));
  CHECK(schedule_value(step, 0) == 1.0);
  CHECK(code_of([&] { schedule_value(lin, 1001); }) == ErrorCode::IterOutOfRange);
  MixingSchedule bad{ScheduleKind::Linear, 10, 1, 1.5};
  CHECK(code_of([&] { schedule_value(bad, 0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("schedules are monotone and bounded") {
  oracle::Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    MixingSchedule s;
    s.kind = trial % 2 ? ScheduleKind::Step : ScheduleKind::Linear;
    s.total_iters = 1 + rng() % 5000;
    s.switch_point = 1 + rng() % s.total_iters;
    s.floor = std::uniform_real_distribution<double>(0, 1)(rng);
    double prev = 1.0;
    for (std::uint64_t t = 0; t <= s.total_iters; t += 1 + s.total_iters / 97) {
      const double v = schedule_value(s, t);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(v <= prev);
      prev = v;
    }
    CHECK(schedule_value(s, 0) == 1.0);
  }
}

TEST_CASE("sample_pair at the schedule extremes") {
  oracle::Rng rng(6);
  auto f = oracle::unit_vec(rng, 16);
  auto pool = pool_of(1, 16, rng);
  MixingSchedule always{ScheduleKind::Step, 100, 100, 0.0};
  MixingSchedule never{ScheduleKind::Step, 100, 1, 0.0};
  PerturbConfig cfg{3.0, 1};
  for (std::uint64_t t = 0; t < 50; ++t) {
    CHECK(sample_pair("i", f, pool, PairSource::Clo, always, t, cfg).source == PairSource::Gaussian);
    auto p = sample_pair("i", f, pool, PairSource::Clo, never, t + 1, cfg);
    CHECK(p.source == PairSource::Clo);
    CHECK(p.caption == std::optional<std::string>("caption 0"));
    CHECK(p.feature == *pool[0].embedding);
    CHECK(sample_pair("i", f, {}, PairSource::Clo, never, t + 1, cfg).source == PairSource::Gaussian);
  }
}

TEST_CASE("sample_pair honours a 0.5 mixing probability") {
  oracle::Rng rng(7);
  auto f = oracle::unit_vec(rng, 16);
  auto pool = pool_of(5, 16, rng);
  MixingSchedule lin{ScheduleKind::Linear, 1000, 1, 0.0};
  PerturbConfig cfg{3.0, 42};
  int gauss = 0;
  std::vector<int> picks(5);
  for (int i = 0; i < 10000; ++i) {
    auto p = sample_pair("img_" + std::to_string(i), f, pool, PairSource::Retrieval, lin, 500, cfg);
    if (p.source == PairSource::Gaussian) {
      ++gauss;
    } else {
      ++picks[std::stoi(p.caption->substr(8))];
    }
    CHECK(std::abs(l2_norm(p.feature) - 1.0) <= 1e-6);
  }
  CHECK(gauss >= 4800);
  CHECK(gauss <= 5200);
  for (int c : picks) CHECK(std::abs(c - 1000) < 150);
}

TEST_CASE("pair stream is identical serially and in parallel") {
  oracle::Rng rng(8);
  auto f = oracle::unit_vec(rng, 32);
  auto pool = pool_of(4, 32, rng);
  MixingSchedule lin{ScheduleKind::Linear, 2000, 1, 0.1};
  PerturbConfig cfg{3.0, 9};
  std::vector<std::string> serial(2000), parallel(2000);
  for (std::size_t t = 0; t < 2000; ++t) {
    serial[t] = pair_to_json_line(sample_pair("x", f, pool, PairSource::Clo, lin, t, cfg));
  }
  parallel_for(2000, 8, [&](std::size_t t) {
    parallel[t] = pair_to_json_line(sample_pair("x", f, pool, PairSource::Clo, lin, t, cfg));
  });
  CHECK(serial == parallel);
}

TEST_CASE("JSON lines round trip") {
  PseudoPair p{"img \"1\"", normalize(std::vector<float>{0.1f, -0.3f, 0.7f}), PairSource::Clo, 0.8125,
               "two red dogs"};
  const auto line = pair_to_json_line(p);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.starts_with(R"({"image_id":"img \"1\"","source":"clo","score":0.8125,"caption":"two red dogs","feature":[)"));
  auto back = pair_from_json_line(line);
  CHECK(back.image_id == p.image_id);
  CHECK(back.source == p.source);
  CHECK(back.score == p.score);
  CHECK(back.caption == p.caption);
  CHECK(back.feature.values()[0] == p.feature.values()[0]);
  CHECK(back.feature == p.feature);

  PseudoPair g{"a", normalize(std::vector<float>{1, 1}), PairSource::Gaussian, std::nullopt, std::nullopt};
  const auto gl = pair_to_json_line(g);
  CHECK(gl.find(R"("score":null,"caption":null)") != std::string::npos);
  CHECK(pair_from_json_line(gl).feature == g.feature);

  std::ostringstream out;
  std::vector<PseudoPair> both{p, g};
  write_pairs_jsonl(out, both);
  CHECK(out.str() == line + "\n" + gl + "\n");
  CHECK(code_of([] { pair_from_json_line("{"); }) == ErrorCode::MalformedJson);
  CHECK(code_of([] { pair_from_json_line(R"({"image_id":"a"})"); }) == ErrorCode::MalformedJson);
}

TEST_CASE("float formatting survives a round trip for random features") {
  oracle::Rng rng(10);
  for (int t = 0; t < 200; ++t) {
    PseudoPair p{"i", normalize(oracle::unit_vec(rng, 64)), PairSource::Retrieval, 0.3, "c"};
    auto back = pair_from_json_line(pair_to_json_line(p));
    CHECK(std::ranges::equal(back.feature.values(), p.feature.values()));
  }
}
