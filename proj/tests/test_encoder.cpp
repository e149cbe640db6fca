#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "ptsynth/encoder.hpp"
#include "ptsynth/error.hpp"
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

// Records every batch it sees; can be told to misbehave.
class ScriptedProvider : public EncoderProvider {
 public:
  enum class Mode { Good, ShortRows, NotUnit, Throws, DimFlip };
  explicit ScriptedProvider(Mode mode = Mode::Good) : mode_(mode), inner_(8, 4) {}
  std::size_t dim() override { return 8; }
  FeatureMatrix encode_texts(std::span<const std::string> texts) override {
    batches.emplace_back(texts.begin(), texts.end());
    if (mode_ == Mode::Throws) throw std::runtime_error("connection reset");
    if (mode_ == Mode::ShortRows && !texts.empty()) texts = texts.first(texts.size() - 1);
    if (mode_ == Mode::DimFlip && batches.size() > 1) return SyntheticEncoder(4, 4).encode_texts(texts);
    auto m = inner_.encode_texts(texts);
    if (mode_ == Mode::NotUnit) {
      std::vector<float> d(m.data().begin(), m.data().end());
      for (auto& x : d) x *= 1.01f;
      return FeatureMatrix(8, d, m.ids(), false);
    }
    return m;
  }
  std::vector<std::vector<std::string>> batches;

 private:
  Mode mode_;
  SyntheticEncoder inner_;
};

}  // namespace

TEST_CASE("synthetic encoder is deterministic and unit-norm") {
  SyntheticEncoder a(32, 7), b(32, 7), c(32, 8);
  std::vector<std::string> texts{"a dog", "two cats sitting", "a dog", "", "x"};
  auto ma = a.encode_texts(texts), mb = b.encode_texts(texts), mc = c.encode_texts(texts);
  CHECK(ma.ids() == std::vector<std::string>{"0", "1", "2", "3", "4"});
  for (std::size_t i = 0; i < texts.size(); ++i) {
    CHECK(std::abs(l2_norm(ma.row(i)) - 1.0) < 1e-6);
    CHECK(std::equal(ma.row(i).begin(), ma.row(i).end(), mb.row(i).begin()));
  }
  CHECK(std::equal(ma.row(0).begin(), ma.row(0).end(), ma.row(2).begin()));
  CHECK_FALSE(std::equal(ma.row(0).begin(), ma.row(0).end(), mc.row(0).begin()));
}

TEST_CASE("synthetic text vector is the normalized sum of token vectors") {
  SyntheticEncoder enc(24, 3);
  auto t1 = enc.token_vector("red"), t2 = enc.token_vector("car");
  auto v = enc.encode_one("red car");
  std::vector<double> sum(24);
  for (int i = 0; i < 24; ++i) sum[i] = double(t1[i]) + t2[i];
  const long double n = oracle::norm(sum);
  for (int i = 0; i < 24; ++i) CHECK(v[i] == doctest::Approx(sum[i] / n).epsilon(1e-6));
}

TEST_CASE("lexicon rows are used and multi-word entries matched greedily") {
  oracle::Rng rng(1);
  auto dog = oracle::unit_vec(rng, 8), hot_dog = oracle::unit_vec(rng, 8);
  FeatureMatrix lex = FeatureMatrix::from_rows({dog, hot_dog}, {"dog", "hot dog"}, true);
  SyntheticEncoder enc(8, 0, lex);
  auto v = enc.encode_one("dog");
  for (int i = 0; i < 8; ++i) CHECK(v[i] == doctest::Approx(dog[i]));
  auto w = enc.encode_one("hot dog");
  for (int i = 0; i < 8; ++i) CHECK(w[i] == doctest::Approx(hot_dog[i]));
  CHECK(code_of([&] { SyntheticEncoder(4, 0, lex); }) == ErrorCode::DimMismatch);
}

TEST_CASE("caching encoder memoizes by text and batches calls") {
  ScriptedProvider p;
  CachingEncoder enc(p, 3);
  std::vector<std::string> texts{"a", "b", "a", "c", "d", "b", "e"};
  auto out = enc.encode(texts);
  REQUIRE(out.size() == texts.size());
  CHECK(out[0] == out[2]);
  CHECK(enc.stats().requested == 7);
  CHECK(enc.stats().computed == 5);
  CHECK(enc.stats().calls == 2);
  CHECK(p.batches[0] == std::vector<std::string>{"a", "b", "c"});
  CHECK(p.batches[1] == std::vector<std::string>{"d", "e"});
  enc.encode({"a", "e"});
  CHECK(enc.stats().requested == 9);
  CHECK(enc.stats().computed == 5);
  CHECK(enc.stats().calls == 2);
  for (const auto& v : out) CHECK(std::abs(l2_norm(v) - 1.0) < 1e-5);
}

TEST_CASE("caching results do not depend on batch size") {
  std::vector<std::string> texts;
  for (int i = 0; i < 50; ++i) texts.push_back("t" + std::to_string(i % 37));
  ScriptedProvider p1, p2;
  CachingEncoder a(p1, 1), b(p2, 1000);
  CHECK(a.encode(texts) == b.encode(texts));
  CHECK(a.stats().calls == 37);
  CHECK(b.stats().calls == 1);
}

TEST_CASE("provider misbehaviour surfaces as ProviderFailure") {
  for (auto mode : {ScriptedProvider::Mode::ShortRows, ScriptedProvider::Mode::NotUnit,
                    ScriptedProvider::Mode::Throws}) {
    ScriptedProvider p(mode);
    CachingEncoder enc(p);
    CHECK(code_of([&] { enc.encode({"a", "b"}); }) == ErrorCode::ProviderFailure);
  }
  ScriptedProvider flip(ScriptedProvider::Mode::DimFlip);
  CachingEncoder enc(flip, 1);
  CHECK(code_of([&] { enc.encode({"a", "b"}); }) == ErrorCode::ProviderFailure);
}
