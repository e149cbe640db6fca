#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "ptsynth/dedup.hpp"
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

ContentHash random_hash(oracle::Rng& rng) {
  auto hexs = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back("0123456789abcdef"[rng() % 16]);
    return s;
  };
  return {hexs(32), hexs(64)};
}

}  // namespace

TEST_CASE("digests match published test vectors") {
  auto abc = hash_bytes("abc");
  CHECK(abc.md5 == "900150983cd24fb0d6963f7d28e17f72");
  CHECK(abc.sha256 == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  auto empty = hash_bytes("");
  CHECK(empty.md5 == "d41d8cd98f00b204e9800998ecf8427e");
  CHECK(empty.sha256 == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("disjoint sets drop nothing, identical items drop") {
  HashTable pre{{"a", hash_bytes("1")}, {"b", hash_bytes("2")}};
  HashTable down{{"x", hash_bytes("3")}};
  auto r = dedup_corpus(pre, down);
  CHECK(r.retained == std::vector<std::string>{"a", "b"});
  CHECK(r.dropped.empty());
  HashTable same{{"img", hash_bytes("pixels")}};
  HashTable down2{{"other-name", hash_bytes("pixels")}};
  auto r2 = dedup_corpus(same, down2);
  CHECK(r2.dropped == std::vector<std::string>{"img"});
  CHECK(r2.retained.empty());
}

TEST_CASE("both-hash rule needs one downstream item matching on both digests") {
  auto h1 = hash_bytes("one"), h2 = hash_bytes("two");
  // Pretrain item whose MD5 matches one downstream item and SHA256 another.
  HashTable pre{{"split", {h1.md5, h2.sha256}}, {"full", h1}};
  HashTable down{{"d1", h1}, {"d2", h2}};
  auto both = dedup_corpus(pre, down, DedupRule::BothHashes);
  CHECK(both.dropped == std::vector<std::string>{"full"});
  CHECK(both.retained == std::vector<std::string>{"split"});
  auto any = dedup_corpus(pre, down, DedupRule::AnyHash);
  CHECK(any.dropped == std::vector<std::string>{"full", "split"});
  HashTable md5_only{{"m", {h1.md5, hash_bytes("zzz").sha256}}};
  CHECK(dedup_corpus(md5_only, down).dropped.empty());
  CHECK(dedup_corpus(md5_only, down, DedupRule::AnyHash).dropped == std::vector<std::string>{"m"});
}

TEST_CASE("planted duplicates are exactly the dropped set") {
  oracle::Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    HashTable pre, down;
    for (int i = 0; i < 1000; ++i) pre["p" + std::to_string(i)] = random_hash(rng);
    for (int i = 0; i < 300; ++i) down["d" + std::to_string(i)] = random_hash(rng);
    std::set<std::string> planted;
    while (planted.size() < 10) {
      auto id = "p" + std::to_string(rng() % 1000);
      if (planted.insert(id).second) down["dup_" + id] = pre[id];
    }
    // Oracle: set intersection on (md5, sha256) pairs.
    std::set<std::pair<std::string, std::string>> down_set;
    for (auto& [_, h] : down) down_set.insert({h.md5, h.sha256});
    std::vector<std::string> expect;
    for (auto& [id, h] : pre) if (down_set.contains({h.md5, h.sha256})) expect.push_back(id);
    auto r = dedup_corpus(pre, down);
    CHECK(r.dropped == expect);
    CHECK(std::set<std::string>(r.dropped.begin(), r.dropped.end()) == planted);
    CHECK(r.retained.size() == 990);
    CHECK(std::is_sorted(r.retained.begin(), r.retained.end()));
  }
}

TEST_CASE("manifest parsing") {
  auto t = parse_hash_manifest(
      R"({"a":{"md5":"900150983CD24FB0D6963F7D28E17F72","sha256":"ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"}})");
  CHECK(t.at("a").md5 == "900150983cd24fb0d6963f7d28e17f72");
  CHECK(code_of([] { parse_hash_manifest(R"({"a":{"md5":"abc","sha256":"00"}})"); }) ==
        ErrorCode::MalformedHash);
  CHECK(code_of([] {
          parse_hash_manifest(
              R"({"a":{"md5":"zz0150983cd24fb0d6963f7d28e17f72","sha256":"ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"}})");
        }) == ErrorCode::MalformedHash);
  CHECK(code_of([] { parse_hash_manifest(R"({"a":{"md5":"900150983cd24fb0d6963f7d28e17f72"}})"); }) ==
        ErrorCode::MalformedHash);
  CHECK(code_of([] { parse_hash_manifest("[1"); }) == ErrorCode::MalformedJson);
}

TEST_CASE("directory hashing and dedup of files") {
  auto root = oracle::scratch_dir("dedup");
  std::filesystem::create_directories(root / "pre" / "sub");
  std::filesystem::create_directories(root / "down");
  std::ofstream(root / "pre" / "a.jpg") << "AAAA";
  std::ofstream(root / "pre" / "sub" / "b.jpg") << "BBBB";
  std::ofstream(root / "down" / "copy.jpg") << "BBBB";
  auto pre = load_hash_source(root / "pre");
  CHECK(pre.size() == 2);
  CHECK(pre.contains("sub/b.jpg"));
  CHECK(pre.at("a.jpg").md5 == hash_bytes("AAAA").md5);
  auto r = dedup_corpus(pre, load_hash_source(root / "down"));
  CHECK(r.dropped == std::vector<std::string>{"sub/b.jpg"});
  CHECK(code_of([&] { hash_file(root / "missing"); }) == ErrorCode::IoError);
  std::filesystem::remove_all(root);
}
