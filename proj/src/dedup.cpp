#include "ptsynth/dedup.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <json.hpp>
#include <openssl/evp.h>
#include <set>
#include <sstream>

#include "ptsynth/error.hpp"

namespace ptsynth {

namespace {

std::string hex(const unsigned char* bytes, unsigned len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kDigits[bytes[i] >> 4]);
    out.push_back(kDigits[bytes[i] & 0xF]);
  }
  return out;
}

class Digest {
 public:
  explicit Digest(const EVP_MD* md) : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, md, nullptr) != 1) {
      throw Error(ErrorCode::IoError, "digest init failed");
    }
  }
  ~Digest() { EVP_MD_CTX_free(ctx_); }
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  void update(const char* data, std::size_t len) { EVP_DigestUpdate(ctx_, data, len); }
  std::string finish() {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx_, out, &len);
    return hex(out, len);
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string checked_hex(std::string value, std::size_t length, const std::string& what) {
  std::transform(value.begin(), value.end(), value.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const bool ok = value.size() == length &&
                  std::all_of(value.begin(), value.end(),
                              [](unsigned char c) { return std::isxdigit(c) != 0; });
  if (!ok) throw Error(ErrorCode::MalformedHash, what + " '" + value + "'");
  return value;
}

}  // namespace

ContentHash hash_bytes(std::string_view bytes) {
  Digest md5(EVP_md5()), sha(EVP_sha256());
  md5.update(bytes.data(), bytes.size());
  sha.update(bytes.data(), bytes.size());
  return {md5.finish(), sha.finish()};
}

ContentHash hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  Digest md5(EVP_md5()), sha(EVP_sha256());
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    md5.update(buf.data(), got);
    sha.update(buf.data(), got);
  }
  return {md5.finish(), sha.finish()};
}

HashTable hash_directory(const std::filesystem::path& root) {
  HashTable out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    out[std::filesystem::relative(entry.path(), root).generic_string()] = hash_file(entry.path());
  }
  return out;
}

HashTable parse_hash_manifest(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::MalformedJson, "hash manifest must be an object");
  HashTable out;
  for (const auto& [id, entry] : doc.items()) {
    if (!entry.is_object() || !entry.contains("md5") || !entry.contains("sha256") ||
        !entry["md5"].is_string() || !entry["sha256"].is_string()) {
      throw Error(ErrorCode::MalformedHash, "entry '" + id + "' needs md5 and sha256 strings");
    }
    out[id] = {checked_hex(entry["md5"].get<std::string>(), 32, "md5 of " + id),
               checked_hex(entry["sha256"].get<std::string>(), 64, "sha256 of " + id)};
  }
  return out;
}

HashTable load_hash_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_hash_manifest(ss.str());
}

HashTable load_hash_source(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return hash_directory(path);
  return load_hash_manifest(path);
}

DedupResult dedup_corpus(const HashTable& pretrain, const HashTable& downstream, DedupRule rule) {
  std::set<std::pair<std::string, std::string>> both;
  std::set<std::string> md5s, shas;
  for (const auto& [id, h] : downstream) {
    const auto md5 = checked_hex(h.md5, 32, "md5 of " + id);
    const auto sha = checked_hex(h.sha256, 64, "sha256 of " + id);
    both.emplace(md5, sha);
    md5s.insert(md5);
    shas.insert(sha);
  }
  DedupResult out;
  // HashTable is ordered by id, so both outputs come out sorted.
  for (const auto& [id, h] : pretrain) {
    const auto md5 = checked_hex(h.md5, 32, "md5 of " + id);
    const auto sha = checked_hex(h.sha256, 64, "sha256 of " + id);
    const bool drop = rule == DedupRule::BothHashes ? both.contains({md5, sha})
                                                    : (md5s.contains(md5) || shas.contains(sha));
    (drop ? out.dropped : out.retained).push_back(id);
  }
  return out;
}

}  // namespace ptsynth
