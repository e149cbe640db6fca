#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ptsynth {

struct ContentHash {
  std::string md5;     // 32 lowercase hex chars
  std::string sha256;  // 64 lowercase hex chars
};

// id -> content hashes.
using HashTable = std::map<std::string, ContentHash>;

enum class DedupRule {
  BothHashes,  // drop when one downstream item matches on MD5 and SHA256
  AnyHash,     // drop when MD5 or SHA256 matches any downstream item
};

struct DedupResult {
  std::vector<std::string> retained;  // sorted by id
  std::vector<std::string> dropped;   // sorted by id
};

ContentHash hash_bytes(std::string_view bytes);
ContentHash hash_file(const std::filesystem::path& path);

// Every regular file under root, keyed by its path relative to root.
HashTable hash_directory(const std::filesystem::path& root);

// JSON object {"id": {"md5": "...", "sha256": "..."}, ...}.
HashTable parse_hash_manifest(std::string_view json_text);
HashTable load_hash_manifest(const std::filesystem::path& path);

// A directory is hashed; anything else is read as a hash manifest.
HashTable load_hash_source(const std::filesystem::path& path);

// Removes pre-training items that also occur downstream.
DedupResult dedup_corpus(const HashTable& pretrain, const HashTable& downstream,
                         DedupRule rule = DedupRule::BothHashes);

}  // namespace ptsynth
