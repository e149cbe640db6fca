#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ptsynth/embedding.hpp"

namespace ptsynth {

// EMB1 layout, little-endian:
//   "EMB1" | u32 dim | u64 count | u8 unit_flag | count*dim f32 row-major
// Row ids live in a sidecar "<path>.ids.json" holding a JSON array of strings.
inline constexpr char kEmb1Magic[4] = {'E', 'M', 'B', '1'};
inline constexpr std::size_t kEmb1HeaderBytes = 4 + 4 + 8 + 1;

std::filesystem::path ids_sidecar_path(const std::filesystem::path& path);

void write_emb1(std::ostream& out, const FeatureMatrix& m);

// Reads the binary block. When `ids` is empty the rows get "row_<i>" ids.
FeatureMatrix read_emb1(std::istream& in, std::optional<std::vector<std::string>> ids);

void save_embeddings(const FeatureMatrix& m, const std::filesystem::path& path);

// A missing sidecar is tolerated: rows get synthetic ids and a warning goes to stderr.
FeatureMatrix load_embeddings(const std::filesystem::path& path);

}  // namespace ptsynth
