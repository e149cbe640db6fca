#include "ptsynth/emb_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "ptsynth/error.hpp"

namespace ptsynth {

static_assert(std::endian::native == std::endian::little,
              "EMB1 I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& value) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) return false;
  std::memcpy(&value, bytes, sizeof(T));
  return true;
}

}  // namespace

std::filesystem::path ids_sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".ids.json");
}

void write_emb1(std::ostream& out, const FeatureMatrix& m) {
  out.write(kEmb1Magic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint8_t>(out, m.unit_normalized() ? 1 : 0);
  auto data = m.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
}

FeatureMatrix read_emb1(std::istream& in, std::optional<std::vector<std::string>> ids) {
  char magic[4];
  if (!in.read(magic, 4)) throw Error(ErrorCode::TruncatedFile, "missing EMB1 header");
  if (std::memcmp(magic, kEmb1Magic, 4) != 0) throw Error(ErrorCode::BadMagic, "not an EMB1 file");
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::uint8_t unit_flag = 0;
  if (!get(in, dim) || !get(in, count) || !get(in, unit_flag)) {
    throw Error(ErrorCode::TruncatedFile, "short EMB1 header");
  }
  if (dim == 0) throw Error(ErrorCode::DimMismatch, "EMB1 dimension is zero");
  if (unit_flag > 1) throw Error(ErrorCode::BadMagic, "unit flag must be 0 or 1");

  const std::uint64_t values = count * dim;
  std::vector<float> data;
  // Read in chunks so a corrupt count cannot trigger a huge up-front allocation.
  constexpr std::uint64_t kChunk = 1u << 20;
  while (data.size() < values) {
    const std::size_t take = static_cast<std::size_t>(std::min<std::uint64_t>(kChunk, values - data.size()));
    const std::size_t at = data.size();
    data.resize(at + take);
    if (!in.read(reinterpret_cast<char*>(data.data() + at),
                 static_cast<std::streamsize>(take * sizeof(float)))) {
      const auto got = static_cast<std::uint64_t>(at) + static_cast<std::uint64_t>(in.gcount()) / sizeof(float);
      throw Error(ErrorCode::TruncatedFile, "header declares " + std::to_string(count) +
                                                " rows but payload holds " +
                                                std::to_string(got / dim));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::DimMismatch, "trailing bytes after declared payload");
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw Error(ErrorCode::NonFiniteValue, "row " + std::to_string(i / dim) + " col " +
                                                 std::to_string(i % dim));
    }
  }

  std::vector<std::string> row_ids;
  if (ids) {
    if (ids->size() != count) {
      throw Error(ErrorCode::DimMismatch, "sidecar has " + std::to_string(ids->size()) +
                                              " ids for " + std::to_string(count) + " rows");
    }
    row_ids = std::move(*ids);
  } else {
    row_ids.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) row_ids.push_back("row_" + std::to_string(i));
  }
  return FeatureMatrix(dim, std::move(data), std::move(row_ids), unit_flag == 1);
}

void save_embeddings(const FeatureMatrix& m, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    write_emb1(out, m);
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
  }
  std::ofstream side(ids_sidecar_path(path), std::ios::trunc);
  if (!side) throw Error(ErrorCode::IoError, "cannot open sidecar for " + path.string());
  side << nlohmann::json(m.ids()).dump();
}

FeatureMatrix load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());

  std::optional<std::vector<std::string>> ids;
  const auto side_path = ids_sidecar_path(path);
  if (std::ifstream side{side_path}) {
    try {
      ids = nlohmann::json::parse(side).get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedJson, side_path.string() + ": " + e.what());
    }
  } else {
    std::cerr << "warning: " << side_path.string()
              << " not found; using synthetic row ids\n";
  }
  return read_emb1(in, std::move(ids));
}

}  // namespace ptsynth
