#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cem/core.hpp"

namespace cem {

// Line-delimited JSON record files; one record per line.
template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<T>());
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " +
                    e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& v) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& rec : v) {
    json j = rec;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& data) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// Write-then-rename so concurrent readers never see a torn file.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& data) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, data);
  std::filesystem::rename(tmp, path);
}

}  // namespace cem
