#pragma once

// Output manifests: SHA-256 of every artifact a command wrote.

#include <openssl/evp.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "faasmeter/error.hpp"

namespace faasmeter::manifest {

inline std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xf];
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string sha256_file(const std::filesystem::path& p) { return sha256_hex(read_file(p)); }

// Files are named relative to `dir`; manifest.json itself is never listed.
inline nlohmann::json build(const std::filesystem::path& dir, const std::vector<std::string>& files,
                            const std::string& command) {
  nlohmann::json j;
  j["command"] = command;
  j["files"] = nlohmann::json::object();
  for (const auto& f : files) j["files"][f] = sha256_file(dir / f);
  return j;
}

inline void write(const std::filesystem::path& dir, const std::vector<std::string>& files, const std::string& command) {
  auto j = build(dir, files, command);
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << '\n';
}

inline std::map<std::string, std::string> read(const std::filesystem::path& dir) {
  auto j = nlohmann::json::parse(read_file(dir / "manifest.json"));
  return j.at("files").get<std::map<std::string, std::string>>();
}

}  // namespace faasmeter::manifest
