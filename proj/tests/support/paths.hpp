#pragma once

#include <algorithm>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

#include "sysid/elf_image.hpp"

namespace sysid::testing {

inline std::filesystem::path fixture_dir() { return SYSID_FIXTURE_DIR; }
inline std::filesystem::path fixture_bin(const std::string& name) { return fixture_dir() / "bin" / name; }
inline std::filesystem::path manifest_dir() { return fixture_dir() / "manifests"; }

inline std::shared_ptr<const BinaryImage> fixture_image(const std::string& name) {
  return std::make_shared<const BinaryImage>(load_binary(fixture_bin(name)));
}

inline Addr symbol_address(const BinaryImage& img, const std::string& name) {
  auto it = std::find_if(img.symbols.begin(), img.symbols.end(), [&](const auto& s) { return s.name == name; });
  if (it == img.symbols.end()) throw std::runtime_error("no symbol " + name);
  return it->address;
}

}  // namespace sysid::testing
