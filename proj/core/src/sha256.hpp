#pragma once

#include <filesystem>
#include <string>

namespace bpeq::detail {

// Lowercase hex SHA-256 of a file's bytes. Throws IoError.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace bpeq::detail
