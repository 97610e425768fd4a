#pragma once

#include <filesystem>
#include <string_view>

namespace lnpde {

/// Writes `content` to path + ".tmp" and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace lnpde
