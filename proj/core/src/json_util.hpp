#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "resee/error.hpp"

namespace resee::detail {

using nlohmann::json;

inline std::string read_file(const std::filesystem::path& path, std::string_view module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string(module), "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content, std::string_view module) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(std::string(module), "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError(std::string(module), "write failed for " + path.string());
}

/// Calls fn(line_number, json) for every non-blank line.
template <typename Fn>
void for_each_json_line(std::string_view content, std::string_view module, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    const auto nl = content.find('\n', pos);
    const auto end = nl == std::string_view::npos ? content.size() : nl;
    auto line = content.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (nl == std::string_view::npos) break;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(std::string(module), "line " + std::to_string(line_no) + ": " + e.what());
    }
    fn(line_no, j);
    if (nl == std::string_view::npos) break;
  }
}

/// Rejects any key not in `allowed`.
inline void require_known_fields(const json& j, std::initializer_list<std::string_view> allowed,
                                 std::string_view module, std::string_view where) {
  if (!j.is_object()) throw SchemaError(std::string(module), std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw SchemaError(std::string(module), std::string(where) + ": unknown field '" + key + "'");
  }
}

template <typename T>
T get_field(const json& j, const char* key, std::string_view module, std::string_view where) {
  if (!j.contains(key)) throw SchemaError(std::string(module), std::string(where) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string(module), std::string(where) + ": field '" + key + "': " + e.what());
  }
}

}  // namespace resee::detail
