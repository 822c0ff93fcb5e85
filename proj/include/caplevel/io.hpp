#pragma once

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>

#include "json.hpp"

#include "caplevel/error.hpp"

namespace caplevel {

using json = nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw error(errc::io_error, "cannot open " + path.string() + ": " + std::strerror(errno));
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes `content` to a sibling temp file and renames it over `path`, so a
/// reader never observes a partially written file.
inline void atomic_write_file(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw error(errc::io_error, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw error(errc::io_error, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw error(errc::io_error, "rename to " + path.string() + ": " + ec.message());
  }
}

/// Calls `fn(line_no, object)` for every non-blank line of a line-delimited
/// JSON stream. Line numbers are 1-based.
inline void for_each_jsonl(std::istream& in, std::string_view what,
                           const std::function<void(std::size_t, const json&)>& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw error(errc::malformed_line,
                  std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) {
      throw error(errc::malformed_line,
                  std::string(what) + " line " + std::to_string(line_no) + ": not an object");
    }
    fn(line_no, obj);
  }
}

/// Serializes records as one compact JSON object per LF-terminated line.
template <typename Range>
std::string to_jsonl(const Range& records) {
  std::string out;
  for (const json& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

}  // namespace caplevel
