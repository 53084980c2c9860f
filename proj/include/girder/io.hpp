#pragma once

// File helpers shared by the generator and the command-line tool.

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>
#include <toml.hpp>

namespace girder {

/// Write through a sibling temporary file and rename over the target, so a
/// reader never sees a partially written file.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    body(os);
    os.flush();
    if (!os) throw std::runtime_error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, [&](std::ostream& os) { os << text; });
}

/// Parse a JSON or TOML document (chosen by extension) into JSON.
inline nlohmann::json load_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open file");
  if (path.extension() == ".toml") {
    try {
      const auto tbl = toml::parse(in, path.string());
      std::ostringstream ss;
      ss << toml::json_formatter{tbl};
      return nlohmann::json::parse(ss.str());
    } catch (const toml::parse_error& e) {
      std::ostringstream msg;
      msg << path.string() << ':' << e.source().begin.line << ": " << e.description();
      throw std::runtime_error(msg.str());
    }
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace girder
