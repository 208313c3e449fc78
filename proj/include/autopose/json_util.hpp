#pragma once

#include <string>

#include <json.hpp>

namespace autopose {

// Canonical text rendering: objects get sorted keys (nlohmann::json default)
// across multiple indented lines; arrays and objects whose elements are all
// primitive are rendered inline, so leaf records like scale vectors and edges
// occupy a single line each. Encoding the same value twice is byte-identical.
inline bool json_all_primitive(const nlohmann::json& j) {
  for (const auto& el : j)
    if (el.is_structured()) return false;
  return true;
}

inline void json_canonical_render(const nlohmann::json& j, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string pad_in(static_cast<std::size_t>(indent + 1) * 2, ' ');
  if (j.is_object()) {
    if (j.empty()) {
      out += "{}";
      return;
    }
    if (json_all_primitive(j)) {
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ", ";
        first = false;
        out += nlohmann::json(it.key()).dump() + ": " + it.value().dump();
      }
      out += '}';
      return;
    }
    out += "{\n";
    bool first = true;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!first) out += ",\n";
      first = false;
      out += pad_in + nlohmann::json(it.key()).dump() + ": ";
      json_canonical_render(it.value(), out, indent + 1);
    }
    out += '\n' + pad + '}';
    return;
  }
  if (j.is_array()) {
    if (j.empty()) {
      out += "[]";
      return;
    }
    if (json_all_primitive(j)) {
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ',';
        out += j[i].dump();
      }
      out += ']';
      return;
    }
    out += "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) out += ",\n";
      out += pad_in;
      json_canonical_render(j[i], out, indent + 1);
    }
    out += '\n' + pad + ']';
    return;
  }
  out += j.dump();
}

inline std::string json_canonical(const nlohmann::json& j) {
  std::string out;
  json_canonical_render(j, out, 0);
  out += '\n';
  return out;
}

}  // namespace autopose
