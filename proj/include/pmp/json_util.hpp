#pragma once

#include "pmp/common.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace pmp::json_util {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

// Parses JSON text; syntax errors are reported with 1-based line and column.
inline nlohmann::json parse_text(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    for (std::size_t i = 0; i + 1 < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

inline nlohmann::json parse_file(const std::string& path) { return parse_text(read_file(path), path); }

inline const nlohmann::json& field(const nlohmann::json& j, const std::string& key, const std::string& ctx) {
  if (!j.is_object()) throw SchemaError(ctx + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(ctx + ": missing field '" + key + "'");
  return *it;
}

template <class T>
T get(const nlohmann::json& j, const std::string& key, const std::string& ctx) {
  const auto& v = field(j, key, ctx);
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw SchemaError("");
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw SchemaError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw SchemaError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw SchemaError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw SchemaError(ctx + "." + key + ": wrong type (got " + std::string(v.type_name()) + ")");
  }
}

inline Vec2 as_vec2(const nlohmann::json& v, const std::string& ctx) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw SchemaError(ctx + ": expected [x, z]");
  return {v[0].get<double>(), v[1].get<double>()};
}

inline Vec2 get_vec2(const nlohmann::json& j, const std::string& key, const std::string& ctx) {
  return as_vec2(field(j, key, ctx), ctx + "." + key);
}

inline nlohmann::json to_array(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vec as_vec(const nlohmann::json& v, const std::string& ctx) {
  if (!v.is_array()) throw SchemaError(ctx + ": expected an array of numbers");
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw SchemaError(ctx + "[" + std::to_string(i) + "]: expected a number");
    out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  }
  return out;
}

}  // namespace pmp::json_util
