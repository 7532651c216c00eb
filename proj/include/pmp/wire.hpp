#pragma once

#include "pmp/common.hpp"

#include <json.hpp>

#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

// Teleop wire protocol: one JSON object per WebSocket text frame,
// discriminated by "type".
namespace pmp::wire {

struct Cmd {
  double vx = 0.0, h = 0.0, pitch = 0.0;
  bool operator==(const Cmd&) const = default;
};
struct SelectClip {
  std::string clip_id;
  double speed = 1.0;
  bool operator==(const SelectClip&) const = default;
};
struct Push {
  double vel = 0.0;
  bool operator==(const Push&) const = default;
};
struct Reset {
  bool operator==(const Reset&) const = default;
};
struct Pause {
  bool on = true;
  bool operator==(const Pause&) const = default;
};
struct BasePose {
  double x = 0.0, z = 0.0, pitch = 0.0;
  bool operator==(const BasePose&) const = default;
};
struct InstMetrics {
  double E_vel_inst = 0.0, E_g_inst = 0.0;
  bool operator==(const InstMetrics&) const = default;
};
struct State {
  double t = 0.0;
  BasePose base;
  std::vector<double> q;
  double qdot_norm = 0.0;
  std::vector<bool> contacts;
  Cmd command;
  InstMetrics metrics;
  double alpha = 1.0;
  bool operator==(const State&) const = default;
};
// Sent by the server with the clip list; a client sends it without ids to ask for the list.
struct Clips {
  std::optional<std::vector<std::string>> ids;
  bool operator==(const Clips&) const = default;
};
struct Error {
  std::string msg;
  bool operator==(const Error&) const = default;
};

using Message = std::variant<Cmd, SelectClip, Push, Reset, Pause, State, Clips, Error>;

struct ProtocolError : pmp::Error {
  using pmp::Error::Error;
};

inline const char* type_name(const Message& m) {
  static constexpr const char* names[] = {"cmd", "select_clip", "push", "reset", "pause", "state", "clips", "error"};
  return names[m.index()];
}

namespace detail {

using nlohmann::json;

inline void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ProtocolError(ctx + ": unexpected field '" + k + "'");
}

inline const json& field(const json& j, const char* key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) throw ProtocolError(ctx + ": missing field '" + key + "'");
  return j.at(key);
}

inline double number(const json& j, const char* key, const std::string& ctx) {
  const auto& v = field(j, key, ctx);
  if (!v.is_number()) throw ProtocolError(ctx + "." + key + ": expected a number");
  return v.get<double>();
}

inline std::string string(const json& j, const char* key, const std::string& ctx) {
  const auto& v = field(j, key, ctx);
  if (!v.is_string()) throw ProtocolError(ctx + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline bool boolean(const json& j, const char* key, const std::string& ctx) {
  const auto& v = field(j, key, ctx);
  if (!v.is_boolean()) throw ProtocolError(ctx + "." + key + ": expected a boolean");
  return v.get<bool>();
}

inline const json& object(const json& j, const char* key, const std::string& ctx) {
  const auto& v = field(j, key, ctx);
  if (!v.is_object()) throw ProtocolError(ctx + "." + key + ": expected an object");
  return v;
}

template <class T, class Check>
std::vector<T> array(const json& j, const char* key, const std::string& ctx, Check ok, const char* what) {
  const auto& v = field(j, key, ctx);
  if (!v.is_array()) throw ProtocolError(ctx + "." + key + ": expected an array");
  std::vector<T> out;
  for (const auto& e : v) {
    if (!ok(e)) throw ProtocolError(ctx + "." + key + ": expected an array of " + what);
    out.push_back(e.get<T>());
  }
  return out;
}

inline Cmd cmd_fields(const json& j, const std::string& ctx) {
  only_keys(j, {"type", "vx", "h", "pitch"}, ctx);
  return {number(j, "vx", ctx), number(j, "h", ctx), number(j, "pitch", ctx)};
}

inline json cmd_json(const Cmd& c) { return {{"vx", c.vx}, {"h", c.h}, {"pitch", c.pitch}}; }

}  // namespace detail

inline nlohmann::json to_json(const Message& m) {
  using nlohmann::json;
  json j;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Cmd>) {
          j = detail::cmd_json(v);
        } else if constexpr (std::is_same_v<T, SelectClip>) {
          j = {{"clip_id", v.clip_id}, {"speed", v.speed}};
        } else if constexpr (std::is_same_v<T, Push>) {
          j = {{"vel", v.vel}};
        } else if constexpr (std::is_same_v<T, Reset>) {
          j = json::object();
        } else if constexpr (std::is_same_v<T, Pause>) {
          j = {{"on", v.on}};
        } else if constexpr (std::is_same_v<T, State>) {
          j = {{"t", v.t},
               {"base", {{"x", v.base.x}, {"z", v.base.z}, {"pitch", v.base.pitch}}},
               {"q", v.q},
               {"qdot_norm", v.qdot_norm},
               {"contacts", v.contacts},
               {"command", detail::cmd_json(v.command)},
               {"metrics", {{"E_vel_inst", v.metrics.E_vel_inst}, {"E_g_inst", v.metrics.E_g_inst}}},
               {"alpha", v.alpha}};
        } else if constexpr (std::is_same_v<T, Clips>) {
          j = json::object();
          if (v.ids) j["ids"] = *v.ids;
        } else {
          j = {{"msg", v.msg}};
        }
      },
      m);
  j["type"] = type_name(m);
  return j;
}

inline std::string serialize(const Message& m) { return to_json(m).dump(); }

// Validates against the schema; anything off throws ProtocolError.
inline Message from_json(const nlohmann::json& j) {
  using namespace detail;
  if (!j.is_object()) throw ProtocolError("message: expected a JSON object");
  const std::string type = string(j, "type", "message");
  const std::string ctx = type;
  if (type == "cmd") return cmd_fields(j, ctx);
  if (type == "select_clip") {
    only_keys(j, {"type", "clip_id", "speed"}, ctx);
    const double speed = number(j, "speed", ctx);
    if (!(speed > 0.0)) throw ProtocolError("select_clip.speed: must be > 0");
    return SelectClip{string(j, "clip_id", ctx), speed};
  }
  if (type == "push") {
    only_keys(j, {"type", "vel"}, ctx);
    return Push{number(j, "vel", ctx)};
  }
  if (type == "reset") {
    only_keys(j, {"type"}, ctx);
    return Reset{};
  }
  if (type == "pause") {
    only_keys(j, {"type", "on"}, ctx);
    return Pause{boolean(j, "on", ctx)};
  }
  if (type == "state") {
    only_keys(j, {"type", "t", "base", "q", "qdot_norm", "contacts", "command", "metrics", "alpha"}, ctx);
    State s;
    s.t = number(j, "t", ctx);
    const auto& b = object(j, "base", ctx);
    only_keys(b, {"x", "z", "pitch"}, "state.base");
    s.base = {number(b, "x", "state.base"), number(b, "z", "state.base"), number(b, "pitch", "state.base")};
    s.q = array<double>(j, "q", ctx, [](const nlohmann::json& e) { return e.is_number(); }, "numbers");
    s.qdot_norm = number(j, "qdot_norm", ctx);
    s.contacts = array<bool>(j, "contacts", ctx, [](const nlohmann::json& e) { return e.is_boolean(); }, "booleans");
    const auto& c = object(j, "command", ctx);
    only_keys(c, {"vx", "h", "pitch"}, "state.command");
    s.command = {number(c, "vx", "state.command"), number(c, "h", "state.command"), number(c, "pitch", "state.command")};
    const auto& m = object(j, "metrics", ctx);
    only_keys(m, {"E_vel_inst", "E_g_inst"}, "state.metrics");
    s.metrics = {number(m, "E_vel_inst", "state.metrics"), number(m, "E_g_inst", "state.metrics")};
    s.alpha = number(j, "alpha", ctx);
    return s;
  }
  if (type == "clips") {
    only_keys(j, {"type", "ids"}, ctx);
    Clips c;
    if (j.contains("ids"))
      c.ids = array<std::string>(j, "ids", ctx, [](const nlohmann::json& e) { return e.is_string(); }, "strings");
    return c;
  }
  if (type == "error") {
    only_keys(j, {"type", "msg"}, ctx);
    return Error{string(j, "msg", ctx)};
  }
  throw ProtocolError("message: unknown type '" + type + "'");
}

inline Message parse(const std::string& text) {
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ProtocolError("message: not valid JSON");
  return from_json(j);
}

}  // namespace pmp::wire
