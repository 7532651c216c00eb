#pragma once

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

namespace pmp {

// PMP_LOG=debug|info|warn; anything else falls back to info with a warning.
inline void init_logging() {
  auto logger = spdlog::stderr_color_mt("pmp");
  logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("PMP_LOG");
  const std::string level = env ? env : "info";
  if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else if (level == "warn") {
    spdlog::set_level(spdlog::level::warn);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("PMP_LOG='{}' not recognized; using info", level);
  }
}

}  // namespace pmp
