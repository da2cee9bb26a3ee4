#include "srlab/logging.hpp"

#include <spdlog/sinks/ostream_sink.h>

namespace srlab {

std::shared_ptr<spdlog::logger> null_logger() {
  static auto log = std::make_shared<spdlog::logger>("srlab-null");
  return log;
}

std::shared_ptr<spdlog::logger> stream_logger(std::ostream& out, const std::string& name) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(out, /*force_flush=*/true);
  sink->set_pattern("[%l] %v");
  auto log = std::make_shared<spdlog::logger>(name, std::move(sink));
  log->set_level(spdlog::level::info);
  return log;
}

}  // namespace srlab
