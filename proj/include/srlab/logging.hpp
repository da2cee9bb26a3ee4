#pragma once

#include <memory>
#include <ostream>
#include <string>

#include <spdlog/logger.h>

namespace srlab {

/// Shared logger with no sinks.
std::shared_ptr<spdlog::logger> null_logger();

/// Logger writing "[level] message" lines to `out`. The stream must outlive it.
std::shared_ptr<spdlog::logger> stream_logger(std::ostream& out, const std::string& name = "srlab");

}  // namespace srlab
