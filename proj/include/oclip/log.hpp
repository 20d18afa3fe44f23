#pragma once

#include <string>

namespace oclip {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Read once from OCLIP_LOG (error|info|debug); defaults to info.
LogLevel log_level();
void set_log_level(LogLevel level);

// All diagnostics go to stderr.
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace oclip
