#pragma once

#include <string_view>

namespace trime {

enum class LogLevel { debug, info, warning, error, quiet };

/// Messages below the threshold are dropped. Default: info.
void set_log_level(LogLevel level);
LogLevel log_level();

void log_info(std::string_view message);
void log_warning(std::string_view message);

}  // namespace trime
