#pragma once

#include <functional>
#include <string>

namespace fpirl {

using WarningHandler = std::function<void(const std::string&)>;

/// Emits a warning through the installed handler (stderr by default).
void warn(const std::string& message);

/// Replaces the warning handler; returns the previous one.
WarningHandler set_warning_handler(WarningHandler handler);

/// Suppresses the default stderr output (handlers still run).
void set_quiet(bool quiet);

/// Informational message on stderr unless quiet.
void info(const std::string& message);

}  // namespace fpirl
