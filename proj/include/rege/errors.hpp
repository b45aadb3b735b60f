#pragma once

#include <stdexcept>
#include <string>

namespace rege {

// Error taxonomy mirrored by the CLI exit codes (sysexits-style):
//   io_error   -> 66 (missing or unreadable input)
//   data_error -> 65 (malformed content, schema violation, bad value)
// anything else -> 70 (internal error)
class io_error : public std::runtime_error {
public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

class data_error : public std::runtime_error {
public:
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace rege
