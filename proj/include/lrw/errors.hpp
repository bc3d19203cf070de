#pragma once

#include <stdexcept>
#include <string>

namespace lrw {

// Training diverged or reached a state it cannot continue from.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system failure (open, read, write).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lrw
