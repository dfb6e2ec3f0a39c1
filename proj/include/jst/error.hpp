#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace jst {

// Root of every error thrown by the library. Subclasses carry the
// category so callers (and tests) can discriminate failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class VocabularyError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class GraphError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class InitError : public Error { using Error::Error; };
class AveragingError : public Error { using Error::Error; };
class AnalysisError : public Error { using Error::Error; };
class DivergenceError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace jst
