// Exception taxonomy shared across the library.

#pragma once

#include <stdexcept>
#include <string>

namespace g2c {

// Shape or rank mismatch in tensor math.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data (CoNLL-U, TSV, JSONL, config).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unknown label looked up in strict mode.
struct VocabularyError : std::runtime_error {
  explicit VocabularyError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or incompatible checkpoint file.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid span layout fed to the BIO encoder.
struct EncodingError : std::runtime_error {
  explicit EncodingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace g2c
