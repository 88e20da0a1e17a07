#pragma once

#include <stdexcept>
#include <string>

namespace corpipe {

// Base for every error raised by the library. The CLI maps these to exit
// code 1 (data errors) and keeps exit code 2 for usage errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed CoNLL-U input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Unbalanced or otherwise inconsistent Entity annotation.
class AnnotationError : public Error {
 public:
  AnnotationError(std::string entity_id, const std::string& what)
      : Error("entity '" + entity_id + "': " + what), entity_id_(std::move(entity_id)) {}
  const std::string& entity_id() const noexcept { return entity_id_; }

 private:
  std::string entity_id_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// Tag encoding/decoding failure; `position` is the 0-based token index.
class CodecError : public Error {
 public:
  CodecError(long position, const std::string& what)
      : Error(position >= 0 ? "token " + std::to_string(position) + ": " + what : what),
        position_(position) {}
  long position() const noexcept { return position_; }

 private:
  long position_;
};

class CrfError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

}  // namespace corpipe
