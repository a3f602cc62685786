// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace s2kg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. `line` is 1-based, 0 when unknown; `where` is a
// record path such as "dialogs[3].turns[1]".
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line, std::string where)
      : Error(format(message, line, where)), line_(line), where_(std::move(where)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& where() const noexcept { return where_; }

 private:
  static std::string format(const std::string& message, std::size_t line, const std::string& where) {
    std::string out = "parse error";
    if (line > 0) out += " at line " + std::to_string(line);
    if (!where.empty()) out += " (" + where + ")";
    return out + ": " + message;
  }

  std::size_t line_;
  std::string where_;
};

// A data-model invariant does not hold. `subject` names the offending
// record (a dialog_id, a field name, a parameter name).
class ValidationError : public Error {
 public:
  ValidationError(std::string subject, const std::string& rule)
      : Error(subject.empty() ? rule : subject + ": " + rule), subject_(std::move(subject)) {}

  const std::string& subject() const noexcept { return subject_; }

 private:
  std::string subject_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class BusyError : public Error {
 public:
  using Error::Error;
};

}  // namespace s2kg
