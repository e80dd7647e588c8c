#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctxstrata {

/// Categories of user/data errors. Every category maps to CLI exit code 2;
/// anything thrown that is not an ctxstrata::Error is an internal failure.
enum class ErrorKind {
  schema,
  value,
  conflict,
  shape,
  insufficient_data,
  insufficient_groups,
  degenerate_target,
  degenerate_distribution,
  degenerate_subgroup,
  undefined_metric,
  empty_class,
  missing_phrase_list,
  missing_pretest,
  no_context,
  config,
  io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::schema: return "schema";
    case ErrorKind::value: return "value";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::shape: return "shape";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::insufficient_groups: return "insufficient_groups";
    case ErrorKind::degenerate_target: return "degenerate_target";
    case ErrorKind::degenerate_distribution: return "degenerate_distribution";
    case ErrorKind::degenerate_subgroup: return "degenerate_subgroup";
    case ErrorKind::undefined_metric: return "undefined_metric";
    case ErrorKind::empty_class: return "empty_class";
    case ErrorKind::missing_phrase_list: return "missing_phrase_list";
    case ErrorKind::missing_pretest: return "missing_pretest";
    case ErrorKind::no_context: return "no_context";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ctxstrata
