#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace v2c {

enum class ErrorCode {
  // embkit
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  DimMismatch,
  ZeroVector,
  EmptyMatrix,
  NotNormalized,
  // vocab
  EmptyLexicon,
  NoAdjectives,
  NoNouns,
  NoRelations,
  ParseError,
  // quantset
  MissingClass,
  DegenerateBase,
  EmptyPool,
  // conceptfilter
  MissingEmbeddings,
  GroupResolutionError,
  EmptyFrequencies,
  // tokenizer
  EmptyCodebook,
  // cbm
  ShapeMismatch,
  NonFiniteLoss,
  BadClass,
  // synth
  InfeasibleGeometry,
  // generic
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace v2c
