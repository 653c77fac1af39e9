// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace msin {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A softmax row with no unmasked entry.
class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class EmptyDocumentError : public Error {
 public:
  using Error::Error;
};

class EmptyDayError : public Error {
 public:
  using Error::Error;
};

/// Two forward passes of a supposedly pure function disagreed.
class DeterminismError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Pre@k / Rec@k requested over a set with no ground-truth day.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf reached the loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace msin
