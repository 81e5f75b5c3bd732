#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace evidencelab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Action submitted in the wrong phase (forecast before flip, second flip, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class BlockComplete : public ProtocolError {
 public:
  BlockComplete() : ProtocolError("block already complete: no flips remaining") {}
};

class IllegalFlip : public Error {
 public:
  IllegalFlip(int requested, std::vector<int> legal);
  int requested() const noexcept { return requested_; }
  const std::vector<int>& legal() const noexcept { return legal_; }

 private:
  int requested_;
  std::vector<int> legal_;
};

// A policy asked for a feedback field its treatment does not disclose.
class InformationViolation : public Error {
 public:
  using Error::Error;
};

// Likelihood is flat in the parameter (e.g. every signal is a tie).
class UnidentifiedParameter : public Error {
 public:
  using Error::Error;
};

}  // namespace evidencelab
