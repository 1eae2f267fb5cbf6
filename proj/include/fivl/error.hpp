#pragma once

#include <stdexcept>
#include <string>

namespace fivl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or raster dimensions disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An RLE stream or mask record that does not describe a valid raster.
class MalformedMaskError : public Error {
 public:
  using Error::Error;
};

// A quantity that has no defined value for the given input (empty overlap,
// constant rank vector, zero baseline accuracy).
class UndefinedValueError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Retryable failure talking to a remote endpoint.
class TransportError : public Error {
 public:
  using Error::Error;
};

// The endpoint answered but the payload does not follow the wire contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  ExtractionError(std::string sample_id, const std::string& what)
      : Error("extraction failed for sample '" + sample_id + "': " + what),
        sample_id_(std::move(sample_id)) {}
  const std::string& sample_id() const noexcept { return sample_id_; }

 private:
  std::string sample_id_;
};

class IngestError : public Error {
 public:
  IngestError(std::string record_id, std::string field, const std::string& what)
      : Error("record '" + record_id + "' field '" + field + "': " + what),
        record_id_(std::move(record_id)),
        field_(std::move(field)) {}
  const std::string& record_id() const noexcept { return record_id_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string record_id_;
  std::string field_;
};

// Dataset, label or dump file that cannot be parsed. Carries the 1-based line.
class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace fivl
