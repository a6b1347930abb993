#pragma once

#include <stdexcept>

namespace pev {

// Base for all toolkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input is not a PE this toolkit accepts.
struct MalformedPe : Error {
  using Error::Error;
};

// A PeImage no longer matches its own raw bytes (a transform bug).
struct InconsistentModel : Error {
  using Error::Error;
};

// The requested transform cannot be applied to this image.
struct NotApplicable : Error {
  using Error::Error;
};

// SectionAdd: the section table cannot grow without relocating headers.
struct NoHeaderRoom : NotApplicable {
  using NotApplicable::NotApplicable;
};

struct EmptyBank : Error {
  using Error::Error;
};

struct InvalidSpec : Error {
  using Error::Error;
};

struct EmptyDataset : Error {
  using Error::Error;
};

struct UnknownArm : Error {
  using Error::Error;
};

// Any failure to obtain a usable score from a classifier backend.
struct OracleFailure : Error {
  using Error::Error;
};

// Backend process/endpoint failed: bad exit status, HTTP error, timeout.
struct BackendUnavailable : OracleFailure {
  using OracleFailure::OracleFailure;
};

// Backend replied, but not with the documented protocol (or score out of range).
struct MalformedResponse : OracleFailure {
  using OracleFailure::OracleFailure;
};

} // namespace pev
