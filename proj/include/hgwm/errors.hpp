#pragma once

#include <stdexcept>
#include <string>

namespace hgwm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
  using Error::Error;
};

struct OutOfWorkspaceError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct UsageError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct EmptySceneError : Error {
  using Error::Error;
};

struct DegenerateObservationError : Error {
  using Error::Error;
};

struct ManifestMismatchError : Error {
  using Error::Error;
};

struct NonFiniteError : Error {
  using Error::Error;
};

struct SpecError : Error {
  using Error::Error;
};

}  // namespace hgwm
