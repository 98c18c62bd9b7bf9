#pragma once

#include <stdexcept>
#include <string>

namespace reroof {

// Every failure the library reports derives from Error so the CLI can map it
// to a nonzero exit status in one place.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

class PreconditionError : public Error {
public:
  using Error::Error;
};

class CheckpointError : public Error {
public:
  using Error::Error;
};

class DatasetError : public Error {
public:
  using Error::Error;
};

class TrainingError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace reroof
