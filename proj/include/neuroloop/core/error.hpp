#pragma once

#include <stdexcept>
#include <string>

namespace neuroloop {

// Error categories map onto CLI exit codes: configuration problems are
// reported as 2, everything that happens at runtime as 3.
enum class ErrorKind {
  config,
  parameter,
  precondition,
  data,
  io,
  contract,
  protocol,
  training,
  degenerate_variance,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  bool is_configuration() const noexcept {
    return kind_ == ErrorKind::config || kind_ == ErrorKind::parameter ||
           kind_ == ErrorKind::precondition;
  }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct ParameterError : Error {
  explicit ParameterError(const std::string& w) : Error(ErrorKind::parameter, w) {}
};
struct PreconditionError : Error {
  explicit PreconditionError(const std::string& w) : Error(ErrorKind::precondition, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error(ErrorKind::contract, w) {}
};
struct ProtocolError : Error {
  explicit ProtocolError(const std::string& w) : Error(ErrorKind::protocol, w) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& w) : Error(ErrorKind::training, w) {}
};
struct DegenerateVarianceError : Error {
  explicit DegenerateVarianceError(const std::string& w)
      : Error(ErrorKind::degenerate_variance, w) {}
};

}  // namespace neuroloop
