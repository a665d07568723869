// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared by every module. The CLI maps these onto exit codes.

#pragma once

#include <stdexcept>
#include <string>

namespace scalecomm {

/// Input outside an operation's mathematical domain (zero norm, empty set, bad action).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Shape mismatch, cyclic graph, or any other violated structural contract.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration or unknown config key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required artifact (checkpoint, buffer) does not exist.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An artifact exists but is incompatible (shape mismatch, wrong format version).
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN or Inf appeared in a loss; carries a diagnostic dump.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace scalecomm
