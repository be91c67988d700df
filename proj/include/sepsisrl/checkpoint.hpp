#pragma once
/// Self-describing parameter checkpoints: a one-line JSON header (format
/// version, model kind, feature-schema fingerprint, creation metadata, and
/// the name/shape/offset of every tensor) followed by all parameter values
/// as raw little-endian 64-bit floats. Loading reproduces parameters
/// bitwise; kind, schema, version, and payload-length mismatches are
/// rejected rather than coerced. Also exposes the SHA-256 helpers used for
/// config hashes and run-manifest content hashes.

#include <cstdint>
#include <string>
#include <vector>

#include "sepsisrl/cohort.hpp"
#include "sepsisrl/params.hpp"
#include "sepsisrl/tensor.hpp"

namespace sepsisrl::ckpt {

/// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(const std::string& bytes);

/// SHA-256 of a file's contents, lowercase hex. IoError when unreadable.
std::string sha256_file(const std::string& path);

/// Stable identity of a feature schema (grouping mode plus the ordered
/// feature names), as a SHA-256 hex digest. Checkpoints refuse to load into
/// models built on a different schema.
std::string schema_fingerprint(const cohort::FeatureSchema& schema);

struct CheckpointMeta {
  std::string kind;         ///< model tag: "ae", "sage", "gatv2", "bc", "dbcq"
  std::string schema;       ///< schema_fingerprint of the training cohort
  std::uint64_t seed = 0;   ///< seed the parameters were created/trained with
  std::string config_hash;  ///< hash of the resolved run configuration
};

/// One deserialized tensor.
struct NamedTensor {
  std::string name;
  Tensor value;
};

struct LoadedCheckpoint {
  int version = 0;
  CheckpointMeta meta;
  std::vector<NamedTensor> tensors;  ///< in the container's declared order
  std::vector<NamedTensor> state;    ///< non-trainable tensors (e.g. batch-norm
                                     ///< running statistics)
};

/// Writes parameters in registration order, plus any named non-trainable
/// state tensors. IoError on write failure.
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<const Param*>& params,
                     const std::vector<NamedTensor>& state = {});

/// Finds a state tensor by name; DataError when absent.
const Tensor& find_state(const LoadedCheckpoint& loaded, const std::string& name);

/// Parses and validates a checkpoint file. Unreadable file: IoError. Corrupt
/// header or payload (length disagreeing with the declared shapes), or an
/// unsupported format version: DataError.
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Copies a loaded checkpoint's tensors into live parameters, by position,
/// verifying the format version, the model kind, the schema fingerprint, and
/// every parameter's name and shape. DataError on any mismatch.
void restore_params(const LoadedCheckpoint& loaded, const std::string& expected_kind,
                    const std::string& expected_schema,
                    const std::vector<Param*>& params);

/// load_checkpoint + restore_params, returning the metadata.
CheckpointMeta load_into(const std::string& path, const std::string& expected_kind,
                         const std::string& expected_schema,
                         const std::vector<Param*>& params);

}  // namespace sepsisrl::ckpt
