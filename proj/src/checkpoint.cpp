#include "sepsisrl/checkpoint.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sepsisrl/errors.hpp"

namespace sepsisrl::ckpt {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;
constexpr const char* kFormatName = "sepsisrl-checkpoint";

std::string to_hex(const unsigned char* digest, unsigned int len) {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

struct DigestCtx {
  EVP_MD_CTX* ctx;
  DigestCtx() : ctx(EVP_MD_CTX_new()) {
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
      throw NumericError("sha256: cannot initialize digest context");
    }
  }
  ~DigestCtx() { EVP_MD_CTX_free(ctx); }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx, data, n) != 1) {
      throw NumericError("sha256: digest update failed");
    }
  }
  std::string finish() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
      throw NumericError("sha256: digest finalization failed");
    }
    return to_hex(digest, len);
  }
};

/// Converts between host and little-endian representation in place.
void to_little_endian(std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    (void)values;
  } else {
    for (double& v : values) {
      auto bytes = std::bit_cast<std::array<unsigned char, 8>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<double>(bytes);
    }
  }
}

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
  throw DataError("corrupt checkpoint " + path + ": " + why);
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  DigestCtx d;
  d.update(bytes.data(), bytes.size());
  return d.finish();
}

std::string sha256_file(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw IoError("cannot open " + path + " for hashing");
  }
  DigestCtx d;
  char buffer[1 << 16];
  while (file) {
    file.read(buffer, sizeof(buffer));
    const std::streamsize got = file.gcount();
    if (got > 0) d.update(buffer, static_cast<std::size_t>(got));
  }
  if (file.bad()) {
    throw IoError("read failure while hashing " + path);
  }
  return d.finish();
}

std::string schema_fingerprint(const cohort::FeatureSchema& schema) {
  std::string blob;
  blob += schema.mode == cohort::EncoderMode::kGnn ? "gnn" : "flat";
  for (const auto& name : schema.invariant_names) {
    blob += '\x1f';
    blob += name;
  }
  blob += '\x1e';
  for (const auto& name : schema.variant_names) {
    blob += '\x1f';
    blob += name;
  }
  return sha256_hex(blob);
}

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<const Param*>& params,
                     const std::vector<NamedTensor>& state) {
  json header;
  header["format"] = kFormatName;
  header["version"] = kFormatVersion;
  header["kind"] = meta.kind;
  header["schema"] = meta.schema;
  header["seed"] = meta.seed;
  header["config_hash"] = meta.config_hash;

  std::size_t offset = 0;  // in doubles, from the start of the payload
  const auto describe = [&offset](const std::string& name, const Tensor& value) {
    json t;
    t["name"] = name;
    t["shape"] = value.shape();
    t["offset"] = offset;
    t["count"] = value.size();
    offset += value.size();
    return t;
  };

  json tensors = json::array();
  for (const Param* p : params) tensors.push_back(describe(p->name, p->value));
  header["tensors"] = std::move(tensors);
  json state_table = json::array();
  for (const NamedTensor& s : state) state_table.push_back(describe(s.name, s.value));
  header["state"] = std::move(state_table);

  std::ofstream file(path, std::ios::binary);
  if (!file) {
    throw IoError("cannot open " + path + " for writing");
  }
  file << header.dump() << '\n';
  const auto write_tensor = [&file](const Tensor& value) {
    std::vector<double> values(value.data(), value.data() + value.size());
    to_little_endian(values);
    file.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(double)));
  };
  for (const Param* p : params) write_tensor(p->value);
  for (const NamedTensor& s : state) write_tensor(s.value);
  if (!file.good()) {
    throw IoError("failed while writing " + path);
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw IoError("cannot open checkpoint " + path);
  }
  std::string header_line;
  if (!std::getline(file, header_line)) {
    corrupt(path, "missing header line");
  }
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    corrupt(path, std::string("header is not valid JSON (") + e.what() + ")");
  }
  if (!header.is_object() || header.value("format", "") != kFormatName) {
    corrupt(path, "not a " + std::string(kFormatName) + " file");
  }
  const int version = header.value("version", -1);
  if (version != kFormatVersion) {
    throw DataError("checkpoint " + path + ": version mismatch (file has " +
                    std::to_string(version) + ", this build reads " +
                    std::to_string(kFormatVersion) + ")");
  }

  LoadedCheckpoint out;
  out.version = version;
  out.meta.kind = header.value("kind", "");
  out.meta.schema = header.value("schema", "");
  out.meta.seed = header.value("seed", std::uint64_t{0});
  out.meta.config_hash = header.value("config_hash", "");

  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    corrupt(path, "header lacks a tensor table");
  }

  std::string payload;
  {
    std::stringstream rest;
    rest << file.rdbuf();
    payload = rest.str();
  }
  if (payload.size() % sizeof(double) != 0) {
    corrupt(path, "payload length " + std::to_string(payload.size()) +
                      " is not a whole number of 64-bit floats");
  }
  const std::size_t available = payload.size() / sizeof(double);

  std::size_t expected_total = 0;
  const auto read_table = [&](const json& table,
                              std::vector<NamedTensor>& into) {
    for (const auto& t : table) {
      if (!t.contains("name") || !t.contains("shape") || !t.contains("offset") ||
          !t.contains("count")) {
        corrupt(path, "tensor entry lacks name/shape/offset/count");
      }
      const std::size_t offset = t["offset"].get<std::size_t>();
      const std::size_t count = t["count"].get<std::size_t>();
      const std::vector<std::size_t> shape =
          t["shape"].get<std::vector<std::size_t>>();
      std::size_t shape_count = 1;
      for (std::size_t d : shape) shape_count *= d;
      if (shape_count != count) {
        corrupt(path, "tensor '" + t["name"].get<std::string>() +
                          "' declares count " + std::to_string(count) +
                          " but its shape holds " + std::to_string(shape_count));
      }
      if (offset != expected_total) {
        corrupt(path, "tensor '" + t["name"].get<std::string>() +
                          "' is not contiguous with its predecessor");
      }
      expected_total += count;

      if (offset + count > available) {
        corrupt(path, "payload holds " + std::to_string(available) +
                          " floats but the header declares at least " +
                          std::to_string(offset + count));
      }
      std::vector<double> values(count);
      std::memcpy(values.data(), payload.data() + offset * sizeof(double),
                  count * sizeof(double));
      to_little_endian(values);  // symmetric: little <-> host
      into.push_back(NamedTensor{t["name"].get<std::string>(),
                                 Tensor(shape, std::move(values))});
    }
  };
  read_table(header["tensors"], out.tensors);
  if (header.contains("state")) {
    if (!header["state"].is_array()) corrupt(path, "state table is not an array");
    read_table(header["state"], out.state);
  }
  if (available != expected_total) {
    corrupt(path, "payload holds " + std::to_string(available) +
                      " floats but the header declares " +
                      std::to_string(expected_total));
  }
  return out;
}

const Tensor& find_state(const LoadedCheckpoint& loaded,
                         const std::string& name) {
  for (const NamedTensor& s : loaded.state) {
    if (s.name == name) return s.value;
  }
  throw DataError("checkpoint lacks state tensor '" + name + "'");
}

void restore_params(const LoadedCheckpoint& loaded,
                    const std::string& expected_kind,
                    const std::string& expected_schema,
                    const std::vector<Param*>& params) {
  if (loaded.meta.kind != expected_kind) {
    throw DataError("checkpoint kind mismatch: file holds a '" +
                    loaded.meta.kind + "' model, expected '" + expected_kind +
                    "'");
  }
  if (!expected_schema.empty() && loaded.meta.schema != expected_schema) {
    throw DataError(
        "checkpoint schema mismatch: the file was trained on a different "
        "feature schema (fingerprint " +
        loaded.meta.schema + ", expected " + expected_schema + ")");
  }
  if (loaded.tensors.size() != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(loaded.tensors.size()) +
                    " tensors but the model has " +
                    std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& t = loaded.tensors[i];
    Param* p = params[i];
    if (t.name != p->name) {
      throw DataError("checkpoint tensor " + std::to_string(i) + " is named '" +
                      t.name + "' but the model expects '" + p->name + "'");
    }
    if (t.value.shape() != p->value.shape()) {
      throw DataError("checkpoint tensor '" + t.name + "' has shape " +
                      t.value.shape_string() + " but the model expects " +
                      p->value.shape_string());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->value = loaded.tensors[i].value;
  }
}

CheckpointMeta load_into(const std::string& path,
                         const std::string& expected_kind,
                         const std::string& expected_schema,
                         const std::vector<Param*>& params) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  restore_params(loaded, expected_kind, expected_schema, params);
  return loaded.meta;
}

}  // namespace sepsisrl::ckpt
