#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "sepsisrl/checkpoint.hpp"
#include "sepsisrl/cohort.hpp"
#include "sepsisrl/errors.hpp"
#include "sepsisrl/params.hpp"

using namespace sepsisrl;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("sepsisrl_ckpt_" + name);
}

/// save_checkpoint takes pointers-to-const; grab them via a const view.
std::vector<const Param*> const_view(const ParamSet& ps) { return ps.all(); }

/// Runs fn, expecting an E whose message contains `fragment`.
template <typename E, typename Fn>
void check_throws_containing(Fn&& fn, const std::string& fragment) {
  std::string msg;
  try {
    fn();
  } catch (const E& e) {
    msg = e.what();
  }
  INFO("message: " << msg);
  CHECK(!msg.empty());
  CHECK(msg.find(fragment) != std::string::npos);
}

/// Bitwise tensor equality (distinguishes -0.0 from 0.0, compares NaN bits).
bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

/// A small parameter set covering matrices, vectors, and awkward doubles.
ParamSet make_params() {
  ParamSet ps;
  ps.add("layer1.W", Tensor({2, 3}, {1.0, -2.5, 3.25, 0.0, -0.0, 1e-308}));
  ps.add("layer1.b", Tensor({3}, {std::numeric_limits<double>::infinity(),
                                  -std::numeric_limits<double>::infinity(),
                                  std::numeric_limits<double>::quiet_NaN()}));
  ps.add("head.w", Tensor({1}, {6.02214076e23}));
  return ps;
}

const ckpt::CheckpointMeta kMeta{"sage", "abc123", 42, "deadbeef"};

}  // namespace

TEST_CASE("sha256 matches published test vectors") {
  CHECK(ckpt::sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(ckpt::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(ckpt::sha256_hex("The quick brown fox jumps over the lazy dog") ==
        "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");

  auto path = temp_path("hash.bin");
  std::ofstream(path, std::ios::binary) << "abc";
  CHECK(ckpt::sha256_file(path.string()) == ckpt::sha256_hex("abc"));
  fs::remove(path);
  CHECK_THROWS_AS(ckpt::sha256_file("/nonexistent/nothing.bin"), IoError);
}

TEST_CASE("schema fingerprints are stable and sensitive to names and grouping") {
  auto gnn = cohort::FeatureSchema::default_schema(cohort::EncoderMode::kGnn);
  auto flat = cohort::FeatureSchema::default_schema(cohort::EncoderMode::kAe);

  auto fp = ckpt::schema_fingerprint(gnn);
  CHECK(fp.size() == 64);
  CHECK(fp == ckpt::schema_fingerprint(gnn));
  CHECK(fp != ckpt::schema_fingerprint(flat));

  auto renamed = gnn;
  renamed.variant_names[0] += "_x";
  CHECK(fp != ckpt::schema_fingerprint(renamed));

  // Moving a name across groups must change the fingerprint even though the
  // concatenated name list is unchanged.
  auto regrouped = cohort::FeatureSchema::from_names(
      cohort::EncoderMode::kGnn,
      {gnn.invariant_names[0], gnn.invariant_names[1], gnn.invariant_names[2]},
      [&] {
        auto v = gnn.variant_names;
        v.insert(v.begin(), gnn.invariant_names[3]);
        return v;
      }());
  CHECK(fp != ckpt::schema_fingerprint(regrouped));
}

TEST_CASE("save/load round trip is bitwise exact, including state tensors") {
  auto ps = make_params();
  std::vector<ckpt::NamedTensor> state;
  state.push_back({"bn.running_mean", Tensor({3}, {0.5, -0.25, 1e-12})});
  state.push_back({"bn.batches_seen", Tensor({1}, {144.0})});

  auto path = temp_path("roundtrip.ckpt");
  ckpt::save_checkpoint(path.string(), kMeta, const_view(ps), state);

  auto loaded = ckpt::load_checkpoint(path.string());
  CHECK(loaded.version == 1);
  CHECK(loaded.meta.kind == "sage");
  CHECK(loaded.meta.schema == "abc123");
  CHECK(loaded.meta.seed == 42);
  CHECK(loaded.meta.config_hash == "deadbeef");

  auto params = ps.all();
  REQUIRE(loaded.tensors.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(loaded.tensors[i].name == params[i]->name);
    CHECK(bit_equal(loaded.tensors[i].value, params[i]->value));
  }
  REQUIRE(loaded.state.size() == 2);
  CHECK(bit_equal(ckpt::find_state(loaded, "bn.running_mean"), state[0].value));
  CHECK(ckpt::find_state(loaded, "bn.batches_seen").item() == 144.0);
  CHECK_THROWS_AS((void)ckpt::find_state(loaded, "absent"), DataError);

  // Restoring into a freshly initialized set of the same shapes is exact.
  ParamSet fresh = make_params();
  for (Param* p : fresh.all()) p->value.fill(0.0);
  ckpt::restore_params(loaded, "sage", "abc123", fresh.all());
  auto orig = ps.all();
  auto restored = fresh.all();
  for (std::size_t i = 0; i < orig.size(); ++i)
    CHECK(bit_equal(restored[i]->value, orig[i]->value));

  // Saving the same content twice yields byte-identical files.
  auto path2 = temp_path("roundtrip2.ckpt");
  ckpt::save_checkpoint(path2.string(), kMeta, const_view(ps), state);
  CHECK(ckpt::sha256_file(path.string()) == ckpt::sha256_file(path2.string()));
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("load_into restores and returns the stored metadata") {
  auto ps = make_params();
  auto path = temp_path("loadinto.ckpt");
  ckpt::save_checkpoint(path.string(), kMeta, const_view(ps));

  ParamSet fresh = make_params();
  for (Param* p : fresh.all()) p->value.fill(-1.0);
  // An empty expected schema skips the schema comparison.
  auto meta = ckpt::load_into(path.string(), "sage", "", fresh.all());
  CHECK(meta.schema == "abc123");
  CHECK(bit_equal(fresh.all()[0]->value, ps.all()[0]->value));
  fs::remove(path);
}

TEST_CASE("mismatches are rejected with precise errors") {
  auto ps = make_params();
  auto path = temp_path("mismatch.ckpt");
  ckpt::save_checkpoint(path.string(), kMeta, const_view(ps));
  auto loaded = ckpt::load_checkpoint(path.string());

  SUBCASE("wrong kind: a graph-encoder file where a flat encoder is expected") {
    check_throws_containing<DataError>(
        [&] { ckpt::restore_params(loaded, "ae", "abc123", ps.all()); }, "kind mismatch");
  }
  SUBCASE("wrong schema fingerprint") {
    CHECK_THROWS_AS(ckpt::restore_params(loaded, "sage", "other", ps.all()), DataError);
  }
  SUBCASE("wrong parameter count") {
    ParamSet small;
    small.add("layer1.W", Tensor({2, 3}));
    CHECK_THROWS_AS(ckpt::restore_params(loaded, "sage", "abc123", small.all()), DataError);
  }
  SUBCASE("wrong parameter name at a position") {
    ParamSet renamed = make_params();
    renamed.all()[1]->name = "layer1.bias";
    CHECK_THROWS_AS(ckpt::restore_params(loaded, "sage", "abc123", renamed.all()), DataError);
  }
  SUBCASE("wrong shape at a position") {
    ParamSet reshaped;
    reshaped.add("layer1.W", Tensor({3, 2}));
    reshaped.add("layer1.b", Tensor({3}));
    reshaped.add("head.w", Tensor({1}));
    CHECK_THROWS_AS(ckpt::restore_params(loaded, "sage", "abc123", reshaped.all()), DataError);
  }
  fs::remove(path);
}

TEST_CASE("corruption and version drift are detected") {
  auto ps = make_params();
  auto path = temp_path("corrupt.ckpt");
  ckpt::save_checkpoint(path.string(), kMeta, const_view(ps));

  auto slurp = [&] {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  auto rewrite = [&](const std::string& bytes) {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
  };
  const std::string original = slurp();

  SUBCASE("payload truncated by one byte") {
    rewrite(original.substr(0, original.size() - 1));
    check_throws_containing<DataError>([&] { (void)ckpt::load_checkpoint(path.string()); },
                                       "corrupt checkpoint");
  }
  SUBCASE("payload extended by one byte") {
    rewrite(original + "x");
    CHECK_THROWS_AS((void)ckpt::load_checkpoint(path.string()), DataError);
  }
  SUBCASE("header is not JSON") {
    rewrite("not json at all\n" + original.substr(original.find('\n') + 1));
    CHECK_THROWS_AS((void)ckpt::load_checkpoint(path.string()), DataError);
  }
  SUBCASE("foreign format field") {
    auto header = original.substr(0, original.find('\n'));
    auto rest = original.substr(original.find('\n'));
    auto pos = header.find("sepsisrl-checkpoint");
    REQUIRE(pos != std::string::npos);
    header.replace(pos, std::string("sepsisrl-checkpoint").size(), "some-other-container");
    rewrite(header + rest);
    CHECK_THROWS_AS((void)ckpt::load_checkpoint(path.string()), DataError);
  }
  SUBCASE("future format version") {
    auto header = original.substr(0, original.find('\n'));
    auto rest = original.substr(original.find('\n'));
    auto pos = header.find("\"version\":1");
    REQUIRE(pos != std::string::npos);
    header.replace(pos, std::string("\"version\":1").size(), "\"version\":9");
    rewrite(header + rest);
    check_throws_containing<DataError>([&] { (void)ckpt::load_checkpoint(path.string()); },
                                       "version mismatch");
  }
  SUBCASE("unreadable and unwritable paths raise IO errors") {
    CHECK_THROWS_AS((void)ckpt::load_checkpoint("/nonexistent/nothing.ckpt"), IoError);
    CHECK_THROWS_AS(ckpt::save_checkpoint("/nonexistent/nothing.ckpt", kMeta, const_view(ps)),
                    IoError);
  }
  fs::remove(path);
}
