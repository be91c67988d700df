#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "sepsisrl/errors.hpp"
#include "sepsisrl/toml.hpp"

using namespace sepsisrl;

namespace {

std::string error_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("full document: sections, dotted keys, every value type") {
  const char* doc = R"(
# run configuration
title = "desk run"   # inline comment
[cohort]
n_traj = 2_000
mortality_rate = 0.06
enabled = true
disabled = false
negative = -12
rate = 1e-3

[encoder.sweep]
f_out = [8, 16, 32]
rates = [0.5, 1.5,]          # trailing comma allowed
names = ["a", "b # not a comment"]
nested = [[1, 2], [3]]
)";
  auto t = toml::parse(doc, "run.toml");

  CHECK(t.get_string("title") == "desk run");
  CHECK(t.get_int("cohort.n_traj") == 2000);
  CHECK(t.get_double("cohort.mortality_rate") == doctest::Approx(0.06).epsilon(1e-15));
  CHECK(t.get_bool("cohort.enabled"));
  CHECK_FALSE(t.get_bool("cohort.disabled"));
  CHECK(t.get_int("cohort.negative") == -12);
  CHECK(t.get_double("cohort.rate") == doctest::Approx(1e-3).epsilon(1e-15));

  CHECK(t.get_int_array("encoder.sweep.f_out") == std::vector<std::int64_t>{8, 16, 32});
  CHECK(t.get_double_array("encoder.sweep.rates") == std::vector<double>{0.5, 1.5});
  CHECK(t.get_string_array("encoder.sweep.names") ==
        std::vector<std::string>{"a", "b # not a comment"});

  // Nested arrays parse; the flat typed getters reject them.
  const toml::Value* nested = t.find("encoder.sweep.nested");
  REQUIRE(nested != nullptr);
  CHECK(nested->kind == toml::Value::Kind::kArray);
  REQUIRE(nested->items.size() == 2);
  CHECK(nested->items[0].items.size() == 2);
  CHECK(nested->items[1].items[0].integer == 3);
  CHECK_THROWS_AS((void)t.get_int_array("encoder.sweep.nested"), ConfigError);

  CHECK(t.source() == "run.toml");
  CHECK(t.contains("cohort.rate"));
  CHECK_FALSE(t.contains("cohort.missing"));
  CHECK(t.find("cohort.missing") == nullptr);
  CHECK(t.keys().size() == 11);
}

TEST_CASE("typed getters: fallbacks, coercion, and type errors") {
  auto t = toml::parse("a = 3\nb = 0.5\nc = \"x\"\nd = true\n");

  SUBCASE("absent keys take the fallback; present keys ignore it") {
    CHECK(t.get_int_or("a", 99) == 3);
    CHECK(t.get_int_or("zz", 99) == 99);
    CHECK(t.get_string_or("zz", "dflt") == "dflt");
    CHECK(t.get_bool_or("zz", true));
    CHECK(t.get_double_or("zz", 2.5) == 2.5);
  }
  SUBCASE("a required absent key throws and names the key") {
    auto msg = error_message([&] { (void)t.get_int("zz"); });
    CHECK(msg.find("zz") != std::string::npos);
    CHECK_THROWS_AS((void)t.get_string("zz"), ConfigError);
  }
  SUBCASE("integers coerce to double, never the reverse") {
    CHECK(t.get_double("a") == 3.0);
    CHECK(t.get_double_or("a", 9.0) == 3.0);
    CHECK_THROWS_AS((void)t.get_int("b"), ConfigError);
    CHECK_THROWS_AS((void)t.get_int_or("b", 1), ConfigError);
  }
  SUBCASE("other cross-type reads throw even with a fallback") {
    CHECK_THROWS_AS((void)t.get_string("a"), ConfigError);
    CHECK_THROWS_AS((void)t.get_bool("c"), ConfigError);
    CHECK_THROWS_AS((void)t.get_bool_or("c", false), ConfigError);
    CHECK_THROWS_AS((void)t.get_int("d"), ConfigError);
    CHECK_THROWS_AS((void)t.get_int_array("a"), ConfigError);
  }
}

TEST_CASE("string escapes") {
  auto t = toml::parse(R"(s = "quote \" slash \\ nl \n tab \t cr \r done")");
  CHECK(t.get_string("s") == "quote \" slash \\ nl \n tab \t cr \r done");
  CHECK_THROWS_AS(toml::parse(R"(s = "bad \q escape")"), ConfigError);
}

TEST_CASE("syntax errors carry the source name and line number") {
  auto expect_error_at = [](const std::string& doc, const std::string& fragment, int line) {
    std::string msg;
    try {
      toml::parse(doc, "bad.toml");
    } catch (const ConfigError& e) {
      msg = e.what();
    }
    INFO("message: " << msg);
    CHECK(msg.find("bad.toml:" + std::to_string(line)) != std::string::npos);
    CHECK(msg.find(fragment) != std::string::npos);
  };

  expect_error_at("a = 1\nb = 2\nc 3\n", "=", 3);                 // missing equals
  expect_error_at("a = \"open\nb = 1\n", "unterminated", 1);      // unterminated string
  expect_error_at("\n[sec\nx = 1\n", "]", 2);                     // unterminated header
  expect_error_at("a = [1, 2\n", "array", 1);                     // unterminated array
  expect_error_at("a = 1979-05-27\n", "value", 1);                // dates unsupported
  expect_error_at("a = {x = 1}\n", "inline tables", 1);           // inline tables unsupported
  expect_error_at("a = 'x'\n", "single-quoted", 1);               // single quotes unsupported
  expect_error_at("[[products]]\nx = 1\n", "array", 1);           // arrays of tables unsupported
  expect_error_at("a = 1\na = 2\n", "duplicate", 2);              // duplicate key
  expect_error_at("[s]\nx = 1\n[s]\nx = 2\n", "duplicate", 4);    // duplicate via sections
  expect_error_at("= 3\n", "key", 1);                             // empty key
  expect_error_at("a = \n", "value", 1);                          // missing value
}

TEST_CASE("number details: underscores, signs, and float forms") {
  auto t = toml::parse("a = +42\nb = -1_000_000\nc = 6.02e23\nd = -0.5\ne = 1_0.2_5\n");
  CHECK(t.get_int("a") == 42);
  CHECK(t.get_int("b") == -1000000);
  CHECK(t.get_double("c") == doctest::Approx(6.02e23).epsilon(1e-15));
  CHECK(t.get_double("d") == -0.5);
  CHECK(t.get_double("e") == doctest::Approx(10.25).epsilon(1e-15));

  // Integers beyond 64 bits demote to floating point rather than erroring.
  auto big = toml::parse("v = 99999999999999999999\n");
  REQUIRE(big.find("v")->kind == toml::Value::Kind::kFloat);
  CHECK(big.get_double("v") == doctest::Approx(1e20).epsilon(1e-12));
}

TEST_CASE("comment-only and empty documents parse to an empty table") {
  CHECK(toml::parse("").keys().empty());
  CHECK(toml::parse("# nothing here\n\n   \n# more\n").keys().empty());
  auto t = toml::parse("[empty_section]\n");
  CHECK(t.keys().empty());
}

TEST_CASE("parse_file reads from disk and reports missing files") {
  auto path = std::filesystem::temp_directory_path() / "sepsisrl_toml_test.toml";
  {
    std::ofstream out(path);
    out << "[run]\nseeds = [1234, 2020, 2025]\ndesk_scale = true\n";
  }
  auto t = toml::parse_file(path.string());
  CHECK(t.get_int_array("run.seeds") == std::vector<std::int64_t>{1234, 2020, 2025});
  CHECK(t.get_bool("run.desk_scale"));
  CHECK(t.source() == path.string());
  std::filesystem::remove(path);

  CHECK_THROWS_AS(toml::parse_file("/nonexistent/nowhere.toml"), IoError);
}
