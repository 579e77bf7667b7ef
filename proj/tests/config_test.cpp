#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "counter/config.hpp"

using namespace counter;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path.string();
}

}  // namespace

TEST(Config, DefaultsMatchPublishedSettings) {
  const RunConfig c;
  EXPECT_EQ(c.k(), 5u);
  EXPECT_EQ(c.rating_scale(), 5);
  const auto t = c.training();
  EXPECT_EQ(t.learning_rate, 0.01);
  EXPECT_EQ(t.negatives, 2u);
  const auto h = c.counterfactual();
  EXPECT_EQ(h.lambda, 100.0);
  EXPECT_EQ(h.gamma, 1.0);
  EXPECT_EQ(h.alpha, 0.2);
  EXPECT_EQ(c.reals("lambdas"), (std::vector<double>{1, 10, 100, 1000}));
  EXPECT_EQ(c.variants(), (std::vector<Variant>{Variant::kMulti, Variant::kSingle}));
}

TEST(Config, BadValuesAreConfigErrors) {
  RunConfig c;
  c.set("k", "five");
  EXPECT_THROW(c.k(), ConfigError);
  c.set("k", "5");
  c.set("lr", "0.01x");
  EXPECT_THROW(c.training(), ConfigError);
  c.set("lr", "0.01");
  c.set("reduction", "median");
  EXPECT_THROW(c.training(), ConfigError);
  c.set("variants", "multi,triple");
  EXPECT_THROW(c.variants(), ConfigError);
  c.set("reviewed_only", "maybe");
  EXPECT_THROW(c.counterfactual(), ConfigError);
  EXPECT_THROW(c.set("no_such_key", "1"), ConfigError);
}

TEST(Config, HashIgnoresSpelling) {
  RunConfig a, b;
  a.set("lr", "0.01");
  b.set("lr", "1e-2");
  EXPECT_EQ(a.hash("p", {"lr", "epochs"}), b.hash("p", {"lr", "epochs"}));
  b.set("lr", "0.02");
  EXPECT_NE(a.hash("p", {"lr", "epochs"}), b.hash("p", {"lr", "epochs"}));
  EXPECT_NE(a.hash("p", {"lr"}), a.hash("q", {"lr"}));
  a.set("lambdas", "1, 10,100");
  b.set("lambdas", "1.0,1e1,100");
  EXPECT_EQ(a.canonical("lambdas"), b.canonical("lambdas"));
}

TEST(Config, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(ConfigFile, ParsesKeyValueLines) {
  const auto path = write_temp("counter_cfg_ok.conf", "# comment\n\nlambda = 10\nk=3\n");
  const auto values = read_config_file(path);
  EXPECT_EQ(values.at("lambda"), "10");
  EXPECT_EQ(values.at("k"), "3");
  EXPECT_EQ(values.size(), 2u);
}

TEST(ConfigFile, RejectsUnknownAndDuplicateKeys) {
  EXPECT_THROW(read_config_file(write_temp("counter_cfg_u.conf", "lamda=1\n")), ConfigError);
  EXPECT_THROW(read_config_file(write_temp("counter_cfg_d.conf", "k=1\nk=2\n")), ConfigError);
  EXPECT_THROW(read_config_file(write_temp("counter_cfg_n.conf", "just text\n")), ConfigError);
}

TEST(ConfigFile, FlagsWinWithNotice) {
  RunConfig c;
  const auto notices = merge_config(c, {{"lambda", "10"}, {"k", "3"}}, {{"lambda", "1000"}, {"seed", "7"}});
  EXPECT_EQ(c.real("lambda"), 1000.0);
  EXPECT_EQ(c.k(), 3u);
  EXPECT_EQ(c.count("seed"), 7u);
  ASSERT_EQ(notices.size(), 1u);
  EXPECT_NE(notices[0].find("--lambda 1000 overrides config file value 10"), std::string::npos);
}

TEST(ConfigFile, MissingFileIsInputError) {
  EXPECT_THROW(read_config_file("/nonexistent/counter.conf"), InputError);
}
