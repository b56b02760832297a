#include <gtest/gtest.h>

#include <sstream>

#include "phladder/config.hpp"
#include "phladder/csv.hpp"

using namespace phl;

TEST(Csv, Escape) {
  EXPECT_EQ(csv_escape("plain"), "plain");
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_escape("two\nlines"), "\"two\nlines\"");
  EXPECT_EQ(csv_escape(""), "");
}

TEST(Csv, WriterRoundTrip) {
  std::ostringstream os;
  CsvWriter w(os, {"name", "value"});
  w.row({"x,y", "1"});
  w.row({"q\"uote", "line\r\nbreak"});
  EXPECT_EQ(os.str().substr(0, 12), "name,value\r\n");
  auto rows = parse_csv(os.str());
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][0], "x,y");
  EXPECT_EQ(rows[2][0], "q\"uote");
  EXPECT_EQ(rows[2][1], "line\r\nbreak");
  EXPECT_THROW(w.row({"only one"}), ShapeError);
}

TEST(Csv, ParseEdgeCases) {
  auto rows = parse_csv("a,,c\n\"\",x");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].size(), 3u);
  EXPECT_EQ(rows[0][1], "");
  EXPECT_EQ(rows[1][0], "");
  EXPECT_THROW(parse_csv("\"open"), DomainError);
}

TEST(Csv, NumberFormat) {
  EXPECT_EQ(csv_number(-0.15915494309189535), "-0.1591549431");
  EXPECT_EQ(csv_number(0.0), "0");
}

TEST(Config, ParsesFlatFile) {
  std::istringstream in("# scales\nM = 3.5\naleph=0.55  # inline\nbump_sharpness = \"2\"\n\nr0 = 8\n");
  auto kv = parse_flat_config(in);
  EXPECT_EQ(kv.at("M"), "3.5");
  EXPECT_EQ(kv.at("aleph"), "0.55");
  EXPECT_EQ(kv.at("bump_sharpness"), "2");
  RunConfig cfg;
  apply_config(cfg, kv);
  EXPECT_DOUBLE_EQ(cfg.scales.M, 3.5);
  EXPECT_DOUBLE_EQ(cfg.scales.aleph, 0.55);
  EXPECT_EQ(cfg.scales.r0, 8);
  EXPECT_EQ(cfg.scales.re, 6);
  EXPECT_DOUBLE_EQ(cfg.scales.bump_sharpness, 2.0);
}

TEST(Config, HashInsideQuotes) {
  std::istringstream in("output = \"run#1.csv\"\n");
  auto kv = parse_flat_config(in);
  EXPECT_EQ(kv.at("output"), "run#1.csv");
}

TEST(Config, Errors) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    RunConfig cfg;
    apply_config(cfg, parse_flat_config(in));
    return cfg;
  };
  EXPECT_THROW(parse("[scales]\nM = 4\n"), ConfigError);
  EXPECT_THROW(parse("M = 4\nM = 5\n"), ConfigError);
  EXPECT_THROW(parse("M 4\n"), ConfigError);
  EXPECT_THROW(parse("colour = red\n"), ConfigError);
  EXPECT_THROW(parse("M = four\n"), ConfigError);
  EXPECT_THROW(parse("r0 = 6.5\n"), ConfigError);
  EXPECT_THROW(parse("aleph = 0.9\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/phl.toml"), ConfigError);
}

TEST(Config, ModelFromConfig) {
  std::istringstream in("mass = 2\nmu = 0.25\n");
  RunConfig cfg;
  apply_config(cfg, parse_flat_config(in));
  auto m = cfg.model();
  EXPECT_DOUBLE_EQ(m.kf(), 1.0);
  EXPECT_DOUBLE_EQ(m.mass(), 2.0);
}
