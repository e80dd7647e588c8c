#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "ctxstrata/report.hpp"

using namespace ctxstrata;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p, std::ios::binary) << content;
  return p;
}

StratumReport small_report() {
  StratumReport r;
  r.analysis = "subgroup";
  r.config.iterations = 4;
  r.config.seed = 7;
  LabelReport l;
  l.label = "Edema";
  l.groups.push_back({"a", 10, 4, 0.8, Distribution{0.79, 0.7, 0.9, 4, 0}});
  l.groups.push_back({"b", 12, 5, 0.6, Distribution{0.61, 0.5, 0.7, 3, 1}});
  l.diffs.push_back({"a", "b", 0.2, Distribution{0.18, 0.05, 0.3, 3, 1}});
  r.labels.push_back(l);
  LabelReport bad;
  bad.label = "Pneumonia";
  bad.groups.push_back({"a", 10, 0, std::nullopt, std::nullopt});
  bad.groups.push_back({"b", 12, 5, 0.5, std::nullopt});
  bad.diffs.push_back({"a", "b", std::nullopt, std::nullopt});
  bad.error = "undefined CI for Pneumonia";
  r.labels.push_back(bad);
  return r;
}

}  // namespace

TEST(Digest, KnownVectors) {
  EXPECT_EQ(sha256_file(temp_file("ctxstrata_abc.txt", "abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_file(temp_file("ctxstrata_empty.txt", "")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  auto d = digest_input("predictions", temp_file("ctxstrata_abc.txt", "abc"));
  EXPECT_EQ(d.bytes, 3u);
  EXPECT_THROW(sha256_file("/nonexistent/ctxstrata"), Error);
}

TEST(Manifest, TimestampsOnlyWhenRecorded) {
  RunManifest m;
  m.command = "eval-strata";
  m.seed = 3;
  m.config["iterations"] = 100;
  auto j = to_json(m);
  EXPECT_EQ(j["tool"], "ctx-strata");
  EXPECT_EQ(j["seed"], 3);
  EXPECT_FALSE(j.contains("timestamps"));
  m.started_at = "2026-01-01T00:00:00Z";
  EXPECT_TRUE(to_json(m).contains("timestamps"));
}

TEST(ReportJson, UndefinedValuesAreNull) {
  auto r = small_report();
  auto j = report_json({}, r);
  EXPECT_EQ(j["labels"][0]["comparisons"][0]["significant"], true);
  EXPECT_EQ(j["labels"][1]["comparisons"][0]["point"], nullptr);
  EXPECT_EQ(j["labels"][1]["comparisons"][0]["skipped"], 4);
  EXPECT_EQ(j["labels"][1]["error"], "undefined CI for Pneumonia");
  EXPECT_EQ(j["macro"], nullptr);
  auto extra = report_json({}, r, {{"Edema", {{"q25", 0.2}}}});
  EXPECT_EQ(extra["labels"][0]["strata"]["q25"], 0.2);
}

TEST(PlotTable, OneRowPerGroupAndComparison) {
  std::ostringstream out;
  write_plot_table(out, small_report());
  std::istringstream in(out.str());
  auto t = csv::parse(in);
  auto cell = [&](std::size_t row, const char* name) {
    return t.rows.at(row).at(static_cast<std::size_t>(t.column(name)));
  };
  ASSERT_EQ(t.rows.size(), 6u);
  EXPECT_EQ(cell(2, "kind"), "difference");
  EXPECT_EQ(cell(2, "significant"), "true");
  EXPECT_EQ(cell(5, "point"), "");
}

TEST(TextTable, MarksSignificantDifferences) {
  std::ostringstream out;
  write_text_table(out, small_report());
  auto s = out.str();
  EXPECT_NE(s.find("[0.050, 0.300] *"), std::string::npos);
  EXPECT_NE(s.find("1 skipped"), std::string::npos);
  EXPECT_NE(s.find("Pneumonia: undefined CI"), std::string::npos);
}
