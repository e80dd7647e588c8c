#include <algorithm>
#include <filesystem>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "ctxstrata/dataset.hpp"

using namespace ctxstrata;

namespace {

csv::Table table(const std::string& text) {
  std::istringstream in(text);
  return csv::parse(in);
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ctxstrata::Error thrown";
  return ErrorKind::io;
}

StudyRecord rec(const std::string& study, const std::string& subject) {
  StudyRecord r;
  r.study_id = study;
  r.subject_id = subject;
  return r;
}

}  // namespace

TEST(LabelPolicy, MapsEverythingButPositiveToZero) {
  EXPECT_EQ(apply_label_policy(RawLabel::positive), 1);
  EXPECT_EQ(apply_label_policy(RawLabel::negative), 0);
  EXPECT_EQ(apply_label_policy(RawLabel::uncertain), 0);
  EXPECT_EQ(apply_label_policy(RawLabel::missing), 0);
}

TEST(LabelPolicy, IdempotentOnItsOwnOutput) {
  for (auto raw : {RawLabel::positive, RawLabel::negative, RawLabel::uncertain, RawLabel::missing}) {
    int y = apply_label_policy(raw);
    RawLabel back = y ? RawLabel::positive : RawLabel::negative;
    EXPECT_EQ(apply_label_policy(back), y);
  }
}

TEST(LabelPolicy, ParsesSpellings) {
  EXPECT_EQ(parse_raw_label("pos"), RawLabel::positive);
  EXPECT_EQ(parse_raw_label("neg"), RawLabel::negative);
  EXPECT_EQ(parse_raw_label("unc"), RawLabel::uncertain);
  EXPECT_EQ(parse_raw_label("na"), RawLabel::missing);
  EXPECT_EQ(parse_raw_label("-1"), RawLabel::uncertain);
  EXPECT_EQ(parse_raw_label(""), RawLabel::missing);
  EXPECT_EQ(kind_of([] { parse_raw_label("maybe"); }), ErrorKind::value);
}

TEST(Ingest, UncertainLabelBecomesNegative) {
  auto t = table(
      "study_id,subject_id,label,y_raw,score\n"
      "s1,p1,Edema,unc,0.7\n"
      "s1,p1,Edema,unc,0.7\n"
      "s1,p1,Edema,unc,0.7\n");
  auto recs = ingest_predictions(t);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].y.at("Edema"), 0);
  EXPECT_DOUBLE_EQ(recs[0].score.at("Edema"), 0.7);
  EXPECT_EQ(recs[0].labels.at("Edema"), RawLabel::uncertain);
}

TEST(Ingest, HeaderOnlyIsEmpty) {
  EXPECT_TRUE(ingest_predictions(table("study_id,subject_id,label,y_raw,score\n")).empty());
}

TEST(Ingest, ScoreOutOfRangeNamesRow) {
  auto t = table(
      "study_id,subject_id,label,y_raw,score\n"
      "s1,p1,Edema,pos,0.5\n"
      "s2,p1,Edema,pos,1.2\n");
  try {
    ingest_predictions(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::value);
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
}

TEST(Ingest, MissingColumnIsSchemaError) {
  auto t = table("study_id,subject_id,label,score\ns1,p1,Edema,0.5\n");
  try {
    ingest_predictions(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
    EXPECT_NE(std::string(e.what()).find("y_raw"), std::string::npos);
  }
}

TEST(Ingest, ConflictingDuplicate) {
  auto t = table(
      "study_id,subject_id,label,y_raw,score\n"
      "s1,p1,Edema,pos,0.5\n"
      "s1,p1,Edema,pos,0.6\n");
  EXPECT_EQ(kind_of([&] { ingest_predictions(t); }), ErrorKind::conflict);
}

TEST(Ingest, RowOrderDoesNotMatter) {
  std::vector<std::string> rows{"s1,p1,Edema,pos,0.5,0.2", "s1,p1,Atelectasis,neg,0.1,0.3",
                                "s2,p2,Edema,na,0.4,0.6",  "s2,p2,Atelectasis,unc,0.9,0.7",
                                "s3,p2,Edema,neg,0.3,0.1", "s3,p2,Atelectasis,pos,0.8,0.9"};
  const std::string header = "study_id,subject_id,label,y_raw,score,pretest\n";
  std::string base = header;
  for (const auto& r : rows) base += r + "\n";
  std::ostringstream expect;
  write_predictions(expect, ingest_predictions(table(base)));
  std::mt19937 rng(3);
  for (int k = 0; k < 20; ++k) {
    std::shuffle(rows.begin(), rows.end(), rng);
    std::string text = header;
    for (const auto& r : rows) text += r + "\n";
    std::ostringstream got;
    write_predictions(got, ingest_predictions(table(text)));
    EXPECT_EQ(got.str(), expect.str());
  }
}

TEST(Ingest, PartialPretestRejected) {
  auto t = table(
      "study_id,subject_id,label,y_raw,score,pretest\n"
      "s1,p1,Edema,pos,0.5,0.3\n"
      "s1,p1,Atelectasis,pos,0.5,\n");
  EXPECT_EQ(kind_of([&] { ingest_predictions(t); }), ErrorKind::value);
}

TEST(Ingest, RoundTripThroughWriter) {
  auto t = table(
      "study_id,subject_id,label,y_raw,score,pretest,study_time\n"
      "s1,p1,Edema,pos,0.25,0.125,2150-03-01T10:00:00Z\n"
      "s2,p2,Edema,neg,0.1,0.9,2150-03-02T10:00:00+02:00\n");
  auto recs = ingest_predictions(t);
  std::ostringstream out;
  write_predictions(out, recs);
  auto again = ingest_predictions(table(out.str()));
  ASSERT_EQ(again.size(), 2u);
  EXPECT_EQ(again[1].pretest.at("Edema"), 0.9);
  EXPECT_EQ(again[1].study_time, recs[1].study_time);
}

TEST(Notes, ParseAndValidate) {
  std::istringstream ok(
      R"({"note_id":"n1","subject_id":"p1","chart_time":"2150-01-01T00:00:00Z","text":"CHF noted"})"
      "\n");
  auto notes = read_notes(ok);
  ASSERT_EQ(notes.size(), 1u);
  EXPECT_EQ(notes[0].text, "CHF noted");

  std::istringstream blank(
      R"({"note_id":"n1","subject_id":"p1","chart_time":"2150-01-01T00:00:00Z","text":"   "})"
      "\n");
  EXPECT_EQ(kind_of([&] { read_notes(blank); }), ErrorKind::value);

  std::istringstream bad_time(
      R"({"note_id":"n1","subject_id":"p1","chart_time":"yesterday","text":"x"})"
      "\n");
  EXPECT_EQ(kind_of([&] { read_notes(bad_time); }), ErrorKind::value);
}

TEST(Notes, LinkOnlyStrictlyEarlierNotesOfSameSubject) {
  std::vector<StudyRecord> recs{rec("s1", "p1")};
  recs[0].study_time = parse_rfc3339("2150-01-10T00:00:00Z");
  std::vector<NoteRecord> notes{
      {"late", "p1", parse_rfc3339("2150-01-10T00:00:00Z"), "a"},
      {"b", "p1", parse_rfc3339("2150-01-05T00:00:00Z"), "a"},
      {"a", "p1", parse_rfc3339("2150-01-01T00:00:00Z"), "a"},
      {"other", "p2", parse_rfc3339("2150-01-01T00:00:00Z"), "a"},
  };
  link_notes(recs, notes);
  EXPECT_EQ(recs[0].note_refs, (std::vector<std::string>{"a", "b"}));
}

TEST(Split, TenSubjectsGiveEightOneOne) {
  std::vector<StudyRecord> recs;
  for (int i = 0; i < 10; ++i) {
    recs.push_back(rec("s" + std::to_string(i), "p" + std::to_string(i)));
    recs.push_back(rec("t" + std::to_string(i), "p" + std::to_string(i)));
  }
  auto a = split_by_subject(recs, {}, 7);
  std::map<Split, int> count;
  for (const auto& [_, s] : a) ++count[s];
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(count[Split::train], 8);
  EXPECT_EQ(count[Split::validation], 1);
  EXPECT_EQ(count[Split::test], 1);
  EXPECT_EQ(split_by_subject(recs, {}, 7), a);
}

TEST(Split, FractionsWithinOneSubject) {
  for (int n = 3; n < 60; ++n) {
    std::vector<StudyRecord> recs;
    for (int i = 0; i < n; ++i) recs.push_back(rec("s" + std::to_string(i), "p" + std::to_string(i)));
    auto a = split_by_subject(recs, {}, static_cast<std::uint64_t>(n));
    std::map<Split, int> count;
    for (const auto& [_, s] : a) ++count[s];
    EXPECT_LE(std::abs(count[Split::train] - 0.8 * n), 1.0);
    EXPECT_LE(std::abs(count[Split::validation] - 0.1 * n), 1.0);
    EXPECT_LE(std::abs(count[Split::test] - 0.1 * n), 1.0);
  }
}

TEST(Split, TwoSubjectsIsInsufficient) {
  std::vector<StudyRecord> recs{rec("s1", "p1"), rec("s2", "p2"), rec("s3", "p2")};
  EXPECT_EQ(kind_of([&] { split_by_subject(recs); }), ErrorKind::insufficient_data);
}

TEST(Store, RoundTrip) {
  auto dir = std::filesystem::temp_directory_path() / "ctxstrata_store_test";
  std::filesystem::remove_all(dir);
  Store s;
  s.records.push_back(rec("s1", "p1"));
  s.records[0].labels["Edema"] = RawLabel::uncertain;
  s.records[0].y["Edema"] = 0;
  s.records[0].score["Edema"] = 0.3;
  s.records[0].pretest["Edema"] = 0.1;
  s.records[0].note_refs = {"n1"};
  s.notes.push_back({"n1", "p1", parse_rfc3339("2150-01-01T00:00:00.5Z"), "text"});
  write_store(dir, s);
  Store back = read_store(dir);
  ASSERT_EQ(back.records.size(), 1u);
  EXPECT_EQ(back.records[0].labels.at("Edema"), RawLabel::uncertain);
  EXPECT_EQ(back.records[0].pretest.at("Edema"), 0.1);
  EXPECT_EQ(back.records[0].note_refs, s.records[0].note_refs);
  ASSERT_EQ(back.notes.size(), 1u);
  EXPECT_EQ(back.notes[0].chart_time, s.notes[0].chart_time);
  std::filesystem::remove_all(dir);
}

TEST(LabelColumns, MissingPretestNamesTheFix) {
  std::vector<StudyRecord> recs{rec("s1", "p1")};
  recs[0].y["Edema"] = 1;
  recs[0].score["Edema"] = 0.2;
  try {
    label_columns(recs, "Edema", true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_pretest);
    EXPECT_NE(std::string(e.what()).find("--pretest-col"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("--text-model"), std::string::npos);
  }
}

TEST(Timestamp, OffsetsNormalise) {
  EXPECT_EQ(parse_rfc3339("2150-01-01T02:00:00+02:00"), parse_rfc3339("2150-01-01T00:00:00Z"));
  EXPECT_LT(parse_rfc3339("2150-01-01T00:00:00.1Z"), parse_rfc3339("2150-01-01T00:00:00.2Z"));
  EXPECT_EQ(format_rfc3339(parse_rfc3339("2150-06-30T12:34:56Z")), "2150-06-30T12:34:56Z");
}
