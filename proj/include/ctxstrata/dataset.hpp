#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctxstrata/csv.hpp"
#include "ctxstrata/error.hpp"
#include "ctxstrata/random.hpp"
#include "ctxstrata/timestamp.hpp"

namespace ctxstrata {

enum class RawLabel { positive, negative, uncertain, missing };

/// Only an explicit positive counts as a positive diagnosis; uncertain and
/// missing labels are treated as negative.
constexpr int apply_label_policy(RawLabel raw) noexcept {
  return raw == RawLabel::positive ? 1 : 0;
}

inline RawLabel parse_raw_label(std::string_view s) {
  if (s == "pos" || s == "positive" || s == "1") return RawLabel::positive;
  if (s == "neg" || s == "negative" || s == "0") return RawLabel::negative;
  if (s == "unc" || s == "uncertain" || s == "-1") return RawLabel::uncertain;
  if (s == "na" || s == "missing" || s.empty()) return RawLabel::missing;
  throw Error(ErrorKind::value, "unknown raw label '" + std::string(s) +
                                    "' (expected pos, neg, unc or na)");
}

constexpr std::string_view to_string(RawLabel raw) noexcept {
  switch (raw) {
    case RawLabel::positive: return "pos";
    case RawLabel::negative: return "neg";
    case RawLabel::uncertain: return "unc";
    case RawLabel::missing: return "na";
  }
  return "na";
}

/// One evaluation instance (a single imaging study) with per-label truth,
/// model score and optional pre-test probability.
struct StudyRecord {
  std::string study_id;
  std::string subject_id;
  std::optional<Timestamp> study_time;
  std::map<std::string, RawLabel> labels;
  std::map<std::string, int> y;
  std::map<std::string, double> score;
  std::map<std::string, double> pretest;
  std::vector<std::string> note_refs;  // ordered by chart time

  bool has_pretest(const std::string& label) const {
    return pretest.find(label) != pretest.end();
  }
};

struct NoteRecord {
  std::string note_id;
  std::string subject_id;
  Timestamp chart_time;
  std::string text;
};

/// Column names of the long-form predictions file.
struct PredictionSchema {
  std::string study_id = "study_id";
  std::string subject_id = "subject_id";
  std::string label = "label";
  std::string y_raw = "y_raw";
  std::string score = "score";
  std::string pretest = "pretest";        // optional column
  std::string study_time = "study_time";  // optional column
};

namespace detail {

inline double parse_unit_real(const std::string& field, std::string_view what,
                              std::size_t row) {
  const char* begin = field.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (field.empty() || end != begin + field.size() || !std::isfinite(v))
    throw Error(ErrorKind::value, "row " + std::to_string(row) + ": " +
                                      std::string(what) + " '" + field +
                                      "' is not a number");
  if (v < 0.0 || v > 1.0)
    throw Error(ErrorKind::value, "row " + std::to_string(row) + ": " +
                                      std::string(what) + " " + field +
                                      " outside [0,1]");
  return v;
}

template <class T>
void merge_value(std::map<std::string, T>& into, const std::string& key,
                 const T& value, std::string_view what,
                 const std::string& study_id, std::size_t row) {
  auto [it, inserted] = into.emplace(key, value);
  if (!inserted && !(it->second == value))
    throw Error(ErrorKind::conflict,
                "row " + std::to_string(row) + ": conflicting " +
                    std::string(what) + " for (" + study_id + ", " + key + ")");
}

}  // namespace detail

/// Builds StudyRecords from a parsed long-form table (one row per
/// study x label). Output is sorted by study_id, so row order is irrelevant.
inline std::vector<StudyRecord> ingest_predictions(
    const csv::Table& table, const PredictionSchema& schema = {}) {
  auto require = [&](const std::string& name) {
    int c = table.column(name);
    if (c < 0) throw Error(ErrorKind::schema, "missing column '" + name + "'");
    return static_cast<std::size_t>(c);
  };
  const std::size_t c_study = require(schema.study_id);
  const std::size_t c_subject = require(schema.subject_id);
  const std::size_t c_label = require(schema.label);
  const std::size_t c_raw = require(schema.y_raw);
  const std::size_t c_score = require(schema.score);
  const int c_pretest = table.column(schema.pretest);
  const int c_time = table.column(schema.study_time);

  std::map<std::string, StudyRecord> by_id;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t row_no = r + 1;
    const std::string& id = row[c_study];
    if (id.empty())
      throw Error(ErrorKind::value,
                  "row " + std::to_string(row_no) + ": empty study_id");
    const std::string& label = row[c_label];
    if (label.empty())
      throw Error(ErrorKind::value,
                  "row " + std::to_string(row_no) + ": empty label");

    StudyRecord& rec = by_id[id];
    if (rec.study_id.empty()) {
      rec.study_id = id;
      rec.subject_id = row[c_subject];
    } else if (rec.subject_id != row[c_subject]) {
      throw Error(ErrorKind::conflict, "row " + std::to_string(row_no) +
                                           ": study " + id +
                                           " has conflicting subject_id");
    }
    if (c_time >= 0 && !row[c_time].empty()) {
      Timestamp t = parse_rfc3339(row[c_time]);
      if (rec.study_time && *rec.study_time != t)
        throw Error(ErrorKind::conflict, "row " + std::to_string(row_no) +
                                             ": study " + id +
                                             " has conflicting study_time");
      rec.study_time = t;
    }

    RawLabel raw;
    try {
      raw = parse_raw_label(row[c_raw]);
    } catch (const Error& e) {
      throw Error(ErrorKind::value, "row " + std::to_string(row_no) + ": " + e.what());
    }
    double score = detail::parse_unit_real(row[c_score], "score", row_no);
    detail::merge_value(rec.labels, label, raw, "y_raw", id, row_no);
    detail::merge_value(rec.score, label, score, "score", id, row_no);
    rec.y[label] = apply_label_policy(raw);
    if (c_pretest >= 0 && !row[c_pretest].empty()) {
      double p = detail::parse_unit_real(row[c_pretest], "pretest", row_no);
      detail::merge_value(rec.pretest, label, p, "pretest", id, row_no);
    }
  }

  std::vector<StudyRecord> out;
  out.reserve(by_id.size());
  for (auto& [id, rec] : by_id) {
    if (!rec.pretest.empty() && rec.pretest.size() != rec.score.size())
      throw Error(ErrorKind::value,
                  "study " + id + ": pretest given for some labels but not all");
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<StudyRecord> ingest_predictions(
    const std::string& path, const PredictionSchema& schema = {}) {
  return ingest_predictions(csv::read_file(path), schema);
}

inline void write_predictions(std::ostream& out,
                              const std::vector<StudyRecord>& records) {
  bool with_pretest = std::any_of(records.begin(), records.end(),
                                  [](const auto& r) { return !r.pretest.empty(); });
  bool with_time = std::any_of(records.begin(), records.end(),
                               [](const auto& r) { return r.study_time.has_value(); });
  std::vector<std::string> header{"study_id", "subject_id", "label", "y_raw", "score"};
  if (with_pretest) header.push_back("pretest");
  if (with_time) header.push_back("study_time");
  csv::write_row(out, header);
  for (const auto& rec : records) {
    for (const auto& [label, raw] : rec.labels) {
      std::vector<std::string> row{rec.study_id, rec.subject_id, label,
                                   std::string(to_string(raw)),
                                   csv::real(rec.score.at(label))};
      if (with_pretest) {
        auto it = rec.pretest.find(label);
        row.push_back(it == rec.pretest.end() ? "" : csv::real(it->second));
      }
      if (with_time)
        row.push_back(rec.study_time ? format_rfc3339(*rec.study_time) : "");
      csv::write_row(out, row);
    }
  }
}

// ---------------------------------------------------------------------------
// Notes (JSON lines)

inline NoteRecord note_from_json(const nlohmann::json& j, std::size_t line) {
  auto field = [&](const char* name) -> std::string {
    if (!j.contains(name) || !j[name].is_string())
      throw Error(ErrorKind::schema, "notes line " + std::to_string(line) +
                                         ": missing string field '" + name + "'");
    return j[name].get<std::string>();
  };
  NoteRecord note;
  note.note_id = field("note_id");
  note.subject_id = field("subject_id");
  note.chart_time = parse_rfc3339(field("chart_time"));
  note.text = field("text");
  if (note.text.find_first_not_of(" \t\r\n\f\v") == std::string::npos)
    throw Error(ErrorKind::value, "notes line " + std::to_string(line) +
                                      ": empty text for note " + note.note_id);
  return note;
}

inline std::vector<NoteRecord> read_notes(std::istream& in) {
  std::vector<NoteRecord> notes;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::schema,
                  "notes line " + std::to_string(line_no) + ": " + e.what());
    }
    NoteRecord note = note_from_json(j, line_no);
    if (!seen.insert(note.note_id).second)
      throw Error(ErrorKind::conflict, "duplicate note_id " + note.note_id);
    notes.push_back(std::move(note));
  }
  return notes;
}

inline std::vector<NoteRecord> read_notes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  return read_notes(in);
}

inline void write_notes(std::ostream& out, const std::vector<NoteRecord>& notes) {
  for (const auto& n : notes) {
    nlohmann::ordered_json j;
    j["note_id"] = n.note_id;
    j["subject_id"] = n.subject_id;
    j["chart_time"] = format_rfc3339(n.chart_time);
    j["text"] = n.text;
    out << j.dump() << '\n';
  }
}

/// Fills note_refs of every record with the subject's notes charted strictly
/// before the study (all of the subject's notes when the study time is
/// unknown), ordered by chart time then note id.
inline void link_notes(std::vector<StudyRecord>& records,
                       const std::vector<NoteRecord>& notes) {
  std::unordered_map<std::string, std::vector<const NoteRecord*>> by_subject;
  for (const auto& n : notes) by_subject[n.subject_id].push_back(&n);
  for (auto& [_, list] : by_subject)
    std::sort(list.begin(), list.end(), [](const NoteRecord* a, const NoteRecord* b) {
      return std::tie(a->chart_time, a->note_id) < std::tie(b->chart_time, b->note_id);
    });
  for (auto& rec : records) {
    rec.note_refs.clear();
    auto it = by_subject.find(rec.subject_id);
    if (it == by_subject.end()) continue;
    for (const NoteRecord* n : it->second) {
      if (rec.study_time && !(n->chart_time < *rec.study_time)) break;
      rec.note_refs.push_back(n->note_id);
    }
  }
}

/// Lookup from note id to note.
class NoteIndex {
 public:
  NoteIndex() = default;
  explicit NoteIndex(const std::vector<NoteRecord>& notes) {
    for (const auto& n : notes) index_.emplace(n.note_id, &n);
  }

  std::vector<const NoteRecord*> prior_notes(const StudyRecord& rec) const {
    std::vector<const NoteRecord*> out;
    for (const auto& id : rec.note_refs) {
      auto it = index_.find(id);
      if (it != index_.end()) out.push_back(it->second);
    }
    return out;
  }

 private:
  std::unordered_map<std::string, const NoteRecord*> index_;
};

// ---------------------------------------------------------------------------
// Subject-level splits

enum class Split { train, validation, test };

constexpr std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

using SplitAssignment = std::map<std::string, Split>;

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

/// Shuffles the distinct subjects with the seed and cuts the order at
/// floor(train*n) and floor((train+validation)*n).
inline SplitAssignment split_by_subject(const std::vector<StudyRecord>& records,
                                        SplitFractions fractions = {},
                                        std::uint64_t seed = 0) {
  if (fractions.train < 0 || fractions.validation < 0 || fractions.test < 0 ||
      std::abs(fractions.train + fractions.validation + fractions.test - 1.0) > 1e-9)
    throw Error(ErrorKind::config, "split fractions must be >= 0 and sum to 1");
  std::set<std::string> distinct;
  for (const auto& r : records) distinct.insert(r.subject_id);
  if (distinct.size() < 3)
    throw Error(ErrorKind::insufficient_data,
                "subject split needs at least 3 distinct subjects, got " +
                    std::to_string(distinct.size()));
  std::vector<std::string> subjects(distinct.begin(), distinct.end());
  Engine rng = make_engine(seed, {0x5b11});
  std::shuffle(subjects.begin(), subjects.end(), rng);

  const auto n = static_cast<double>(subjects.size());
  const auto cut1 = static_cast<std::size_t>(std::floor(fractions.train * n + 1e-9));
  const auto cut2 = static_cast<std::size_t>(
      std::floor((fractions.train + fractions.validation) * n + 1e-9));
  SplitAssignment out;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    out[subjects[i]] = i < cut1 ? Split::train : i < cut2 ? Split::validation : Split::test;
  return out;
}

// ---------------------------------------------------------------------------
// Store directory: records.jsonl + notes.jsonl

inline nlohmann::ordered_json to_json(const StudyRecord& rec) {
  nlohmann::ordered_json j;
  j["study_id"] = rec.study_id;
  j["subject_id"] = rec.subject_id;
  j["study_time"] = rec.study_time ? nlohmann::ordered_json(format_rfc3339(*rec.study_time))
                                   : nlohmann::ordered_json(nullptr);
  nlohmann::ordered_json labels = nlohmann::ordered_json::object();
  for (const auto& [label, raw] : rec.labels) {
    nlohmann::ordered_json e;
    e["y_raw"] = std::string(to_string(raw));
    e["y"] = rec.y.at(label);
    e["score"] = rec.score.at(label);
    auto it = rec.pretest.find(label);
    e["pretest"] = it == rec.pretest.end() ? nlohmann::ordered_json(nullptr)
                                           : nlohmann::ordered_json(it->second);
    labels[label] = e;
  }
  j["labels"] = labels;
  j["note_refs"] = rec.note_refs;
  return j;
}

inline StudyRecord record_from_json(const nlohmann::json& j) {
  StudyRecord rec;
  rec.study_id = j.at("study_id").get<std::string>();
  rec.subject_id = j.at("subject_id").get<std::string>();
  if (!j.at("study_time").is_null())
    rec.study_time = parse_rfc3339(j.at("study_time").get<std::string>());
  for (const auto& [label, e] : j.at("labels").items()) {
    RawLabel raw = parse_raw_label(e.at("y_raw").get<std::string>());
    rec.labels[label] = raw;
    rec.y[label] = apply_label_policy(raw);
    rec.score[label] = e.at("score").get<double>();
    if (!e.at("pretest").is_null()) rec.pretest[label] = e.at("pretest").get<double>();
  }
  rec.note_refs = j.at("note_refs").get<std::vector<std::string>>();
  return rec;
}

struct Store {
  std::vector<StudyRecord> records;
  std::vector<NoteRecord> notes;
};

inline void write_store(const std::filesystem::path& dir, const Store& store) {
  std::filesystem::create_directories(dir);
  std::ofstream rec_out(dir / "records.jsonl", std::ios::binary);
  if (!rec_out) throw Error(ErrorKind::io, "cannot write " + (dir / "records.jsonl").string());
  for (const auto& r : store.records) rec_out << to_json(r).dump() << '\n';
  std::ofstream note_out(dir / "notes.jsonl", std::ios::binary);
  if (!note_out) throw Error(ErrorKind::io, "cannot write " + (dir / "notes.jsonl").string());
  write_notes(note_out, store.notes);
}

inline Store read_store(const std::filesystem::path& dir) {
  Store store;
  std::ifstream rec_in(dir / "records.jsonl", std::ios::binary);
  if (!rec_in) throw Error(ErrorKind::io, "cannot open " + (dir / "records.jsonl").string());
  std::string line;
  while (std::getline(rec_in, line)) {
    if (line.empty()) continue;
    try {
      store.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::schema, std::string("records.jsonl: ") + e.what());
    }
  }
  if (std::filesystem::exists(dir / "notes.jsonl"))
    store.notes = read_notes((dir / "notes.jsonl").string());
  return store;
}

}  // namespace ctxstrata

namespace ctxstrata {

/// Column view of one label across records (records lacking the label are
/// skipped). `key` is the rank of each study id in lexicographic order and
/// serves as the deterministic tie-breaker downstream.
struct LabelColumns {
  std::string label;
  std::vector<std::string> study_ids;
  std::vector<std::uint64_t> key;
  std::vector<int> y;
  std::vector<double> score;
  std::vector<double> pretest;  // empty unless requested

  std::size_t size() const { return y.size(); }
};

inline LabelColumns label_columns(std::span<const StudyRecord> records, const std::string& label,
                                  bool require_pretest = false) {
  LabelColumns out;
  out.label = label;
  std::vector<const StudyRecord*> kept;
  for (const auto& r : records) {
    if (r.y.find(label) == r.y.end()) continue;
    if (require_pretest && !r.has_pretest(label))
      throw Error(ErrorKind::missing_pretest,
                  "study " + r.study_id + " has no pretest for label " + label +
                      "; supply --pretest-col or --text-model");
    kept.push_back(&r);
  }
  std::vector<std::size_t> order(kept.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return kept[a]->study_id < kept[b]->study_id;
  });
  out.key.resize(kept.size());
  for (std::size_t r = 0; r < order.size(); ++r) out.key[order[r]] = r;
  for (const StudyRecord* r : kept) {
    out.study_ids.push_back(r->study_id);
    out.y.push_back(r->y.at(label));
    out.score.push_back(r->score.at(label));
    if (require_pretest) out.pretest.push_back(r->pretest.at(label));
  }
  return out;
}

/// Records restricted to the given study ids, in input order.
inline std::vector<StudyRecord> select_studies(std::span<const StudyRecord> records,
                                               std::span<const std::string> ids) {
  std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<StudyRecord> out;
  for (const auto& r : records)
    if (wanted.count(r.study_id)) out.push_back(r);
  return out;
}

}  // namespace ctxstrata
