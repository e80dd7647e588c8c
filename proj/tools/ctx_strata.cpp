// ctx-strata: context-stratified evaluation of probabilistic classifiers.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxstrata.hpp"

namespace cs = ctxstrata;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

struct Global {
  std::uint64_t seed = 0;
  std::size_t iterations = 10000;
  double ci = 95.0;
  std::vector<std::string> labels;
  std::string out;
  unsigned threads = 0;
  bool timestamps = false;
};

struct Source {
  std::string store;
  std::string predictions;
  std::string notes;
  std::string pretest_col;
  std::vector<std::string> text_models;
  std::string no_context = "error";
};

struct Loaded {
  std::vector<cs::StudyRecord> records;
  std::vector<cs::NoteRecord> notes;
  std::vector<cs::InputDigest> inputs;
  std::vector<std::string> model_labels;
};

std::string now_rfc3339() {
  auto us = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::system_clock::now().time_since_epoch());
  return cs::format_rfc3339(cs::Timestamp{us.count()});
}

std::string slug(const std::string& label) {
  std::string s;
  for (char c : label)
    s.push_back(std::isalnum(static_cast<unsigned char>(c))
                    ? static_cast<char>(std::tolower(static_cast<unsigned char>(c)))
                    : '_');
  return s;
}

fs::path require_out(const Global& g) {
  if (g.out.empty()) throw cs::Error(cs::ErrorKind::config, "--out is required for this command");
  return fs::path(g.out);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cs::Error(cs::ErrorKind::io, "cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const ojson& j) { open_out(path) << j.dump(2) << '\n'; }

cs::BootstrapConfig bootstrap_config(const Global& g) {
  if (!(g.ci > 0.0 && g.ci < 100.0))
    throw cs::Error(cs::ErrorKind::config, "--ci must lie strictly between 0 and 100");
  cs::BootstrapConfig c;
  c.iterations = g.iterations;
  c.seed = g.seed;
  c.ci_low = (100.0 - g.ci) / 2.0;
  c.ci_high = 100.0 - c.ci_low;
  c.threads = g.threads;
  c.validate();
  return c;
}

std::vector<std::string> model_paths(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (const auto& a : args) {
    if (fs::is_directory(a)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(a)) {
        auto name = e.path().filename().string();
        if (e.is_regular_file() && name.rfind("text-model-", 0) == 0 && e.path().extension() == ".json")
          found.push_back(e.path().string());
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) throw cs::Error(cs::ErrorKind::io, "no text-model-*.json in " + a);
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(a);
    }
  }
  return out;
}

cs::TextRiskModel read_text_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cs::Error(cs::ErrorKind::io, "cannot open " + path);
  try {
    return cs::text_model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw cs::Error(cs::ErrorKind::schema, path + ": " + e.what());
  }
}

Loaded load(const Source& src, bool need_notes) {
  Loaded l;
  if (!src.store.empty() && !src.predictions.empty())
    throw cs::Error(cs::ErrorKind::config, "give either --store or --predictions, not both");
  if (!src.store.empty()) {
    if (!src.pretest_col.empty())
      throw cs::Error(cs::ErrorKind::config, "--pretest-col applies to --predictions input only");
    fs::path dir(src.store);
    cs::Store store = cs::read_store(dir);
    l.records = std::move(store.records);
    l.notes = std::move(store.notes);
    l.inputs.push_back(cs::digest_input("store/records", dir / "records.jsonl"));
    if (fs::exists(dir / "notes.jsonl"))
      l.inputs.push_back(cs::digest_input("store/notes", dir / "notes.jsonl"));
  } else if (!src.predictions.empty()) {
    cs::PredictionSchema schema;
    cs::csv::Table table = cs::csv::read_file(src.predictions);
    if (!src.pretest_col.empty()) {
      if (table.column(src.pretest_col) < 0)
        throw cs::Error(cs::ErrorKind::schema,
                        "missing column '" + src.pretest_col + "' named by --pretest-col");
      schema.pretest = src.pretest_col;
    }
    l.records = cs::ingest_predictions(table, schema);
    l.inputs.push_back(cs::digest_input("predictions", src.predictions));
    if (!src.notes.empty()) {
      l.notes = cs::read_notes(src.notes);
      l.inputs.push_back(cs::digest_input("notes", src.notes));
      cs::link_notes(l.records, l.notes);
    }
  } else {
    throw cs::Error(cs::ErrorKind::config, "no input: give --store DIR or --predictions FILE");
  }
  if (need_notes && l.notes.empty())
    throw cs::Error(cs::ErrorKind::no_context, "this command needs notes (--notes or a store with notes.jsonl)");

  if (!src.text_models.empty()) {
    if (src.no_context != "error" && src.no_context != "prevalence")
      throw cs::Error(cs::ErrorKind::config, "--no-context must be 'error' or 'prevalence'");
    const auto policy =
        src.no_context == "error" ? cs::NoContextPolicy::error : cs::NoContextPolicy::prevalence;
    cs::NoteIndex index(l.notes);
    for (const auto& path : model_paths(src.text_models)) {
      cs::TextRiskModel model = read_text_model(path);
      l.inputs.push_back(cs::digest_input("text-model", path));
      l.model_labels.push_back(model.label);
      for (auto& rec : l.records) {
        if (rec.y.find(model.label) == rec.y.end()) continue;
        try {
          rec.pretest[model.label] = cs::predict_pretest(model, index.prior_notes(rec), policy);
        } catch (const cs::Error& e) {
          if (e.kind() != cs::ErrorKind::no_context) throw;
          throw cs::Error(cs::ErrorKind::no_context,
                          "study " + rec.study_id + " has no prior notes for the " + model.label +
                              " text model; pass --no-context prevalence to use the training prevalence");
        }
      }
    }
  }
  return l;
}

std::vector<std::string> resolve_labels(const Global& g, const std::vector<cs::StudyRecord>& records) {
  std::set<std::string> present;
  for (const auto& r : records)
    for (const auto& [label, _] : r.y) present.insert(label);
  if (g.labels.empty()) return {present.begin(), present.end()};
  for (const auto& l : g.labels)
    if (!present.count(l)) {
      std::string avail;
      for (const auto& p : present) avail += (avail.empty() ? "" : ", ") + p;
      throw cs::Error(cs::ErrorKind::value, "label '" + l + "' not in the data (available: " + avail + ")");
    }
  return g.labels;
}

ojson source_json(const Source& s) {
  ojson j;
  j["store"] = s.store;
  j["predictions"] = s.predictions;
  j["notes"] = s.notes;
  j["pretest_col"] = s.pretest_col;
  j["text_models"] = s.text_models;
  j["no_context"] = s.no_context;
  return j;
}

cs::RunManifest manifest(const std::string& command, const Global& g, ojson config,
                         std::vector<cs::InputDigest> inputs) {
  cs::RunManifest m;
  m.command = command;
  config["seed"] = g.seed;
  config["labels"] = g.labels;
  m.config = std::move(config);
  m.inputs = std::move(inputs);
  m.seed = g.seed;
  if (g.timestamps) m.started_at = now_rfc3339();
  return m;
}

void finish(cs::RunManifest& m, const Global& g) {
  if (g.timestamps) m.finished_at = now_rfc3339();
}

void add_source_options(CLI::App* cmd, Source& s, bool with_models = true) {
  cmd->add_option("--store", s.store, "Store directory written by ingest");
  cmd->add_option("--predictions", s.predictions, "Long-form predictions CSV");
  cmd->add_option("--notes", s.notes, "Notes JSONL (with --predictions)");
  cmd->add_option("--pretest-col", s.pretest_col, "Predictions column holding pre-test probabilities");
  if (with_models) {
    cmd->add_option("--text-model", s.text_models,
                    "Text-risk model JSON (or directory of text-model-*.json) supplying pretest");
    cmd->add_option("--no-context", s.no_context,
                    "Studies without prior notes under --text-model: error | prevalence");
  }
}

// ---------------------------------------------------------------------------
// ingest

struct IngestArgs {
  Source src;
  bool split = false;
};

int run_ingest(const Global& g, const IngestArgs& a) {
  if (a.src.predictions.empty()) throw cs::Error(cs::ErrorKind::config, "ingest needs --predictions");
  if (!a.src.store.empty()) throw cs::Error(cs::ErrorKind::config, "ingest writes a store; use --out");
  fs::path out = require_out(g);
  Loaded l = load(a.src, false);
  ojson cfg;
  cfg["source"] = source_json(a.src);
  cfg["split"] = a.split;
  auto m = manifest("ingest", g, cfg, l.inputs);
  cs::write_store(out, {l.records, l.notes});
  if (a.split) {
    auto splits = cs::split_by_subject(l.records, {}, g.seed);
    auto f = open_out(out / "splits.csv");
    cs::csv::write_row(f, {"subject_id", "split"});
    for (const auto& [subject, s] : splits) cs::csv::write_row(f, {subject, std::string(cs::to_string(s))});
  }
  finish(m, g);
  write_json(out / "manifest.json", cs::to_json(m));
  std::set<std::string> labels;
  for (const auto& r : l.records)
    for (const auto& [label, _] : r.y) labels.insert(label);
  std::cout << "ingested " << l.records.size() << " studies, " << l.notes.size() << " notes, "
            << labels.size() << " labels into " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string config;
  std::optional<std::size_t> n;
  std::optional<double> coupling;
  std::optional<std::string> scorer;
  std::optional<double> lambda;
  std::optional<double> noise_sd;
  std::optional<double> context_noise;
  bool notes = false;
  bool seed_given = false;
};

int run_synth(const Global& g, const SynthArgs& a) {
  fs::path out = require_out(g);
  cs::SynthConfig cfg;
  std::vector<cs::InputDigest> inputs;
  if (!a.config.empty()) {
    cfg = cs::read_synth_config(a.config);
    inputs.push_back(cs::digest_input("synth-config", a.config));
  }
  if (a.n) cfg.n = *a.n;
  if (a.coupling) cfg.coupling = *a.coupling;
  if (a.scorer) cfg.scorer.kind = cs::parse_scorer(*a.scorer);
  if (a.lambda) cfg.scorer.lambda = *a.lambda;
  if (a.noise_sd) cfg.noise_sd = *a.noise_sd;
  if (a.context_noise) cfg.context_noise = *a.context_noise;
  if (a.notes && !cfg.notes) cfg.notes = cs::NoteConfig{};
  if (a.seed_given) cfg.seed = g.seed;
  if (!g.labels.empty()) cfg.labels = g.labels;
  cs::validate(cfg);

  cs::SynthDataset data = cs::generate(cfg);
  fs::create_directories(out);
  {
    auto f = open_out(out / "predictions.csv");
    cs::write_predictions(f, data.records);
  }
  {
    auto f = open_out(out / "latent.csv");
    cs::write_latent(f, data);
  }
  if (cfg.notes) {
    auto f = open_out(out / "notes.jsonl");
    cs::write_notes(f, data.notes);
  }
  write_json(out / "synth-config.json", cs::to_json(cfg));
  Global gm = g;
  gm.seed = cfg.seed;
  auto m = manifest("synth", gm, cs::to_json(cfg), inputs);
  finish(m, g);
  write_json(out / "manifest.json", cs::to_json(m));
  std::cout << "generated " << data.records.size() << " studies";
  if (cfg.notes) std::cout << " and " << data.notes.size() << " notes";
  std::cout << " in " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train-text

struct TrainArgs {
  Source src;
  int folds = 5;
  std::vector<double> grid{1e-4, 1e-3, 1e-2, 1e-1};
  bool no_calibrate = false;
  std::size_t min_df = 5;
  double max_df = 0.9;
  std::size_t max_features = 8192;
  bool holdout = false;
  std::size_t top = 10;
};

int run_train_text(const Global& g, const TrainArgs& a) {
  fs::path out = require_out(g);
  Source src = a.src;
  src.text_models.clear();
  Loaded l = load(src, true);
  auto labels = resolve_labels(g, l.records);
  // --out model.json writes one model file with its side files next to it;
  // anything else is a directory of per-label files.
  const bool single = out.extension() == ".json";
  if (single && labels.size() != 1)
    throw cs::Error(cs::ErrorKind::config,
                    "--out " + out.string() + " names one model file; select exactly one label");
  auto model_path = [&](const std::string& label) {
    return single ? out : out / ("text-model-" + slug(label) + ".json");
  };
  auto side_path = [&](const std::string& name) {
    return single ? out.parent_path() / (out.stem().string() + "-" + name) : out / name;
  };
  cs::NoteIndex index(l.notes);

  std::optional<cs::SplitAssignment> splits;
  if (a.holdout) splits = cs::split_by_subject(l.records, {}, g.seed);
  std::vector<cs::StudyRecord> train, test;
  for (const auto& r : l.records) {
    if (!splits || splits->at(r.subject_id) == cs::Split::train)
      train.push_back(r);
    else if (splits->at(r.subject_id) == cs::Split::test)
      test.push_back(r);
  }

  cs::TextModelOptions opt;
  opt.vocabulary.min_df = a.min_df;
  opt.vocabulary.max_df = a.max_df;
  opt.vocabulary.max_features = a.max_features;
  opt.training.grid = a.grid;
  opt.training.folds = a.folds;
  opt.training.seed = g.seed;
  opt.calibrate = !a.no_calibrate;

  ojson cfg;
  cfg["source"] = source_json(src);
  cfg["folds"] = a.folds;
  cfg["grid"] = a.grid;
  cfg["calibrate"] = opt.calibrate;
  cfg["min_df"] = a.min_df;
  cfg["max_df"] = a.max_df;
  cfg["max_features"] = a.max_features;
  cfg["holdout"] = a.holdout;
  auto m = manifest("train-text", g, cfg, l.inputs);

  ojson summary = ojson::object();
  summary["labels"] = ojson::array();
  for (const auto& label : labels) {
    auto set = cs::build_training_set(train, index, label);
    cs::TextRiskModel model = cs::train_text_model(set, label, opt);
    write_json(model_path(label), cs::to_json(model));

    ojson lj;
    lj["label"] = label;
    lj["n_train"] = set.y.size();
    lj["vocabulary"] = model.vocabulary.size();
    lj["regularization"] = model.fit.regularization;
    lj["cv"] = ojson::array();
    for (const auto& row : model.cv) lj["cv"].push_back({{"regularization", row.regularization},
                                                         {"mean_auroc", row.mean_auroc}});
    lj["top_features"] = ojson::array();
    auto f = open_out(single ? side_path("features.csv") : out / ("features-" + slug(label) + ".csv"));
    cs::csv::write_row(f, {"rank", "token", "coefficient"});
    std::size_t rank = 1;
    for (const auto& [tok, _] : cs::top_features(model, a.top)) {
      double coef = model.coefficient(tok);
      cs::csv::write_row(f, {std::to_string(rank++), tok, cs::csv::real(coef)});
      lj["top_features"].push_back({{"token", tok}, {"coefficient", coef}});
    }
    lj["warnings"] = model.warnings;
    std::cout << label << ": " << set.y.size() << " training studies, vocabulary "
              << model.vocabulary.size() << ", selected strength " << model.fit.regularization;
    if (a.holdout) {
      std::vector<int> y;
      std::vector<double> p;
      for (const auto& r : test) {
        auto it = r.y.find(label);
        auto prior = index.prior_notes(r);
        if (it == r.y.end() || prior.empty()) continue;
        y.push_back(it->second);
        p.push_back(cs::predict_pretest(model, prior));
      }
      auto res = y.empty() ? cs::AurocResult{} : cs::auroc(y, p);
      lj["holdout"] = {{"n", y.size()}, {"auroc", cs::detail::opt(res.value)}};
      std::cout << ", held-out AUROC "
                << (res.value ? cs::csv::fixed(*res.value, 3) : std::string("undefined"));
    }
    std::cout << '\n';
    summary["labels"].push_back(lj);
  }
  finish(m, g);
  summary["manifest"] = cs::to_json(m);
  write_json(single ? side_path("summary.json") : out / "train-summary.json", summary);
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::string input;
  std::string score_col = "score";
  std::string target_col = "y";
  std::string group_col = "subject_id";
  int folds = 5;
  std::string apply;
};

std::vector<double> parse_column(const cs::csv::Table& t, const std::string& name, bool unit) {
  int c = t.column(name);
  if (c < 0) throw cs::Error(cs::ErrorKind::schema, "missing column '" + name + "'");
  std::vector<double> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& f = t.rows[r][static_cast<std::size_t>(c)];
    char* end = nullptr;
    double v = std::strtod(f.c_str(), &end);
    if (f.empty() || end != f.c_str() + f.size() || !std::isfinite(v))
      throw cs::Error(cs::ErrorKind::value,
                      "row " + std::to_string(r + 1) + ": " + name + " '" + f + "' is not a number");
    if (unit && (v < 0.0 || v > 1.0))
      throw cs::Error(cs::ErrorKind::value, "row " + std::to_string(r + 1) + ": " + name + " outside [0,1]");
    out.push_back(v);
  }
  return out;
}

int run_calibrate(const Global& g, const CalibrateArgs& a) {
  fs::path out = require_out(g);
  if (a.input.empty()) throw cs::Error(cs::ErrorKind::config, "calibrate needs --in");
  cs::csv::Table t = cs::csv::read_file(a.input);
  auto scores = parse_column(t, a.score_col, false);
  if (!a.apply.empty()) {
    std::ifstream in(a.apply);
    if (!in) throw cs::Error(cs::ErrorKind::io, "cannot open " + a.apply);
    cs::IsotonicMap map = [&] {
      try {
        return cs::isotonic_from_json(nlohmann::json::parse(in));
      } catch (const nlohmann::json::exception& e) {
        throw cs::Error(cs::ErrorKind::schema, a.apply + ": " + e.what());
      }
    }();
    auto f = open_out(out);
    auto header = t.header;
    header.push_back("calibrated");
    cs::csv::write_row(f, header);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      auto row = t.rows[r];
      row.push_back(cs::csv::real(map(scores[r])));
      cs::csv::write_row(f, row);
    }
    std::cout << "calibrated " << t.rows.size() << " rows into " << out.string() << '\n';
    return 0;
  }
  auto targets = parse_column(t, a.target_col, true);
  int gc = t.column(a.group_col);
  if (gc < 0) throw cs::Error(cs::ErrorKind::schema, "missing column '" + a.group_col + "'");
  std::vector<cs::CalibrationSample> samples;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (targets[r] != 0.0 && targets[r] != 1.0)
      throw cs::Error(cs::ErrorKind::value, "row " + std::to_string(r + 1) + ": target must be 0 or 1");
    samples.push_back({t.rows[r][static_cast<std::size_t>(gc)], scores[r], static_cast<int>(targets[r])});
  }
  cs::IsotonicMap map = cs::calibrate_cv(samples, a.folds, g.seed);
  ojson cfg;
  cfg["input"] = a.input;
  cfg["score_col"] = a.score_col;
  cfg["target_col"] = a.target_col;
  cfg["group_col"] = a.group_col;
  cfg["folds"] = a.folds;
  auto m = manifest("calibrate", g, cfg, {cs::digest_input("input", a.input)});
  finish(m, g);
  ojson j = cs::to_json(map);
  j["manifest"] = cs::to_json(m);
  write_json(out, j);
  std::cout << "isotonic map with " << map.breakpoints().size() << " breakpoints written to "
            << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// stratify / match

struct StratifyArgs {
  Source src;
  std::string mode = "quantile";
  std::string phrases;
  bool allow_empty_context = false;
};

cs::PhraseList load_phrases(const std::string& path, std::vector<cs::InputDigest>& inputs) {
  if (path.empty()) return cs::default_phrase_list();
  inputs.push_back(cs::digest_input("phrases", path));
  return cs::read_phrase_list(path);
}

int run_stratify(const Global& g, const StratifyArgs& a) {
  fs::path out = require_out(g);
  if (a.mode != "quantile" && a.mode != "mention")
    throw cs::Error(cs::ErrorKind::config, "--mode must be 'quantile' or 'mention'");
  Loaded l = load(a.src, a.mode == "mention");
  auto labels = resolve_labels(g, l.records);
  auto inputs = l.inputs;
  ojson cfg;
  cfg["source"] = source_json(a.src);
  cfg["mode"] = a.mode;
  cfg["phrases"] = a.phrases;
  cfg["allow_empty_context"] = a.allow_empty_context;

  auto f = open_out(out / "strata.csv");
  cs::csv::write_row(f, {"label", "study_id", "stratum"});
  ojson summary = ojson::array();
  if (a.mode == "quantile") {
    for (const auto& label : labels) {
      cs::label_columns(l.records, label, true);
      auto s = cs::quantile_strata(l.records, label);
      for (const auto& [id, st] : s.assignment) cs::csv::write_row(f, {label, id, std::string(cs::to_string(st))});
      ojson j{{"label", label}, {"q25", s.q25}, {"q75", s.q75}};
      for (auto st : {cs::RiskStratum::bottom25, cs::RiskStratum::middle50, cs::RiskStratum::top25})
        j[std::string(cs::to_string(st))] = s.members(st).size();
      std::cout << label << ": q25=" << cs::csv::fixed(s.q25, 4) << " q75=" << cs::csv::fixed(s.q75, 4)
                << " bottom25=" << j["bottom25"] << " middle50=" << j["middle50"] << " top25=" << j["top25"]
                << '\n';
      summary.push_back(j);
    }
  } else {
    auto phrases = load_phrases(a.phrases, inputs);
    cs::NoteIndex index(l.notes);
    for (const auto& label : labels) {
      auto s = cs::mention_strata(l.records, index, phrases, label, a.allow_empty_context);
      for (const auto& [id, m] : s.assignment) cs::csv::write_row(f, {label, id, std::string(cs::to_string(m))});
      ojson j{{"label", label},
              {"mentioned", s.members(cs::Mention::mentioned).size()},
              {"not_mentioned", s.members(cs::Mention::not_mentioned).size()},
              {"excluded", s.excluded.size()}};
      std::cout << label << ": mentioned=" << j["mentioned"] << " not_mentioned=" << j["not_mentioned"]
                << " excluded=" << j["excluded"] << '\n';
      summary.push_back(j);
    }
  }
  auto m = manifest("stratify", g, cfg, inputs);
  finish(m, g);
  write_json(out / "strata-summary.json", ojson{{"manifest", cs::to_json(m)}, {"labels", summary}});
  return 0;
}

struct MatchArgs {
  Source src;
  std::optional<double> max_gap;
};

int run_match(const Global& g, const MatchArgs& a) {
  fs::path out = require_out(g);
  Loaded l = load(a.src, false);
  auto labels = resolve_labels(g, l.records);
  ojson cfg;
  cfg["source"] = source_json(a.src);
  cfg["max_gap"] = cs::detail::opt(a.max_gap);
  // --out pairs.csv writes the pairs there and the summary next to it.
  const bool single = out.extension() == ".csv";
  auto f = open_out(single ? out : out / "pairs.csv");
  cs::csv::write_row(f, {"label", "pos_study_id", "neg_study_id", "gap"});
  ojson summary = ojson::array();
  for (const auto& label : labels) {
    auto cols = cs::label_columns(l.records, label, true);
    std::vector<cs::MatchCandidate> pos, neg;
    for (std::size_t i = 0; i < cols.size(); ++i)
      (cols.y[i] ? pos : neg).push_back({cols.study_ids[i], cols.pretest[i]});
    auto set = cs::match(pos, neg, {a.max_gap});
    for (const auto& p : set.pairs)
      cs::csv::write_row(f, {label, p.pos_study_id, p.neg_study_id, cs::csv::real(p.gap)});
    summary.push_back({{"label", label},
                       {"pairs", set.pairs.size()},
                       {"total_cost", set.total_cost},
                       {"max_gap", set.max_gap},
                       {"unmatched", set.unmatched},
                       {"attrition", set.attrition}});
    std::cout << label << ": " << set.pairs.size() << " pairs, total gap "
              << cs::csv::fixed(set.total_cost, 6) << ", max gap " << cs::csv::fixed(set.max_gap, 6)
              << ", " << set.unmatched << " unmatched\n";
  }
  auto m = manifest("match", g, cfg, l.inputs);
  finish(m, g);
  write_json(single ? out.parent_path() / (out.stem().string() + "-summary.json")
                    : out / "match-summary.json", ojson{{"manifest", cs::to_json(m)}, {"labels", summary}});
  return 0;
}

// ---------------------------------------------------------------------------
// eval-*

void emit_report(const Global& g, cs::RunManifest& m, const cs::StratumReport& report,
                 const std::map<std::string, ojson>& extra) {
  fs::path out = require_out(g);
  if (std::all_of(report.labels.begin(), report.labels.end(),
                  [](const cs::LabelReport& r) { return r.error.has_value(); })) {
    std::string message;
    for (const auto& r : report.labels) message += (message.empty() ? "" : "; ") + *r.error;
    throw cs::Error(cs::ErrorKind::undefined_metric, message);
  }
  finish(m, g);
  cs::write_report_files(out, cs::report_json(m, report, extra), report);
  cs::write_text_table(std::cout, report);
}

std::vector<cs::StudyRecord> subset(const std::vector<cs::StudyRecord>& records,
                                    const std::vector<std::string>& ids) {
  return cs::select_studies(records, ids);
}

int run_eval_strata(const Global& g, const Source& src) {
  require_out(g);
  auto config = bootstrap_config(g);
  Loaded l = load(src, false);
  auto labels = resolve_labels(g, l.records);
  cs::StratumReport report;
  report.analysis = "quantile-strata";
  report.config = config;
  const cs::GroupPairs pairs{{0, 2}, {0, 1}, {1, 2}};
  std::vector<std::vector<cs::GroupBoot>> per_label;
  std::map<std::string, ojson> extra;
  for (const auto& label : labels) {
    cs::label_columns(l.records, label, true);
    auto strata = cs::quantile_strata(l.records, label);
    std::vector<cs::GroupBoot> groups;
    for (auto st : {cs::RiskStratum::bottom25, cs::RiskStratum::middle50, cs::RiskStratum::top25}) {
      auto recs = subset(l.records, strata.members(st));
      groups.push_back(cs::bootstrap_group(cs::label_columns(recs, label), std::string(cs::to_string(st)), config));
    }
    report.labels.push_back(cs::label_report(label, groups, pairs, config));
    extra[label] = {{"q25", strata.q25}, {"q75", strata.q75}};
    per_label.push_back(std::move(groups));
  }
  report.macro = cs::macro_report(per_label, pairs, config);
  ojson cfg;
  cfg["source"] = source_json(src);
  cfg["iterations"] = g.iterations;
  cfg["ci"] = g.ci;
  auto m = manifest("eval-strata", g, cfg, l.inputs);
  emit_report(g, m, report, extra);
  return 0;
}

struct MentionArgs {
  Source src;
  std::string phrases;
  bool allow_empty_context = false;
};

int run_eval_mentions(const Global& g, const MentionArgs& a) {
  require_out(g);
  auto config = bootstrap_config(g);
  Loaded l = load(a.src, true);
  auto labels = resolve_labels(g, l.records);
  auto inputs = l.inputs;
  auto phrases = load_phrases(a.phrases, inputs);
  cs::NoteIndex index(l.notes);
  cs::StratumReport report;
  report.analysis = "mention-strata";
  report.config = config;
  const cs::GroupPairs pairs{{0, 1}};
  std::vector<std::vector<cs::GroupBoot>> per_label;
  std::map<std::string, ojson> extra;
  for (const auto& label : labels) {
    auto strata = cs::mention_strata(l.records, index, phrases, label, a.allow_empty_context);
    std::vector<cs::GroupBoot> groups;
    for (auto m : {cs::Mention::not_mentioned, cs::Mention::mentioned}) {
      auto ids = strata.members(m);
      auto recs = subset(l.records, ids);
      auto cols = cs::label_columns(recs, label);
      if (cols.size() == 0) {
        auto other = m == cs::Mention::mentioned ? "not_mentioned" : "mentioned";
        throw cs::Error(cs::ErrorKind::degenerate_subgroup,
                        label + ": stratum '" + std::string(cs::to_string(m)) +
                            "' is empty (every study with context is " + other + ")");
      }
      groups.push_back(cs::bootstrap_group(cols, std::string(cs::to_string(m)), config));
    }
    report.labels.push_back(cs::label_report(label, groups, pairs, config));
    extra[label] = {{"phrases", strata.phrases},
                    {"phrase_matching", "substring of lower-cased raw note text, whitespace "
                                        "collapsed, punctuation kept"},
                    {"excluded", strata.excluded.size()}};
    per_label.push_back(std::move(groups));
  }
  report.macro = cs::macro_report(per_label, pairs, config);
  ojson cfg;
  cfg["source"] = source_json(a.src);
  cfg["phrases"] = a.phrases;
  cfg["allow_empty_context"] = a.allow_empty_context;
  cfg["iterations"] = g.iterations;
  cfg["ci"] = g.ci;
  auto m = manifest("eval-mentions", g, cfg, inputs);
  emit_report(g, m, report, extra);
  return 0;
}

struct MatchedArgs {
  Source src;
  double max_gap = cs::kDefaultMaxGap;
  bool no_caliper = false;
};

int run_eval_matched(const Global& g, const MatchedArgs& a) {
  require_out(g);
  auto config = bootstrap_config(g);
  Loaded l = load(a.src, false);
  auto labels = resolve_labels(g, l.records);
  cs::MatchOptions options;
  if (!a.no_caliper) options.max_gap = a.max_gap;
  auto report = cs::bootstrap_matched_diff(l.records, labels, config, options);
  ojson cfg;
  cfg["source"] = source_json(a.src);
  cfg["max_gap"] = cs::detail::opt(options.max_gap);
  cfg["iterations"] = g.iterations;
  cfg["ci"] = g.ci;
  auto m = manifest("eval-matched", g, cfg, l.inputs);
  emit_report(g, m, report, {});
  return 0;
}

void print_error(std::string_view kind, const std::string& message) {
  std::cerr << ojson{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-stratified evaluation of probabilistic classifiers", "ctx-strata"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(cs::kToolVersion));

  Global g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--iterations", g.iterations, "Bootstrap iterations")->capture_default_str();
  app.add_option("--ci", g.ci, "Confidence level in percent")->capture_default_str();
  app.add_option("--labels", g.labels, "Labels to analyse (default: all)")->delimiter(',');
  std::vector<std::string> single_labels;
  app.add_option("--label", single_labels, "Analyse this label (repeatable; adds to --labels)");
  app.add_option("--out", g.out, "Output directory (file for calibrate)");
  app.add_option("--threads", g.threads, "Worker threads, 0 = all cores")->capture_default_str();
  app.add_flag("--timestamps", g.timestamps, "Record wall-clock times in the manifest");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Ingest predictions and notes into a store");
  c_ingest->add_option("--predictions", ingest.src.predictions, "Long-form predictions CSV")->required();
  c_ingest->add_option("--notes", ingest.src.notes, "Notes JSONL");
  c_ingest->add_option("--pretest-col", ingest.src.pretest_col, "Column holding pre-test probabilities");
  c_ingest->add_flag("--split", ingest.split, "Also write an 80/10/10 subject split (splits.csv)");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  c_synth->add_option("--config", synth.config, "Synthetic config JSON");
  c_synth->add_option("--n", synth.n, "Number of studies");
  c_synth->add_option("--coupling", synth.coupling, "Context/label coupling in [0,1]");
  c_synth->add_option("--scorer", synth.scorer, "shortcut | signal | mixed");
  c_synth->add_option("--lambda", synth.lambda, "Signal weight of the mixed scorer");
  c_synth->add_option("--noise-sd", synth.noise_sd, "Score noise standard deviation");
  c_synth->add_option("--context-noise", synth.context_noise, "Extra noise sd per unit pretest");
  c_synth->add_flag("--with-notes", synth.notes, "Generate prior notes with default settings");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train-text", "Train bag-of-words pre-test models");
  add_source_options(c_train, train.src, false);
  c_train->add_option("--folds", train.folds, "Cross-validation folds")->capture_default_str();
  c_train->add_option("--grid", train.grid, "Regularization strengths")->delimiter(',');
  c_train->add_flag("--no-calibrate", train.no_calibrate, "Skip isotonic calibration");
  c_train->add_option("--min-df", train.min_df, "Minimum document frequency")->capture_default_str();
  c_train->add_option("--max-df", train.max_df, "Maximum document fraction")->capture_default_str();
  c_train->add_option("--max-features", train.max_features, "Vocabulary cap")->capture_default_str();
  c_train->add_flag("--holdout", train.holdout, "Train on the train split, report test-split AUROC");
  c_train->add_option("--top", train.top, "Features listed per label")->capture_default_str();

  CalibrateArgs calib;
  auto* c_calib = app.add_subcommand("calibrate", "Fit or apply an isotonic calibration map");
  c_calib->add_option("--in,--input", calib.input, "CSV with scores")->required();
  c_calib->add_option("--score-col", calib.score_col)->capture_default_str();
  c_calib->add_option("--target-col", calib.target_col)->capture_default_str();
  c_calib->add_option("--group-col", calib.group_col)->capture_default_str();
  c_calib->add_option("--folds", calib.folds)->capture_default_str();
  c_calib->add_option("--apply", calib.apply, "Apply this map instead of fitting");

  StratifyArgs strat;
  auto* c_strat = app.add_subcommand("stratify", "Assign studies to strata");
  add_source_options(c_strat, strat.src);
  c_strat->add_option("--mode", strat.mode, "quantile | mention")->capture_default_str();
  c_strat->add_option("--phrases", strat.phrases, "Phrase list JSON (default: built-in)");
  c_strat->add_flag("--allow-empty-context", strat.allow_empty_context,
                    "Treat studies without prior notes as not mentioned");

  MatchArgs match;
  auto* c_match = app.add_subcommand("match", "Build matched positive/negative pairs");
  add_source_options(c_match, match.src);
  c_match->add_option("--max-gap", match.max_gap, "Only pair within this pretest gap");

  Source strata_src;
  auto* c_evs = app.add_subcommand("eval-strata", "AUROC by pre-test quantile stratum");
  add_source_options(c_evs, strata_src);

  MentionArgs mention;
  auto* c_evm = app.add_subcommand("eval-mentions", "AUROC with vs without prior mentions");
  add_source_options(c_evm, mention.src);
  c_evm->add_option("--phrases", mention.phrases, "Phrase list JSON (default: built-in)");
  c_evm->add_flag("--allow-empty-context", mention.allow_empty_context,
                  "Treat studies without prior notes as not mentioned");

  MatchedArgs matched;
  auto* c_evx = app.add_subcommand("eval-matched", "AUROC on the full vs matched set");
  add_source_options(c_evx, matched.src);
  c_evx->add_option("--max-gap", matched.max_gap, "Pretest gap limit for pairs")->capture_default_str();
  c_evx->add_flag("--no-caliper", matched.no_caliper, "Exact assignment without a gap limit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("usage", e.what());
    return 2;
  }
  synth.seed_given = seed_opt->count() > 0;
  for (const auto& l : single_labels)
    if (std::find(g.labels.begin(), g.labels.end(), l) == g.labels.end()) g.labels.push_back(l);

  try {
    if (*c_ingest) return run_ingest(g, ingest);
    if (*c_synth) return run_synth(g, synth);
    if (*c_train) return run_train_text(g, train);
    if (*c_calib) return run_calibrate(g, calib);
    if (*c_strat) return run_stratify(g, strat);
    if (*c_match) return run_match(g, match);
    if (*c_evs) return run_eval_strata(g, strata_src);
    if (*c_evm) return run_eval_mentions(g, mention);
    if (*c_evx) return run_eval_matched(g, matched);
  } catch (const cs::Error& e) {
    print_error(cs::to_string(e.kind()), e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 1;
}
