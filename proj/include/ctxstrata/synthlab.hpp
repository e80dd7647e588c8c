#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxstrata/dataset.hpp"
#include "ctxstrata/error.hpp"
#include "ctxstrata/phrases.hpp"
#include "ctxstrata/random.hpp"
#include "ctxstrata/stopwords.hpp"
#include "ctxstrata/timestamp.hpp"

namespace ctxstrata {

enum class ScorerKind { shortcut, signal, mixed };

inline std::string_view to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::shortcut: return "shortcut";
    case ScorerKind::signal: return "signal";
    case ScorerKind::mixed: return "mixed";
  }
  return "shortcut";
}

inline ScorerKind parse_scorer(std::string_view s) {
  if (s == "shortcut") return ScorerKind::shortcut;
  if (s == "signal") return ScorerKind::signal;
  if (s == "mixed") return ScorerKind::mixed;
  throw Error(ErrorKind::config, "unknown scorer '" + std::string(s) +
                                     "' (expected shortcut, signal or mixed)");
}

struct Scorer {
  ScorerKind kind = ScorerKind::shortcut;
  double lambda = 0.5;  // mixed only
};

struct NoteConfig {
  std::vector<std::string> filler;            // empty: f000 .. f399
  std::map<std::string, std::string> planted;  // label -> term; default: first phrase
  double plant_probability = 0.8;
  // Extra mention probability proportional to context, independent of Y.
  double history_mention_rate = 0.0;
  // Each of three per-label context tokens appears with probability
  // context_rate * C.
  double context_rate = 0.8;
  int min_notes = 1;
  int max_notes = 3;
  int min_tokens = 20;
  int max_tokens = 60;
};

struct SynthConfig {
  std::size_t n = 10000;
  double coupling = 1.0;
  Scorer scorer;
  double noise_sd = 0.05;
  // Noise sd grows with pretest: noise_sd + context_noise * pretest.
  double context_noise = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> labels{"Edema"};
  std::optional<NoteConfig> notes;
};

struct Latent {
  double r = 0.0;
  double u = 0.0;
  double c = 0.0;
  int y = 0;
  double pretest = 0.0;
  double score = 0.0;
};

struct SynthDataset {
  std::vector<StudyRecord> records;
  std::vector<std::map<std::string, Latent>> latent;  // parallel to records
  std::vector<NoteRecord> notes;
};

/// P(Y=1 | C=c) when r, u ~ U(0,1), Y ~ Bern(r), C = a*r + (1-a)*u: the
/// posterior of r given c is uniform on its feasible interval, so the answer
/// is that interval's midpoint.
inline double analytic_pretest(double c, double coupling) {
  if (coupling <= 0.0) return 0.5;
  if (coupling >= 1.0) return c;
  double lo = std::max(0.0, (c - (1.0 - coupling)) / coupling);
  double hi = std::min(1.0, c / coupling);
  return 0.5 * (lo + hi);
}

inline std::vector<std::string> default_filler() {
  std::vector<std::string> out;
  char buf[8];
  for (int i = 0; i < 400; ++i) {
    std::snprintf(buf, sizeof buf, "f%03d", i);
    out.emplace_back(buf);
  }
  return out;
}

inline std::string context_token(std::size_t label_index, int k) {
  return "ctx" + std::to_string(label_index) + static_cast<char>('a' + k);
}

inline std::string planted_term(const NoteConfig& cfg, const std::string& label) {
  if (auto it = cfg.planted.find(label); it != cfg.planted.end()) return it->second;
  PhraseList defaults = default_phrase_list();
  if (auto it = defaults.find(label); it != defaults.end() && !it->second.empty())
    return it->second.front();
  std::string lower;
  for (char ch : label)
    lower.push_back(ch == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  return lower;
}

inline void validate(const NoteConfig& cfg, const std::vector<std::string>& labels) {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(cfg.plant_probability) || !unit(cfg.history_mention_rate) || !unit(cfg.context_rate))
    throw Error(ErrorKind::config, "note config probabilities must lie in [0,1]");
  if (cfg.min_notes < 1 || cfg.max_notes < cfg.min_notes || cfg.min_tokens < 1 ||
      cfg.max_tokens < cfg.min_tokens)
    throw Error(ErrorKind::config, "note config count ranges are invalid");
  const auto filler = cfg.filler.empty() ? default_filler() : cfg.filler;
  PhraseList phrases = default_phrase_list();
  for (const auto& label : labels) phrases[label].push_back(planted_term(cfg, label));
  for (const auto& tok : filler) {
    if (tok.size() < 2) throw Error(ErrorKind::config, "filler token '" + tok + "' is too short");
    for (char ch : tok)
      if (!std::isalnum(static_cast<unsigned char>(ch)) || std::isupper(static_cast<unsigned char>(ch)))
        throw Error(ErrorKind::config, "filler token '" + tok + "' must be lower-case alphanumeric");
    if (is_stopword(tok)) throw Error(ErrorKind::config, "filler token '" + tok + "' is a stop word");
    for (const auto& [label, list] : phrases)
      for (const auto& p : list)
        if (tok.find(p) != std::string::npos)
          throw Error(ErrorKind::config,
                      "filler token '" + tok + "' contains phrase '" + p + "' of " + label);
  }
}

inline void validate(const SynthConfig& cfg) {
  if (cfg.n < 10) throw Error(ErrorKind::config, "synth: n must be >= 10");
  if (!(cfg.coupling >= 0.0 && cfg.coupling <= 1.0))
    throw Error(ErrorKind::config, "synth: coupling must lie in [0,1]");
  if (!(cfg.scorer.lambda >= 0.0 && cfg.scorer.lambda <= 1.0))
    throw Error(ErrorKind::config, "synth: lambda must lie in [0,1]");
  if (!(cfg.noise_sd > 0.0)) throw Error(ErrorKind::config, "synth: noise_sd must be positive");
  if (!(cfg.context_noise >= 0.0)) throw Error(ErrorKind::config, "synth: context_noise must be >= 0");
  if (cfg.labels.empty()) throw Error(ErrorKind::config, "synth: at least one label is required");
  for (std::size_t i = 0; i < cfg.labels.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (cfg.labels[i] == cfg.labels[j])
        throw Error(ErrorKind::config, "synth: duplicate label " + cfg.labels[i]);
  if (cfg.notes) validate(*cfg.notes, cfg.labels);
}

namespace detail {

inline std::string padded(char prefix, std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%c%07zu", prefix, i);
  return buf;
}

inline Timestamp synth_epoch() { return parse_rfc3339("2180-01-01T00:00:00Z"); }

constexpr std::int64_t kMicrosPerHour = 3600LL * 1000000LL;

}  // namespace detail

/// Notes for already generated studies. Every study gets its own subject, so
/// all notes of a subject precede its only study.
inline std::vector<NoteRecord> generate_notes(const SynthDataset& data, const NoteConfig& cfg,
                                              const std::vector<std::string>& labels,
                                              std::uint64_t seed) {
  validate(cfg, labels);
  const auto filler = cfg.filler.empty() ? default_filler() : cfg.filler;
  std::vector<std::string> planted;
  for (const auto& l : labels) planted.push_back(planted_term(cfg, l));

  std::vector<NoteRecord> notes;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const StudyRecord& rec = data.records[i];
    Engine rng = make_engine(seed, {0x6e6f7465, i});
    std::uniform_int_distribution<int> n_notes(cfg.min_notes, cfg.max_notes);
    std::uniform_int_distribution<int> n_tokens(cfg.min_tokens, cfg.max_tokens);
    std::uniform_int_distribution<std::size_t> pick(0, filler.size() - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const int k = n_notes(rng);
    std::vector<std::vector<std::string>> bodies(k);
    for (auto& body : bodies) {
      int len = n_tokens(rng);
      for (int t = 0; t < len; ++t) body.push_back(filler[pick(rng)]);
    }
    std::uniform_int_distribution<int> which(0, k - 1);
    auto insert = [&](const std::string& term) {
      auto& body = bodies[which(rng)];
      std::uniform_int_distribution<std::size_t> pos(0, body.size());
      body.insert(body.begin() + static_cast<std::ptrdiff_t>(pos(rng)), term);
    };
    for (std::size_t l = 0; l < labels.size(); ++l) {
      const Latent& lat = data.latent[i].at(labels[l]);
      double p_mention =
          std::min(1.0, cfg.plant_probability * lat.y + cfg.history_mention_rate * lat.c);
      if (unif(rng) < p_mention) insert(planted[l]);
      for (int c = 0; c < 3; ++c)
        if (unif(rng) < cfg.context_rate * lat.c) insert(context_token(l, c));
    }

    const Timestamp study = rec.study_time.value_or(detail::synth_epoch());
    for (int j = 0; j < k; ++j) {
      NoteRecord n;
      n.note_id = rec.study_id + "-n" + std::to_string(j);
      n.subject_id = rec.subject_id;
      // note j is (k - j) days before the study, offset by up to 23 hours
      std::uniform_int_distribution<int> hours(1, 23);
      n.chart_time.micros = study.micros - static_cast<std::int64_t>(k - j) * 24 * detail::kMicrosPerHour -
                            hours(rng) * detail::kMicrosPerHour;
      for (const auto& tok : bodies[j]) {
        if (!n.text.empty()) n.text.push_back(' ');
        n.text += tok;
      }
      notes.push_back(std::move(n));
    }
  }
  return notes;
}

/// Draws a dataset from the context/label/score process. Deterministic in
/// the seed; each (record, label) pair has its own random stream.
inline SynthDataset generate(const SynthConfig& cfg) {
  validate(cfg);
  SynthDataset out;
  out.records.reserve(cfg.n);
  out.latent.reserve(cfg.n);
  const Timestamp epoch = detail::synth_epoch();
  for (std::size_t i = 0; i < cfg.n; ++i) {
    StudyRecord rec;
    rec.study_id = detail::padded('s', i);
    rec.subject_id = detail::padded('p', i);
    rec.study_time = Timestamp{epoch.micros + static_cast<std::int64_t>(i) * detail::kMicrosPerHour};
    std::map<std::string, Latent> lat_row;
    for (std::size_t l = 0; l < cfg.labels.size(); ++l) {
      Engine rng = make_engine(cfg.seed, {i, l});
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      std::normal_distribution<double> gauss(0.0, 1.0);
      Latent lat;
      lat.r = unif(rng);
      lat.u = unif(rng);
      lat.y = unif(rng) < lat.r ? 1 : 0;
      lat.c = cfg.coupling * lat.r + (1.0 - cfg.coupling) * lat.u;
      lat.pretest = analytic_pretest(lat.c, cfg.coupling);
      const double signal = 0.8 * lat.y + 0.1;
      double base = 0.0;
      switch (cfg.scorer.kind) {
        case ScorerKind::shortcut: base = lat.pretest; break;
        case ScorerKind::signal: base = signal; break;
        case ScorerKind::mixed:
          base = cfg.scorer.lambda * signal + (1.0 - cfg.scorer.lambda) * lat.pretest;
          break;
      }
      const double sd = cfg.noise_sd + cfg.context_noise * lat.pretest;
      lat.score = std::clamp(base + sd * gauss(rng), 0.0, 1.0);

      const std::string& label = cfg.labels[l];
      rec.labels[label] = lat.y ? RawLabel::positive : RawLabel::negative;
      rec.y[label] = lat.y;
      rec.score[label] = lat.score;
      rec.pretest[label] = lat.pretest;
      lat_row[label] = lat;
    }
    out.records.push_back(std::move(rec));
    out.latent.push_back(std::move(lat_row));
  }
  if (cfg.notes) {
    out.notes = generate_notes(out, *cfg.notes, cfg.labels, cfg.seed);
    link_notes(out.records, out.notes);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON configuration

inline NoteConfig note_config_from_json(const nlohmann::json& j) {
  NoteConfig c;
  if (!j.is_object()) throw Error(ErrorKind::config, "synth: notes must be an object");
  try {
    if (j.contains("filler")) c.filler = j.at("filler").get<std::vector<std::string>>();
    if (j.contains("planted")) c.planted = j.at("planted").get<std::map<std::string, std::string>>();
    c.plant_probability = j.value("plant_probability", c.plant_probability);
    c.history_mention_rate = j.value("history_mention_rate", c.history_mention_rate);
    c.context_rate = j.value("context_rate", c.context_rate);
    c.min_notes = j.value("min_notes", c.min_notes);
    c.max_notes = j.value("max_notes", c.max_notes);
    c.min_tokens = j.value("min_tokens", c.min_tokens);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("synth notes: ") + e.what());
  }
  return c;
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"n",       "coupling",      "scorer", "lambda",
                                              "noise_sd", "context_noise", "seed",   "labels",
                                              "notes"};
  if (!j.is_object()) throw Error(ErrorKind::config, "synth config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error(ErrorKind::config, "synth config: unknown field '" + key + "'");
  SynthConfig c;
  try {
    c.n = j.value("n", c.n);
    c.coupling = j.value("coupling", c.coupling);
    if (j.contains("scorer")) c.scorer.kind = parse_scorer(j.at("scorer").get<std::string>());
    c.scorer.lambda = j.value("lambda", c.scorer.lambda);
    c.noise_sd = j.value("noise_sd", c.noise_sd);
    c.context_noise = j.value("context_noise", c.context_noise);
    c.seed = j.value("seed", c.seed);
    if (j.contains("labels")) c.labels = j.at("labels").get<std::vector<std::string>>();
    if (j.contains("notes") && !j.at("notes").is_null()) c.notes = note_config_from_json(j.at("notes"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("synth config: ") + e.what());
  }
  validate(c);
  return c;
}

inline nlohmann::ordered_json to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["n"] = c.n;
  j["coupling"] = c.coupling;
  j["scorer"] = to_string(c.scorer.kind);
  j["lambda"] = c.scorer.lambda;
  j["noise_sd"] = c.noise_sd;
  j["context_noise"] = c.context_noise;
  j["seed"] = c.seed;
  j["labels"] = c.labels;
  if (c.notes) {
    nlohmann::ordered_json n;
    n["filler"] = c.notes->filler;
    n["planted"] = c.notes->planted;
    n["plant_probability"] = c.notes->plant_probability;
    n["history_mention_rate"] = c.notes->history_mention_rate;
    n["context_rate"] = c.notes->context_rate;
    n["min_notes"] = c.notes->min_notes;
    n["max_notes"] = c.notes->max_notes;
    n["min_tokens"] = c.notes->min_tokens;
    n["max_tokens"] = c.notes->max_tokens;
    j["notes"] = n;
  } else {
    j["notes"] = nullptr;
  }
  return j;
}

inline SynthConfig read_synth_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  try {
    return synth_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::config, path + ": " + e.what());
  }
}

/// Generative variables as CSV: study_id, label, r, u, c, y, pretest, score.
inline void write_latent(std::ostream& out, const SynthDataset& data) {
  csv::write_row(out, {"study_id", "label", "r", "u", "c", "y", "pretest", "score"});
  for (std::size_t i = 0; i < data.records.size(); ++i)
    for (const auto& [label, lat] : data.latent[i])
      csv::write_row(out, {data.records[i].study_id, label, csv::real(lat.r), csv::real(lat.u),
                           csv::real(lat.c), std::to_string(lat.y), csv::real(lat.pretest),
                           csv::real(lat.score)});
}

}  // namespace ctxstrata
