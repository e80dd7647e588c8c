#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctxstrata/calibration.hpp"
#include "ctxstrata/dataset.hpp"
#include "ctxstrata/error.hpp"
#include "ctxstrata/folds.hpp"
#include "ctxstrata/metrics.hpp"
#include "ctxstrata/stopwords.hpp"

namespace ctxstrata {

// ---------------------------------------------------------------------------
// Preprocessing

/// Lower-cases, splits on anything that is not an ASCII letter or digit,
/// keeps tokens of two or more characters, drops stop words, then collapses
/// immediately repeated tokens.
inline std::vector<std::string> preprocess(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2 && !is_stopword(cur) && (out.empty() || out.back() != cur))
      out.push_back(cur);
    cur.clear();
  };
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u >= 'A' && u <= 'Z') {
      cur.push_back(static_cast<char>(u - 'A' + 'a'));
    } else if ((u >= 'a' && u <= 'z') || (u >= '0' && u <= '9')) {
      cur.push_back(static_cast<char>(u));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

struct VocabularyOptions {
  std::size_t min_df = 5;       // absolute document count
  double max_df = 0.90;         // fraction of documents
  std::size_t max_features = 8192;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> tokens, VocabularyOptions options)
      : tokens_(std::move(tokens)), options_(options) {
    std::sort(tokens_.begin(), tokens_.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (i && tokens_[i] == tokens_[i - 1])
        throw Error(ErrorKind::value, "vocabulary: duplicate token " + tokens_[i]);
      index_.emplace(tokens_[i], static_cast<std::uint32_t>(i));
    }
  }

  const std::vector<std::string>& tokens() const { return tokens_; }
  const VocabularyOptions& options() const { return options_; }
  std::size_t size() const { return tokens_.size(); }

  std::optional<std::uint32_t> find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> tokens_;  // lexicographic
  std::unordered_map<std::string, std::uint32_t> index_;
  VocabularyOptions options_;
};

/// Keeps tokens whose document frequency is within [min_df, max_df * n_docs],
/// then the max_features most frequent of those by total count (ties broken
/// lexicographically).
inline Vocabulary fit_vocabulary(std::span<const std::vector<std::string>> corpus,
                                 VocabularyOptions options = {}) {
  if (corpus.empty())
    throw Error(ErrorKind::insufficient_data, "fit_vocabulary: empty corpus");
  struct Freq {
    std::size_t df = 0;
    std::size_t total = 0;
    std::size_t last_doc = std::numeric_limits<std::size_t>::max();
  };
  std::unordered_map<std::string, Freq> freq;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    for (const auto& tok : corpus[d]) {
      Freq& f = freq[tok];
      f.total += 1;
      if (f.last_doc != d) {
        f.df += 1;
        f.last_doc = d;
      }
    }
  }
  const double max_docs = options.max_df * static_cast<double>(corpus.size());
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, f] : freq)
    if (f.df >= options.min_df && static_cast<double>(f.df) <= max_docs)
      kept.emplace_back(tok, f.total);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (kept.size() > options.max_features) kept.resize(options.max_features);
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, _] : kept) tokens.push_back(std::move(tok));
  return Vocabulary(std::move(tokens), options);
}

// ---------------------------------------------------------------------------
// Count vectors

/// Sparse term-count vector, sorted by feature index.
using SparseCounts = std::vector<std::pair<std::uint32_t, double>>;

inline SparseCounts vectorize(std::span<const std::string> tokens, const Vocabulary& vocab) {
  std::map<std::uint32_t, double> counts;
  for (const auto& t : tokens)
    if (auto idx = vocab.find(t)) counts[*idx] += 1.0;
  return SparseCounts(counts.begin(), counts.end());
}

inline SparseCounts add_counts(const SparseCounts& a, const SparseCounts& b) {
  SparseCounts out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
      out.push_back(a[i++]);
    } else if (i == a.size() || b[j].first < a[i].first) {
      out.push_back(b[j++]);
    } else {
      out.emplace_back(a[i].first, a[i].second + b[j].second);
      ++i;
      ++j;
    }
  }
  return out;
}

/// Counts summed over each prior note, vectorized separately.
inline SparseCounts note_counts(std::span<const NoteRecord* const> notes,
                                const Vocabulary& vocab) {
  SparseCounts total;
  for (const NoteRecord* n : notes) total = add_counts(total, vectorize(preprocess(n->text), vocab));
  return total;
}

// ---------------------------------------------------------------------------
// L2-regularised logistic regression

struct LogisticOptions {
  int max_iterations = 2000;
  double gradient_tolerance = 1e-5;  // max-norm of the full gradient
  bool fit_intercept = true;
};

struct LogisticFit {
  std::vector<double> weights;
  double intercept = 0.0;
  double regularization = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double log1pexp(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

inline double dot(const SparseCounts& x, const std::vector<double>& w) {
  double s = 0.0;
  for (const auto& [j, v] : x) s += v * w[j];
  return s;
}

}  // namespace detail

/// Mean log-loss plus (strength / 2) * ||weights||^2; the intercept is not
/// penalised.
inline double logistic_objective(std::span<const SparseCounts> rows, std::span<const int> y,
                                 std::span<const double> weights, double intercept,
                                 double strength) {
  double loss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double z = intercept;
    for (const auto& [j, v] : rows[i]) z += v * weights[j];
    loss += detail::log1pexp(z) - (y[i] ? z : 0.0);
  }
  loss /= static_cast<double>(rows.size());
  double sq = 0.0;
  for (double w : weights) sq += w * w;
  return loss + 0.5 * strength * sq;
}

/// Full-batch gradient descent with Armijo backtracking, started from zero.
inline LogisticFit fit_logistic(std::span<const SparseCounts> rows, std::span<const int> y,
                                std::size_t n_features, double strength,
                                const LogisticOptions& options = {}) {
  if (rows.size() != y.size()) throw Error(ErrorKind::shape, "fit_logistic: length mismatch");
  if (rows.empty()) throw Error(ErrorKind::insufficient_data, "fit_logistic: no rows");
  if (!(strength > 0.0)) throw Error(ErrorKind::config, "regularization must be positive");

  const double inv_n = 1.0 / static_cast<double>(rows.size());
  LogisticFit fit;
  fit.regularization = strength;
  fit.weights.assign(n_features, 0.0);
  std::vector<double> grad(n_features), trial(n_features);
  std::vector<double> z(rows.size());

  auto objective_at = [&](const std::vector<double>& w, double b) {
    return logistic_objective(rows, y, w, b, strength);
  };

  double f = objective_at(fit.weights, fit.intercept);
  double step = 1.0;
  for (int it = 0; it < options.max_iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double r = (detail::sigmoid(fit.intercept + detail::dot(rows[i], fit.weights)) -
                  (y[i] ? 1.0 : 0.0)) * inv_n;
      grad_b += r;
      for (const auto& [j, v] : rows[i]) grad[j] += r * v;
    }
    double sq = 0.0, max_abs = 0.0;
    for (std::size_t j = 0; j < n_features; ++j) {
      grad[j] += strength * fit.weights[j];
      sq += grad[j] * grad[j];
      max_abs = std::max(max_abs, std::abs(grad[j]));
    }
    if (!options.fit_intercept) grad_b = 0.0;
    sq += grad_b * grad_b;
    max_abs = std::max(max_abs, std::abs(grad_b));
    fit.iterations = it;
    if (max_abs <= options.gradient_tolerance) {
      fit.converged = true;
      return fit;
    }

    step = std::min(step * 2.0, 1e6);
    double f_new = 0.0, b_new = 0.0;
    for (int backtrack = 0; backtrack < 60; ++backtrack) {
      for (std::size_t j = 0; j < n_features; ++j) trial[j] = fit.weights[j] - step * grad[j];
      b_new = fit.intercept - step * grad_b;
      f_new = objective_at(trial, b_new);
      if (f_new <= f - 0.5 * step * sq) break;
      step *= 0.5;
    }
    if (!(f_new < f)) {
      // No representable decrease left; treat as converged to precision.
      fit.converged = true;
      return fit;
    }
    fit.weights.swap(trial);
    fit.intercept = b_new;
    f = f_new;
  }
  fit.iterations = options.max_iterations;
  return fit;
}

inline double predict_logistic(const LogisticFit& fit, const SparseCounts& x) {
  return detail::sigmoid(fit.intercept + detail::dot(x, fit.weights));
}

// ---------------------------------------------------------------------------
// Model selection

struct CvRow {
  double regularization = 0.0;
  double mean_auroc = 0.0;
  std::vector<double> fold_auroc;  // NaN for folds with a single class
};

struct TrainOptions {
  std::vector<double> grid{1e-4, 1e-3, 1e-2, 1e-1};
  int folds = 5;
  std::uint64_t seed = 0;
  LogisticOptions logistic;
};

struct TrainResult {
  LogisticFit fit;                      // refit on all rows at the selected strength
  std::vector<CvRow> cv;                // one row per grid value, grid order
  std::vector<double> out_of_fold;      // held-out scores at the selected strength
  std::vector<std::string> warnings;    // e.g. non-convergence
};

/// Grid search by grouped, stratified k-fold cross-validation on mean held-out
/// AUROC. Ties go to the larger regularization strength. The returned model is
/// refit on every row at the winning strength.
inline TrainResult train_risk_model(std::span<const SparseCounts> rows, std::span<const int> y,
                                    std::span<const std::string> groups,
                                    std::size_t n_features, const TrainOptions& options = {}) {
  if (rows.size() != y.size() || rows.size() != groups.size())
    throw Error(ErrorKind::shape, "train_risk_model: input lengths differ");
  std::size_t positives = 0;
  for (int v : y) positives += v ? 1 : 0;
  if (positives == 0 || positives == y.size())
    throw Error(ErrorKind::degenerate_target, "train_risk_model: targets must contain both classes");
  if (options.grid.empty()) throw Error(ErrorKind::config, "train_risk_model: empty grid");

  std::vector<int> fold = group_stratified_folds(groups, y, options.folds, options.seed);
  TrainResult result;
  std::vector<std::vector<double>> oof_per_grid;

  for (double strength : options.grid) {
    CvRow row;
    row.regularization = strength;
    std::vector<double> oof(rows.size(), 0.0);
    double sum = 0.0;
    std::size_t used = 0;
    for (int f = 0; f < options.folds; ++f) {
      std::vector<SparseCounts> train_x;
      std::vector<int> train_y;
      std::vector<std::size_t> test_idx;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (fold[i] == f) {
          test_idx.push_back(i);
        } else {
          train_x.push_back(rows[i]);
          train_y.push_back(y[i]);
        }
      }
      LogisticFit fit = fit_logistic(train_x, train_y, n_features, strength, options.logistic);
      if (!fit.converged)
        result.warnings.push_back("fold " + std::to_string(f) + " at regularization " +
                                  csv::real(strength) + " hit the iteration cap");
      std::vector<int> ty;
      std::vector<double> ts;
      for (std::size_t i : test_idx) {
        oof[i] = predict_logistic(fit, rows[i]);
        ty.push_back(y[i]);
        ts.push_back(oof[i]);
      }
      AurocResult a = test_idx.empty() ? AurocResult{} : auroc(ty, ts);
      row.fold_auroc.push_back(a.value.value_or(std::numeric_limits<double>::quiet_NaN()));
      if (a.defined()) {
        sum += *a.value;
        ++used;
      }
    }
    row.mean_auroc = used ? sum / static_cast<double>(used)
                          : std::numeric_limits<double>::quiet_NaN();
    result.cv.push_back(std::move(row));
    oof_per_grid.push_back(std::move(oof));
  }

  std::size_t best = result.cv.size();
  for (std::size_t g = 0; g < result.cv.size(); ++g) {
    const double m = result.cv[g].mean_auroc;
    if (std::isnan(m)) continue;
    if (best == result.cv.size() || m > result.cv[best].mean_auroc ||
        (m == result.cv[best].mean_auroc &&
         result.cv[g].regularization > result.cv[best].regularization))
      best = g;
  }
  if (best == result.cv.size())
    throw Error(ErrorKind::undefined_metric, "train_risk_model: no fold produced an AUROC");

  result.fit = fit_logistic(rows, y, n_features, result.cv[best].regularization, options.logistic);
  if (!result.fit.converged) result.warnings.push_back("final refit hit the iteration cap");
  result.out_of_fold = std::move(oof_per_grid[best]);
  return result;
}

// ---------------------------------------------------------------------------
// Fitted text-risk model

enum class NoContextPolicy { error, prevalence };

struct TextRiskModel {
  std::string label;
  Vocabulary vocabulary;
  LogisticFit fit;
  double prevalence = 0.0;  // training positive rate, used by the fallback policy
  std::optional<IsotonicMap> calibration;
  std::vector<CvRow> cv;
  std::vector<std::string> warnings;

  double coefficient(const std::string& token) const {
    auto idx = vocabulary.find(token);
    return idx ? fit.weights[*idx] : 0.0;
  }
};

/// Tokens ranked by |coefficient|, ties broken by token.
inline std::vector<std::pair<std::string, double>> top_features(const TextRiskModel& model,
                                                                std::size_t k = 10) {
  std::vector<std::pair<std::string, double>> ranked;
  const auto& tokens = model.vocabulary.tokens();
  ranked.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i)
    ranked.emplace_back(tokens[i], std::abs(model.fit.weights[i]));
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

/// Raw (uncalibrated) probability from summed prior-note counts.
inline double raw_risk(const TextRiskModel& model, const SparseCounts& counts) {
  return predict_logistic(model.fit, counts);
}

/// Pre-test probability from the notes preceding a study: counts summed over
/// notes, logistic score, then the attached calibration map if any.
inline double predict_pretest(const TextRiskModel& model,
                              std::span<const NoteRecord* const> prior_notes,
                              NoContextPolicy policy = NoContextPolicy::error) {
  if (prior_notes.empty()) {
    if (policy == NoContextPolicy::prevalence) return model.prevalence;
    throw Error(ErrorKind::no_context, "no prior notes for study");
  }
  double p = raw_risk(model, note_counts(prior_notes, model.vocabulary));
  if (model.calibration) p = (*model.calibration)(p);
  return std::clamp(p, 0.0, 1.0);
}

/// Study-level training data for one label: one row per record with at least
/// one prior note.
struct TextTrainingSet {
  std::vector<std::string> study_ids;
  std::vector<std::string> groups;
  std::vector<std::vector<std::string>> documents;   // per-note token lists, concatenated
  std::vector<std::vector<std::vector<std::string>>> note_tokens;
  std::vector<int> y;
};

inline TextTrainingSet build_training_set(std::span<const StudyRecord> records,
                                          const NoteIndex& notes, const std::string& label) {
  TextTrainingSet set;
  for (const auto& rec : records) {
    auto yl = rec.y.find(label);
    if (yl == rec.y.end()) continue;
    auto prior = notes.prior_notes(rec);
    if (prior.empty()) continue;
    std::vector<std::vector<std::string>> per_note;
    std::vector<std::string> doc;
    for (const NoteRecord* n : prior) {
      per_note.push_back(preprocess(n->text));
      doc.insert(doc.end(), per_note.back().begin(), per_note.back().end());
    }
    set.study_ids.push_back(rec.study_id);
    set.groups.push_back(rec.subject_id);
    set.documents.push_back(std::move(doc));
    set.note_tokens.push_back(std::move(per_note));
    set.y.push_back(yl->second);
  }
  return set;
}

struct TextModelOptions {
  VocabularyOptions vocabulary;
  TrainOptions training;
  bool calibrate = true;
};

/// Vocabulary, grid-searched classifier and (optionally) a cross-validated
/// isotonic calibrator fit on the out-of-fold scores.
inline TextRiskModel train_text_model(const TextTrainingSet& set, const std::string& label,
                                      const TextModelOptions& options = {}) {
  if (set.y.empty())
    throw Error(ErrorKind::insufficient_data, "no studies with prior notes for label " + label);
  TextRiskModel model;
  model.label = label;
  model.vocabulary = fit_vocabulary(set.documents, options.vocabulary);

  std::vector<SparseCounts> rows;
  rows.reserve(set.y.size());
  for (const auto& notes : set.note_tokens) {
    SparseCounts total;
    for (const auto& toks : notes) total = add_counts(total, vectorize(toks, model.vocabulary));
    rows.push_back(std::move(total));
  }
  TrainResult trained = train_risk_model(rows, set.y, set.groups, model.vocabulary.size(),
                                         options.training);
  model.fit = std::move(trained.fit);
  model.cv = std::move(trained.cv);
  model.warnings = std::move(trained.warnings);
  std::size_t positives = 0;
  for (int v : set.y) positives += v ? 1 : 0;
  model.prevalence = static_cast<double>(positives) / static_cast<double>(set.y.size());

  if (options.calibrate) {
    std::vector<CalibrationSample> samples;
    samples.reserve(set.y.size());
    for (std::size_t i = 0; i < set.y.size(); ++i)
      samples.push_back({set.groups[i], trained.out_of_fold[i], set.y[i]});
    model.calibration = calibrate_cv(samples, options.training.folds, options.training.seed);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const TextRiskModel& model) {
  nlohmann::ordered_json j;
  j["format"] = "ctx-strata.text-model";
  j["version"] = 1;
  j["label"] = model.label;
  j["stopwords"] = std::string(kStopwordListVersion);
  j["min_df"] = model.vocabulary.options().min_df;
  j["max_df"] = model.vocabulary.options().max_df;
  j["max_features"] = model.vocabulary.options().max_features;
  j["vocabulary"] = model.vocabulary.tokens();
  j["coefficients"] = model.fit.weights;
  j["intercept"] = model.fit.intercept;
  j["regularization"] = model.fit.regularization;
  j["converged"] = model.fit.converged;
  j["prevalence"] = model.prevalence;
  nlohmann::ordered_json cv = nlohmann::ordered_json::array();
  for (const auto& row : model.cv) {
    nlohmann::ordered_json r;
    r["regularization"] = row.regularization;
    r["mean_auroc"] = row.mean_auroc;
    cv.push_back(r);
  }
  j["cv"] = cv;
  j["calibration"] = model.calibration ? to_json(*model.calibration)
                                       : nlohmann::ordered_json(nullptr);
  j["warnings"] = model.warnings;
  return j;
}

inline TextRiskModel text_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "ctx-strata.text-model")
      throw Error(ErrorKind::schema, "not a text model file");
    if (j.at("stopwords").get<std::string>() != kStopwordListVersion)
      throw Error(ErrorKind::schema, "text model uses stop-word list " +
                                         j.at("stopwords").get<std::string>());
    TextRiskModel model;
    model.label = j.at("label").get<std::string>();
    VocabularyOptions vo;
    vo.min_df = j.at("min_df").get<std::size_t>();
    vo.max_df = j.at("max_df").get<double>();
    vo.max_features = j.at("max_features").get<std::size_t>();
    model.vocabulary = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>(), vo);
    model.fit.weights = j.at("coefficients").get<std::vector<double>>();
    if (model.fit.weights.size() != model.vocabulary.size())
      throw Error(ErrorKind::schema, "text model: coefficient count != vocabulary size");
    model.fit.intercept = j.at("intercept").get<double>();
    model.fit.regularization = j.at("regularization").get<double>();
    model.fit.converged = j.at("converged").get<bool>();
    model.prevalence = j.at("prevalence").get<double>();
    if (!j.at("calibration").is_null()) model.calibration = isotonic_from_json(j.at("calibration"));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("text model: ") + e.what());
  }
}

}  // namespace ctxstrata
