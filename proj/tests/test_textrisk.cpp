#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "ctxstrata/synthlab.hpp"
#include "ctxstrata/textrisk.hpp"
#include "oracles.hpp"

using namespace ctxstrata;

using Tokens = std::vector<std::string>;

TEST(Preprocess, HandTrace) {
  EXPECT_EQ(preprocess("Left CLAVICLE fracture, fracture noted."),
            (Tokens{"left", "clavicle", "fracture", "noted"}));
  EXPECT_TRUE(preprocess("").empty());
  EXPECT_TRUE(preprocess("a I x").empty());
}

TEST(Preprocess, RepeatsCollapseAfterStopWordRemoval) {
  EXPECT_EQ(preprocess("edema the edema"), (Tokens{"edema"}));
  EXPECT_EQ(preprocess("edema pleural edema"), (Tokens{"edema", "pleural", "edema"}));
}

TEST(Preprocess, Idempotent) {
  for (std::string text : {"Hx of CHF; CHF exacerbation 2x, s/p CABG.", "no  acute\tdistress!!",
                           "Pt was was was seen"}) {
    auto once = preprocess(text);
    std::string joined;
    for (const auto& t : once) joined += t + " ";
    EXPECT_EQ(preprocess(joined), once);
  }
}

TEST(Stopwords, HeaderMatchesDataFile) {
  std::ifstream in(std::string(CTXSTRATA_DATA_DIR) + "/stopwords-en-v1.txt");
  ASSERT_TRUE(in);
  std::vector<std::string> words;
  for (std::string w; std::getline(in, w);)
    if (!w.empty()) words.push_back(w);
  ASSERT_EQ(words.size(), kEnglishStopwords.size());
  for (std::size_t i = 0; i < words.size(); ++i) EXPECT_EQ(words[i], kEnglishStopwords[i]);
  EXPECT_TRUE(std::is_sorted(kEnglishStopwords.begin(), kEnglishStopwords.end()));
  EXPECT_EQ(std::string(kStopwordListVersion), "en-v1");
}

TEST(Vocabulary, DocumentFrequencyBounds) {
  std::vector<Tokens> corpus(1000);
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    corpus[d].push_back("filler" + std::to_string(d % 10));
    if (d < 4) corpus[d].push_back("rare");
    if (d < 950) corpus[d].push_back("common");
    if (d < 5) corpus[d].push_back("five");
  }
  auto v = fit_vocabulary(corpus);
  EXPECT_FALSE(v.find("rare"));
  EXPECT_FALSE(v.find("common"));
  EXPECT_TRUE(v.find("five"));
  EXPECT_EQ(v.size(), 11u);
}

TEST(Vocabulary, CapBreaksTiesLexicographically) {
  std::vector<Tokens> corpus(10, Tokens{"bb", "aa", "cc", "cc"});
  VocabularyOptions opt;
  opt.min_df = 1;
  opt.max_df = 1.0;
  opt.max_features = 2;
  auto v = fit_vocabulary(corpus, opt);
  EXPECT_EQ(v.tokens(), (Tokens{"aa", "cc"}));
}

TEST(Vectorize, CountsAreAdditive) {
  std::vector<Tokens> corpus(6, Tokens{"edema", "chf", "lasix"});
  VocabularyOptions opt;
  opt.min_df = 1;
  opt.max_df = 1.0;
  auto v = fit_vocabulary(corpus, opt);
  Tokens a{"edema", "chf", "unknown"}, b{"edema", "lasix"};
  Tokens ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  EXPECT_EQ(add_counts(vectorize(a, v), vectorize(b, v)), vectorize(ab, v));
}

namespace {

double profiled_objective(const std::vector<SparseCounts>& rows, const std::vector<int>& y,
                          double w0, double w1, double strength) {
  std::vector<double> w{w0, w1};
  auto f = [&](double b) { return logistic_objective(rows, y, w, b, strength); };
  double lo = -20, hi = 20;  // convex in b: golden-section search
  for (int i = 0; i < 200; ++i) {
    double m1 = lo + (hi - lo) * 0.382, m2 = lo + (hi - lo) * 0.618;
    (f(m1) < f(m2) ? hi : lo) = f(m1) < f(m2) ? m2 : m1;
  }
  return f(0.5 * (lo + hi));
}

}  // namespace

TEST(Logistic, NoWorseThanCoefficientGrid) {
  std::vector<SparseCounts> rows{{{0, 1.0}}, {{0, 2.0}, {1, 1.0}}, {{1, 3.0}},
                                 {{0, 1.0}, {1, 1.0}}, {}, {{1, 1.0}}};
  std::vector<int> y{1, 1, 0, 0, 1, 0};
  const double strength = 1e-2;
  auto fit = fit_logistic(rows, y, 2, strength);
  double got = logistic_objective(rows, y, fit.weights, fit.intercept, strength);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 100; ++i)
    for (int j = 0; j <= 100; ++j)
      best = std::min(best, profiled_objective(rows, y, -5 + 0.1 * i, -5 + 0.1 * j, strength));
  EXPECT_LE(got, best + 1e-4);
}

TEST(Logistic, ZeroColumnGetsNoWeight) {
  std::vector<SparseCounts> rows{{{0, 1.0}}, {{0, 1.0}}, {}, {}};
  std::vector<int> y{1, 1, 0, 0};
  for (double strength : {1e-4, 1e-2, 1.0}) {
    auto fit = fit_logistic(rows, y, 2, strength);
    EXPECT_LT(std::abs(fit.weights[1]), 1e-6);
    EXPECT_GT(fit.weights[0], 0.0);
  }
}

TEST(TrainRiskModel, PerfectFeatureRanksFirst) {
  std::mt19937_64 rng(4);
  std::vector<SparseCounts> rows;
  std::vector<int> y;
  std::vector<std::string> groups;
  for (int i = 0; i < 200; ++i) {
    int t = i % 2;
    SparseCounts x;
    if (t) x.push_back({0, 1.0});
    for (std::uint32_t j = 1; j < 6; ++j)
      if (std::bernoulli_distribution(0.5)(rng)) x.push_back({j, 1.0});
    rows.push_back(x);
    y.push_back(t);
    groups.push_back("p" + std::to_string(i / 2));
  }
  auto res = train_risk_model(rows, y, groups, 6, {});
  ASSERT_EQ(res.cv.size(), 4u);
  double top = std::abs(res.fit.weights[0]);
  EXPECT_GT(res.fit.weights[0], 0.0);
  for (std::size_t j = 1; j < 6; ++j) EXPECT_LT(std::abs(res.fit.weights[j]), top);
  // every grid value separates perfectly -> tie -> largest strength
  EXPECT_EQ(res.fit.regularization, 1e-1);
}

TEST(TopFeatures, ZeroModelOrdersLexicographically) {
  TextRiskModel m;
  m.vocabulary = Vocabulary({"b", "c", "a"}, {});
  m.fit.weights = {0.0, 0.0, 0.0};
  auto top = top_features(m, 10);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].first, "a");
  EXPECT_EQ(top[2].first, "c");
  for (const auto& [_, v] : top) EXPECT_EQ(v, 0.0);
}

TEST(PredictPretest, ContextRules) {
  TextRiskModel m;
  m.vocabulary = Vocabulary({"chf", "edema"}, {});
  m.fit.weights = {0.5, 1.5};
  m.fit.intercept = -1.0;
  m.prevalence = 0.3;
  std::vector<const NoteRecord*> none;
  try {
    predict_pretest(m, none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::no_context);
  }
  EXPECT_EQ(predict_pretest(m, none, NoContextPolicy::prevalence), 0.3);

  NoteRecord blank{"n0", "p", {}, "nothing relevant here"};
  std::vector<const NoteRecord*> one{&blank};
  EXPECT_DOUBLE_EQ(predict_pretest(m, one), 1.0 / (1.0 + std::exp(1.0)));

  NoteRecord a{"n1", "p", {}, "history of chf"}, b{"n2", "p", {}, "edema on exam"},
      ab{"n3", "p", {}, "history of chf edema on exam"};
  std::vector<const NoteRecord*> two{&a, &b}, joined{&ab};
  EXPECT_EQ(predict_pretest(m, two), predict_pretest(m, joined));
}

TEST(TextModel, PlantedTermRanksFirstAndSerialises) {
  SynthConfig sc;
  sc.n = 1000;
  sc.seed = 21;
  sc.notes = NoteConfig{};
  sc.notes->plant_probability = 0.8;
  auto data = generate(sc);
  NoteIndex index(data.notes);
  auto set = build_training_set(data.records, index, "Edema");
  TextModelOptions opt;
  opt.training.grid = {1e-2, 1e-1};
  auto model = train_text_model(set, "Edema", opt);
  auto top = top_features(model, 10);
  EXPECT_EQ(top.front().first, "edema");
  EXPECT_TRUE(model.calibration.has_value());

  auto back = text_model_from_json(nlohmann::json::parse(to_json(model).dump()));
  EXPECT_EQ(back.vocabulary.tokens(), model.vocabulary.tokens());
  EXPECT_EQ(back.fit.weights, model.fit.weights);
  auto prior = index.prior_notes(data.records[3]);
  EXPECT_EQ(predict_pretest(back, prior), predict_pretest(model, prior));
}
