#include <sstream>

#include <gtest/gtest.h>

#include "ctxstrata/matchset.hpp"
#include "ctxstrata/stratify.hpp"
#include "ctxstrata/synthlab.hpp"

using namespace ctxstrata;

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Largest |observed rate - mean pretest| over ten equal-width pretest bins.
double worst_bin_gap(const SynthDataset& d) {
  std::vector<double> sum_p(10), sum_y(10), count(10);
  for (const auto& row : d.latent) {
    const Latent& l = row.at("Edema");
    auto b = std::min<std::size_t>(9, static_cast<std::size_t>(l.pretest * 10));
    sum_p[b] += l.pretest;
    sum_y[b] += l.y;
    count[b] += 1;
  }
  double worst = 0;
  for (int b = 0; b < 10; ++b)
    if (count[b] > 0) worst = std::max(worst, std::abs(sum_y[b] - sum_p[b]) / count[b]);
  return worst;
}

}  // namespace

TEST(Synth, NoCouplingMeansNoContext) {
  SynthConfig cfg;
  cfg.coupling = 0.0;
  cfg.seed = 1;
  auto d = generate(cfg);
  std::vector<double> c, y;
  for (const auto& row : d.latent) {
    c.push_back(row.at("Edema").c);
    y.push_back(row.at("Edema").y);
  }
  EXPECT_LT(std::abs(correlation(c, y)), 0.05);
  double prev = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  EXPECT_GE(prev, 0.48);
  EXPECT_LE(prev, 0.52);
  for (const auto& r : d.records) EXPECT_EQ(r.pretest.at("Edema"), 0.5);
}

TEST(Synth, ShortcutScorerLooksGoodOnTheFullSet) {
  SynthConfig cfg;
  cfg.seed = 2;
  auto d = generate(cfg);
  EXPECT_GT(*auroc(label_columns(d.records, "Edema").y, label_columns(d.records, "Edema").score).value,
            0.75);
}

TEST(Synth, AnalyticPretestIsCalibrated) {
  for (double a : {1.0, 0.7, 0.5, 0.2}) {
    SynthConfig cfg;
    cfg.n = 40000;
    cfg.coupling = a;
    cfg.seed = 3;
    EXPECT_LT(worst_bin_gap(generate(cfg)), 0.03) << "coupling " << a;
  }
}

TEST(Synth, AnalyticPretestEdges) {
  EXPECT_EQ(analytic_pretest(0.3, 0.0), 0.5);
  EXPECT_EQ(analytic_pretest(0.3, 1.0), 0.3);
  EXPECT_DOUBLE_EQ(analytic_pretest(0.5, 0.5), 0.5);
  // c = 0.1 with a = 0.5: r in [0, 0.2]
  EXPECT_DOUBLE_EQ(analytic_pretest(0.1, 0.5), 0.1);
}

TEST(Synth, SignalScorerSurvivesMatching) {
  SynthConfig cfg;
  cfg.scorer.kind = ScorerKind::signal;
  cfg.seed = 4;
  auto d = generate(cfg);
  auto r = matched_eval(d.records, "Edema", {kDefaultMaxGap});
  EXPECT_LT(std::abs(*r.full.value - *r.matched.value), 0.03);
}

TEST(Synth, Deterministic) {
  SynthConfig cfg;
  cfg.n = 200;
  cfg.seed = 5;
  cfg.labels = {"Edema", "Atelectasis"};
  cfg.notes = NoteConfig{};
  auto a = generate(cfg);
  auto b = generate(cfg);
  std::ostringstream la, lb;
  write_latent(la, a);
  write_latent(lb, b);
  EXPECT_EQ(la.str(), lb.str());
  ASSERT_EQ(a.notes.size(), b.notes.size());
  for (std::size_t i = 0; i < a.notes.size(); ++i) EXPECT_EQ(a.notes[i].text, b.notes[i].text);
  cfg.seed = 6;
  std::ostringstream lc;
  write_latent(lc, generate(cfg));
  EXPECT_NE(lc.str(), la.str());
}

TEST(Synth, NotesPrecedeTheirStudy) {
  SynthConfig cfg;
  cfg.n = 300;
  cfg.seed = 7;
  cfg.notes = NoteConfig{};
  auto d = generate(cfg);
  NoteIndex index(d.notes);
  for (const auto& r : d.records) {
    auto prior = index.prior_notes(r);
    EXPECT_GE(prior.size(), 1u);
    EXPECT_LE(prior.size(), 3u);
    for (const NoteRecord* n : prior) {
      EXPECT_LT(n->chart_time, *r.study_time);
      EXPECT_EQ(n->subject_id, r.subject_id);
    }
  }
}

TEST(Synth, PlantingProbabilityControlsMentions) {
  for (double plant : {1.0, 0.0}) {
    SynthConfig cfg;
    cfg.n = 500;
    cfg.seed = 8;
    cfg.notes = NoteConfig{};
    cfg.notes->plant_probability = plant;
    auto d = generate(cfg);
    NoteIndex index(d.notes);
    auto m = mention_strata(d.records, index, default_phrase_list(), "Edema");
    for (const auto& r : d.records) {
      bool mentioned = m.assignment.at(r.study_id) == Mention::mentioned;
      EXPECT_EQ(mentioned, plant == 1.0 && r.y.at("Edema") == 1) << r.study_id;
    }
  }
}

TEST(Synth, ConfigErrors) {
  auto rejects = [](SynthConfig c) {
    try {
      validate(c);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::config;
    }
    return false;
  };
  SynthConfig c;
  c.coupling = 1.5;
  EXPECT_TRUE(rejects(c));
  c = {};
  c.noise_sd = 0;
  EXPECT_TRUE(rejects(c));
  c = {};
  c.labels = {"Edema", "Edema"};
  EXPECT_TRUE(rejects(c));
  c = {};
  c.notes = NoteConfig{};
  c.notes->filler = {"fine", "oedema"};
  EXPECT_TRUE(rejects(c));
  c.notes->filler = {"fine", "the"};
  EXPECT_TRUE(rejects(c));
  c.notes->filler = {"fine", "Caps"};
  EXPECT_TRUE(rejects(c));
  EXPECT_THROW(parse_scorer("oracle"), Error);
  EXPECT_THROW(synth_config_from_json(nlohmann::json::parse(R"({"n": 100, "bogus": 1})")), Error);
}

TEST(Synth, ConfigJsonRoundTrip) {
  SynthConfig c;
  c.n = 123;
  c.coupling = 0.4;
  c.scorer = {ScorerKind::mixed, 0.3};
  c.context_noise = 0.2;
  c.seed = 99;
  c.labels = {"Edema", "Pneumonia"};
  c.notes = NoteConfig{};
  c.notes->history_mention_rate = 0.25;
  auto back = synth_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}
