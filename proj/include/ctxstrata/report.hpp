#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "ctxstrata/csv.hpp"
#include "ctxstrata/error.hpp"
#include "ctxstrata/resample.hpp"

namespace ctxstrata {

inline constexpr const char* kToolName = "ctx-strata";
inline constexpr const char* kToolVersion = "0.1.0";

/// Hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256: digest init failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

struct InputDigest {
  std::string role;  // e.g. "predictions", "store/records.jsonl"
  std::string path;
  std::string sha256;
  std::uintmax_t bytes = 0;
};

inline InputDigest digest_input(const std::string& role, const std::filesystem::path& path) {
  return {role, path.string(), sha256_file(path), std::filesystem::file_size(path)};
}

/// Everything needed to reproduce a report. Wall-clock times are only
/// recorded on request so reruns stay byte-identical.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<InputDigest> inputs;
  std::uint64_t seed = 0;
  std::optional<std::string> started_at;
  std::optional<std::string> finished_at;
};

inline nlohmann::ordered_json to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& in : m.inputs)
    j["inputs"].push_back({{"role", in.role}, {"path", in.path}, {"sha256", in.sha256},
                           {"bytes", in.bytes}});
  if (m.started_at || m.finished_at) {
    j["timestamps"] = {{"started_at", m.started_at.value_or("")},
                       {"finished_at", m.finished_at.value_or("")}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Structured report

namespace detail {

inline nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json distribution_json(const std::optional<Distribution>& d,
                                                std::size_t iterations) {
  nlohmann::ordered_json j;
  j["mean"] = d ? nlohmann::ordered_json(d->mean) : nlohmann::ordered_json(nullptr);
  j["ci_low"] = d ? nlohmann::ordered_json(d->ci_low) : nlohmann::ordered_json(nullptr);
  j["ci_high"] = d ? nlohmann::ordered_json(d->ci_high) : nlohmann::ordered_json(nullptr);
  j["used"] = d ? d->used : 0;
  j["skipped"] = d ? d->skipped : iterations;
  return j;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const LabelReport& rep, std::size_t iterations) {
  nlohmann::ordered_json j;
  j["label"] = rep.label;
  j["error"] = rep.error ? nlohmann::ordered_json(*rep.error) : nlohmann::ordered_json(nullptr);
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : rep.groups) {
    nlohmann::ordered_json gj;
    gj["name"] = g.name;
    gj["n"] = g.n;
    gj["n_pos"] = g.n_pos;
    gj["point"] = detail::opt(g.point);
    gj.update(detail::distribution_json(g.boot, iterations));
    j["groups"].push_back(gj);
  }
  j["comparisons"] = nlohmann::ordered_json::array();
  for (const auto& d : rep.diffs) {
    nlohmann::ordered_json dj;
    dj["first"] = d.first;
    dj["second"] = d.second;
    dj["point"] = detail::opt(d.point);
    dj.update(detail::distribution_json(d.boot, iterations));
    dj["significant"] = d.significant();
    j["comparisons"].push_back(dj);
  }
  if (rep.matching) {
    const auto& m = *rep.matching;
    j["matching"] = {{"pairs", m.pairs},
                     {"matched_n", 2 * m.pairs},
                     {"total_cost", m.total_cost},
                     {"max_gap", m.max_gap},
                     {"max_gap_limit", detail::opt(m.max_gap_limit)},
                     {"unmatched", m.unmatched},
                     {"attrition", m.attrition},
                     {"mean_pairs_per_iteration", m.mean_pairs}};
  }
  return j;
}

/// `label_extra` holds per-label analysis details (stratum cut points,
/// excluded studies) merged into the label's object under "strata".
inline nlohmann::ordered_json report_json(
    const RunManifest& manifest, const StratumReport& report,
    const std::map<std::string, nlohmann::ordered_json>& label_extra = {}) {
  nlohmann::ordered_json j;
  j["manifest"] = to_json(manifest);
  j["analysis"] = report.analysis;
  j["bootstrap"] = {{"iterations", report.config.iterations},
                    {"seed", report.config.seed},
                    {"ci_low_percentile", report.config.ci_low},
                    {"ci_high_percentile", report.config.ci_high}};
  j["labels"] = nlohmann::ordered_json::array();
  for (const auto& rep : report.labels) {
    auto lj = to_json(rep, report.config.iterations);
    if (auto it = label_extra.find(rep.label); it != label_extra.end()) lj["strata"] = it->second;
    j["labels"].push_back(lj);
  }
  j["macro"] = report.macro ? to_json(*report.macro, report.config.iterations)
                            : nlohmann::ordered_json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Long-form plot table and text table

/// One row per (label, subgroup) AUROC and per (label, comparison)
/// difference.
inline void write_plot_table(std::ostream& out, const StratumReport& report) {
  csv::write_row(out, {"analysis", "label", "kind", "subgroup", "n", "point", "mean", "ci_low",
                       "ci_high", "skipped", "significant"});
  auto num = [](const std::optional<double>& v) { return v ? csv::real(*v) : std::string(); };
  auto emit = [&](const LabelReport& rep) {
    for (const auto& g : rep.groups) {
      csv::write_row(out, {report.analysis, rep.label, "auroc", g.name, std::to_string(g.n),
                           num(g.point), g.boot ? csv::real(g.boot->mean) : "",
                           g.boot ? csv::real(g.boot->ci_low) : "",
                           g.boot ? csv::real(g.boot->ci_high) : "",
                           std::to_string(g.boot ? g.boot->skipped : report.config.iterations), ""});
    }
    for (const auto& d : rep.diffs) {
      csv::write_row(out, {report.analysis, rep.label, "difference", d.first + "-" + d.second, "",
                           num(d.point), d.boot ? csv::real(d.boot->mean) : "",
                           d.boot ? csv::real(d.boot->ci_low) : "",
                           d.boot ? csv::real(d.boot->ci_high) : "",
                           std::to_string(d.boot ? d.boot->skipped : report.config.iterations),
                           d.significant() ? "true" : "false"});
    }
  };
  for (const auto& rep : report.labels) emit(rep);
  if (report.macro) emit(*report.macro);
}

inline void write_text_table(std::ostream& out, const StratumReport& report) {
  const double ci = report.config.ci_high - report.config.ci_low;
  std::ostringstream ci_name;
  ci_name << ci << "% CI";
  auto f3 = [](double v) { return csv::fixed(v, 3); };
  auto row = [&](const std::string& a, const std::string& b, const std::string& c,
                 const std::string& d, const std::string& e, const std::string& f) {
    out << std::left << std::setw(28) << a << std::setw(24) << b << std::right << std::setw(8) << c
        << std::setw(9) << d << std::setw(9) << e << "  " << f << '\n';
  };
  out << report.analysis << " analysis, " << report.config.iterations
      << " bootstrap iterations, seed " << report.config.seed << '\n';
  row("label", "subgroup", "n", "point", "mean", ci_name.str());
  auto emit = [&](const LabelReport& rep) {
    for (const auto& g : rep.groups)
      row(rep.label, g.name, std::to_string(g.n), g.point ? f3(*g.point) : "-",
          g.boot ? f3(g.boot->mean) : "-",
          g.boot ? "[" + f3(g.boot->ci_low) + ", " + f3(g.boot->ci_high) + "]" : "-");
    for (const auto& d : rep.diffs) {
      std::string ci_text =
          d.boot ? "[" + f3(d.boot->ci_low) + ", " + f3(d.boot->ci_high) + "]" : "-";
      if (d.significant()) ci_text += " *";
      if (d.boot && d.boot->skipped) ci_text += " (" + std::to_string(d.boot->skipped) + " skipped)";
      row(rep.label, d.first + " - " + d.second, "", d.point ? f3(*d.point) : "-",
          d.boot ? f3(d.boot->mean) : "-", ci_text);
    }
    if (rep.matching)
      out << "  " << rep.label << ": " << rep.matching->pairs << " pairs, "
          << rep.matching->attrition << " dropped by the gap limit, " << rep.matching->unmatched
          << " unmatched, max gap " << csv::fixed(rep.matching->max_gap, 4) << '\n';
    if (rep.error) out << "  " << rep.label << ": " << *rep.error << '\n';
  };
  for (const auto& rep : report.labels) emit(rep);
  if (report.macro) emit(*report.macro);
  out << "* difference " << ci_name.str() << " excludes 0\n";
}

inline void write_report_files(const std::filesystem::path& dir,
                               const nlohmann::ordered_json& report_json,
                               const StratumReport& report) {
  std::filesystem::create_directories(dir);
  std::ofstream j(dir / "report.json", std::ios::binary);
  if (!j) throw Error(ErrorKind::io, "cannot write " + (dir / "report.json").string());
  j << report_json.dump(2) << '\n';
  std::ofstream p(dir / "plot.csv", std::ios::binary);
  if (!p) throw Error(ErrorKind::io, "cannot write " + (dir / "plot.csv").string());
  write_plot_table(p, report);
}

}  // namespace ctxstrata
