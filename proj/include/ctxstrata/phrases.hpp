#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxstrata/error.hpp"

namespace ctxstrata {

/// Label name -> substrings whose presence in prior notes counts as a prior
/// mention of that label.
using PhraseList = std::map<std::string, std::vector<std::string>>;

/// Prior-mention phrases adapted from the CheXpert labeler for discharge
/// summaries: terms too generic for clinical notes are dropped and
/// underscores are removed so the terms work as plain substrings.
inline PhraseList default_phrase_list() {
  return {
      {"Atelectasis", {"atelecta"}},
      {"Cardiomegaly",
       {"cardiomegaly", "heart size", "cardiac enlargement", "cardiac size", "cardiac shadow",
        "cardiac contour", "cardiac silhouette", "enlarged heart"}},
      {"Consolidation", {"consolidat"}},
      {"Edema",
       {"edema", "heart failure", "chf", "vascular congestion", "pulmonary congestion",
        "vascular prominence"}},
      {"Enlarged Cardiomediastinum",
       {"mediastinum", "cardiomediastinum", "mediastinal configuration",
        "mediastinal silhouette", "pericardial silhouette",
        "cardiac silhouette and vascularity"}},
      {"Fracture", {"fracture"}},
      {"Lung Lesion",
       {"nodular density", "nodular densities", "nodular opacity", "nodular opacities",
        "nodular opacification", "nodule", "cavitary lesion", "carcinoma", "neoplasm",
        "tumor"}},
      {"Lung Opacity",
       {"opaci", "decreased translucency", "airspace disease", "air-space disease",
        "air space disease", "infiltrate", "infiltration", "interstitial marking",
        "interstitial pattern", "interstitial lung", "reticular pattern", "reticular marking",
        "reticulation", "parenchymal scarring", "peribronchial thickening"}},
      {"Pleural Effusion", {"pleural fluid", "effusion"}},
      {"Pleural Other",
       {"pleural thickening", "fibrothorax", "pleural scar", "pleural parenchymal scar",
        "pleuro-parenchymal scar", "pleuro-pericardial scar"}},
      {"Pneumonia", {"pneumonia"}},
      {"Pneumothorax", {"pneumothorax", "pneumothoraces"}},
      {"Support Devices",
       {"pacer", "picc", "tube", "valve", "catheter", "pacemaker", "hardware", "arthroplast",
        "marker", "icd", "defib", "device", "drain", "plate", "screw", "cannula", "apparatus",
        "coil", "equipment", "mediport"}},
  };
}

inline PhraseList phrase_list_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::schema, "phrase list must be a JSON object");
  PhraseList out;
  for (const auto& [label, phrases] : j.items()) {
    if (!phrases.is_array())
      throw Error(ErrorKind::schema, "phrase list entry for " + label + " is not an array");
    for (const auto& p : phrases) {
      if (!p.is_string())
        throw Error(ErrorKind::schema, "phrase list entry for " + label + " has a non-string");
      out[label].push_back(p.get<std::string>());
    }
    out.try_emplace(label);
  }
  return out;
}

inline PhraseList read_phrase_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  try {
    return phrase_list_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::schema, path + ": " + e.what());
  }
}

inline nlohmann::ordered_json to_json(const PhraseList& list) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [label, phrases] : list) j[label] = phrases;
  return j;
}

}  // namespace ctxstrata
