// JSON front end for experiment configs and metrics, plus the confusion
// CSV emitter. Config errors carry the offending field name.
#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "dipv/io.hpp"
#include "dipv/pipeline.hpp"

namespace dipv {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline Protocol parse_protocol(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (s == "z/z" || s == "zz") return Protocol::kZZ;
  if (s == "z/so(3)" || s == "z/so3" || s == "zso3") return Protocol::kZSO3;
  if (s == "so(3)/so(3)" || s == "so3/so3" || s == "so3so3") return Protocol::kSO3SO3;
  throw ConfigError("protocol: expected one of z/z, z/SO(3), SO(3)/SO(3)");
}

inline std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kZZ: return "z/z";
    case Protocol::kZSO3: return "z/SO(3)";
    default: return "SO(3)/SO(3)";
  }
}

inline AggregationMode parse_aggregation(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (s == "dlp") return AggregationMode::kDlp;
  if (s == "sap") return AggregationMode::kSap;
  throw ConfigError("aggregation: expected dlp or sap");
}

inline FusionMode parse_fusion(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (s == "ca" || s == "cross_attention") return FusionMode::kCrossAttention;
  if (s == "gate") return FusionMode::kGate;
  if (s == "concat") return FusionMode::kConcat;
  if (s == "dasft_only" || s == "dasft") return FusionMode::kDasftOnly;
  throw ConfigError("fusion: expected ca, gate, concat or dasft_only");
}

inline std::string fusion_name(FusionMode f) {
  switch (f) {
    case FusionMode::kCrossAttention: return "ca";
    case FusionMode::kGate: return "gate";
    case FusionMode::kConcat: return "concat";
    default: return "dasft_only";
  }
}

inline GridMode parse_grid_mode(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (s == "linear") return GridMode::kLinear;
  if (s == "log" || s == "logarithmic") return GridMode::kLogarithmic;
  throw ConfigError("grid: expected linear or log");
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  auto get = [&j](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<std::decay_t<decltype(out)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string(key) + ": wrong type");
    }
  };

  if (j.contains("protocol")) cfg.protocol = parse_protocol(j.at("protocol").get<std::string>());
  if (j.contains("aggregation"))
    cfg.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  if (j.contains("fusion")) cfg.fusion = parse_fusion(j.at("fusion").get<std::string>());
  if (j.contains("grid")) cfg.grid = parse_grid_mode(j.at("grid").get<std::string>());

  get("k_neighbors", cfg.k_neighbors);
  get("n_dir", cfg.n_dir);
  get("f_min", cfg.f_min);
  get("f_max", cfg.f_max);
  get("m", cfg.m_freq);
  get("chunk_size", cfg.chunk_size);
  get("n_train_per_class", cfg.n_train_per_class);
  get("n_test_per_class", cfg.n_test_per_class);
  get("points_per_cloud", cfg.points_per_cloud);
  get("noise_sigma", cfg.noise_sigma);
  get("epochs", cfg.epochs);
  get("batch_size", cfg.batch_size);
  get("seed", cfg.seed);
  get("feature_dim", cfg.feature_dim);
  get("hidden_dim", cfg.hidden_dim);
  get("lr_start", cfg.lr_start);
  get("lr_end", cfg.lr_end);
  get("momentum", cfg.momentum);
  get("label_smoothing", cfg.label_smoothing);
  get("dropout_rate", cfg.dropout_rate);

  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {
        "protocol",    "aggregation",       "fusion",           "grid",
        "k_neighbors", "n_dir",             "f_min",            "f_max",
        "m",           "chunk_size",        "n_train_per_class","n_test_per_class",
        "points_per_cloud", "noise_sigma",  "epochs",           "batch_size",
        "seed",        "feature_dim",       "hidden_dim",       "lr_start",
        "lr_end",      "momentum",          "label_smoothing",  "dropout_rate"};
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(it.key() + ": unknown field");
  }

  try {
    cfg.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  return {{"protocol", protocol_name(cfg.protocol)},
          {"aggregation", cfg.aggregation == AggregationMode::kDlp ? "dlp" : "sap"},
          {"fusion", fusion_name(cfg.fusion)},
          {"grid", cfg.grid == GridMode::kLinear ? "linear" : "log"},
          {"k_neighbors", cfg.resolved_k()},
          {"n_dir", cfg.n_dir},
          {"f_min", cfg.f_min},
          {"f_max", cfg.f_max},
          {"m", cfg.m_freq},
          {"chunk_size", cfg.chunk_size},
          {"n_train_per_class", cfg.n_train_per_class},
          {"n_test_per_class", cfg.n_test_per_class},
          {"points_per_cloud", cfg.points_per_cloud},
          {"noise_sigma", cfg.noise_sigma},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"feature_dim", cfg.feature_dim},
          {"hidden_dim", cfg.hidden_dim},
          {"lr_start", cfg.lr_start},
          {"lr_end", cfg.lr_end},
          {"momentum", cfg.momentum},
          {"label_smoothing", cfg.label_smoothing},
          {"dropout_rate", cfg.dropout_rate}};
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return experiment_config_from_json(j);
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t i = 0; i < m.per_class_accuracy.size(); ++i)
    per_class[shape_class_name(i)] = m.per_class_accuracy[i];
  return {{"overall_accuracy", m.overall_accuracy},
          {"per_class_accuracy", per_class},
          {"confusion", m.confusion}};
}

inline void write_confusion_csv(std::ostream& out, const Metrics& m) {
  out << "true_class";
  for (std::size_t p = 0; p < kNumShapeClasses; ++p) out << ',' << shape_class_name(p);
  out << '\n';
  for (std::size_t t = 0; t < kNumShapeClasses; ++t) {
    out << shape_class_name(t);
    for (std::size_t p = 0; p < kNumShapeClasses; ++p) out << ',' << m.confusion[t][p];
    out << '\n';
  }
}

inline void write_confusion_csv(const std::string& path, const Metrics& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_confusion_csv(out, m);
}

}  // namespace dipv
