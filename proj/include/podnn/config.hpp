#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "podnn/common.hpp"
#include "podnn/eval.hpp"
#include "podnn/fom.hpp"

// Declarative pipeline configuration: flat sectioned key=value text with units
// in the key names (t_end_s, temp_min_c, load_min_w).  Temperatures are given
// in Celsius everywhere; radiation models convert to Kelvin internally.

namespace podnn::config {

struct IniFile {
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::vector<std::string> section_order;  // first-seen order

  static IniFile parse(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<std::string> sections_with_prefix(const std::string& prefix) const;
};

double parse_double(const std::string& text, const std::string& what);
int parse_int(const std::string& text, const std::string& what);
std::vector<std::string> split_list(const std::string& text);

struct TestSpec {
  std::string label;
  double t0_c = 0.0;  // Celsius in the file
  sampling::SignalKind kind = sampling::SignalKind::Constant;
  double const_load = 0.0;
  double poly_a = 0.0, poly_b = 0.0, poly_c = 0.0, poly_d = 0.0;
};

struct ModelConfig {
  std::string name;
  fom::ModelKind kind = fom::ModelKind::HeatSink;

  // geometry, meaning depends on kind
  int chip_cells = 10, fin_cells = 40;    // heat sink
  int plate_cells = 25;                   // gap radiation
  double emissivity_coeff = 0.0;          // gap radiation, 0 = builder default
  int n_state = 16;                       // synthetic
  double quad_gain = 0.0;                 // synthetic, 0 = builder default

  double t_end_s = 0.0;  // 0 = builder default
  int k_steps = 100;

  bool space_override = false;
  double temp_min_c = 0.0, temp_max_c = 0.0;
  double load_min_w = 0.0, load_max_w = 0.0;

  std::vector<TestSpec> tests;
};

struct PipelineConfig {
  std::vector<ModelConfig> models;
  std::vector<pod::SamplingKind> samplings;
  std::vector<surrogate::Mode> archs;
  sampling::SamplingMethod method = sampling::SamplingMethod::Halton;
  std::uint64_t seed = 42;
  int n_s = 30;

  std::vector<int> n_r_list;
  bool center_pod = false;

  surrogate::TrainingConfig training;
  int ensemble = 10;
  int hidden = 32;
  surrogate::Activation activation = surrogate::Activation::Relu;

  int ref_substep_multiplier = 10;
  int jobs = 1;

  bool step_study = false;
  std::string step_study_model, step_study_test;
  pod::SamplingKind step_study_sampling = pod::SamplingKind::Dps;
  int step_study_n_r = 5;
  std::vector<double> step_factors;  // step scale f: evaluate at tau' = f * tau

  std::string out_dir = "out";

  std::string raw_text;  // echoed into artifacts
  std::string sha256;

  static PipelineConfig from_text(const std::string& text);
  static PipelineConfig load(const std::string& path);
};

// Celsius -> internal model units (Kelvin for radiation models).
double to_model_temperature(fom::ModelKind kind, double celsius);

fom::FomModel build_model(const ModelConfig& mc);
eval::TestCase build_test(const fom::FomModel& model, const ModelConfig& mc,
                          const TestSpec& test);
eval::MatrixSpec to_matrix_spec(const PipelineConfig& cfg);

}  // namespace podnn::config
