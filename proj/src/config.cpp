#include "podnn/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>

#include "podnn/artifact_io.hpp"

namespace podnn::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

IniFile IniFile::parse(const std::string& text) {
  IniFile ini;
  std::string section;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = (nl == std::string::npos) ? text.size() + 1 : nl + 1;
    ++lineno;

    const std::size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        fail(ErrorKind::Config, "config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        fail(ErrorKind::Config, "config line " + std::to_string(lineno) + ": empty section name");
      if (ini.sections.find(section) == ini.sections.end()) {
        ini.sections[section] = {};
        ini.section_order.push_back(section);
      }
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::Config,
           "config line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      fail(ErrorKind::Config, "config line " + std::to_string(lineno) + ": empty key");
    if (section.empty())
      fail(ErrorKind::Config,
           "config line " + std::to_string(lineno) + ": key '" + key + "' outside any section");
    ini.sections[section][key] = value;
  }
  return ini;
}

bool IniFile::has(const std::string& section, const std::string& key) const {
  auto it = sections.find(section);
  return it != sections.end() && it->second.count(key) > 0;
}

const std::string& IniFile::get(const std::string& section, const std::string& key) const {
  auto it = sections.find(section);
  if (it == sections.end())
    fail(ErrorKind::Config, "config: missing section [" + section + "]");
  auto kt = it->second.find(key);
  if (kt == it->second.end())
    fail(ErrorKind::Config, "config: missing key '" + key + "' in [" + section + "]");
  return kt->second;
}

std::string IniFile::get_or(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
    fail(ErrorKind::Config, "config: '" + text + "' is not a number for " + what);
  return v;
}

int parse_int(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  int v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
    fail(ErrorKind::Config, "config: '" + text + "' is not an integer for " + what);
  return v;
}

double IniFile::get_double(const std::string& section, const std::string& key,
                           double fallback) const {
  if (!has(section, key)) return fallback;
  return parse_double(get(section, key), "[" + section + "] " + key);
}

int IniFile::get_int(const std::string& section, const std::string& key, int fallback) const {
  if (!has(section, key)) return fallback;
  return parse_int(get(section, key), "[" + section + "] " + key);
}

std::uint64_t IniFile::get_u64(const std::string& section, const std::string& key,
                               std::uint64_t fallback) const {
  if (!has(section, key)) return fallback;
  const std::string t = trim(get(section, key));
  std::uint64_t v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
    fail(ErrorKind::Config, "config: '" + t + "' is not an unsigned integer for [" + section +
                                "] " + key);
  return v;
}

bool IniFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = lower(trim(get(section, key)));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorKind::Config, "config: '" + v + "' is not a boolean for [" + section + "] " + key);
}

std::vector<std::string> IniFile::sections_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& name : section_order)
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item =
        trim(text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

// ----------------------------------------------------------- model parsing

namespace {

fom::ModelKind parse_kind(const std::string& name) {
  const std::string n = lower(trim(name));
  if (n == "heat_sink") return fom::ModelKind::HeatSink;
  if (n == "gap_radiation") return fom::ModelKind::GapRadiation;
  if (n == "synthetic_nonlinear" || n == "synthetic") return fom::ModelKind::Synthetic;
  fail(ErrorKind::Config, "config: unknown model kind '" + name + "'");
}

pod::SamplingKind parse_sampling_kind(const std::string& name) {
  const std::string n = lower(trim(name));
  if (n == "sps") return pod::SamplingKind::Sps;
  if (n == "dps") return pod::SamplingKind::Dps;
  fail(ErrorKind::Config, "config: unknown sampling kind '" + name + "'");
}

sampling::SamplingMethod parse_method(const std::string& name) {
  const std::string n = lower(trim(name));
  if (n == "halton") return sampling::SamplingMethod::Halton;
  if (n == "lhs") return sampling::SamplingMethod::Lhs;
  fail(ErrorKind::Config, "config: unknown sampling method '" + name + "'");
}

ModelConfig parse_model_section(const IniFile& ini, const std::string& section) {
  ModelConfig mc;
  mc.name = section.substr(std::string("model.").size());
  if (mc.name.empty()) fail(ErrorKind::Config, "config: empty model name in [" + section + "]");
  for (const char c : mc.name)
    if (std::isalnum(static_cast<unsigned char>(c)) == 0 && c != '_' && c != '-')
      fail(ErrorKind::Config, "config: model name '" + mc.name + "' must be [A-Za-z0-9_-]");
  mc.kind = parse_kind(ini.get(section, "kind"));

  mc.chip_cells = ini.get_int(section, "chip_cells", mc.chip_cells);
  mc.fin_cells = ini.get_int(section, "fin_cells", mc.fin_cells);
  mc.plate_cells = ini.get_int(section, "plate_cells", mc.plate_cells);
  mc.emissivity_coeff = ini.get_double(section, "emissivity_coeff", mc.emissivity_coeff);
  mc.n_state = ini.get_int(section, "n_state", mc.n_state);
  mc.quad_gain = ini.get_double(section, "quad_gain", mc.quad_gain);

  mc.t_end_s = ini.get_double(section, "t_end_s", 0.0);
  mc.k_steps = ini.get_int(section, "k_steps", 100);
  if (mc.k_steps < 1) fail(ErrorKind::Config, "config: k_steps must be positive");

  const bool any_space = ini.has(section, "temp_min_c") || ini.has(section, "temp_max_c") ||
                         ini.has(section, "load_min_w") || ini.has(section, "load_max_w");
  if (any_space) {
    const bool all_space = ini.has(section, "temp_min_c") && ini.has(section, "temp_max_c") &&
                           ini.has(section, "load_min_w") && ini.has(section, "load_max_w");
    if (!all_space)
      fail(ErrorKind::Config,
           "config: [" + section + "] must override all four space bounds or none");
    mc.space_override = true;
    mc.temp_min_c = ini.get_double(section, "temp_min_c", 0.0);
    mc.temp_max_c = ini.get_double(section, "temp_max_c", 0.0);
    mc.load_min_w = ini.get_double(section, "load_min_w", 0.0);
    mc.load_max_w = ini.get_double(section, "load_max_w", 0.0);
  }

  // Tests are grouped key families: test.<label>.t0_c plus either
  // test.<label>.load_w or test.<label>.poly_{a,b,c,d}.
  std::vector<std::string> labels;
  for (const auto& [key, value] : ini.sections.at(section)) {
    (void)value;
    if (key.rfind("test.", 0) != 0) continue;
    const std::size_t dot = key.find('.', 5);
    if (dot == std::string::npos)
      fail(ErrorKind::Config, "config: malformed test key '" + key + "' in [" + section + "]");
    const std::string label = key.substr(5, dot - 5);
    if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
  }
  for (const auto& label : labels) {
    const std::string p = "test." + label + ".";
    TestSpec t;
    t.label = label;
    t.t0_c = parse_double(ini.get(section, p + "t0_c"), p + "t0_c");
    const bool has_const = ini.has(section, p + "load_w");
    const bool has_poly = ini.has(section, p + "poly_a") || ini.has(section, p + "poly_b") ||
                          ini.has(section, p + "poly_c") || ini.has(section, p + "poly_d");
    if (has_const == has_poly)
      fail(ErrorKind::Config, "config: test '" + label + "' in [" + section +
                                  "] needs exactly one of load_w or poly_a..d");
    if (has_const) {
      t.kind = sampling::SignalKind::Constant;
      t.const_load = parse_double(ini.get(section, p + "load_w"), p + "load_w");
    } else {
      t.kind = sampling::SignalKind::Poly2;
      t.poly_a = ini.get_double(section, p + "poly_a", 0.0);
      t.poly_b = ini.get_double(section, p + "poly_b", 0.0);
      t.poly_c = ini.get_double(section, p + "poly_c", 0.0);
      t.poly_d = ini.get_double(section, p + "poly_d", 0.0);
    }
    mc.tests.push_back(std::move(t));
  }
  return mc;
}

}  // namespace

PipelineConfig PipelineConfig::from_text(const std::string& text) {
  const IniFile ini = IniFile::parse(text);
  PipelineConfig cfg;
  cfg.raw_text = text;
  cfg.sha256 = io::sha256_hex(text);

  cfg.out_dir = ini.get_or("run", "out_dir", cfg.out_dir);
  cfg.seed = ini.get_u64("run", "seed", cfg.seed);
  cfg.jobs = ini.get_int("run", "jobs", cfg.jobs);
  if (cfg.jobs < 1) fail(ErrorKind::Config, "config: jobs must be positive");

  for (const auto& item : split_list(ini.get_or("sampling", "kinds", "sps,dps")))
    cfg.samplings.push_back(parse_sampling_kind(item));
  cfg.method = parse_method(ini.get_or("sampling", "method", "halton"));
  cfg.n_s = ini.get_int("sampling", "n_s", cfg.n_s);
  if (cfg.n_s < 1) fail(ErrorKind::Config, "config: n_s must be positive");

  for (const auto& item : split_list(ini.get_or("pod", "n_r_list", "1,2,3,4,5,10")))
    cfg.n_r_list.push_back(parse_int(item, "[pod] n_r_list"));
  for (const int n_r : cfg.n_r_list)
    if (n_r < 1) fail(ErrorKind::Config, "config: n_r_list entries must be positive");
  cfg.center_pod = ini.get_bool("pod", "centering", false);

  cfg.training.epochs = ini.get_int("training", "epochs", cfg.training.epochs);
  cfg.training.batch_size = ini.get_int("training", "batch_size", cfg.training.batch_size);
  cfg.training.learning_rate =
      ini.get_double("training", "learning_rate", cfg.training.learning_rate);
  cfg.training.beta1 = ini.get_double("training", "beta1", cfg.training.beta1);
  cfg.training.beta2 = ini.get_double("training", "beta2", cfg.training.beta2);
  if (cfg.training.epochs < 1) fail(ErrorKind::Config, "config: epochs must be positive");
  if (cfg.training.batch_size < 0) fail(ErrorKind::Config, "config: batch_size must be >= 0");
  if (!(cfg.training.learning_rate > 0.0))
    fail(ErrorKind::Config, "config: learning_rate must be positive");

  for (const auto& item : split_list(ini.get_or("eval", "archs", "direct,rknn")))
    cfg.archs.push_back(surrogate::mode_from_name(lower(item)));
  cfg.ensemble = ini.get_int("eval", "ensemble", cfg.ensemble);
  cfg.hidden = ini.get_int("eval", "hidden", cfg.hidden);
  cfg.activation =
      surrogate::activation_from_name(lower(ini.get_or("eval", "activation", "relu")));
  cfg.ref_substep_multiplier =
      ini.get_int("eval", "ref_substep_multiplier", cfg.ref_substep_multiplier);
  if (cfg.ensemble < 1 || cfg.hidden < 1 || cfg.ref_substep_multiplier < 1)
    fail(ErrorKind::Config, "config: ensemble, hidden, ref_substep_multiplier must be positive");

  cfg.step_study = ini.get_bool("eval", "step_study", false);
  cfg.step_study_model = ini.get_or("eval", "step_study_model", "");
  cfg.step_study_test = ini.get_or("eval", "step_study_test", "");
  cfg.step_study_sampling =
      parse_sampling_kind(ini.get_or("eval", "step_study_sampling", "dps"));
  cfg.step_study_n_r = ini.get_int("eval", "step_study_n_r", 5);
  for (const auto& item : split_list(ini.get_or("eval", "step_factors", "0.5,1,2")))
    cfg.step_factors.push_back(parse_double(item, "[eval] step_factors"));
  for (const double f : cfg.step_factors)
    if (!(f > 0.0)) fail(ErrorKind::Config, "config: step_factors must be positive");

  for (const auto& section : ini.sections_with_prefix("model."))
    cfg.models.push_back(parse_model_section(ini, section));
  if (cfg.models.empty()) fail(ErrorKind::Config, "config: no [model.*] sections");
  if (cfg.samplings.empty()) fail(ErrorKind::Config, "config: empty sampling kinds");
  if (cfg.archs.empty()) fail(ErrorKind::Config, "config: empty arch list");
  if (cfg.n_r_list.empty()) fail(ErrorKind::Config, "config: empty n_r_list");

  if (cfg.step_study) {
    if (cfg.step_study_model.empty() || cfg.step_study_test.empty())
      fail(ErrorKind::Config, "config: step_study needs step_study_model and step_study_test");
    if (cfg.step_factors.empty()) fail(ErrorKind::Config, "config: step_study needs step_factors");
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  return from_text(io::read_text(path));
}

double to_model_temperature(fom::ModelKind kind, double celsius) {
  return kind == fom::ModelKind::GapRadiation ? celsius + kCelsiusToKelvin : celsius;
}

fom::FomModel build_model(const ModelConfig& mc) {
  fom::FomModel model;
  switch (mc.kind) {
    case fom::ModelKind::HeatSink:
      model = fom::build_heat_sink(mc.chip_cells, mc.fin_cells);
      break;
    case fom::ModelKind::GapRadiation:
      model = fom::build_gap_radiation(
          mc.plate_cells, mc.emissivity_coeff > 0.0 ? mc.emissivity_coeff : 1.2e-9);
      break;
    case fom::ModelKind::Synthetic:
      model = fom::build_synthetic_nonlinear(mc.n_state,
                                             mc.quad_gain != 0.0 ? mc.quad_gain : 0.1);
      break;
  }
  model.name = mc.name;
  if (mc.t_end_s > 0.0) model.t_end = mc.t_end_s;
  if (mc.space_override) {
    for (int d = 0; d < model.space.dim(); ++d) {
      if (model.space.roles[static_cast<std::size_t>(d)] ==
          sampling::ParamRole::InitialCondition) {
        model.space.lower[d] = to_model_temperature(mc.kind, mc.temp_min_c);
        model.space.upper[d] = to_model_temperature(mc.kind, mc.temp_max_c);
      } else {
        model.space.lower[d] = mc.load_min_w;
        model.space.upper[d] = mc.load_max_w;
      }
    }
    model.space.validate();
  }
  return model;
}

eval::TestCase build_test(const fom::FomModel& model, const ModelConfig& mc,
                          const TestSpec& test) {
  eval::TestCase tc;
  tc.model_id = model.name;
  tc.initial_temperature = to_model_temperature(mc.kind, test.t0_c);
  tc.t_end = model.t_end;
  tc.k = mc.k_steps;
  tc.label = test.label;

  const int n_mu = model.n_params;
  if (test.kind == sampling::SignalKind::Constant) {
    Eigen::VectorXd base(n_mu);
    for (int d = 0; d < n_mu; ++d)
      base[d] = model.space.roles[static_cast<std::size_t>(d)] ==
                        sampling::ParamRole::InitialCondition
                    ? tc.initial_temperature
                    : test.const_load;
    tc.load_signal = sampling::make_constant_signal(base, model.name + "/test/" + test.label);
  } else {
    Eigen::MatrixXd coeffs = Eigen::MatrixXd::Zero(n_mu, 4);
    for (int d = 0; d < n_mu; ++d) {
      if (model.space.roles[static_cast<std::size_t>(d)] ==
          sampling::ParamRole::InitialCondition) {
        coeffs(d, 0) = tc.initial_temperature;
      } else {
        coeffs(d, 0) = test.poly_a;
        coeffs(d, 1) = test.poly_b;
        coeffs(d, 2) = test.poly_c;
        coeffs(d, 3) = test.poly_d;
      }
    }
    tc.load_signal = sampling::make_poly2_signal(coeffs, model.name + "/test/" + test.label);
  }
  return tc;
}

eval::MatrixSpec to_matrix_spec(const PipelineConfig& cfg) {
  eval::MatrixSpec spec;
  for (const auto& mc : cfg.models) {
    eval::ModelPlan plan;
    plan.model = build_model(mc);
    plan.k = mc.k_steps;
    for (const auto& test : mc.tests) plan.tests.push_back(build_test(plan.model, mc, test));
    if (plan.tests.empty())
      fail(ErrorKind::Config, "config: model '" + mc.name + "' defines no tests");
    spec.models.push_back(std::move(plan));
  }
  spec.samplings = cfg.samplings;
  spec.archs = cfg.archs;
  spec.n_r_list = cfg.n_r_list;
  spec.n_s = cfg.n_s;
  spec.method = cfg.method;
  spec.seed = cfg.seed;
  spec.ensemble = cfg.ensemble;
  spec.hidden = cfg.hidden;
  spec.activation = cfg.activation;
  spec.training = cfg.training;
  spec.center_pod = cfg.center_pod;
  spec.ref_substep_multiplier = cfg.ref_substep_multiplier;
  spec.jobs = cfg.jobs;
  return spec;
}

}  // namespace podnn::config
