#include "qadam/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "qadam/errors.hpp"

namespace qadam {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    return parse_double(trim(value));
  } catch (const FormatError&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  std::string v = trim(value);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected on/off, got '" + value + "'");
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += items[i];
  }
  return out;
}

void check_quantizer(const std::string& key, const std::string& spec, QuantizerRole role) {
  try {
    (void)Quantizer::parse(spec, role);
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "problem", "dim",      "workers", "steps",     "kg",          "kx",      "ef",         "alpha",
      "beta",    "theta",    "eps",     "schedule",  "seed",        "snapshots", "out",      "parallel",
      "message-log", "kappa", "noise",  "radius",    "data-seed",   "samples", "batch",      "label-noise",
      "dataset", "hidden",   "activation", "feature-spread"};
  return keys;
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  const auto& keys = config_keys();
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    out[key] = value;
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

RunConfig apply_config(const ConfigMap& entries, RunConfig c) {
  for (const auto& [key, value] : entries) {
    if (key == "problem") {
      if (value != "quadratic" && value != "logistic" && value != "mlp") {
        throw ConfigError("problem: expected quadratic, logistic or mlp, got '" + value + "'");
      }
      c.problem.kind = value;
    } else if (key == "dim") {
      c.problem.dim = to_u64(key, value);
    } else if (key == "workers") {
      c.workers = to_u64(key, value);
    } else if (key == "steps") {
      c.steps = to_u64(key, value);
    } else if (key == "kg") {
      check_quantizer(key, value, QuantizerRole::gradient);
      c.kg = value;
    } else if (key == "kx") {
      check_quantizer(key, value, QuantizerRole::weight);
      c.kx = value;
    } else if (key == "ef") {
      c.ef = to_bool(key, value);
    } else if (key == "alpha") {
      c.h.alpha = to_double(key, value);
    } else if (key == "beta") {
      c.h.beta = to_double(key, value);
    } else if (key == "theta") {
      c.h.theta = to_double(key, value);
    } else if (key == "eps") {
      c.h.epsilon = to_double(key, value);
    } else if (key == "schedule") {
      c.h.schedule = parse_schedule(value);
    } else if (key == "seed") {
      c.seed = to_u64(key, value);
    } else if (key == "snapshots") {
      c.snapshots = to_bool(key, value);
    } else if (key == "parallel") {
      c.parallel = to_bool(key, value);
    } else if (key == "out") {
      if (value.empty()) {
        c.out.reset();
      } else {
        c.out = value;
      }
    } else if (key == "message-log") {
      if (value.empty()) {
        c.message_log.reset();
      } else {
        c.message_log = value;
      }
    } else if (key == "kappa") {
      c.problem.condition_number = to_double(key, value);
    } else if (key == "noise") {
      c.problem.noise.clear();
      for (const auto& item : split_list(value)) c.problem.noise.push_back(to_double(key, item));
    } else if (key == "radius") {
      c.problem.radius = to_double(key, value);
    } else if (key == "data-seed") {
      c.problem.data_seed = to_u64(key, value);
    } else if (key == "samples") {
      c.problem.samples = to_u64(key, value);
    } else if (key == "batch") {
      c.problem.batch = to_u64(key, value);
    } else if (key == "label-noise") {
      c.problem.label_noise = to_double(key, value);
    } else if (key == "feature-spread") {
      c.problem.feature_spread = to_double(key, value);
    } else if (key == "dataset") {
      if (value.empty()) {
        c.problem.dataset.reset();
      } else {
        c.problem.dataset = value;
      }
    } else if (key == "hidden") {
      c.problem.hidden.clear();
      for (const auto& item : split_list(value)) c.problem.hidden.push_back(to_u64(key, item));
    } else if (key == "activation") {
      c.problem.activation = parse_activation(value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  return c;
}

ConfigMap config_to_map(const RunConfig& c) {
  std::vector<std::string> noise;
  for (double v : c.problem.noise) noise.push_back(format_double(v));
  std::vector<std::string> hidden;
  for (auto w : c.problem.hidden) hidden.push_back(std::to_string(w));
  return ConfigMap{{"problem", c.problem.kind},
                   {"dim", std::to_string(c.problem.dim)},
                   {"workers", std::to_string(c.workers)},
                   {"steps", std::to_string(c.steps)},
                   {"kg", c.kg},
                   {"kx", c.kx},
                   {"ef", c.ef ? "on" : "off"},
                   {"alpha", format_double(c.h.alpha)},
                   {"beta", format_double(c.h.beta)},
                   {"theta", format_double(c.h.theta)},
                   {"eps", format_double(c.h.epsilon)},
                   {"schedule", describe(c.h.schedule)},
                   {"seed", std::to_string(c.seed)},
                   {"snapshots", c.snapshots ? "on" : "off"},
                   {"parallel", c.parallel ? "on" : "off"},
                   {"out", c.out ? c.out->string() : ""},
                   {"message-log", c.message_log ? c.message_log->string() : ""},
                   {"kappa", format_double(c.problem.condition_number)},
                   {"noise", join(noise)},
                   {"radius", format_double(c.problem.radius)},
                   {"data-seed", std::to_string(c.problem.data_seed)},
                   {"samples", std::to_string(c.problem.samples)},
                   {"batch", std::to_string(c.problem.batch)},
                   {"label-noise", format_double(c.problem.label_noise)},
                   {"feature-spread", format_double(c.problem.feature_spread)},
                   {"dataset", c.problem.dataset ? c.problem.dataset->string() : ""},
                   {"hidden", join(hidden)},
                   {"activation", describe(c.problem.activation)}};
}

void RunConfig::validate() const {
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (steps == 0) throw ConfigError("steps must be >= 1");
  if (problem.dim == 0) throw ConfigError("dim must be >= 1");
  check_quantizer("kg", kg, QuantizerRole::gradient);
  check_quantizer("kx", kx, QuantizerRole::weight);
  h.validate();
}

ProblemPtr make_problem(const ProblemSpec& spec) {
  if (spec.kind == "quadratic") {
    QuadraticOptions o;
    o.dim = spec.dim;
    o.condition_number = spec.condition_number;
    o.noise_levels = spec.noise;
    o.seed = spec.data_seed;
    o.radius = spec.radius;
    return std::make_shared<QuadraticProblem>(std::move(o));
  }
  if (spec.kind == "logistic") {
    if (spec.dataset) return std::make_shared<LogisticProblem>(load_logistic_csv(*spec.dataset), spec.batch);
    LogisticOptions o;
    o.dim = spec.dim;
    o.n_samples = spec.samples;
    o.batch = spec.batch;
    o.seed = spec.data_seed;
    o.label_noise = spec.label_noise;
    o.feature_spread = spec.feature_spread;
    return logistic_synthetic(o);
  }
  if (spec.kind == "mlp") {
    MlpOptions o;
    o.layer_widths = {spec.dim};
    for (auto w : spec.hidden) o.layer_widths.push_back(w);
    o.layer_widths.push_back(1);
    o.activation = spec.activation;
    o.dataset_seed = spec.data_seed;
    o.n_samples = spec.samples;
    o.batch = spec.batch;
    return std::make_shared<MlpProblem>(std::move(o));
  }
  throw ConfigError("problem: unknown kind '" + spec.kind + "'");
}

SimulationConfig to_simulation(const RunConfig& c, ProblemPtr problem) {
  SimulationConfig s;
  s.problem = std::move(problem);
  s.workers = c.workers;
  s.steps = c.steps;
  s.h = c.h;
  s.qg = Quantizer::parse(c.kg, QuantizerRole::gradient);
  s.qx = Quantizer::parse(c.kx, QuantizerRole::weight);
  s.error_feedback = c.ef;
  s.seed = c.seed;
  s.snapshots = c.snapshots;
  s.parallel = c.parallel;
  s.message_log_dir = c.message_log;
  return s;
}

Trace run_experiment(const RunConfig& config) {
  config.validate();
  ProblemPtr problem = make_problem(config.problem);
  Trace trace = run_synchronous(to_simulation(config, problem));
  RunConfig echoed = config;
  if (config.problem.kind == "logistic") echoed.problem.dim = problem->dim();
  trace.config = config_to_map(echoed);
  if (config.out) write_trace(trace, *config.out);
  return trace;
}

std::filesystem::path default_output_stem(const std::string& name) {
  const char* dir = std::getenv(kOutDirEnv);
  if (dir && *dir) return std::filesystem::path(dir) / name;
  return std::filesystem::path(name);
}

SweepAxis parse_sweep_axis(const std::string& text) {
  if (text == "kg") return SweepAxis::kg;
  if (text == "kx") return SweepAxis::kx;
  if (text == "alpha") return SweepAxis::alpha;
  throw ConfigError("axis: expected kg, kx or alpha, got '" + text + "'");
}

std::string describe(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kg:
      return "kg";
    case SweepAxis::kx:
      return "kx";
    case SweepAxis::alpha:
      return "alpha";
  }
  return "?";
}

std::vector<SweepEntry> run_sweep(const RunConfig& base, SweepAxis axis, const std::vector<std::string>& values,
                                  bool both_ef) {
  if (values.size() < 2) throw ConfigError("values: a sweep needs at least two values");
  const std::filesystem::path out = base.out.value_or(default_output_stem("sweep"));
  std::vector<bool> ef_settings = both_ef ? std::vector<bool>{true, false} : std::vector<bool>{base.ef};

  // Validate every point before running any of them.
  std::vector<RunConfig> configs;
  std::vector<SweepEntry> entries;
  for (const auto& value : values) {
    for (bool ef : ef_settings) {
      ConfigMap m{{describe(axis), value}, {"ef", ef ? "on" : "off"}};
      RunConfig c = apply_config(m, base);
      std::string tag = describe(axis) + value;
      if (both_ef) tag += ef ? "_ef" : "_noef";
      c.out = std::filesystem::path(out.string() + "_" + tag);
      if (c.message_log) c.message_log = *c.message_log / tag;
      c.validate();
      configs.push_back(c);
      entries.push_back(SweepEntry{value, ef, *c.out, {}});
    }
  }
  for (std::size_t i = 0; i < configs.size(); ++i) entries[i].summary = run_experiment(configs[i]).summary;
  write_sweep_table(entries, axis, std::filesystem::path(out.string() + "_sweep.csv"));
  return entries;
}

void write_sweep_table(const std::vector<SweepEntry>& entries, SweepAxis axis, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << describe(axis)
      << ",ef,final_loss,final_grad_norm,final_grad_norm_hat,best_loss,mean_grad_norm_sq,delta_g,delta_x,total_bits,"
         "trace\n";
  for (const auto& e : entries) {
    const auto& s = e.summary;
    out << e.value << ',' << (e.ef ? "on" : "off") << ',' << format_double(s.final_loss) << ','
        << format_double(s.final_grad_norm) << ',' << format_double(s.final_grad_norm_hat) << ','
        << format_double(s.best_loss) << ',' << format_double(s.mean_grad_norm_sq) << ','
        << (s.delta_g ? format_double(*s.delta_g) : "") << ',' << (s.delta_x ? format_double(*s.delta_x) : "") << ','
        << s.total_bits << ',' << e.stem.string() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace qadam
