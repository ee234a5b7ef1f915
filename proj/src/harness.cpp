#include "abris/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <system_error>

#include <json.hpp>

#include "abris/forward_models.hpp"
#include "abris/metrics.hpp"

namespace abris {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ------------------------------------------------------------ key = value

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
  });
}

std::string full_precision(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::ofstream open_out(const fs::path& file, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(file, mode);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  return out;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError("line " + std::to_string(number) + ": bad key '" + key + "'");
    if (!kv.emplace(key, value).second) {
      throw ConfigError("line " + std::to_string(number) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues read_key_values(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read " + file.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_key_values(os.str());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string git_blob_hash(const std::string& text) {
  std::string blob = "blob " + std::to_string(text.size());
  blob.push_back('\0');
  blob += text;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

// ----------------------------------------------------------------- config

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": cannot parse '" + value + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  try {
    std::size_t used = 0;
    out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
  } catch (const std::exception&) {
    throw ConfigError(key + ": cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::Abris: return "abris";
    case Method::BbviPlain: return "bbvi-plain";
    case Method::Mh: return "mh";
    case Method::Smc: return "smc";
  }
  return "?";
}

const char* problem_name(Problem p) {
  return p == Problem::GaussianMatch ? "gaussian-match" : "poisson";
}

Method parse_method(const std::string& v) {
  if (v == "abris") return Method::Abris;
  if (v == "bbvi-plain") return Method::BbviPlain;
  if (v == "mh") return Method::Mh;
  if (v == "smc") return Method::Smc;
  throw ConfigError("experiment.method: unknown method '" + v + "'");
}

Problem parse_problem(const std::string& v) {
  if (v == "gaussian-match") return Problem::GaussianMatch;
  if (v == "poisson") return Problem::Poisson;
  throw ConfigError("experiment.problem: unknown problem '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"experiment.name", [](auto& c, auto&, auto& v) { c.name = v; }},
      {"experiment.method", [](auto& c, auto&, auto& v) { c.method = parse_method(v); }},
      {"experiment.problem", [](auto& c, auto&, auto& v) { c.problem = parse_problem(v); }},
      {"experiment.seed", [](auto& c, auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"experiment.replications", [](auto& c, auto& k, auto& v) { c.replications = parse_number<int>(k, v); }},
      {"experiment.parallelism", [](auto& c, auto& k, auto& v) { c.parallelism = parse_number<int>(k, v); }},
      {"experiment.out_dir", [](auto& c, auto&, auto& v) { c.out_dir = v; }},
      {"gaussian.p", [](auto& c, auto& k, auto& v) { c.p = parse_number<int>(k, v); }},
      {"gaussian.n", [](auto& c, auto& k, auto& v) { c.n = parse_number<int>(k, v); }},
      {"gaussian.variance", [](auto& c, auto& k, auto& v) { c.target_variance = parse_real(k, v); }},
      {"poisson.n_kkl", [](auto& c, auto& k, auto& v) { c.n_kkl = parse_number<Index>(k, v); }},
      {"poisson.length_scale", [](auto& c, auto& k, auto& v) { c.length_scale = parse_real(k, v); }},
      {"poisson.scale_basis", [](auto& c, auto& k, auto& v) { c.scale_basis = parse_bool(k, v); }},
      {"poisson.noise_seed", [](auto& c, auto& k, auto& v) { c.noise_seed = parse_number<std::uint64_t>(k, v); }},
      {"poisson.eval_interval", [](auto& c, auto& k, auto& v) { c.eval_interval = parse_number<long>(k, v); }},
      {"poisson.eval_draws", [](auto& c, auto& k, auto& v) { c.eval_draws = parse_number<Index>(k, v); }},
      {"poisson.target_error", [](auto& c, auto& k, auto& v) { c.target_error = parse_real(k, v); }},
      {"abris.batch_size", [](auto& c, auto& k, auto& v) { c.abris.batch_size = parse_number<Index>(k, v); }},
      {"abris.window", [](auto& c, auto& k, auto& v) { c.abris.window = parse_number<Index>(k, v); }},
      {"abris.periodic", [](auto& c, auto& k, auto& v) { c.abris.periodic = parse_number<long>(k, v); }},
      {"abris.alpha_sc", [](auto& c, auto& k, auto& v) { c.abris.alpha_sc = parse_real(k, v); }},
      {"abris.max_iterations", [](auto& c, auto& k, auto& v) { c.abris.max_iterations = parse_number<long>(k, v); }},
      {"abris.max_model_calls", [](auto& c, auto& k, auto& v) { c.abris.max_model_calls = parse_number<long>(k, v); }},
      {"abris.ess_check", [](auto& c, auto& k, auto& v) { c.abris.ess_check = parse_bool(k, v); }},
      {"abris.score_check", [](auto& c, auto& k, auto& v) { c.abris.score_check = parse_bool(k, v); }},
      {"abris.max_retries", [](auto& c, auto& k, auto& v) { c.abris.max_retries = parse_number<int>(k, v); }},
      {"abris.tolerance", [](auto& c, auto& k, auto& v) { c.abris.convergence.tolerance = parse_real(k, v); }},
      {"optimizer.lr", [](auto& c, auto& k, auto& v) { c.optimizer.base_lr = parse_real(k, v); }},
      {"optimizer.schedule",
       [](auto& c, auto&, auto& v) {
         if (v == "constant") c.optimizer.schedule.rule = LrSchedule::Rule::Constant;
         else if (v == "step") c.optimizer.schedule.rule = LrSchedule::Rule::StepDecay;
         else throw ConfigError("optimizer.schedule: expected constant or step, got '" + v + "'");
       }},
      {"optimizer.decay_factor", [](auto& c, auto& k, auto& v) { c.optimizer.schedule.factor = parse_real(k, v); }},
      {"optimizer.decay_interval", [](auto& c, auto& k, auto& v) { c.optimizer.schedule.interval = parse_number<long>(k, v); }},
      {"optimizer.natural_gradient", [](auto& c, auto& k, auto& v) { c.optimizer.natural_gradient = parse_bool(k, v); }},
      {"optimizer.clip", [](auto& c, auto& k, auto& v) { c.optimizer.clip_threshold = parse_real(k, v); }},
      {"mh.samples", [](auto& c, auto& k, auto& v) { c.mh.n_samples = parse_number<Index>(k, v); }},
      {"mh.tune_interval", [](auto& c, auto& k, auto& v) { c.mh.tune_interval = parse_number<Index>(k, v); }},
      {"mh.initial_scale", [](auto& c, auto& k, auto& v) { c.mh.initial_scale = parse_real(k, v); }},
      {"mh.burn_in", [](auto& c, auto& k, auto& v) { c.mh.burn_in_fraction = parse_real(k, v); }},
      {"mh.tune_after_burn_in", [](auto& c, auto& k, auto& v) { c.mh.tune_after_burn_in = parse_bool(k, v); }},
      {"smc.particles", [](auto& c, auto& k, auto& v) { c.smc.n_particles = parse_number<Index>(k, v); }},
      {"smc.rejuvenation", [](auto& c, auto& k, auto& v) { c.smc.n_rejuvenation = parse_number<int>(k, v); }},
      {"smc.threshold", [](auto& c, auto& k, auto& v) { c.smc.resample_threshold = parse_real(k, v); }},
  };
  return table;
}

void validate(const ExperimentConfig& c) {
  if (c.replications < 1) throw ConfigError("experiment.replications must be >= 1");
  if (c.parallelism < 1) throw ConfigError("experiment.parallelism must be >= 1");
  if (c.out_dir.empty()) throw ConfigError("experiment.out_dir must not be empty");
  if (c.problem == Problem::GaussianMatch) {
    if (c.p < 0 || c.p > 10) throw ConfigError("gaussian.p must be in [0, 10]");
    if (c.n < 0 || c.n > 10) throw ConfigError("gaussian.n must be in [0, 10]");
    if (!(c.target_variance > 0.0)) throw ConfigError("gaussian.variance must be positive");
  } else {
    if (c.n_kkl < 1 || c.n_kkl > 100) throw ConfigError("poisson.n_kkl must be in [1, 100]");
    if (!(c.length_scale > 0.0)) throw ConfigError("poisson.length_scale must be positive");
    if (c.eval_interval < 1) throw ConfigError("poisson.eval_interval must be >= 1");
    if (c.eval_draws < 1) throw ConfigError("poisson.eval_draws must be >= 1");
    if (!(c.target_error > 0.0)) throw ConfigError("poisson.target_error must be positive");
  }
  if (!(c.optimizer.base_lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
  if (!(c.optimizer.schedule.factor > 0.0 && c.optimizer.schedule.factor <= 1.0)) {
    throw ConfigError("optimizer.decay_factor must be in (0, 1]");
  }
  if (c.optimizer.schedule.interval < 1) throw ConfigError("optimizer.decay_interval must be >= 1");
  if (!(c.optimizer.clip_threshold > 0.0)) throw ConfigError("optimizer.clip must be positive");
  if (!(c.abris.convergence.tolerance > 0.0)) throw ConfigError("abris.tolerance must be positive");
  switch (c.method) {
    case Method::Abris:
    case Method::BbviPlain: c.abris.validate(); break;
    case Method::Mh: c.mh.validate(); break;
    case Method::Smc: c.smc.validate(); break;
  }
}

}  // namespace

Index ExperimentConfig::dim() const {
  return problem == Problem::GaussianMatch ? Index{1} << p : n_kkl;
}

ExperimentConfig parse_config(const KeyValues& kv) {
  const auto& table = setters();
  for (const auto& [key, value] : kv) {
    if (key.rfind("sweep.", 0) == 0) throw ConfigError(key + ": sweep lists need the sweep command");
    if (!table.count(key)) throw ConfigError("unknown key '" + key + "'");
  }

  ExperimentConfig c;
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto* v = get("experiment.problem")) c.problem = parse_problem(*v);
  if (auto* v = get("experiment.method")) c.method = parse_method(*v);
  if (auto* v = get("gaussian.p")) c.p = parse_number<int>("gaussian.p", *v);

  // problem-dependent defaults
  if (c.problem == Problem::GaussianMatch) {
    c.abris.window = 20;
    c.abris.periodic = 50;
    c.abris.max_model_calls = 1000000;
    c.optimizer.base_lr = 0.1 / static_cast<double>(Index{1} << std::clamp(c.p, 0, 30));
    if (get("abris.batch_size")) throw ConfigError("abris.batch_size: use gaussian.n for gaussian-match");
  } else {
    c.abris.window = 10;
    c.abris.periodic = 100;
    c.abris.max_model_calls = 10000;
    c.optimizer.schedule.rule = LrSchedule::Rule::StepDecay;
    c.mh.n_samples = 50000;
  }
  if (c.method == Method::BbviPlain && (get("abris.window") || get("abris.periodic"))) {
    throw ConfigError("bbvi-plain fixes abris.window = 0 and abris.periodic = 1");
  }

  const bool vi = c.method == Method::Abris || c.method == Method::BbviPlain;
  for (const auto& [key, value] : kv) {
    const std::string section = key.substr(0, key.find('.'));
    const bool applies = section == "experiment" ||
                         (section == "gaussian" && c.problem == Problem::GaussianMatch) ||
                         (section == "poisson" && c.problem == Problem::Poisson) ||
                         ((section == "abris" || section == "optimizer") && vi) ||
                         (section == "mh" && c.method == Method::Mh) ||
                         (section == "smc" && c.method == Method::Smc);
    if (!applies) {
      throw ConfigError(key + ": does not apply to " + method_name(c.method) + " on " + problem_name(c.problem));
    }
    table.at(key)(c, key, value);
  }
  if (!get("poisson.noise_seed")) c.noise_seed = c.seed;
  if (c.problem == Problem::GaussianMatch) c.abris.batch_size = Index{1} << std::clamp(c.n, 0, 30);
  if (c.method == Method::BbviPlain) {
    c.abris.window = 0;
    c.abris.periodic = 1;
  }
  c.abris.parallelism = c.parallelism;
  c.mh.parallelism = c.parallelism;
  c.smc.parallelism = c.parallelism;
  validate(c);
  return c;
}

KeyValues ExperimentConfig::to_key_values() const {
  KeyValues kv;
  kv["experiment.name"] = name;
  kv["experiment.method"] = method_name(method);
  kv["experiment.problem"] = problem_name(problem);
  kv["experiment.seed"] = std::to_string(seed);
  kv["experiment.replications"] = std::to_string(replications);
  kv["experiment.parallelism"] = std::to_string(parallelism);
  kv["experiment.out_dir"] = out_dir;
  if (problem == Problem::GaussianMatch) {
    kv["gaussian.p"] = std::to_string(p);
    kv["gaussian.n"] = std::to_string(n);
    kv["gaussian.variance"] = full_precision(target_variance);
  } else {
    kv["poisson.n_kkl"] = std::to_string(n_kkl);
    kv["poisson.length_scale"] = full_precision(length_scale);
    kv["poisson.scale_basis"] = scale_basis ? "true" : "false";
    kv["poisson.noise_seed"] = std::to_string(noise_seed);
    kv["poisson.eval_interval"] = std::to_string(eval_interval);
    kv["poisson.eval_draws"] = std::to_string(eval_draws);
    kv["poisson.target_error"] = full_precision(target_error);
  }
  if (method == Method::Abris || method == Method::BbviPlain) {
    if (problem == Problem::Poisson) kv["abris.batch_size"] = std::to_string(abris.batch_size);
    if (method == Method::Abris) {
      kv["abris.window"] = std::to_string(abris.window);
      kv["abris.periodic"] = std::to_string(abris.periodic);
    }
    kv["abris.alpha_sc"] = full_precision(abris.alpha_sc);
    kv["abris.max_iterations"] = std::to_string(abris.max_iterations);
    kv["abris.max_model_calls"] = std::to_string(abris.max_model_calls);
    kv["abris.ess_check"] = abris.ess_check ? "true" : "false";
    kv["abris.score_check"] = abris.score_check ? "true" : "false";
    kv["abris.max_retries"] = std::to_string(abris.max_retries);
    kv["abris.tolerance"] = full_precision(abris.convergence.tolerance);
    kv["optimizer.lr"] = full_precision(optimizer.base_lr);
    kv["optimizer.schedule"] = optimizer.schedule.rule == LrSchedule::Rule::StepDecay ? "step" : "constant";
    kv["optimizer.decay_factor"] = full_precision(optimizer.schedule.factor);
    kv["optimizer.decay_interval"] = std::to_string(optimizer.schedule.interval);
    kv["optimizer.natural_gradient"] = optimizer.natural_gradient ? "true" : "false";
    kv["optimizer.clip"] = full_precision(optimizer.clip_threshold);
  } else if (method == Method::Mh) {
    kv["mh.samples"] = std::to_string(mh.n_samples);
    kv["mh.tune_interval"] = std::to_string(mh.tune_interval);
    kv["mh.initial_scale"] = full_precision(mh.initial_scale);
    kv["mh.burn_in"] = full_precision(mh.burn_in_fraction);
    kv["mh.tune_after_burn_in"] = mh.tune_after_burn_in ? "true" : "false";
  } else {
    kv["smc.particles"] = std::to_string(smc.n_particles);
    kv["smc.rejuvenation"] = std::to_string(smc.n_rejuvenation);
    kv["smc.threshold"] = full_precision(smc.resample_threshold);
  }
  return kv;
}

std::vector<KeyValues> expand_sweep(const KeyValues& kv) {
  KeyValues base;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& [key, value] : kv) {
    if (key.rfind("sweep.", 0) != 0) {
      base[key] = value;
      continue;
    }
    const std::string target = key.substr(6);
    if (!setters().count(target)) throw ConfigError(key + ": unknown swept key '" + target + "'");
    if (kv.count(target)) throw ConfigError(key + ": '" + target + "' is also set directly");
    std::vector<std::string> values;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (item.empty()) throw ConfigError(key + ": empty list entry");
      values.push_back(item);
    }
    if (values.empty()) throw ConfigError(key + ": empty list");
    axes.emplace_back(target, std::move(values));
  }

  std::vector<KeyValues> points{base};
  for (const auto& [target, values] : axes) {
    std::vector<KeyValues> next;
    for (const auto& p : points) {
      for (const auto& v : values) {
        KeyValues q = p;
        q[target] = v;
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

// --------------------------------------------------------------- manifest

void write_manifest(const RunManifest& m) {
  KeyValues kv;
  for (const auto& [k, v] : m.config) kv["config." + k] = v;
  kv["manifest.config_hash"] = m.config_hash;
  kv["manifest.started"] = m.started;
  kv["manifest.finished"] = m.finished.empty() ? "-" : m.finished;
  kv["manifest.status"] = m.status;
  kv["manifest.replications"] = std::to_string(m.replications.size());
  for (const auto& r : m.replications) {
    const std::string p = "replication." + std::to_string(r.replication) + ".";
    kv[p + "seed"] = std::to_string(r.seed);
    kv[p + "status"] = r.status.empty() ? "-" : r.status;
    kv[p + "iterations"] = std::to_string(r.iterations);
    kv[p + "model_calls"] = std::to_string(r.model_calls);
    kv[p + "counted_calls"] = std::to_string(r.counted_calls);
    kv[p + "converged"] = r.converged ? "true" : "false";
    kv[p + "budget_exhausted"] = r.budget_exhausted ? "true" : "false";
    kv[p + "diverged"] = r.diverged ? "true" : "false";
    kv[p + "final_error"] = full_precision(r.final_error);
    kv[p + "calls_to_target"] = std::to_string(r.calls_to_target);
    kv[p + "records"] = r.records.empty() ? "-" : r.records;
    kv[p + "curve"] = r.curve.empty() ? "-" : r.curve;
    std::string diag = r.diagnostic;
    std::replace(diag.begin(), diag.end(), '\n', ' ');
    std::replace(diag.begin(), diag.end(), '#', ' ');
    kv[p + "diagnostic"] = diag.empty() ? "-" : diag;
  }
  const fs::path tmp = m.file.string() + ".tmp";
  {
    auto out = open_out(tmp);
    out << format_key_values(kv);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, m.file);
}

RunManifest read_manifest(const fs::path& file) {
  const KeyValues kv = read_key_values(file);
  RunManifest m;
  m.file = file;
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(file.string() + ": missing '" + key + "'");
    return it->second;
  };
  auto dash = [](const std::string& s) { return s == "-" ? std::string{} : s; };
  for (const auto& [k, v] : kv) {
    if (k.rfind("config.", 0) == 0) m.config[k.substr(7)] = v;
  }
  m.config_hash = need("manifest.config_hash");
  m.started = need("manifest.started");
  m.finished = dash(need("manifest.finished"));
  m.status = need("manifest.status");
  const int count = parse_number<int>("manifest.replications", need("manifest.replications"));
  for (int i = 0; i < count; ++i) {
    const std::string p = "replication." + std::to_string(i) + ".";
    ReplicationSummary r;
    r.replication = i;
    r.seed = parse_number<std::uint64_t>(p + "seed", need(p + "seed"));
    r.status = dash(need(p + "status"));
    r.iterations = parse_number<long>(p + "iterations", need(p + "iterations"));
    r.model_calls = parse_number<long>(p + "model_calls", need(p + "model_calls"));
    r.counted_calls = parse_number<long>(p + "counted_calls", need(p + "counted_calls"));
    r.converged = parse_bool(p + "converged", need(p + "converged"));
    r.budget_exhausted = parse_bool(p + "budget_exhausted", need(p + "budget_exhausted"));
    r.diverged = parse_bool(p + "diverged", need(p + "diverged"));
    r.final_error = parse_real(p + "final_error", need(p + "final_error"));
    r.calls_to_target = parse_number<long>(p + "calls_to_target", need(p + "calls_to_target"));
    r.records = dash(need(p + "records"));
    r.curve = dash(need(p + "curve"));
    r.diagnostic = dash(need(p + "diagnostic"));
    m.replications.push_back(std::move(r));
  }
  return m;
}

int manifest_exit_code(const RunManifest& m) {
  bool budget = false;
  for (const auto& r : m.replications) {
    if (r.status == "diverged" || r.status == "failed" || r.status.empty()) return 2;
    if (r.status == "budget" || r.status == "not-converged") budget = true;
  }
  return budget ? 3 : 0;
}

// ----------------------------------------------------------------- tables

void write_table(const fs::path& file, MatrixRef table) {
  auto out = open_out(file);
  out << std::setprecision(17);
  for (Index i = 0; i < table.rows(); ++i) {
    for (Index j = 0; j < table.cols(); ++j) out << (j ? " " : "") << table(i, j);
    out << '\n';
  }
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

Matrix read_table(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    double v = 0.0;
    while (ls >> v) row.push_back(v);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) return Matrix(0, 0);
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw std::runtime_error(file.string() + ": ragged table");
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(Index(i), Index(j)) = rows[i][j];
  }
  return out;
}

// ------------------------------------------------------------ experiments

namespace {

json record_json(const IterationRecord& r) {
  json j;
  j["iteration"] = r.iteration;
  j["cumulative_calls"] = r.cumulative_calls;
  j["new_calls"] = r.new_calls;
  j["rounds"] = r.rounds;
  j["ess"] = r.ess;
  j["e_is_norm"] = r.e_is_norm;
  j["e_ref_norm"] = r.e_ref_norm;
  j["flags"] = {{"ess", r.ess_triggered}, {"score", r.score_triggered}, {"periodic", r.periodic_triggered}};
  j["elbo"] = r.elbo;
  j["baseline"] = r.baseline;
  json mix = json::array();
  for (const auto& [it, beta] : r.mixture) mix.push_back({it, beta});
  j["mixture"] = std::move(mix);
  j["lambda"] = std::vector<double>(r.lambda.data(), r.lambda.data() + r.lambda.size());
  return j;
}

struct PoissonSetup {
  PoissonMesh mesh = PoissonMesh::standard();
  FieldExpansion expansion;
  Vector zeta_true;
  Vector y_obs;
};

PoissonSetup poisson_setup(const ExperimentConfig& c) {
  PoissonSetup s;
  s.expansion = se_kernel_basis(s.mesh.element_centers(), c.length_scale, c.n_kkl, c.scale_basis);
  s.zeta_true = ground_truth_field(s.mesh);
  Rng noise = child_stream(c.noise_seed, "noise");
  s.y_obs = generate_observations(s.mesh, noise);
  return s;
}

class CurveWriter {
 public:
  CurveWriter(const fs::path& file, const Vector& truth, double target)
      : out_(open_out(file)), truth_(truth), target_(target) {
    out_ << std::setprecision(17) << "calls iteration rel_l2 a_norm\n";
  }

  double add(long calls, long iteration, const Vector& mean_field) {
    const Vector a = truth_.array().square();
    const double e = relative_l2(mean_field, truth_);
    out_ << calls << ' ' << iteration << ' ' << e << ' ' << weighted_a_norm_error(mean_field, truth_, a) << '\n';
    out_.flush();
    if (e <= target_ && first_ < 0) first_ = calls;
    last_ = e;
    return e;
  }

  long first_hit() const { return first_; }
  double last() const { return last_; }

 private:
  std::ofstream out_;
  Vector truth_;
  double target_;
  long first_ = -1;
  double last_ = std::numeric_limits<double>::quiet_NaN();
};

std::string status_of(const RunResult& r, bool has_goal) {
  if (r.diverged) return "diverged";
  if (!has_goal) return "ok";
  if (r.converged) return "ok";
  return r.budget_exhausted ? "budget" : "not-converged";
}

void run_vi(const ExperimentConfig& c, const ProbabilisticModel& model, const PoissonSetup* poisson,
            const fs::path& dir, ReplicationSummary& s) {
  CountingModel counted(model);
  Rng init = child_stream(s.seed, "init");
  Rng sampling = child_stream(s.seed, "sampling");
  Rng reference = child_stream(s.seed, "e_ref");
  Rng eval = child_stream(s.seed, "eval");
  const VariationalParams q0 = initial_mean_field(c.dim(), init);

  AbrisConfig ac = c.abris;
  ac.keep_records = false;
  std::optional<Vector> optimum;
  if (c.problem == Problem::GaussianMatch) {
    optimum = GaussianTarget::isotropic(c.dim(), c.target_variance).optimal_lambda();
    ac.convergence = ConvergenceRule::relative(*optimum, c.abris.convergence.tolerance);
  } else {
    ac.convergence = ConvergenceRule::budget_only();
  }

  s.records = dir.filename().string() + "/records.jsonl";
  auto records = open_out(dir / "records.jsonl");
  std::unique_ptr<CurveWriter> curve;
  if (poisson) {
    s.curve = dir.filename().string() + "/curve.tsv";
    curve = std::make_unique<CurveWriter>(dir / "curve.tsv", poisson->zeta_true, c.target_error);
  }
  long next_eval = c.eval_interval;
  long last_eval_calls = -1;
  auto evaluate = [&](VectorRef lambda, long calls, long iteration) {
    const auto q = VariationalParams::from_flat(Family::MeanField, c.dim(), 1, lambda);
    const auto moments = posterior_field_moments(poisson->expansion, q, c.eval_draws, eval);
    curve->add(calls, iteration, moments.mean);
    last_eval_calls = calls;
  };
  auto sink = [&](const IterationRecord& r) {
    records << record_json(r).dump() << '\n';
    if (poisson && r.cumulative_calls >= next_eval) {
      evaluate(r.lambda, r.cumulative_calls, r.iteration);
      while (next_eval <= r.cumulative_calls) next_eval += c.eval_interval;
    }
  };

  const RunResult result = run(counted, q0, ac, c.optimizer, sampling, reference, sink);
  records.flush();
  s.iterations = result.iterations;
  s.model_calls = result.model_calls;
  s.counted_calls = counted.calls();
  s.converged = result.converged;
  s.budget_exhausted = result.budget_exhausted;
  s.diverged = result.diverged;
  s.diagnostic = result.diagnostic;
  s.status = status_of(result, optimum.has_value());
  if (optimum) {
    s.final_error = (result.q.flat() - *optimum).norm() / optimum->norm();
  } else {
    if (!result.diverged && last_eval_calls != result.model_calls) {
      evaluate(result.q.flat(), result.model_calls, result.iterations);
    }
    s.final_error = curve->last();
    s.calls_to_target = curve->first_hit();
  }
}

Vector moment_lambda(const Vector& mean, const Vector& variance) {
  Vector out(2 * mean.size());
  out << mean, 0.5 * variance.array().max(1e-300).log().matrix();
  return out;
}

void run_mh(const ExperimentConfig& c, const ProbabilisticModel& model, const PoissonSetup* poisson,
            const fs::path& dir, ReplicationSummary& s) {
  CountingModel counted(model);
  Rng rng = child_stream(s.seed, "mcmc");
  const MhResult r = mh_run(counted, c.mh, rng);
  s.iterations = c.mh.n_samples;
  s.model_calls = r.model_calls;
  s.counted_calls = counted.calls();
  s.status = "ok";
  s.records = dir.filename().string() + "/trace.tsv";
  {
    auto out = open_out(dir / "trace.tsv");
    out << std::setprecision(17) << "step cumulative_calls acceptance scale\n";
    for (const auto& w : r.windows) out << w.step << ' ' << w.cumulative_calls << ' ' << w.acceptance << ' ' << w.scale << '\n';
  }
  const Matrix post = r.posterior_samples();
  if (poisson) {
    s.curve = dir.filename().string() + "/curve.tsv";
    CurveWriter curve(dir / "curve.tsv", poisson->zeta_true, c.target_error);
    for (Index k = c.eval_interval; k <= c.mh.n_samples; k += c.eval_interval) {
      const auto start = static_cast<Index>(std::floor(c.mh.burn_in_fraction * static_cast<double>(k)));
      curve.add(static_cast<long>(k) + 1, static_cast<long>(k),
                posterior_field_moments(poisson->expansion, r.chain.middleRows(start, k - start)).mean);
    }
    s.final_error = relative_l2(posterior_field_moments(poisson->expansion, post).mean, poisson->zeta_true);
    s.calls_to_target = curve.first_hit();
  } else {
    const Vector mean = post.colwise().mean();
    const Vector var = (post.rowwise() - mean.transpose()).array().square().colwise().mean();
    const Vector opt = GaussianTarget::isotropic(c.dim(), c.target_variance).optimal_lambda();
    s.final_error = (moment_lambda(mean, var) - opt).norm() / opt.norm();
  }
}

void run_smc(const ExperimentConfig& c, const ProbabilisticModel& likelihood, const PoissonSetup* poisson,
             const fs::path& dir, ReplicationSummary& s) {
  CountingModel counted(likelihood);
  Rng rng = child_stream(s.seed, "smc");
  const SmcResult r = smc_run(counted, SmcPrior::standard_normal(c.dim()), c.smc, rng);
  s.iterations = static_cast<long>(r.stages.size());
  s.model_calls = r.model_calls;
  s.counted_calls = counted.calls();
  s.status = "ok";
  s.records = dir.filename().string() + "/stages.tsv";
  {
    auto out = open_out(dir / "stages.tsv");
    out << std::setprecision(17) << "stage gamma ess resampled acceptance cumulative_calls\n";
    for (const auto& st : r.stages) {
      out << st.stage << ' ' << st.gamma << ' ' << st.ess << ' ' << int(st.resampled) << ' ' << st.acceptance
          << ' ' << st.cumulative_calls << '\n';
    }
  }
  if (poisson) {
    const Matrix draws = residual_resample(r.cloud, rng).particles;
    s.curve = dir.filename().string() + "/curve.tsv";
    CurveWriter curve(dir / "curve.tsv", poisson->zeta_true, c.target_error);
    s.final_error = curve.add(r.model_calls, s.iterations, posterior_field_moments(poisson->expansion, draws).mean);
    s.calls_to_target = curve.first_hit();
  } else {
    const Vector mean = r.cloud.mean();
    const Vector var = r.cloud.covariance().diagonal();
    const Vector opt = GaussianTarget::isotropic(c.dim(), c.target_variance).optimal_lambda();
    s.final_error = (moment_lambda(mean, var) - opt).norm() / opt.norm();
  }
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& c, std::ostream* log) {
  const fs::path root(c.out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error("cannot create " + root.string() + ": " + ec.message());

  RunManifest m;
  m.file = root / "manifest.txt";
  m.config = c.to_key_values();
  m.config_hash = git_blob_hash(format_key_values(m.config));
  m.started = utc_now();
  for (int k = 0; k < c.replications; ++k) {
    ReplicationSummary s;
    s.replication = k;
    s.seed = c.seed + static_cast<std::uint64_t>(k);
    s.final_error = std::numeric_limits<double>::quiet_NaN();
    m.replications.push_back(s);
  }
  write_manifest(m);

  std::unique_ptr<PoissonSetup> poisson;
  std::unique_ptr<ProbabilisticModel> model;
  std::unique_ptr<ProbabilisticModel> likelihood;
  if (c.problem == Problem::Poisson) {
    poisson = std::make_unique<PoissonSetup>(poisson_setup(c));
    write_table(root / "y_obs.txt", poisson->y_obs);
    write_table(root / "zeta_true.txt", poisson->zeta_true);
    write_table(root / "basis.txt", poisson->expansion.basis);
    write_table(root / "eigenvalues.txt", poisson->expansion.eigenvalues);
    write_table(root / "element_centers.txt", poisson->mesh.element_centers());
    auto pm = std::make_unique<PoissonModel>(poisson->mesh, poisson->expansion, poisson->y_obs);
    const PoissonModel* raw = pm.get();
    likelihood = std::make_unique<FunctionModel>(c.dim(), [raw](VectorRef t) { return raw->log_likelihood(t); });
    model = std::move(pm);
  } else {
    auto target = std::make_unique<GaussianTarget>(GaussianTarget::isotropic(c.dim(), c.target_variance));
    const GaussianTarget* raw = target.get();
    likelihood = std::make_unique<FunctionModel>(c.dim(), [raw](VectorRef t) {
      return raw->log_joint(t) + 0.5 * (t.squaredNorm() + static_cast<double>(t.size()) * 1.8378770664093454836);
    });
    model = std::move(target);
  }

  for (auto& s : m.replications) {
    const fs::path dir = root / ("rep" + std::to_string(s.replication));
    fs::create_directories(dir);
    try {
      switch (c.method) {
        case Method::Abris:
        case Method::BbviPlain: run_vi(c, *model, poisson.get(), dir, s); break;
        case Method::Mh: run_mh(c, *model, poisson.get(), dir, s); break;
        case Method::Smc: run_smc(c, *likelihood, poisson.get(), dir, s); break;
      }
    } catch (const std::exception& e) {
      s.status = "failed";
      s.diagnostic = e.what();
    }
    if (log) {
      *log << c.name << " rep " << s.replication << " seed " << s.seed << ": " << s.status << ", "
           << s.model_calls << " calls, " << s.iterations << " iterations, error " << s.final_error << '\n';
    }
    write_manifest(m);
  }
  m.finished = utc_now();
  m.status = "complete";
  write_manifest(m);
  return m;
}

std::vector<SweepPoint> run_sweep(const KeyValues& kv, std::ostream* log) {
  const auto points = expand_sweep(kv);
  std::vector<std::string> axes;
  for (const auto& [k, v] : kv) {
    if (k.rfind("sweep.", 0) == 0) axes.push_back(k.substr(6));
  }
  std::vector<ExperimentConfig> configs;
  const std::string base_dir = parse_config(points.front()).out_dir;
  for (std::size_t i = 0; i < points.size(); ++i) {
    ExperimentConfig c = parse_config(points[i]);
    c.out_dir = (fs::path(base_dir) / ("point" + std::to_string(i))).string();
    configs.push_back(std::move(c));
  }

  fs::create_directories(base_dir);
  auto table = open_out(fs::path(base_dir) / "sweep.tsv");
  table << std::setprecision(17) << "point";
  for (const auto& a : axes) table << ' ' << a;
  table << " replications converged mean_model_calls mean_final_error mean_calls_to_target\n";

  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    SweepPoint p;
    for (const auto& a : axes) p.overrides[a] = points[i].at(a);
    p.manifest = run_experiment(configs[i], log);
    double calls = 0.0, error = 0.0, to_target = 0.0;
    int converged = 0, hits = 0;
    for (const auto& r : p.manifest.replications) {
      calls += static_cast<double>(r.model_calls);
      error += r.final_error;
      converged += r.converged ? 1 : 0;
      if (r.calls_to_target >= 0) {
        to_target += static_cast<double>(r.calls_to_target);
        ++hits;
      }
    }
    const double n = static_cast<double>(p.manifest.replications.size());
    table << i;
    for (const auto& a : axes) table << ' ' << p.overrides[a];
    table << ' ' << p.manifest.replications.size() << ' ' << converged << ' ' << calls / n << ' ' << error / n
          << ' ' << (hits ? to_target / hits : -1.0) << '\n';
    table.flush();
    out.push_back(std::move(p));
  }
  return out;
}

// ----------------------------------------------------------------- export

std::vector<fs::path> export_records(const RunManifest& m, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  const auto method_it = m.config.find("experiment.method");
  const bool vi = method_it != m.config.end() &&
                  (method_it->second == "abris" || method_it->second == "bbvi-plain");

  std::vector<fs::path> written;
  for (const auto& r : m.replications) {
    const fs::path rec_path = out_dir / ("records_" + std::to_string(r.replication) + ".jsonl");
    const fs::path reuse_path = out_dir / ("reuse_" + std::to_string(r.replication) + ".tsv");
    auto rec = open_out(rec_path);
    auto reuse = open_out(reuse_path);
    reuse << std::setprecision(17) << "i j beta\n";
    if (vi && !r.records.empty() && fs::exists(m.directory() / r.records)) {
      std::ifstream in(m.directory() / r.records);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json full;
        try {
          full = json::parse(line);
        } catch (const json::exception& e) {
          throw std::runtime_error((m.directory() / r.records).string() + ": " + e.what());
        }
        json slim;
        for (const char* key : {"iteration", "cumulative_calls", "rounds", "ess", "e_is_norm", "e_ref_norm", "flags", "elbo"}) {
          slim[key] = full.at(key);
        }
        rec << slim.dump() << '\n';
        for (const auto& pair : full.at("mixture")) {
          reuse << full.at("iteration").get<long>() << ' ' << pair.at(0).get<long>() << ' '
                << pair.at(1).get<double>() << '\n';
        }
      }
    }
    if (!rec || !reuse) throw std::runtime_error("write failed in " + out_dir.string());
    written.push_back(rec_path);
    written.push_back(reuse_path);
  }

  const fs::path summary_path = out_dir / "summary.tsv";
  auto summary = open_out(summary_path);
  summary << std::setprecision(17)
          << "replication seed status iterations model_calls counted_calls converged budget_exhausted diverged "
             "final_error calls_to_target\n";
  for (const auto& r : m.replications) {
    summary << r.replication << ' ' << r.seed << ' ' << (r.status.empty() ? "-" : r.status) << ' ' << r.iterations
            << ' ' << r.model_calls << ' ' << r.counted_calls << ' ' << int(r.converged) << ' '
            << int(r.budget_exhausted) << ' ' << int(r.diverged) << ' ' << r.final_error << ' '
            << r.calls_to_target << '\n';
  }
  if (!summary) throw std::runtime_error("cannot write " + summary_path.string());
  written.push_back(summary_path);
  return written;
}

}  // namespace abris
