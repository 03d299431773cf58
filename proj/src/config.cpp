#include "selftune/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "selftune/errors.hpp"

namespace selftune {

std::string format_double(double value) {
  char buf[64];
  const std::to_chars_result res =
      std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& text) {
  double out = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const std::from_chars_result res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ConfigError("not a number: '" + text + "'");
  }
  return out;
}

int parse_int(const std::string& text) {
  int out = 0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const std::from_chars_result res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ConfigError("not an integer: '" + text + "'");
  }
  return out;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("not a boolean: '" + text + "' (expected true or false)");
}

std::vector<int> parse_seeds(const std::string& text) {
  std::vector<int> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if (item.empty()) throw ConfigError("empty entry in seed list");
    out.push_back(parse_int(item));
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::string format_seeds(const std::vector<int>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(seeds[i]);
  }
  return out;
}

std::string format_bool(bool value) { return value ? "true" : "false"; }

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"experiment.environment",
       [](const ExperimentConfig& c) { return c.environment; },
       [](ExperimentConfig& c, const std::string& v) { c.environment = v; }},
      {"experiment.algorithm",
       [](const ExperimentConfig& c) { return to_string(c.algorithm); },
       [](ExperimentConfig& c, const std::string& v) {
         c.algorithm = algorithm_from_string(v);
       }},
      {"experiment.outer_source",
       [](const ExperimentConfig& c) { return c.outer_source; },
       [](ExperimentConfig& c, const std::string& v) { c.outer_source = v; }},
      {"experiment.normalize_advantages",
       [](const ExperimentConfig& c) {
         return format_bool(c.normalize_advantages);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.normalize_advantages = parse_bool(v);
       }},
      {"experiment.budget",
       [](const ExperimentConfig& c) { return std::to_string(c.budget); },
       [](ExperimentConfig& c, const std::string& v) { c.budget = parse_int(v); }},
      {"experiment.batch_size",
       [](const ExperimentConfig& c) { return std::to_string(c.batch_size); },
       [](ExperimentConfig& c, const std::string& v) {
         c.batch_size = parse_int(v);
       }},
      {"experiment.sequence_length",
       [](const ExperimentConfig& c) {
         return std::to_string(c.sequence_length);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.sequence_length = parse_int(v);
       }},
      {"experiment.seeds",
       [](const ExperimentConfig& c) { return format_seeds(c.seeds); },
       [](ExperimentConfig& c, const std::string& v) { c.seeds = parse_seeds(v); }},
      {"experiment.output_dir",
       [](const ExperimentConfig& c) { return c.output_dir; },
       [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }},
      {"network.architecture",
       [](const ExperimentConfig& c) { return c.architecture; },
       [](ExperimentConfig& c, const std::string& v) { c.architecture = v; }},
      {"inner.gamma_start",
       [](const ExperimentConfig& c) { return format_double(c.gamma_start); },
       [](ExperimentConfig& c, const std::string& v) {
         c.gamma_start = parse_double(v);
       }},
      {"inner.gamma_lo",
       [](const ExperimentConfig& c) { return format_double(c.gamma_lo); },
       [](ExperimentConfig& c, const std::string& v) {
         c.gamma_lo = parse_double(v);
       }},
      {"inner.gamma_hi",
       [](const ExperimentConfig& c) { return format_double(c.gamma_hi); },
       [](ExperimentConfig& c, const std::string& v) {
         c.gamma_hi = parse_double(v);
       }},
      {"inner.lambda",
       [](const ExperimentConfig& c) { return format_double(c.inner_lambda); },
       [](ExperimentConfig& c, const std::string& v) {
         c.inner_lambda = parse_double(v);
       }},
      {"inner.c_pg",
       [](const ExperimentConfig& c) { return format_double(c.inner_c_pg); },
       [](ExperimentConfig& c, const std::string& v) {
         c.inner_c_pg = parse_double(v);
       }},
      {"inner.c_td",
       [](const ExperimentConfig& c) { return format_double(c.inner_c_td); },
       [](ExperimentConfig& c, const std::string& v) {
         c.inner_c_td = parse_double(v);
       }},
      {"inner.c_en",
       [](const ExperimentConfig& c) { return format_double(c.inner_c_en); },
       [](ExperimentConfig& c, const std::string& v) {
         c.inner_c_en = parse_double(v);
       }},
      {"inner_opt.kind",
       [](const ExperimentConfig& c) { return to_string(c.inner_opt.kind); },
       [](ExperimentConfig& c, const std::string& v) {
         c.inner_opt.kind = optimizer_kind_from_string(v);
       }},
      {"inner_opt.learning_rate",
       [](const ExperimentConfig& c) {
         return format_double(c.inner_opt.learning_rate);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.inner_opt.learning_rate = parse_double(v);
       }},
      {"inner_opt.clip_norm",
       [](const ExperimentConfig& c) {
         return format_double(c.inner_opt.clip_norm);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.inner_opt.clip_norm = parse_double(v);
       }},
      {"outer.gamma",
       [](const ExperimentConfig& c) { return format_double(c.outer_gamma); },
       [](ExperimentConfig& c, const std::string& v) {
         c.outer_gamma = parse_double(v);
       }},
      {"outer.lambda",
       [](const ExperimentConfig& c) { return format_double(c.outer_lambda); },
       [](ExperimentConfig& c, const std::string& v) {
         c.outer_lambda = parse_double(v);
       }},
      {"outer.c_pg",
       [](const ExperimentConfig& c) { return format_double(c.outer_c_pg); },
       [](ExperimentConfig& c, const std::string& v) {
         c.outer_c_pg = parse_double(v);
       }},
      {"outer.c_td",
       [](const ExperimentConfig& c) { return format_double(c.outer_c_td); },
       [](ExperimentConfig& c, const std::string& v) {
         c.outer_c_td = parse_double(v);
       }},
      {"outer.c_en",
       [](const ExperimentConfig& c) { return format_double(c.outer_c_en); },
       [](ExperimentConfig& c, const std::string& v) {
         c.outer_c_en = parse_double(v);
       }},
      {"meta_opt.kind",
       [](const ExperimentConfig& c) { return to_string(c.meta_kind); },
       [](ExperimentConfig& c, const std::string& v) {
         c.meta_kind = optimizer_kind_from_string(v);
       }},
      {"meta_opt.mg_learning_rate",
       [](const ExperimentConfig& c) {
         return format_double(c.mg_learning_rate);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.mg_learning_rate = parse_double(v);
       }},
      {"meta_opt.bmg_learning_rate",
       [](const ExperimentConfig& c) {
         return format_double(c.bmg_learning_rate);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.bmg_learning_rate = parse_double(v);
       }},
      {"meta_opt.clip_norm",
       [](const ExperimentConfig& c) { return format_double(c.meta_clip_norm); },
       [](ExperimentConfig& c, const std::string& v) {
         c.meta_clip_norm = parse_double(v);
       }},
      {"bmg.target_steps",
       [](const ExperimentConfig& c) {
         return std::to_string(c.bmg.target_steps);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.bmg.target_steps = parse_int(v);
       }},
      {"bmg.reverse_kl",
       [](const ExperimentConfig& c) { return format_bool(c.bmg.reverse_kl); },
       [](ExperimentConfig& c, const std::string& v) {
         c.bmg.reverse_kl = parse_bool(v);
       }},
      {"outer_critic.kind",
       [](const ExperimentConfig& c) {
         return to_string(c.outer_critic_opt.kind);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.outer_critic_opt.kind = optimizer_kind_from_string(v);
       }},
      {"outer_critic.learning_rate",
       [](const ExperimentConfig& c) {
         return format_double(c.outer_critic_opt.learning_rate);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.outer_critic_opt.learning_rate = parse_double(v);
       }},
      {"outer_critic.clip_norm",
       [](const ExperimentConfig& c) {
         return format_double(c.outer_critic_opt.clip_norm);
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.outer_critic_opt.clip_norm = parse_double(v);
       }},
      {"diagnostics.fd_check",
       [](const ExperimentConfig& c) { return format_bool(c.fd_check); },
       [](ExperimentConfig& c, const std::string& v) {
         c.fd_check = parse_bool(v);
       }},
      {"diagnostics.fd_epsilon",
       [](const ExperimentConfig& c) { return format_double(c.fd_epsilon); },
       [](ExperimentConfig& c, const std::string& v) {
         c.fd_epsilon = parse_double(v);
       }},
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"discounting-chain.mg.biased", "discounting-chain.mg.fixed",
          "discounting-chain.bmg.biased", "discounting-chain.bmg.fixed",
          "snake.mg.biased", "snake.mg.fixed"};
}

ExperimentConfig preset_config(const std::string& name) {
  // the defaults in the struct ARE the discounting-chain cell; the snake
  // cell overrides every row of the hyperparameter table that differs
  ExperimentConfig c;
  std::string rest;
  if (name.rfind("discounting-chain.", 0) == 0) {
    rest = name.substr(18);
    c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    c.outer_critic_opt.kind = OptimizerKind::sgd;
    c.outer_critic_opt.learning_rate = 0.0;
  } else if (name.rfind("snake.", 0) == 0) {
    rest = name.substr(6);
    c.environment = "snake-6x6";
    c.architecture = "conv-mlp";
    c.budget = 20000;
    c.batch_size = 512;
    c.sequence_length = 5;
    c.seeds = {0, 1, 2};
    c.gamma_start = 0.8;
    c.gamma_lo = 0.0;
    c.gamma_hi = 1.0;
    c.inner_lambda = 0.95;
    c.inner_c_pg = 1.0;
    c.inner_c_td = 0.5;
    c.inner_c_en = 0.01;
    c.inner_opt.kind = OptimizerKind::rmsprop;
    c.inner_opt.learning_rate = 5e-4;
    c.outer_gamma = 1.0;
    c.outer_lambda = 1.0;
    c.outer_c_pg = 1.0;
    c.outer_c_td = 0.0;
    c.outer_c_en = 0.0;
    c.mg_learning_rate = 3e-3;
    c.bmg_learning_rate = 6e-3;
    c.meta_clip_norm = 0.1;
    c.outer_critic_opt.kind = OptimizerKind::rmsprop;
    c.outer_critic_opt.learning_rate = 5e-4;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  if (rest == "mg.biased") {
    c.algorithm = Algorithm::mg;
    c.outer_source = "biased";
  } else if (rest == "mg.fixed") {
    c.algorithm = Algorithm::mg;
    c.outer_source = "fixed";
  } else if (rest == "bmg.biased" && name.rfind("snake.", 0) != 0) {
    c.algorithm = Algorithm::bmg;
    c.outer_source = "biased";
  } else if (rest == "bmg.fixed" && name.rfind("snake.", 0) != 0) {
    c.algorithm = Algorithm::bmg;
    c.outer_source = "fixed";
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::vector<std::string> errors;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string trimmed = strip(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(line_no) +
                       ": expected key = value, got '" + trimmed + "'");
      continue;
    }
    const std::string key = strip(trimmed.substr(0, eq));
    const std::string value = strip(trimmed.substr(eq + 1));
    const Field* field = find_field(key);
    if (!field) {
      errors.push_back(key + ": unknown key");
      continue;
    }
    try {
      field->set(config, value);
    } catch (const ConfigError& e) {
      errors.push_back(key + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "config errors:";
    for (const std::string& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return config;
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must be key=value, got '" + assignment + "'");
  }
  const std::string key = strip(assignment.substr(0, eq));
  const std::string value = strip(assignment.substr(eq + 1));
  const Field* field = find_field(key);
  if (!field) throw ConfigError(key + ": unknown key");
  try {
    field->set(config, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + std::string(e.what()));
  }
}

std::string dump_config(const ExperimentConfig& config) {
  std::string out;
  for (const Field& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(config);
    out += '\n';
  }
  return out;
}

void validate_config(const ExperimentConfig& config) {
  std::vector<std::string> errors;
  const bool chain = config.environment == "discounting-chain";
  const bool snake = config.environment == "snake-6x6";
  if (!chain && !snake) {
    errors.push_back(
        "experiment.environment: expected discounting-chain or snake-6x6, got '" +
        config.environment + "'");
  }
  if (config.outer_source != "biased" && config.outer_source != "fixed") {
    errors.push_back("experiment.outer_source: expected biased or fixed, got '" +
                     config.outer_source + "'");
  }
  if (config.architecture != "linear" && config.architecture != "conv-mlp") {
    errors.push_back("network.architecture: expected linear or conv-mlp, got '" +
                     config.architecture + "'");
  } else if (chain && config.architecture != "linear") {
    errors.push_back(
        "network.architecture: discounting-chain needs the linear network");
  } else if (snake && config.architecture != "conv-mlp") {
    errors.push_back("network.architecture: snake-6x6 needs the conv-mlp network");
  }
  if (config.budget < 0) errors.push_back("experiment.budget: must be >= 0");
  if (config.batch_size < 1) {
    errors.push_back("experiment.batch_size: must be >= 1");
  }
  if (config.sequence_length < 1) {
    errors.push_back("experiment.sequence_length: must be >= 1");
  }
  if (config.seeds.empty()) errors.push_back("experiment.seeds: must be non-empty");
  if (config.output_dir.empty()) {
    errors.push_back("experiment.output_dir: must be non-empty");
  }
  if (!(config.gamma_lo >= 0.0) || !(config.gamma_lo < config.gamma_hi) ||
      !(config.gamma_hi <= 1.0)) {
    errors.push_back(
        "inner.gamma_lo/inner.gamma_hi: need 0 <= lo < hi <= 1, got (" +
        format_double(config.gamma_lo) + ", " + format_double(config.gamma_hi) +
        ")");
  } else if (!(config.gamma_start > config.gamma_lo) ||
             !(config.gamma_start < config.gamma_hi)) {
    errors.push_back("inner.gamma_start: must lie strictly inside (" +
                     format_double(config.gamma_lo) + ", " +
                     format_double(config.gamma_hi) + ")");
  }
  if (config.inner_lambda < 0.0 || config.inner_lambda > 1.0) {
    errors.push_back("inner.lambda: must lie in [0, 1]");
  }
  if (config.outer_lambda < 0.0 || config.outer_lambda > 1.0) {
    errors.push_back("outer.lambda: must lie in [0, 1]");
  }
  if (config.outer_gamma < 0.0 || config.outer_gamma > 1.0) {
    errors.push_back("outer.gamma: must lie in [0, 1]");
  }
  if (config.inner_opt.learning_rate < 0.0) {
    errors.push_back("inner_opt.learning_rate: must be >= 0");
  }
  if (config.inner_opt.clip_norm < 0.0) {
    errors.push_back("inner_opt.clip_norm: must be >= 0");
  }
  if (config.mg_learning_rate < 0.0) {
    errors.push_back("meta_opt.mg_learning_rate: must be >= 0");
  }
  if (config.bmg_learning_rate < 0.0) {
    errors.push_back("meta_opt.bmg_learning_rate: must be >= 0");
  }
  if (config.meta_clip_norm < 0.0) {
    errors.push_back("meta_opt.clip_norm: must be >= 0");
  }
  if (config.bmg.target_steps < 1) {
    errors.push_back("bmg.target_steps: must be >= 1");
  }
  if (config.outer_critic_opt.learning_rate < 0.0) {
    errors.push_back("outer_critic.learning_rate: must be >= 0");
  }
  if (!(config.fd_epsilon > 0.0)) {
    errors.push_back("diagnostics.fd_epsilon: must be > 0");
  }
  if (!errors.empty()) {
    std::string msg = "config errors:";
    for (const std::string& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

ValueSource resolved_inner_source(const ExperimentConfig& config) {
  return config.architecture == "linear" ? ValueSource::oracle_gamma
                                         : ValueSource::inner_head;
}

ValueSource resolved_outer_source(const ExperimentConfig& config) {
  const bool biased = config.outer_source == "biased";
  if (config.architecture == "linear") {
    return biased ? ValueSource::oracle_gamma : ValueSource::oracle_gamma_prime;
  }
  return biased ? ValueSource::inner_head : ValueSource::outer_head;
}

MetaLossConfig loss_config(const ExperimentConfig& config) {
  MetaLossConfig cfg;
  cfg.inner.gamma = DualScalar::constant(config.gamma_start);  // overwritten per step
  cfg.inner.lambda = config.inner_lambda;
  cfg.inner.c_pg = config.inner_c_pg;
  cfg.inner.c_td = config.inner_c_td;
  cfg.inner.c_en = config.inner_c_en;
  cfg.inner.normalize = config.normalize_advantages;
  cfg.outer.gamma = DualScalar::constant(config.outer_gamma);
  cfg.outer.lambda = config.outer_lambda;
  cfg.outer.c_pg = config.outer_c_pg;
  cfg.outer.c_td = config.outer_c_td;
  cfg.outer.c_en = config.outer_c_en;
  cfg.outer.normalize = config.normalize_advantages;
  cfg.inner_source = resolved_inner_source(config);
  cfg.outer_source = resolved_outer_source(config);
  return cfg;
}

OptimizerConfig meta_optimizer_config(const ExperimentConfig& config) {
  OptimizerConfig opt;
  opt.kind = config.meta_kind;
  opt.learning_rate = config.algorithm == Algorithm::mg
                          ? config.mg_learning_rate
                          : config.bmg_learning_rate;
  opt.clip_norm = config.meta_clip_norm;
  return opt;
}

}  // namespace selftune
