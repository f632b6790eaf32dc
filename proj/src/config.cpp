#include "topkast/config.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace topkast {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return x;
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base) / p).lexically_normal().string();
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"method", [](TrainConfig& c, const std::string&, const std::string& v) {
         try {
           c.method = parse_method(v);
         } catch (const ArgumentError& e) {
           throw ConfigError(e.what());
         }
       }},
      {"fwd_sparsity", [](TrainConfig& c, const std::string& k, const std::string& v) { c.sparsity.s_fwd = to_double(k, v); }},
      {"bwd_sparsity", [](TrainConfig& c, const std::string& k, const std::string& v) { c.sparsity.s_bwd = to_double(k, v); }},
      {"refresh_period", [](TrainConfig& c, const std::string& k, const std::string& v) { c.sparsity.refresh_period = to_int(k, v); }},
      {"dense_exempt", [](TrainConfig& c, const std::string&, const std::string& v) {
         auto items = split_list(v);
         c.sparsity.dense_exempt = {items.begin(), items.end()};
       }},
      {"layers", [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.layers.clear();
         for (const auto& item : split_list(v)) c.layers.push_back(to_int(k, item));
       }},
      {"learning_rate", [](TrainConfig& c, const std::string& k, const std::string& v) { c.learning_rate = to_double(k, v); }},
      {"warmup_fraction", [](TrainConfig& c, const std::string& k, const std::string& v) { c.warmup_fraction = to_double(k, v); }},
      {"decay_points", [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.decay_points.clear();
         for (const auto& item : split_list(v)) c.decay_points.push_back(to_double(k, item));
       }},
      {"decay_factor", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decay_factor = to_double(k, v); }},
      {"reg_coeff", [](TrainConfig& c, const std::string& k, const std::string& v) { c.reg_coeff = to_double(k, v); }},
      {"reg_exponent", [](TrainConfig& c, const std::string& k, const std::string& v) { c.reg_exponent = static_cast<int>(to_int(k, v)); }},
      {"momentum", [](TrainConfig& c, const std::string& k, const std::string& v) { c.momentum = to_double(k, v); }},
      {"zero_momentum_on_mask_change", [](TrainConfig& c, const std::string& k, const std::string& v) { c.zero_momentum_on_mask_change = to_bool(k, v); }},
      {"steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.steps = to_int(k, v); }},
      {"batch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = to_int(k, v); }},
      {"eval_period", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_period = to_int(k, v); }},
      {"churn_period", [](TrainConfig& c, const std::string& k, const std::string& v) { c.churn_period = to_int(k, v); }},
      {"checkpoint_period", [](TrainConfig& c, const std::string& k, const std::string& v) { c.checkpoint_period = to_int(k, v); }},
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"precision", [](TrainConfig& c, const std::string& k, const std::string& v) { c.precision = static_cast<int>(to_int(k, v)); }},
      {"dataset", [](TrainConfig& c, const std::string&, const std::string& v) { c.dataset = v; }},
      {"train_images", [](TrainConfig& c, const std::string&, const std::string& v) { c.train_images = v; }},
      {"train_labels", [](TrainConfig& c, const std::string&, const std::string& v) { c.train_labels = v; }},
      {"test_images", [](TrainConfig& c, const std::string&, const std::string& v) { c.test_images = v; }},
      {"test_labels", [](TrainConfig& c, const std::string&, const std::string& v) { c.test_labels = v; }},
      {"synth_train_examples", [](TrainConfig& c, const std::string& k, const std::string& v) { c.synth_train_examples = to_int(k, v); }},
      {"synth_eval_examples", [](TrainConfig& c, const std::string& k, const std::string& v) { c.synth_eval_examples = to_int(k, v); }},
      {"teacher_sparsity", [](TrainConfig& c, const std::string& k, const std::string& v) { c.teacher_sparsity = to_double(k, v); }},
      {"noise_sigma", [](TrainConfig& c, const std::string& k, const std::string& v) { c.noise_sigma = to_double(k, v); }},
      {"teacher_seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.teacher_seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"b_selection", [](TrainConfig& c, const std::string&, const std::string& v) {
         if (v == "topk") {
           c.ablation.b_selection = BSelection::TopK;
         } else if (v == "random") {
           c.ablation.b_selection = BSelection::Random;
         } else {
           throw ConfigError("'b_selection' expects topk or random, got '" + v + "'");
         }
       }},
      {"stop_exploration_at_step", [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v.empty() || v == "none") {
           c.ablation.stop_exploration_at_step.reset();
         } else {
           c.ablation.stop_exploration_at_step = to_int(k, v);
         }
       }},
      {"set_prune_fraction", [](TrainConfig& c, const std::string& k, const std::string& v) { c.baseline.set_prune_fraction = to_double(k, v); }},
      {"set_update_period", [](TrainConfig& c, const std::string& k, const std::string& v) { c.baseline.set_update_period = to_int(k, v); }},
      {"out_dir", [](TrainConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
  };
  return table;
}

const std::set<std::string> kRequired = {"method", "dataset"};

void apply(TrainConfig& c, std::set<std::string>& seen, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(c, key, value);
  seen.insert(key);
}

}  // namespace

void TrainConfig::validate() const {
  auto fraction = [](const char* key, double v) {
    if (!(v >= 0.0 && v < 1.0)) throw ConfigError(std::string("'") + key + "' must lie in [0, 1)");
  };
  fraction("fwd_sparsity", sparsity.s_fwd);
  fraction("bwd_sparsity", sparsity.s_bwd);
  if (sparsity.s_bwd > sparsity.s_fwd) {
    throw ConfigError("'bwd_sparsity' exceeds 'fwd_sparsity' (the exploration fraction would be negative)");
  }
  if (sparsity.refresh_period < 1) throw ConfigError("'refresh_period' must be at least 1");
  if (layers.size() < 2) throw ConfigError("'layers' needs at least an input and an output size");
  for (Index l : layers) {
    if (l < 1) throw ConfigError("'layers' entries must be positive");
  }
  if (!(learning_rate >= 0.0)) throw ConfigError("'learning_rate' must be non-negative");
  fraction("warmup_fraction", warmup_fraction);
  for (double d : decay_points) {
    if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("'decay_points' entries must lie in [0, 1]");
  }
  if (!(decay_factor > 0.0)) throw ConfigError("'decay_factor' must be positive");
  if (!(reg_coeff >= 0.0)) throw ConfigError("'reg_coeff' must be non-negative");
  if (reg_exponent != 1 && reg_exponent != 2) throw ConfigError("'reg_exponent' must be 1 or 2");
  fraction("momentum", momentum);
  if (steps < 1) throw ConfigError("'steps' must be at least 1");
  if (batch_size < 1) throw ConfigError("'batch_size' must be at least 1");
  if (eval_period < 1) throw ConfigError("'eval_period' must be at least 1");
  if (churn_period < 0) throw ConfigError("'churn_period' must be non-negative");
  if (checkpoint_period < 0) throw ConfigError("'checkpoint_period' must be non-negative");
  if (precision != 32 && precision != 64) throw ConfigError("'precision' must be 32 or 64");
  if (dataset == "idx") {
    if (train_images.empty() || train_labels.empty() || test_images.empty() || test_labels.empty()) {
      throw ConfigError("dataset=idx requires train_images, train_labels, test_images and test_labels");
    }
  } else if (dataset == "synthetic") {
    if (synth_train_examples < 1 || synth_eval_examples < 1) throw ConfigError("synthetic example counts must be positive");
    fraction("teacher_sparsity", teacher_sparsity);
    if (!(noise_sigma >= 0.0)) throw ConfigError("'noise_sigma' must be non-negative");
  } else {
    throw ConfigError("'dataset' must be idx or synthetic, got '" + dataset + "'");
  }
  if (ablation.stop_exploration_at_step && *ablation.stop_exploration_at_step < 0) {
    throw ConfigError("'stop_exploration_at_step' must be non-negative");
  }
  fraction("set_prune_fraction", baseline.set_prune_fraction);
  if (baseline.set_update_period < 1) throw ConfigError("'set_update_period' must be at least 1");
  if (out_dir.empty()) throw ConfigError("'out_dir' must not be empty");
}

TrainConfig parse_config_text(const std::string& text, const std::string& base_dir, const ConfigOverrides& overrides) {
  TrainConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (seen.contains(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    apply(c, seen, key, trim(line.substr(eq + 1)));
  }
  for (const std::string& key : kRequired) {
    if (!seen.contains(key)) throw ConfigError("missing required key '" + key + "'");
  }
  if (const char* env = std::getenv(kOutDirEnv); env && *env) c.out_dir = env;
  for (const auto& [key, value] : overrides) apply(c, seen, key, value);

  if (!seen.contains("layers")) {
    c.layers = c.dataset == "synthetic" ? std::vector<Index>{64, 64, 32, 1} : std::vector<Index>{784, 300, 100, 10};
  }
  if (!seen.contains("set_update_period")) c.baseline.set_update_period = c.sparsity.refresh_period;
  c.baseline.kind = c.method;
  c.train_images = resolve(base_dir, c.train_images);
  c.train_labels = resolve(base_dir, c.train_labels);
  c.test_images = resolve(base_dir, c.test_images);
  c.test_labels = resolve(base_dir, c.test_labels);
  c.validate();
  return c;
}

TrainConfig parse_config(const std::string& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string base = std::filesystem::path(path).parent_path().string();
  return parse_config_text(ss.str(), base.empty() ? "." : base, overrides);
}

std::string to_config_text(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  std::vector<std::string> exempt(c.sparsity.dense_exempt.begin(), c.sparsity.dense_exempt.end());
  out << "method = " << to_string(c.method) << "\n"
      << "fwd_sparsity = " << c.sparsity.s_fwd << "\n"
      << "bwd_sparsity = " << c.sparsity.s_bwd << "\n"
      << "refresh_period = " << c.sparsity.refresh_period << "\n"
      << "dense_exempt = " << join(exempt) << "\n"
      << "layers = " << join(c.layers) << "\n"
      << "learning_rate = " << c.learning_rate << "\n"
      << "warmup_fraction = " << c.warmup_fraction << "\n"
      << "decay_points = " << join(c.decay_points) << "\n"
      << "decay_factor = " << c.decay_factor << "\n"
      << "reg_coeff = " << c.reg_coeff << "\n"
      << "reg_exponent = " << c.reg_exponent << "\n"
      << "momentum = " << c.momentum << "\n"
      << "zero_momentum_on_mask_change = " << (c.zero_momentum_on_mask_change ? "true" : "false") << "\n"
      << "steps = " << c.steps << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "eval_period = " << c.eval_period << "\n"
      << "churn_period = " << c.churn_period << "\n"
      << "checkpoint_period = " << c.checkpoint_period << "\n"
      << "seed = " << c.seed << "\n"
      << "precision = " << c.precision << "\n"
      << "dataset = " << c.dataset << "\n"
      << "train_images = " << c.train_images << "\n"
      << "train_labels = " << c.train_labels << "\n"
      << "test_images = " << c.test_images << "\n"
      << "test_labels = " << c.test_labels << "\n"
      << "synth_train_examples = " << c.synth_train_examples << "\n"
      << "synth_eval_examples = " << c.synth_eval_examples << "\n"
      << "teacher_sparsity = " << c.teacher_sparsity << "\n"
      << "noise_sigma = " << c.noise_sigma << "\n"
      << "teacher_seed = " << c.teacher_seed << "\n"
      << "b_selection = " << (c.ablation.b_selection == BSelection::Random ? "random" : "topk") << "\n"
      << "stop_exploration_at_step = "
      << (c.ablation.stop_exploration_at_step ? std::to_string(*c.ablation.stop_exploration_at_step) : "none") << "\n"
      << "set_prune_fraction = " << c.baseline.set_prune_fraction << "\n"
      << "set_update_period = " << c.baseline.set_update_period << "\n"
      << "out_dir = " << c.out_dir << "\n";
  return out.str();
}

}  // namespace topkast
