#include "ttalab/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ttalab {

using nlohmann::json;

namespace {

// A JSON object being read under a dotted key path. Every key must be
// consumed; leftovers are reported as unknown.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(node_.at(key), key_path(key));
  }

  template <class T>
  void read(const std::string& key, T& out) {
    const json* v = get(key);
    if (!v) return;
    out = convert<T>(*v, key_path(key));
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned()) {
        throw ConfigError(path + " must be nonnegative");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + " must be a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + " must be a string");
      return v.get<std::string>();
    } else {
      using E = typename T::value_type;
      if (!v.is_array()) throw ConfigError(path + " must be an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<E>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + key_path(it.key()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config document" : path_; }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

// A per-coordinate vector given either as one number or as `dim` numbers.
Tensor read_coordinates(const json& v, const std::string& path, std::size_t dim) {
  if (v.is_number()) return Tensor::vector(dim, v.get<double>());
  const auto values = Section::convert<std::vector<double>>(v, path);
  if (values.size() != dim) {
    throw ConfigError(path + " must hold " + std::to_string(dim) + " values, got " +
                      std::to_string(values.size()));
  }
  return Tensor({dim}, values);
}

void read_optimizer(Section& s) {
  std::string opt = "sgd";
  s.read("optimizer", opt);
  if (opt != "sgd") {
    throw ConfigError(s.key_path("optimizer") + " = '" + opt +
                      "' is not supported (only 'sgd', plain gradient descent)");
  }
}

}  // namespace

void ExperimentConfig::finalize() {
  benchmark.seed = seed;
  if (!shift_explicit) benchmark.shift = ShiftSpec::preset(benchmark.dim, seed);
  train.seed = Rng::derive(seed, 0x7121);
}

ExperimentConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Section root(doc, "");
  root.read("seed", cfg.seed);
  root.read("max_trials", cfg.max_trials);

  if (root.has("benchmark")) {
    Section b = root.child("benchmark");
    auto& spec = cfg.benchmark;
    b.read("n_classes", spec.n_classes);
    b.read("dim", spec.dim);
    b.read("train_size", spec.train_size);
    b.read("test_size", spec.test_size);
    b.read("batch_size", spec.batch_size);
    b.read("center_low", spec.center_low);
    b.read("center_high", spec.center_high);
    b.read("class_spread", spec.class_spread);
    if (b.has("shift")) {
      Section s = b.child("shift");
      cfg.shift_explicit = true;
      spec.shift = ShiftSpec::none(spec.dim);
      if (const json* v = s.get("bias")) spec.shift.bias = read_coordinates(*v, s.key_path("bias"), spec.dim);
      if (const json* v = s.get("scale")) {
        spec.shift.scale = read_coordinates(*v, s.key_path("scale"), spec.dim);
      }
      s.read("noise_std", spec.shift.noise_std);
      s.finish();
    }
    b.finish();
  }

  if (root.has("model")) {
    Section m = root.child("model");
    m.read("hidden", cfg.arch.hidden);
    if (const json* v = m.get("checkpoint")) {
      cfg.checkpoint = Section::convert<std::string>(*v, m.key_path("checkpoint"));
    }
    m.finish();
  }

  if (root.has("train")) {
    Section t = root.child("train");
    t.read("epochs", cfg.train.epochs);
    t.read("batch_size", cfg.train.batch_size);
    t.read("lr", cfg.train.lr);
    t.read("momentum", cfg.train.momentum);
    read_optimizer(t);
    t.finish();
  }

  if (root.has("tta")) {
    Section t = root.child("tta");
    if (const json* v = t.get("method")) {
      cfg.tta.method = parse_tta_method(Section::convert<std::string>(*v, t.key_path("method")));
    }
    t.read("eta", cfg.tta.eta);
    t.read("steps", cfg.tta.steps);
    t.read("q", cfg.tta.q);
    t.read("temperature", cfg.tta.temperature);
    read_optimizer(t);
    t.finish();
  }

  if (root.has("attack")) {
    Section a = root.child("attack");
    auto& plan = cfg.attack;
    if (const json* v = a.get("kind")) {
      plan.kind = parse_attack_kind(Section::convert<std::string>(*v, a.key_path("kind")));
    }
    a.read("n_mal", plan.n_mal);
    if (const json* v = a.get("epsilon")) {
      if (v->is_null()) {
        plan.epsilon.reset();
      } else {
        plan.epsilon = Section::convert<double>(*v, a.key_path("epsilon"));
      }
    }
    a.read("alpha", plan.alpha);
    a.read("steps", plan.steps);
    a.read("bilevel", plan.bilevel);
    a.read("omega", plan.omega);
    a.read("restarts", plan.restarts);
    a.finish();
  }

  if (root.has("defense")) {
    Section d = root.child("defense");
    DefenseSpec spec;
    d.read("tau", spec.tau);
    d.read("n_tr", spec.n_tr);
    d.finish();
    cfg.defense = spec;
  }

  if (root.has("sweep")) {
    Section s = root.child("sweep");
    s.read("n_mal", cfg.sweep.n_mal);
    s.read("taus", cfg.sweep.taus);
    s.read("n_trs", cfg.sweep.n_trs);
    s.finish();
  }
  root.finish();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace ttalab
