#include "dino/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "dino/errors.hpp"

namespace dino {

namespace {

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) throw ConfigError("bad number '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("bad unsigned integer '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("bad boolean '" + s + "'");
}

Field real(std::string key, double& ref) {
  return {std::move(key), [&ref] { return fmt_double(ref); }, [&ref](const std::string& s) { ref = parse_double(s); }};
}

template <typename U>
Field count(std::string key, U& ref) {
  return {std::move(key), [&ref] { return std::to_string(ref); },
          [&ref](const std::string& s) { ref = static_cast<U>(parse_uint(s)); }};
}

Field flag(std::string key, bool& ref) {
  return {std::move(key), [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref](const std::string& s) { ref = parse_bool(s); }};
}

Field text(std::string key, std::string& ref) {
  return {std::move(key), [&ref] { return ref; }, [&ref](const std::string& s) { ref = s; }};
}

std::vector<Field> fields(RunConfig& c) {
  auto& v = c.model.vit;
  auto& h = c.model.head;
  auto& d = c.distill;
  auto& w = c.views;
  auto& o = c.optim;
  auto& t = c.toy;
  std::vector<Field> f{
      count("model.patch_size", v.patch_size),
      count("model.depth", v.depth),
      count("model.dim", v.dim),
      count("model.heads", v.heads),
      count("model.mlp_ratio", v.mlp_ratio),
      count("model.base_grid", v.base_grid),
      count("model.channels", v.channels),
      real("model.ln_eps", v.ln_eps),
      real("model.init_std", v.init_std),
      count("head.mlp_layers", h.mlp_layers),
      count("head.hidden_dim", h.hidden_dim),
      count("head.bottleneck_dim", h.bottleneck_dim),
      count("head.out_dim", h.out_dim),
      real("head.init_std", h.init_std),
      real("head.norm_eps", h.norm_eps),
      real("distill.student_temp", d.student_temp),
      real("distill.teacher_temp_start", d.teacher_temp_start),
      real("distill.teacher_temp", d.teacher_temp),
      real("distill.teacher_temp_warmup_epochs", d.teacher_temp_warmup_epochs),
      real("distill.center_momentum", d.center_momentum),
      real("distill.momentum_start", d.momentum_start),
      real("distill.momentum_end", d.momentum_end),
      {"distill.teacher_norm", [&d] { return distill::teacher_norm_name(d.teacher_norm); },
       [&d](const std::string& s) { d.teacher_norm = distill::parse_teacher_norm(s); }},
      flag("distill.centering", d.centering),
      count("distill.sinkhorn_iters", d.sinkhorn_iters),
      real("distill.sinkhorn_tau", d.sinkhorn_tau),
      count("views.n_local", w.n_local),
      count("views.global_size", w.global_size),
      count("views.local_size", w.local_size),
      real("views.scale_split", w.scale_split),
      real("views.min_local_scale", w.min_local_scale),
      real("views.ratio_min", w.ratio_min),
      real("views.ratio_max", w.ratio_max),
      real("views.flip_p", w.flip_p),
      real("views.jitter_p", w.jitter_p),
      real("views.brightness", w.brightness),
      real("views.contrast", w.contrast),
      real("views.saturation", w.saturation),
      real("views.blur_p_global1", w.blur_p_global1),
      real("views.blur_p_global2", w.blur_p_global2),
      real("views.blur_p_local", w.blur_p_local),
      real("views.blur_sigma_min", w.blur_sigma_min),
      real("views.blur_sigma_max", w.blur_sigma_max),
      real("views.solarize_p_global2", w.solarize_p_global2),
      real("views.solarize_threshold", w.solarize_threshold),
      real("optim.lr_base", o.lr_base),
      real("optim.lr_final", o.lr_final),
      real("optim.warmup_epochs", o.warmup_epochs),
      real("optim.wd_start", o.wd_start),
      real("optim.wd_end", o.wd_end),
      real("optim.beta1", o.adam.beta1),
      real("optim.beta2", o.adam.beta2),
      real("optim.eps", o.adam.eps),
      count("eval.every", c.eval.every),
      count("eval.k", c.eval.k),
      real("eval.tau", c.eval.tau),
      count("eval.layers", c.eval.layers),
      count("eval.train_limit", c.eval.train_limit),
      count("eval.test_limit", c.eval.test_limit),
      text("data.train", c.train_path),
      text("data.test", c.test_path),
      count("toy.train_per_class", t.train_per_class),
      count("toy.test_per_class", t.test_per_class),
      {"toy.classes",
       [&t] {
         std::string s;
         for (std::size_t i = 0; i < t.classes.size(); ++i) s += (i ? "," : "") + t.classes[i];
         return s;
       },
       [&t](const std::string& s) {
         t.classes.clear();
         std::stringstream ss(s);
         std::string item;
         while (std::getline(ss, item, ',')) t.classes.push_back(item);
       }},
      count("toy.side", t.side),
      real("toy.noise", t.noise),
      real("toy.position_jitter", t.position_jitter),
      real("toy.scale_jitter", t.scale_jitter),
      real("toy.rotation_jitter", t.rotation_jitter),
      real("toy.color_jitter", t.color_jitter),
      real("toy.background_jitter", t.background_jitter),
      count("toy.seed", t.seed),
      count("train.epochs", c.epochs),
      count("train.batch_size", c.batch_size),
      count("train.seed", c.seed),
      count("train.checkpoint_every", c.checkpoint_every),
      count("train.stop_at_step", c.stop_at_step),
      text("train.out_dir", c.out_dir),
  };
  return f;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  distill.validate();
  views.validate(model.vit.patch_size);
  if (views.global_size % model.vit.patch_size != 0) throw ConfigError("global size must be divisible by the patch");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (!(optim.lr_base > 0)) throw ConfigError("optim.lr_base must be positive");
  if (optim.lr_final < 0 || optim.wd_start < 0 || optim.wd_end < 0 || optim.warmup_epochs < 0) {
    throw ConfigError("optimizer schedule values must be non-negative");
  }
  if (!(optim.adam.beta1 >= 0 && optim.adam.beta1 < 1 && optim.adam.beta2 >= 0 && optim.adam.beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(optim.adam.eps > 0)) throw ConfigError("optim.eps must be positive");
  if (eval.k == 0 || !(eval.tau > 0) || eval.layers == 0 || eval.layers > model.vit.depth) {
    throw ConfigError("eval.k, eval.tau and eval.layers must be positive (layers <= depth)");
  }
  if (train_path.empty() != test_path.empty()) throw ConfigError("data.train and data.test go together");
  if (train_path.empty()) toy.validate();
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (auto& f : fields(config)) {
    if (f.key == key) {
      f.set(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    } catch (const Error& e) {
      throw ConfigError(where + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const RunConfig& config) {
  RunConfig copy = config;
  std::string out;
  for (const auto& f : fields(copy)) out += f.key + "=" + f.get() + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  RunConfig c;
  std::vector<std::string> keys;
  for (const auto& f : fields(c)) keys.push_back(f.key);
  return keys;
}

}  // namespace dino
