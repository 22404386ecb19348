#include "maskdiff/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace maskdiff {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Cuts a trailing comment, respecting quoted strings of either style.
std::string strip_comment(const std::string& line) {
  char quote = '\0';
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quote == '\0' && (c == '"' || c == '\'')) {
      quote = c;
    } else if (c == quote && (quote == '\'' || line[i - 1] != '\\')) {
      quote = '\0';
    }
    if (c == '#' && quote == '\0') return line.substr(0, i);
  }
  return line;
}

bool parse_integer(const std::string& s, int64_t& out) {
  if (s.empty()) return false;
  size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  for (size_t j = i; j < s.size(); ++j)
    if (!std::isdigit(static_cast<unsigned char>(s[j]))) return false;
  try {
    out = std::stoll(s);
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

bool parse_float(const std::string& s, double& out) {
  try {
    size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

std::string unquote(const std::string& s, const char* where) {
  if (s.size() < 2 || s.back() != '"')
    throw ConfigError(std::string(where) + ": unterminated string");
  std::string out;
  for (size_t i = 1; i + 1 < s.size(); ++i) {
    char c = s[i];
    if (c == '\\') {
      if (i + 2 >= s.size()) throw ConfigError(std::string(where) + ": dangling escape");
      char n = s[++i];
      if (n == '"' || n == '\\') {
        out.push_back(n);
      } else {
        throw ConfigError(std::string(where) + ": unsupported escape");
      }
    } else {
      out.push_back(c);
    }
  }
  return out;
}

// Splits a TOML array body on commas that sit outside strings.
std::vector<std::string> split_array_items(const std::string& body, const char* where) {
  std::vector<std::string> items;
  std::string cur;
  char quote = '\0';
  for (size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (quote == '\0' && (c == '"' || c == '\'')) {
      quote = c;
    } else if (c == quote && (quote == '\'' || body[i - 1] != '\\')) {
      quote = '\0';
    }
    if (c == ',' && quote == '\0') {
      items.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quote != '\0') throw ConfigError(std::string(where) + ": unterminated string in array");
  if (!trim(cur).empty() || !items.empty()) items.push_back(cur);
  return items;
}

nlohmann::json parse_scalar(const std::string& raw, const char* where, bool bare_fallback);

nlohmann::json parse_value(const std::string& raw, const char* where, bool bare_fallback) {
  const std::string v = trim(raw);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw ConfigError(std::string(where) + ": unterminated array");
    nlohmann::json arr = nlohmann::json::array();
    for (const std::string& item : split_array_items(v.substr(1, v.size() - 2), where)) {
      const std::string t = trim(item);
      if (t.empty()) throw ConfigError(std::string(where) + ": empty array element");
      arr.push_back(parse_scalar(t, where, bare_fallback));
    }
    return arr;
  }
  return parse_scalar(v, where, bare_fallback);
}

nlohmann::json parse_scalar(const std::string& raw, const char* where, bool bare_fallback) {
  const std::string v = trim(raw);
  if (v.empty()) throw ConfigError(std::string(where) + ": empty value");
  if (v.front() == '"') return unquote(v, where);
  if (v.front() == '\'') { // literal string, no escapes
    if (v.size() < 2 || v.back() != '\'')
      throw ConfigError(std::string(where) + ": unterminated string");
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  int64_t i = 0;
  if (parse_integer(v, i)) return i;
  double d = 0.0;
  if (parse_float(v, d)) return d;
  if (bare_fallback) return v; // command-line overrides accept bare strings
  throw ConfigError(std::string(where) + ": cannot parse value '" + v + "'");
}

} // namespace

nlohmann::json parse_toml_config(const std::string& text) {
  nlohmann::json doc = nlohmann::json::object();
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno);
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(body.substr(1, body.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      if (!doc.contains(section)) doc[section] = nlohmann::json::object();
      continue;
    }
    const size_t eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (section.empty()) throw ConfigError(where + ": key outside a section");
    doc[section][key] = parse_value(body.substr(eq + 1), where.c_str(), false);
  }
  return doc;
}

nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  bool looks_json = path.size() > 5 && path.substr(path.size() - 5) == ".json";
  if (!looks_json) {
    for (char c : text) {
      if (std::isspace(static_cast<unsigned char>(c))) continue;
      looks_json = c == '{';
      break;
    }
  }
  if (looks_json) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
  }
  return parse_toml_config(text);
}

void apply_override(nlohmann::json& doc, const std::string& key_equals_value) {
  const size_t eq = key_equals_value.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value: " + key_equals_value);
  const std::string path = key_equals_value.substr(0, eq);
  if (path.find('.') == std::string::npos)
    throw ConfigError("override must look like section.key=value: " + key_equals_value);
  nlohmann::json value = parse_value(key_equals_value.substr(eq + 1), "override", true);

  nlohmann::json* node = &doc;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string part = trim(path.substr(start, dot - start));
    if (part.empty()) throw ConfigError("override has an empty path segment: " + path);
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (!node->is_object() && !node->is_null())
      throw ConfigError("override path crosses a non-section value: " + path);
    start = dot + 1;
  }
}

namespace {

// Typed access to one section with unknown-key detection.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& doc, const std::string& name) : name_(name) {
    if (doc.contains(name)) {
      if (!doc.at(name).is_object()) throw ConfigError("[" + name + "] must be a section");
      section_ = &doc.at(name);
    }
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (section_ == nullptr || !section_->contains(key)) return fallback;
    try {
      return section_->at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("[" + name_ + "] " + key + ": wrong type");
    }
  }

  void finish() const {
    if (section_ == nullptr) return;
    for (auto it = section_->begin(); it != section_->end(); ++it)
      if (!seen_.contains(it.key()))
        throw ConfigError("[" + name_ + "] unknown key: " + it.key());
  }

 private:
  const nlohmann::json* section_ = nullptr;
  std::string name_;
  std::set<std::string> seen_;
};

TrainableMask parse_trainable(const std::string& groups) {
  if (groups == "all") return TrainableMask{true, true, true};
  if (groups == "none") return TrainableMask{false, false, false};
  TrainableMask m{false, false, false};
  size_t start = 0;
  while (start <= groups.size()) {
    const size_t plus = groups.find('+', start);
    const std::string part = groups.substr(start, plus - start);
    if (part == "embed") {
      m.token_embed = true;
    } else if (part == "pos") {
      m.pos_embed = true;
    } else if (part == "proj") {
      m.out_proj = true;
    } else {
      throw ConfigError("[run] trainable: unknown group '" + part + "'");
    }
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return m;
}

std::string trainable_to_string(const TrainableMask& m) {
  if (m.token_embed && m.pos_embed && m.out_proj) return "all";
  if (!m.token_embed && !m.pos_embed && !m.out_proj) return "none";
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += name;
  };
  add(m.token_embed, "embed");
  add(m.pos_embed, "pos");
  add(m.out_proj, "proj");
  return out;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

} // namespace

nlohmann::json default_config_doc() { return config_to_doc(RunConfig{}); }

RunConfig parse_run_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be an object of sections");
  static const std::set<std::string> known_sections = {"task",      "layout",    "objective",
                                                       "scheduler", "optimizer", "run"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!known_sections.contains(it.key())) throw ConfigError("unknown section: " + it.key());

  RunConfig cfg;

  SectionReader task(doc, "task");
  cfg.task.rule = task.get<std::string>("rule", cfg.task.rule);
  cfg.task.vocab = task.get<int>("vocab", cfg.task.vocab);
  cfg.task.prompt_len = task.get<int>("prompt_len", cfg.task.prompt_len);
  cfg.task.train_pairs = task.get<int>("train_pairs", cfg.task.train_pairs);
  cfg.task.heldout_pairs = task.get<int>("heldout_pairs", cfg.task.heldout_pairs);
  cfg.task.data_seed = task.get<uint64_t>("data_seed", cfg.task.data_seed);
  task.finish();
  require(cfg.task.rule == "prefer-sorted" || cfg.task.rule == "prefer-target-bigrams",
          "[task] rule: unknown rule '" + cfg.task.rule + "'");
  require(cfg.task.vocab >= 2, "[task] vocab must be >= 2");
  require(cfg.task.prompt_len >= 0, "[task] prompt_len must be >= 0");
  require(cfg.task.train_pairs >= 1, "[task] train_pairs must be >= 1");
  require(cfg.task.heldout_pairs >= 1, "[task] heldout_pairs must be >= 1");

  SectionReader layout(doc, "layout");
  cfg.num_blocks = layout.get<int>("num_blocks", cfg.num_blocks);
  cfg.steps_per_block = layout.get<int>("steps_per_block", cfg.steps_per_block);
  cfg.block_size = layout.get<int>("block_size", cfg.block_size);
  layout.finish();
  require(cfg.num_blocks >= 1 && cfg.steps_per_block >= 1 && cfg.block_size >= 1,
          "[layout] all dimensions must be >= 1");

  SectionReader obj(doc, "objective");
  cfg.train.objective = obj.get<std::string>("name", cfg.train.objective);
  cfg.train.dtrpo.lambda = obj.get<double>("lambda", cfg.train.dtrpo.lambda);
  const std::string projection =
      obj.get<std::string>("projection", to_string(cfg.train.dtrpo.projection.kind));
  const double ipo_margin = obj.get<double>("ipo_margin", std::nan(""));
  const double apo_shift = obj.get<double>("apo_shift", std::nan(""));
  cfg.train.dtrpo.samples_per_block =
      obj.get<int>("samples_per_block", cfg.train.dtrpo.samples_per_block);
  cfg.train.dtrpo.use_packed = obj.get<bool>("use_packed", cfg.train.dtrpo.use_packed);
  cfg.train.vrpo_n_mc = obj.get<int>("vrpo_n_mc", cfg.train.vrpo_n_mc);
  obj.finish();

  static const std::set<std::string> objectives = {"dtrpo", "naive_masked", "elbo_sft",
                                                   "mean_field_dpo", "vrpo"};
  require(objectives.contains(cfg.train.objective),
          "[objective] name: unknown objective '" + cfg.train.objective + "'");
  try {
    cfg.train.dtrpo.projection.kind = projection_from_string(projection);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[objective] projection: ") + e.what());
  }
  if (!std::isnan(ipo_margin)) cfg.train.dtrpo.projection.ipo_margin = ipo_margin;
  if (!std::isnan(apo_shift)) cfg.train.dtrpo.projection.apo_shift = apo_shift;
  require(cfg.train.dtrpo.projection.kind != Projection::ipo_square ||
              cfg.train.dtrpo.projection.ipo_margin.has_value(),
          "[objective] ipo_margin is required for the ipo_square projection");
  require(cfg.train.dtrpo.projection.kind != Projection::apo ||
              cfg.train.dtrpo.projection.apo_shift.has_value(),
          "[objective] apo_shift is required for the apo projection");
  require(cfg.train.dtrpo.lambda > 0.0, "[objective] lambda must be > 0");
  require(cfg.train.dtrpo.samples_per_block >= 1, "[objective] samples_per_block must be >= 1");
  require(cfg.train.vrpo_n_mc >= 1, "[objective] vrpo_n_mc must be >= 1");

  SectionReader sch(doc, "scheduler");
  const std::string kind = sch.get<std::string>("kind", to_string(cfg.train.dtrpo.scheduler.kind));
  cfg.train.dtrpo.scheduler.fraction = sch.get<double>("k", cfg.train.dtrpo.scheduler.fraction);
  cfg.train.dtrpo.scheduler.gaussian_center =
      sch.get<double>("gaussian_center", cfg.train.dtrpo.scheduler.gaussian_center);
  cfg.train.dtrpo.scheduler.gaussian_width =
      sch.get<double>("gaussian_width", cfg.train.dtrpo.scheduler.gaussian_width);
  cfg.train.dtrpo.scheduler.confidence_from_ref =
      sch.get<bool>("confidence_from_ref", cfg.train.dtrpo.scheduler.confidence_from_ref);
  cfg.train.dtrpo.scheduler.single_forward_replay =
      sch.get<bool>("single_forward_replay", cfg.train.dtrpo.scheduler.single_forward_replay);
  sch.finish();
  try {
    cfg.train.dtrpo.scheduler.kind = scheduler_kind_from_string(kind);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[scheduler] kind: ") + e.what());
  }
  require(cfg.train.dtrpo.scheduler.fraction > 0.0 && cfg.train.dtrpo.scheduler.fraction <= 1.0,
          "[scheduler] k must lie in (0, 1]");
  cfg.train.dtrpo.scheduler.block_size = cfg.block_size;

  SectionReader opt(doc, "optimizer");
  cfg.train.adam.lr = opt.get<double>("lr", cfg.train.adam.lr);
  cfg.train.adam.beta1 = opt.get<double>("beta1", cfg.train.adam.beta1);
  cfg.train.adam.beta2 = opt.get<double>("beta2", cfg.train.adam.beta2);
  cfg.train.adam.eps = opt.get<double>("eps", cfg.train.adam.eps);
  cfg.train.adam.weight_decay = opt.get<double>("weight_decay", cfg.train.adam.weight_decay);
  cfg.train.batch_size = opt.get<int>("batch_size", cfg.train.batch_size);
  cfg.train.grad_accum = opt.get<int>("grad_accum", cfg.train.grad_accum);
  cfg.train.warmup_fraction = opt.get<double>("warmup_fraction", cfg.train.warmup_fraction);
  opt.finish();
  require(cfg.train.adam.lr > 0.0, "[optimizer] lr must be > 0");
  require(cfg.train.adam.weight_decay >= 0.0, "[optimizer] weight_decay must be >= 0");
  require(cfg.train.batch_size >= 1, "[optimizer] batch_size must be >= 1");
  require(cfg.train.grad_accum >= 1, "[optimizer] grad_accum must be >= 1");
  require(cfg.train.warmup_fraction >= 0.0 && cfg.train.warmup_fraction <= 1.0,
          "[optimizer] warmup_fraction must lie in [0, 1]");

  SectionReader run(doc, "run");
  cfg.train.master_seed = run.get<uint64_t>("seed", cfg.train.master_seed);
  cfg.train.epochs = run.get<int>("epochs", cfg.train.epochs);
  cfg.train.max_steps = run.get<int>("max_steps", cfg.train.max_steps);
  cfg.train.eval_every = run.get<int>("eval_every", cfg.train.eval_every);
  cfg.train.eval_reps = run.get<int>("eval_reps", cfg.train.eval_reps);
  cfg.train.eval_generations = run.get<int>("eval_generations", cfg.train.eval_generations);
  cfg.train.embed_dim = run.get<int>("embed_dim", cfg.train.embed_dim);
  cfg.train.init_scale = run.get<double>("init_scale", cfg.train.init_scale);
  const std::string trainable =
      run.get<std::string>("trainable", trainable_to_string(cfg.train.trainable));
  run.finish();
  cfg.train.trainable = parse_trainable(trainable);
  require(cfg.train.epochs >= 1, "[run] epochs must be >= 1");
  require(cfg.train.max_steps >= 0, "[run] max_steps must be >= 0");
  require(cfg.train.eval_every >= 1, "[run] eval_every must be >= 1");
  require(cfg.train.eval_reps >= 1, "[run] eval_reps must be >= 1");
  require(cfg.train.eval_generations >= 0, "[run] eval_generations must be >= 0");
  require(cfg.train.embed_dim >= 1, "[run] embed_dim must be >= 1");
  require(cfg.train.init_scale > 0.0, "[run] init_scale must be > 0");

  return cfg;
}

nlohmann::json config_to_doc(const RunConfig& cfg) {
  nlohmann::json doc;
  doc["task"] = {{"rule", cfg.task.rule},
                 {"vocab", cfg.task.vocab},
                 {"prompt_len", cfg.task.prompt_len},
                 {"train_pairs", cfg.task.train_pairs},
                 {"heldout_pairs", cfg.task.heldout_pairs},
                 {"data_seed", cfg.task.data_seed}};
  doc["layout"] = {{"num_blocks", cfg.num_blocks},
                   {"steps_per_block", cfg.steps_per_block},
                   {"block_size", cfg.block_size}};
  doc["objective"] = {{"name", cfg.train.objective},
                      {"lambda", cfg.train.dtrpo.lambda},
                      {"projection", to_string(cfg.train.dtrpo.projection.kind)},
                      {"samples_per_block", cfg.train.dtrpo.samples_per_block},
                      {"use_packed", cfg.train.dtrpo.use_packed},
                      {"vrpo_n_mc", cfg.train.vrpo_n_mc}};
  if (cfg.train.dtrpo.projection.ipo_margin)
    doc["objective"]["ipo_margin"] = *cfg.train.dtrpo.projection.ipo_margin;
  if (cfg.train.dtrpo.projection.apo_shift)
    doc["objective"]["apo_shift"] = *cfg.train.dtrpo.projection.apo_shift;
  doc["scheduler"] = {{"kind", to_string(cfg.train.dtrpo.scheduler.kind)},
                      {"k", cfg.train.dtrpo.scheduler.fraction},
                      {"gaussian_center", cfg.train.dtrpo.scheduler.gaussian_center},
                      {"gaussian_width", cfg.train.dtrpo.scheduler.gaussian_width},
                      {"confidence_from_ref", cfg.train.dtrpo.scheduler.confidence_from_ref},
                      {"single_forward_replay", cfg.train.dtrpo.scheduler.single_forward_replay}};
  doc["optimizer"] = {{"lr", cfg.train.adam.lr},
                      {"beta1", cfg.train.adam.beta1},
                      {"beta2", cfg.train.adam.beta2},
                      {"eps", cfg.train.adam.eps},
                      {"weight_decay", cfg.train.adam.weight_decay},
                      {"batch_size", cfg.train.batch_size},
                      {"grad_accum", cfg.train.grad_accum},
                      {"warmup_fraction", cfg.train.warmup_fraction}};
  doc["run"] = {{"seed", cfg.train.master_seed},
                {"epochs", cfg.train.epochs},
                {"max_steps", cfg.train.max_steps},
                {"eval_every", cfg.train.eval_every},
                {"eval_reps", cfg.train.eval_reps},
                {"eval_generations", cfg.train.eval_generations},
                {"embed_dim", cfg.train.embed_dim},
                {"init_scale", cfg.train.init_scale},
                {"trainable", trainable_to_string(cfg.train.trainable)}};
  return doc;
}

std::string config_hash(const nlohmann::json& doc) {
  const std::string dump = doc.dump();
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : dump) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

} // namespace maskdiff
