#include "maskdiff/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "maskdiff/dataset.hpp"
#include "maskdiff/mdp.hpp"
#include "maskdiff/train.hpp"

namespace maskdiff {

namespace {

namespace fs = std::filesystem;

fs::path ensure_out_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  return fs::path(out_dir);
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

PolicyParams load_params_io(const std::string& path) {
  try {
    return load_params(path);
  } catch (const std::exception& e) {
    throw IoError(std::string(e.what()));
  }
}

PolicyParams fresh_init(const RunConfig& cfg) {
  Rng init_rng(Rng::derive(cfg.train.master_seed, "init"));
  const int max_pos = cfg.task.prompt_len + cfg.layout().seq_len();
  return PolicyParams::random(cfg.task.vocab, cfg.train.embed_dim, max_pos, cfg.train.init_scale,
                              init_rng);
}

// Shortest round-trip formatting, so emitted numbers are byte-stable.
std::string fmt(double x) { return nlohmann::json(x).dump(); }

std::string render_state(const State& state, const std::vector<int>& fresh, const Vocab& vocab) {
  std::string out;
  for (size_t i = 0; i < state.size(); ++i) {
    if (!out.empty()) out += " ";
    std::string tok = vocab.is_mask(state[i])  ? "."
                      : vocab.is_pad(state[i]) ? "_"
                                               : std::to_string(state[i]);
    const bool is_new =
        std::find(fresh.begin(), fresh.end(), static_cast<int>(i)) != fresh.end();
    out += is_new ? "[" + tok + "]" : tok;
  }
  return out;
}

nlohmann::json wire_state(const State& state, const Vocab& vocab) {
  nlohmann::json arr = nlohmann::json::array();
  for (TokenId tok : state) arr.push_back(vocab.is_mask(tok) ? -1 : tok);
  return arr;
}

} // namespace

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const RunConfig& cfg, bool force) {
  const fs::path dir = ensure_out_dir(out_dir);
  const fs::path path = dir / "run-manifest.json";
  if (fs::exists(path) && !force)
    throw IoError("refusing to overwrite " + path.string() + " (pass --force)");
  const nlohmann::json doc = config_to_doc(cfg);
  const nlohmann::json manifest = {{"command", command},
                                   {"config", doc},
                                   {"config_hash", config_hash(doc)},
                                   {"seed", cfg.train.master_seed},
                                   {"tool", kToolName},
                                   {"version", kToolVersion}};
  auto out = open_output(path);
  out << manifest.dump(2) << "\n";
}

int run_gen_data(const RunConfig& cfg, const CommonOptions& opts) {
  if (!opts.out_dir) throw ConfigError("gen-data requires --out");
  const Dataset data = generate_dataset(cfg.task, cfg.layout());
  write_run_manifest(*opts.out_dir, "gen-data", cfg, opts.force);
  const fs::path dir(*opts.out_dir);
  {
    auto out = open_output(dir / "train-pairs.jsonl");
    write_pairs_jsonl(out, data.train);
  }
  {
    auto out = open_output(dir / "heldout-pairs.jsonl");
    write_pairs_jsonl(out, data.heldout);
  }
  if (opts.json) {
    const nlohmann::json summary = {{"train_pairs", data.train.size()},
                                    {"heldout_pairs", data.heldout.size()},
                                    {"out", *opts.out_dir}};
    std::cout << summary.dump() << "\n";
  } else {
    std::cout << "wrote " << data.train.size() << " train pairs and " << data.heldout.size()
              << " held-out pairs to " << *opts.out_dir << "\n";
  }
  return 0;
}

int run_train_command(const RunConfig& cfg, const CommonOptions& opts) {
  if (!opts.out_dir) throw ConfigError("train requires --out");
  const BlockLayout layout = cfg.layout();
  const Dataset data = generate_dataset(cfg.task, layout);
  write_run_manifest(*opts.out_dir, "train", cfg, opts.force);
  const fs::path dir(*opts.out_dir);

  TrainResult result;
  {
    auto metrics = open_output(dir / "metrics.jsonl");
    result = train(cfg.train, cfg.task, layout, data, &metrics);
  }
  save_params((dir / "params.bin").string(), result.params);
  save_params((dir / "ref.bin").string(), result.ref);

  const MetricsRecord& last = result.metrics.back();
  if (opts.json) {
    const nlohmann::json summary = {{"steps", result.steps_run},
                                    {"loss", last.loss},
                                    {"margin_accuracy", last.margin_accuracy},
                                    {"win_rate", last.win_rate},
                                    {"objective", cfg.train.objective},
                                    {"seed", cfg.train.master_seed}};
    std::cout << summary.dump() << "\n";
  } else {
    std::cout << cfg.train.objective << ": " << result.steps_run << " steps, loss "
              << fmt(last.loss) << ", margin accuracy " << fmt(last.margin_accuracy)
              << ", win rate " << fmt(last.win_rate) << "\n";
  }
  return 0;
}

int run_eval_command(const RunConfig& cfg, const CommonOptions& opts,
                     const std::optional<std::string>& params_path,
                     const std::optional<std::string>& ref_path) {
  const BlockLayout layout = cfg.layout();
  const Dataset data = generate_dataset(cfg.task, layout);
  const PolicyParams theta = params_path ? load_params_io(*params_path) : fresh_init(cfg);
  const PolicyParams ref = ref_path ? load_params_io(*ref_path) : fresh_init(cfg);
  if (theta.vocab_size != cfg.task.vocab || ref.vocab_size != cfg.task.vocab)
    throw ConfigError("loaded params disagree with [task] vocab");

  const uint64_t eval_seed = Rng::derive(cfg.train.master_seed, "eval-cli");
  const EvalResult ev =
      evaluate_policy(theta, ref, data.heldout, cfg.train, cfg.task, layout, eval_seed);

  const nlohmann::json report = {{"margin_accuracy", ev.margin_accuracy},
                                 {"win_rate", ev.win_rate},
                                 {"heldout_pairs", data.heldout.size()},
                                 {"seed", cfg.train.master_seed}};
  if (opts.out_dir) {
    write_run_manifest(*opts.out_dir, "eval", cfg, opts.force);
    auto out = open_output(fs::path(*opts.out_dir) / "eval.json");
    out << report.dump(2) << "\n";
  }
  if (opts.json) {
    std::cout << report.dump() << "\n";
  } else {
    std::cout << "margin accuracy " << fmt(ev.margin_accuracy) << ", win rate "
              << fmt(ev.win_rate) << " over " << data.heldout.size() << " held-out pairs\n";
  }
  return 0;
}

std::string ablation_axis_key(const std::string& axis) {
  if (axis == "scheduler") return "scheduler.kind";
  if (axis == "k") return "scheduler.k";
  if (axis == "samples_per_block") return "objective.samples_per_block";
  if (axis == "projection") return "objective.projection";
  if (axis == "lambda") return "objective.lambda";
  if (axis == "trainable") return "run.trainable";
  throw ConfigError("ablate: unknown axis '" + axis + "'");
}

int run_ablate(const nlohmann::json& base_doc, const CommonOptions& opts, const std::string& axis,
               const std::vector<std::string>& values) {
  if (!opts.out_dir) throw ConfigError("ablate requires --out");
  if (values.empty()) throw ConfigError("ablate: at least one --values entry is required");
  const std::string key = ablation_axis_key(axis);

  write_run_manifest(*opts.out_dir, "ablate", parse_run_config(base_doc), opts.force);
  auto csv = open_output(fs::path(*opts.out_dir) / "results.csv");
  csv << "axis,value,seed,steps,final_loss,margin_accuracy,win_rate\n";

  nlohmann::json rows = nlohmann::json::array();
  for (const std::string& value : values) {
    nlohmann::json doc = base_doc;
    apply_override(doc, key + "=" + value);
    const RunConfig cfg = parse_run_config(doc);
    const BlockLayout layout = cfg.layout();
    const Dataset data = generate_dataset(cfg.task, layout);
    const TrainResult result = train(cfg.train, cfg.task, layout, data, nullptr);
    const MetricsRecord& last = result.metrics.back();

    csv << axis << "," << value << "," << cfg.train.master_seed << "," << result.steps_run << ","
        << fmt(last.loss) << "," << fmt(last.margin_accuracy) << "," << fmt(last.win_rate)
        << "\n";
    if (opts.json) {
      rows.push_back({{"axis", axis},
                      {"value", value},
                      {"seed", cfg.train.master_seed},
                      {"steps", result.steps_run},
                      {"final_loss", last.loss},
                      {"margin_accuracy", last.margin_accuracy},
                      {"win_rate", last.win_rate}});
    } else {
      std::cout << axis << "=" << value << ": margin accuracy " << fmt(last.margin_accuracy)
                << ", win rate " << fmt(last.win_rate) << " (" << result.steps_run
                << " steps)\n";
    }
  }
  if (opts.json) std::cout << rows.dump() << "\n";
  return 0;
}

int run_demo_sample(const RunConfig& cfg, const CommonOptions& opts, int count,
                    const std::optional<std::string>& params_path) {
  if (count < 1) throw ConfigError("demo-sample: count must be >= 1");
  const BlockLayout layout = cfg.layout();
  const PolicyParams policy = params_path ? load_params_io(*params_path) : fresh_init(cfg);
  const Vocab vocab = policy.vocab();
  SchedulerConfig sched = cfg.train.dtrpo.scheduler;
  sched.block_size = layout.block_size;

  Dataset data;
  if (cfg.task.prompt_len > 0) data = generate_dataset(cfg.task, layout);

  nlohmann::json traces = nlohmann::json::array();
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::derive(cfg.train.master_seed, "demo", static_cast<uint64_t>(i)));
    const State prompt = cfg.task.prompt_len > 0 ? data.heldout[i % data.heldout.size()].prompt
                                                 : State{};
    const Trajectory traj = sample_trajectory(policy, sched, layout, prompt, rng);

    nlohmann::json steps = nlohmann::json::array();
    if (!opts.json) {
      std::cout << "sample " << i;
      if (!prompt.empty()) std::cout << " (prompt: " << render_state(prompt, {}, vocab) << ")";
      std::cout << "\n";
    }
    for (int j = 0; j < layout.horizon(); ++j) {
      const State& before = traj.states[j];
      const State& after = traj.states[j + 1];
      const std::vector<int> fresh = newly_unmasked_indices(before, after, vocab);
      const int block = layout.block_of_transition(j);
      const int t = layout.step_of_transition(j);
      if (!opts.json) {
        std::cout << "  step " << j << " (block " << block << ", t=" << t
                  << "): " << render_state(after, fresh, vocab) << "\n";
      }
      steps.push_back({{"step", j},
                       {"block", block},
                       {"t", t},
                       {"unmasked", fresh},
                       {"state", wire_state(after, vocab)}});
    }
    const double score = rule_score(cfg.task.rule, traj.states.back(), cfg.task.vocab);
    if (!opts.json) std::cout << "  rule score " << fmt(score) << "\n";
    traces.push_back({{"sample", i},
                      {"prompt", wire_state(prompt, vocab)},
                      {"steps", steps},
                      {"completion", wire_state(traj.states.back(), vocab)},
                      {"rule_score", score}});
  }
  if (opts.json) std::cout << traces.dump() << "\n";
  if (opts.out_dir) {
    write_run_manifest(*opts.out_dir, "demo-sample", cfg, opts.force);
    auto out = open_output(fs::path(*opts.out_dir) / "demo-trace.json");
    out << traces.dump(2) << "\n";
  }
  return 0;
}

} // namespace maskdiff
