// Copyright 2026 The STCN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: generate, train, sample, eval, export-plots.
// Exit codes: 0 success, 2 bad input, 3 missing artifact, 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stcn/config.hpp"

namespace fs = std::filesystem;
using namespace stcn;
using json = nlohmann::ordered_json;

namespace
{

constexpr int kBadInput = 2;
constexpr int kMissing = 3;
constexpr int kNumerical = 4;

class MissingArtifact : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Flags shared by every command, plus per-command key flags.
struct Options
{
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> keyed;  // (config key, value) in flag order
  std::map<std::string, std::string> values;
  std::vector<std::pair<CLI::Option *, std::string>> flag_keys;

  void key_flag(CLI::App * app, const std::string & flag, const std::string & key, const std::string & help)
  {
    flag_keys.emplace_back(app->add_option(flag, values[key], help), key);
  }

  void common(CLI::App * app)
  {
    app->add_option("--config", config_file, "key = value config file");
    app->add_option("--set", sets, "override any config key: key=value (repeatable)");
    key_flag(app, "--seed", "seed", "root seed");
  }

  void collect()
  {
    for (const auto & [opt, key] : flag_keys) {
      if (opt->count() > 0) keyed.emplace_back(key, values[key]);
    }
  }

  /// Defaults, then `base` (a run manifest), then the config file, then flags.
  ExperimentConfig resolve(const std::map<std::string, std::string> & base = {}) const
  {
    ExperimentConfig c;
    for (const auto & [k, v] : base) c.set(k, v);
    if (!config_file.empty()) c.load_file(config_file);
    for (const auto & s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      c.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto & [k, v] : keyed) c.set(k, v);
    c.validate();
    return c;
  }
};

void write_text(const fs::path & path, const std::string & text)
{
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_atomically(path, [&](std::ostream & os) { os << text; });
}

std::string dump(const json & j) { return j.dump(2) + "\n"; }

json resolved_json(const ExperimentConfig & c)
{
  json j = json::object();
  for (const auto & [k, v] : c.resolved()) j[k] = v;
  return j;
}

std::map<std::string, std::string> manifest_config(const fs::path & run)
{
  const fs::path p = run / "manifest.json";
  if (!fs::exists(p)) return {};
  std::ifstream is(p);
  const json j = json::parse(is);
  std::map<std::string, std::string> out;
  for (const auto & [k, v] : j.at("config").items()) out[k] = v.get<std::string>();
  return out;
}

void write_manifest(const ExperimentConfig & c, const std::string & command, const json & extra = json::object())
{
  json j;
  j["command"] = command;
  j["config"] = resolved_json(c);
  for (const auto & [k, v] : extra.items()) j[k] = v;
  write_text(c.out / "manifest.json", dump(j));
}

Dataset require_dataset(const fs::path & path)
{
  if (!fs::exists(path)) throw MissingArtifact("dataset '" + path.string() + "' does not exist");
  return load_dataset(path);
}

ParameterSet require_checkpoint(const fs::path & path, const std::string & hint)
{
  if (!fs::exists(path)) throw MissingArtifact("checkpoint '" + path.string() + "' not found; " + hint);
  return load_checkpoint(path);
}

/// Dataset skeleton, rate and window drive the model; T + H must fit every sequence.
Pipeline pipeline_for(const ExperimentConfig & c, const Dataset & ds)
{
  Pipeline p = c.model;
  p.config.joints = ds.joints;
  p.config.coords = ds.coords;
  p.frame_rate = ds.frame_rate;
  for (const auto & s : ds.sequences) {
    if (s.motion.frames() < p.window.total()) {
      throw std::invalid_argument(
        "sequence has " + std::to_string(s.motion.frames()) + " frames, T + H = " + std::to_string(p.window.total()) +
        " required");
    }
  }
  return p;
}

void log_epochs(const char * stage, const LossRow & r)
{
  if (r.epoch % 10 != 0) return;
  std::cerr << stage << " epoch " << r.epoch << " loss " << r.values[0] << "\n";
}

std::string csv_of(const LossLog & log)
{
  std::ostringstream os;
  log.write_csv(os);
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_generate(const Options & o)
{
  auto c = o.resolve();
  c.data.seed = c.seed;
  const Dataset ds = generate_synthetic(c.data);
  try {
    save_dataset(ds, c.dataset);
  } catch (const std::exception & e) {
    throw std::invalid_argument(std::string("cannot write dataset: ") + e.what());
  }
  json s;
  s["patterns"] = c.data.pattern_count;
  s["per_pattern"] = c.data.samples_per_pattern;
  s["sequences"] = ds.sequences.size();
  s["train"] = ds.indices(Split::Train).size();
  s["test"] = ds.indices(Split::Test).size();
  s["frames"] = c.data.observed + c.data.horizon;
  s["joints"] = ds.joints;
  s["coords"] = ds.coords;
  s["frame_rate"] = ds.frame_rate;
  s["jitter"] = c.data.jitter_scale;
  s["seed"] = c.seed;
  fs::path summary = c.dataset;
  summary += ".json";
  write_text(summary, dump(s));
  std::cout << c.dataset.string() << "\n";
  return 0;
}

int cmd_train(const Options & o, const std::string & stage)
{
  if (stage != "1" && stage != "2" && stage != "all") throw ConfigError("--stage must be 1, 2 or all");
  // A stage-2 run reuses the dimensions recorded next to the stage-1 checkpoint.
  ExperimentConfig c = o.resolve();
  if (stage == "2") c = o.resolve(manifest_config(c.out));
  c.train.seed = c.seed;
  const Dataset ds = require_dataset(c.dataset);
  const Pipeline net = pipeline_for(c, ds);
  fs::create_directories(c.out);
  json info;
  info["stage"] = stage;

  ParameterSet stage1;
  if (stage == "1" || stage == "all") {
    auto r = train_stage1(net, ds, c.train, [](const LossRow & r) { log_epochs("stage1", r); });
    save_checkpoint(c.out / "stage1.ckpt", r.params);
    write_text(c.out / "stage1_loss.csv", csv_of(r.log));
    std::ostringstream a;
    export_anchors_csv(r.params.get(kAnchorsKey), a);
    write_text(c.out / "anchors.csv", a.str());
    info["stage1"] = {
      {"initial_loss", r.log.initial()}, {"final_loss", r.log.last()}, {"reseeded_codewords", r.reseeded},
      {"kmeans_objective", r.kmeans.best.objective}};
    stage1 = std::move(r.params);
  } else {
    stage1 = require_checkpoint(c.out / "stage1.ckpt", "run `train --stage 1` first");
  }
  if (stage == "2" || stage == "all") {
    auto r = train_stage2(net, ds, stage1, c.train, [](const LossRow & r) { log_epochs("stage2", r); });
    save_checkpoint(c.out / "stage2.ckpt", r.params);
    write_text(c.out / "stage2_loss.csv", csv_of(r.log));
    std::size_t p_total = 0;
    for (const auto & l : r.pseudo.lists) p_total += l.size();
    info["stage2"] = {
      {"initial_loss", r.log.initial()}, {"final_loss", r.log.last()},
      {"mean_pseudo_targets", static_cast<double>(p_total) / static_cast<double>(r.pseudo.size())}};
  }
  write_manifest(c, "train", info);
  return 0;
}

struct Loaded
{
  ExperimentConfig config;
  Dataset ds;
  Pipeline net;
  ParameterSet params;
};

Loaded load_run(const Options & o)
{
  ExperimentConfig first = o.resolve();
  Loaded l{o.resolve(manifest_config(first.out)), {}, {}, {}};
  l.ds = require_dataset(l.config.dataset);
  l.net = pipeline_for(l.config, l.ds);
  l.params = require_checkpoint(l.config.out / "stage2.ckpt", "run `train` first");
  return l;
}

int cmd_sample(const Options & o, std::size_t index, const std::string & input_csv, const std::string & output,
               std::size_t top, bool noiseless)
{
  auto l = load_run(o);
  Dataset ds = l.ds;
  std::size_t row = index;
  if (!input_csv.empty()) {
    // One observed frame per line, D comma-separated raw values.
    std::ifstream is(input_csv);
    if (!is) throw MissingArtifact("input sequence '" + input_csv + "' not found");
    std::vector<double> frames;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) frames.push_back(std::stod(cell));
    }
    const std::size_t D = ds.frame_dim(), T = l.net.window.observed;
    if (frames.size() != T * D) {
      throw std::invalid_argument(
        "input holds " + std::to_string(frames.size()) + " values, expected T x D = " + std::to_string(T * D));
    }
    frames.resize(l.net.window.total() * D, 0.0);
    LabeledSequence extra{MotionSequence{ds.joints, ds.coords, ds.frame_rate, frames}, 0, Split::Test};
    ds.sequences.push_back(std::move(extra));
    row = ds.sequences.size() - 1;
  } else if (index >= ds.sequences.size()) {
    throw std::invalid_argument("sequence index " + std::to_string(index) + " out of range");
  }
  Rng rng(derive_seed(l.config.seed, "cli.sample"));
  const std::size_t N = top == 0 ? l.net.config.anchors : top;
  const std::vector<std::size_t> idx{row};
  const auto sets = draw_samples(l.net, l.params, ds, idx, N, l.config.samples, rng, noiseless);
  const auto & set = sets.front();
  std::ostringstream os;
  os.precision(17);
  const std::size_t H = l.net.window.horizon, D = ds.frame_dim();
  os << "sequence,anchor,q,draw,frame";
  for (std::size_t d = 0; d < D; ++d) os << ",v" << d;
  os << '\n';
  for (std::size_t s = 0; s < set.tags.size(); ++s) {
    for (std::size_t f = 0; f < H; ++f) {
      os << s << ',' << set.tags[s].anchor << ',' << set.tags[s].q << ',' << set.tags[s].sample << ',' << f;
      for (std::size_t d = 0; d < D; ++d) os << ',' << set.frames[(s * H + f) * D + d];
      os << '\n';
    }
  }
  if (output.empty()) {
    std::cout << os.str();
  } else {
    write_text(output, os.str());
  }
  return 0;
}

int cmd_eval(const Options & o)
{
  auto l = load_run(o);
  l.config.eval.seed = l.config.seed;
  const auto test = l.ds.indices(Split::Test);
  const MetricReport r = evaluate(l.net, l.params, l.ds, test, l.config.eval);
  json j = r.to_json();
  j["protocol"] = {
    {"deterministic", l.config.eval.deterministic}, {"samples", l.config.eval.samples}, {"top", l.config.eval.mm_top},
    {"mm_samples", l.config.eval.mm_samples}, {"mm_threshold", l.config.eval.mm_threshold}};
  write_text(l.config.out / "metrics.json", dump(j));
  const fs::path table = l.config.out / "results.csv";
  const bool fresh = !fs::exists(table);
  std::ofstream os(table, std::ios::app);
  if (!os) throw std::invalid_argument("cannot append to '" + table.string() + "'");
  if (fresh) os << "run," << MetricReport::csv_header() << '\n';
  os << (l.config.eval.deterministic ? "deterministic" : "stochastic") << ',';
  r.write_csv_row(os);
  std::cout << dump(j);
  return 0;
}

int cmd_export(const Options & o)
{
  auto l = load_run(o);
  const fs::path dir = l.config.out / "plots";
  fs::create_directories(dir);
  for (const char * f : {"stage1_loss.csv", "stage2_loss.csv"}) {
    if (fs::exists(l.config.out / f)) fs::copy_file(l.config.out / f, dir / f, fs::copy_options::overwrite_existing);
  }

  // Decoder initial values per training sequence with their nearest anchor.
  const auto train = l.ds.indices(Split::Train);
  const auto t = stage1_targets(l.net, l.params, batch_frames(l.ds, train, 0, l.net.window.total(), true));
  const Tensor & h = t.h0;
  const auto nearest = nearest_anchors(h, l.params.get(kAnchorsKey));
  std::ostringstream lat;
  lat.precision(17);
  lat << "sequence,pattern,anchor";
  for (std::size_t j = 0; j < h.dim(1); ++j) lat << ",h" << j;
  lat << '\n';
  for (std::size_t i = 0; i < train.size(); ++i) {
    lat << train[i] << ',' << l.ds.sequences[train[i]].label << ',' << nearest[i];
    for (std::size_t j = 0; j < h.dim(1); ++j) lat << ',' << h.at(i, j);
    lat << '\n';
  }
  write_text(dir / "latents.csv", lat.str());

  std::ostringstream order;
  order.precision(17);
  order << "method,step,error\n";
  for (Method m : kAllMethods) {
    const auto fit = convergence_order(m);
    for (std::size_t i = 0; i < fit.steps.size(); ++i) order << method_name(m) << ',' << fit.steps[i] << ',' << fit.errors[i] << '\n';
  }
  write_text(dir / "order.csv", order.str());

  std::ostringstream table;
  table << "Method," << MetricReport::csv_header() << '\n';
  if (std::ifstream is(l.config.out / "results.csv"); is) {
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (!line.empty()) table << line << '\n';
    }
  }
  write_text(dir / "metrics_table.csv", table.str());
  std::cout << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Two-stage stochastic motion prediction with latent ODE decoders"};
  app.require_subcommand(1);

  Options gen_o, train_o, sample_o, eval_o, export_o;

  auto * gen = app.add_subcommand("generate", "write a synthetic multi-pattern dataset");
  gen_o.common(gen);
  gen_o.key_flag(gen, "--patterns", "data.patterns", "number of motion patterns");
  gen_o.key_flag(gen, "--per-pattern", "data.per_pattern", "sequences per pattern");
  gen_o.key_flag(gen, "--observed", "data.observed", "observed frames T");
  gen_o.key_flag(gen, "--horizon", "data.horizon", "future frames H");
  gen_o.key_flag(gen, "--jitter", "data.jitter", "curve-parameter jitter");
  gen_o.key_flag(gen, "-o,--output", "dataset", "dataset path");

  std::string stage = "all";
  auto * train = app.add_subcommand("train", "two-stage training");
  train_o.common(train);
  train->add_option("--stage", stage, "1, 2 or all");
  train_o.key_flag(train, "--data", "dataset", "dataset path");
  train_o.key_flag(train, "--out", "out", "run directory");
  train_o.key_flag(train, "--epochs", "train.epochs", "epochs per stage");
  train_o.key_flag(train, "--solver", "solver.method", "euler, rk4, adams_explicit, adams_implicit, fehlberg2, bosh3, dopri5");
  train_o.key_flag(train, "--step", "solver.step", "fixed step size");
  train_o.key_flag(train, "--rtol", "solver.rtol", "relative tolerance");
  train_o.key_flag(train, "--atol", "solver.atol", "absolute tolerance");
  train_o.key_flag(train, "--anchors", "model.anchors", "anchor count N");
  train_o.key_flag(train, "--samples", "train.samples", "draws per anchor while training");

  std::size_t index = 0;
  std::size_t top = 0;
  bool noiseless = false;
  std::string input_csv, output;
  auto * sample = app.add_subcommand("sample", "draw N x M predictions for one observation");
  sample_o.common(sample);
  sample_o.key_flag(sample, "--data", "dataset", "dataset path");
  sample_o.key_flag(sample, "--out", "out", "run directory");
  sample_o.key_flag(sample, "--samples", "samples", "draws per anchor M");
  sample->add_option("--index", index, "dataset sequence index");
  sample->add_option("--input", input_csv, "CSV of T observed frames instead of --index");
  sample->add_option("--anchors", top, "use the N most probable anchors (default all)");
  sample->add_flag("--noiseless", noiseless, "decode component means");
  sample->add_option("-o,--output", output, "samples CSV (default stdout)");

  auto * eval = app.add_subcommand("eval", "metrics on the test split");
  eval_o.common(eval);
  eval_o.key_flag(eval, "--data", "dataset", "dataset path");
  eval_o.key_flag(eval, "--out", "out", "run directory");
  eval_o.key_flag(eval, "--samples", "eval.samples", "draws from the top anchor");
  eval_o.key_flag(eval, "--top", "eval.top", "anchors for APD and multimodal metrics");
  eval_o.key_flag(eval, "--mm-samples", "eval.mm_samples", "draws per anchor there");
  eval_o.key_flag(eval, "--mm-threshold", "eval.mm_threshold", "start-pose grouping radius");
  eval_o.key_flag(eval, "--deterministic", "eval.deterministic", "true for one noiseless draw");

  auto * exp = app.add_subcommand("export-plots", "CSV data for loss curves, latents, solver orders, metrics");
  export_o.common(exp);
  export_o.key_flag(exp, "--data", "dataset", "dataset path");
  export_o.key_flag(exp, "--out", "out", "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kBadInput;
  }

  try {
    if (gen->parsed()) {
      gen_o.collect();
      return cmd_generate(gen_o);
    }
    if (train->parsed()) {
      train_o.collect();
      return cmd_train(train_o, stage);
    }
    if (sample->parsed()) {
      sample_o.collect();
      return cmd_sample(sample_o, index, input_csv, output, top, noiseless);
    }
    if (eval->parsed()) {
      eval_o.collect();
      return cmd_eval(eval_o);
    }
    if (exp->parsed()) {
      export_o.collect();
      return cmd_export(export_o);
    }
  } catch (const MissingArtifact & e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissing;
  } catch (const CheckpointError & e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const NumericalError & e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::invalid_argument & e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const std::out_of_range & e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const DatasetError & e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kBadInput;
}
