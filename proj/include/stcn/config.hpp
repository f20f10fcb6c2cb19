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

#ifndef STCN__CONFIG_HPP_
#define STCN__CONFIG_HPP_

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stcn/evaluation.hpp"
#include "stcn/training.hpp"

namespace stcn
{

class ConfigError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/**
 * @brief Every tunable of a run, addressable by a flat dotted key.
 *
 * Sources are applied in order (defaults, config file, command-line
 * overrides); `resolved()` lists every key with its final value.
 */
struct ExperimentConfig
{
  std::filesystem::path dataset = "data.stcm";
  std::filesystem::path out = "run";
  SyntheticConfig data;
  Pipeline model;
  TrainConfig train;
  EvalConfig eval;
  std::size_t samples = 5;  // M for `sample`
  std::uint64_t seed = 0;

  ExperimentConfig()
  {
    model.window = {data.observed, data.horizon};
    model.frame_rate = data.frame_rate;
  }

  void set(const std::string & key, const std::string & value)
  {
    const auto & f = fields();
    auto it = f.find(key);
    if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second.set(*this, value);
    } catch (const ConfigError &) {
      throw;
    } catch (const std::exception & e) {
      throw ConfigError("bad value '" + value + "' for '" + key + "': " + e.what());
    }
  }

  std::string get(const std::string & key) const
  {
    auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.get(*this);
  }

  /// Lines of `key = value`; blank lines and `#` comments are skipped.
  void load_file(const std::filesystem::path & path)
  {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
      ++n;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key = value");
      }
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  std::map<std::string, std::string> resolved() const
  {
    std::map<std::string, std::string> out_map;
    for (const auto & [k, f] : fields()) out_map[k] = f.get(*this);
    return out_map;
  }

  void validate() const
  {
    data.validate();
    model.config.validate();
    model.window.validate();
    model.solver.validate();
    train.validate();
    eval.validate();
    if (samples == 0) throw std::invalid_argument("samples must be >= 1");
  }

private:
  struct Field
  {
    std::function<void(ExperimentConfig &, const std::string &)> set;
    std::function<std::string(const ExperimentConfig &)> get;
  };

  template <class T>
  static T parse_number(const std::string & s)
  {
    T v{};
    if constexpr (std::is_floating_point_v<T>) {
      std::size_t used = 0;
      v = static_cast<T>(std::stod(s, &used));
      if (used != s.size()) throw ConfigError("trailing characters in '" + s + "'");
    } else {
      if (!s.empty() && s[0] == '-') throw ConfigError("'" + s + "' must be non-negative");
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("'" + s + "' is not an integer");
    }
    return v;
  }

  static bool parse_bool(const std::string & s)
  {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("'" + s + "' is not a boolean");
  }

  template <class T>
  static std::string show(T v)
  {
    if constexpr (std::is_same_v<T, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_floating_point_v<T>) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    } else {
      return std::to_string(v);
    }
  }

  template <class T, class Get>
  static Field number(Get g)
  {
    return {
      [g](ExperimentConfig & c, const std::string & s) { g(c) = parse_number<T>(s); },
      [g](const ExperimentConfig & c) { return show<T>(g(const_cast<ExperimentConfig &>(c))); }};
  }

  template <class Get>
  static Field flag(Get g)
  {
    return {
      [g](ExperimentConfig & c, const std::string & s) { g(c) = parse_bool(s); },
      [g](const ExperimentConfig & c) { return show<bool>(g(const_cast<ExperimentConfig &>(c))); }};
  }

  static const std::map<std::string, Field> & fields()
  {
    using C = ExperimentConfig;
    using Z = std::size_t;
    static const std::map<std::string, Field> f = {
      {"dataset", {[](C & c, const std::string & s) { c.dataset = s; }, [](const C & c) { return c.dataset.string(); }}},
      {"out", {[](C & c, const std::string & s) { c.out = s; }, [](const C & c) { return c.out.string(); }}},
      {"seed", number<std::uint64_t>([](C & c) -> std::uint64_t & { return c.seed; })},
      {"samples", number<Z>([](C & c) -> Z & { return c.samples; })},

      {"data.patterns", number<Z>([](C & c) -> Z & { return c.data.pattern_count; })},
      {"data.per_pattern", number<Z>([](C & c) -> Z & { return c.data.samples_per_pattern; })},
      {"data.joints",
       {[](C & c, const std::string & s) { c.data.joints = c.model.config.joints = parse_number<Z>(s); },
        [](const C & c) { return show(c.data.joints); }}},
      {"data.coords",
       {[](C & c, const std::string & s) { c.data.coords = c.model.config.coords = parse_number<Z>(s); },
        [](const C & c) { return show(c.data.coords); }}},
      {"data.observed",
       {[](C & c, const std::string & s) { c.data.observed = c.model.window.observed = parse_number<Z>(s); },
        [](const C & c) { return show(c.data.observed); }}},
      {"data.horizon",
       {[](C & c, const std::string & s) { c.data.horizon = c.model.window.horizon = parse_number<Z>(s); },
        [](const C & c) { return show(c.data.horizon); }}},
      {"data.frame_rate",
       {[](C & c, const std::string & s) { c.data.frame_rate = c.model.frame_rate = parse_number<double>(s); },
        [](const C & c) { return show(c.data.frame_rate); }}},
      {"data.jitter", number<double>([](C & c) -> double & { return c.data.jitter_scale; })},
      {"data.test_fraction", number<double>([](C & c) -> double & { return c.data.test_fraction; })},

      {"model.d_model", number<Z>([](C & c) -> Z & { return c.model.config.d_model; })},
      {"model.l_dim", number<Z>([](C & c) -> Z & { return c.model.config.l_dim; })},
      {"model.latent_rows", number<Z>([](C & c) -> Z & { return c.model.config.latent_rows; })},
      {"model.ode_hidden", number<Z>([](C & c) -> Z & { return c.model.config.ode_hidden; })},
      {"model.cond_dim", number<Z>([](C & c) -> Z & { return c.model.config.cond_dim; })},
      {"model.readout_hidden", number<Z>([](C & c) -> Z & { return c.model.config.readout_hidden; })},
      {"model.refine_hidden", number<Z>([](C & c) -> Z & { return c.model.config.refine_hidden; })},
      {"model.codebook_size", number<Z>([](C & c) -> Z & { return c.model.config.codebook_size; })},
      {"model.anchors", number<Z>([](C & c) -> Z & { return c.model.config.anchors; })},

      {"solver.method",
       {[](C & c, const std::string & s) { c.model.solver.method = parse_method(s); },
        [](const C & c) { return std::string(method_name(c.model.solver.method)); }}},
      {"solver.step", number<double>([](C & c) -> double & { return c.model.solver.step_size; })},
      {"solver.rtol", number<double>([](C & c) -> double & { return c.model.solver.rtol; })},
      {"solver.atol", number<double>([](C & c) -> double & { return c.model.solver.atol; })},
      {"solver.max_steps", number<Z>([](C & c) -> Z & { return c.model.solver.max_steps; })},
      {"solver.force_fixed", flag([](C & c) -> bool & { return c.model.solver.force_fixed; })},

      {"train.batch_size", number<Z>([](C & c) -> Z & { return c.train.batch_size; })},
      {"train.epochs", number<Z>([](C & c) -> Z & { return c.train.epochs; })},
      {"train.lr", number<double>([](C & c) -> double & { return c.train.lr0; })},
      {"train.lr_decay", number<double>([](C & c) -> double & { return c.train.lr_decay; })},
      {"train.decay_every", number<Z>([](C & c) -> Z & { return c.train.decay_every; })},
      {"train.alpha_nll", number<double>([](C & c) -> double & { return c.train.alpha.nll; })},
      {"train.alpha_anchor", number<double>([](C & c) -> double & { return c.train.alpha.anchor; })},
      {"train.alpha_re", number<double>([](C & c) -> double & { return c.train.alpha.re; })},
      {"train.beta", number<double>([](C & c) -> double & { return c.train.beta; })},
      {"train.pseudo_threshold", number<double>([](C & c) -> double & { return c.train.pseudo_threshold; })},
      {"train.clip_norm", number<double>([](C & c) -> double & { return c.train.clip_norm; })},
      {"train.cond_dropout", number<double>([](C & c) -> double & { return c.train.cond_dropout; })},
      {"train.samples", number<Z>([](C & c) -> Z & { return c.train.train_samples; })},
      {"train.freeze_decoder", flag([](C & c) -> bool & { return c.train.freeze_decoder; })},
      {"train.latent_source",
       {[](C & c, const std::string & s) { c.train.latent_source = parse_target_source(s); },
        [](const C & c) { return std::string(target_source_name(c.train.latent_source)); }}},
      {"train.h0_source",
       {[](C & c, const std::string & s) { c.train.h0_source = parse_target_source(s); },
        [](const C & c) { return std::string(target_source_name(c.train.h0_source)); }}},
      {"train.kmeans_restarts", number<Z>([](C & c) -> Z & { return c.train.kmeans_restarts; })},

      {"eval.samples", number<Z>([](C & c) -> Z & { return c.eval.samples; })},
      {"eval.top", number<Z>([](C & c) -> Z & { return c.eval.mm_top; })},
      {"eval.mm_samples", number<Z>([](C & c) -> Z & { return c.eval.mm_samples; })},
      {"eval.mm_threshold", number<double>([](C & c) -> double & { return c.eval.mm_threshold; })},
      {"eval.deterministic", flag([](C & c) -> bool & { return c.eval.deterministic; })},
    };
    return f;
  }
};

}  // namespace stcn

#endif  // STCN__CONFIG_HPP_
