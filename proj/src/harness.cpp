#include "projda/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace projda::harness {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t base, int repetition, SeedRole role,
                          int index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(repetition)));
  h = mix(h ^ (static_cast<std::uint64_t>(role) << 32));
  h = mix(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(index)));
  return h;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// --- JSON config ------------------------------------------------------------------

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::Config, path + ": " + what);
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_error(path, "expected an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) config_error(path + "." + item.key(), "unknown field");
  }
}

template <class T>
T field(const json& obj, const std::string& path, const char* key, T fallback) {
  const auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw std::runtime_error("not a number");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer() && !it->is_number_unsigned())
        throw std::runtime_error("not an integer");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw std::runtime_error("not a string");
    }
    return it->get<T>();
  } catch (const std::exception& e) {
    config_error(path + "." + key, std::string("wrong type (") + e.what() + ")");
  }
}

template <class T>
std::vector<T> grid_axis(const json& obj, const std::string& path, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) return {};
  if (!it->is_array()) config_error(path + "." + key, "expected an array");
  if (it->empty()) config_error(path + "." + key, "sweep grid must not be empty");
  std::vector<T> out;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const json& v = (*it)[i];
    const std::string where = path + "." + key + "[" + std::to_string(i) + "]";
    if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) config_error(where, "expected an integer");
    } else {
      if (!v.is_number()) config_error(where, "expected a number");
    }
    out.push_back(v.get<T>());
  }
  return out;
}

SweepGrid parse_grid(const json& obj, const std::string& path) {
  check_keys(obj, path, {"proj_rank", "resample_noise", "resample_alpha"});
  SweepGrid g;
  g.proj_rank = grid_axis<int>(obj, path, "proj_rank");
  g.resample_noise = grid_axis<double>(obj, path, "resample_noise");
  g.resample_alpha = grid_axis<double>(obj, path, "resample_alpha");
  return g;
}

json grid_to_json(const SweepGrid& g) {
  json j = json::object();
  if (!g.proj_rank.empty()) j["proj_rank"] = g.proj_rank;
  if (!g.resample_noise.empty()) j["resample_noise"] = g.resample_noise;
  if (!g.resample_alpha.empty()) j["resample_alpha"] = g.resample_alpha;
  return j;
}

const char* model_kind_name(ModelKind k) {
  return k == ModelKind::Lorenz96 ? "lorenz96" : "stiff_linear";
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"schema_version", "name", "seed", "model", "observation", "truth",
              "init", "n_steps", "spinup", "window", "repetitions",
              "divergence_factor", "tracker", "quick", "filters", "sweep"});
  ExperimentConfig c;
  const int version = field<int>(root, "config", "schema_version", -1);
  if (version != kSchemaVersion)
    config_error("config.schema_version",
                 "expected " + std::to_string(kSchemaVersion) + ", got " +
                     std::to_string(version));
  c.name = field<std::string>(root, "config", "name", c.name);
  c.seed = field<std::uint64_t>(root, "config", "seed", c.seed);
  c.n_steps = field<int>(root, "config", "n_steps", c.n_steps);
  c.spinup = field<int>(root, "config", "spinup", c.spinup);
  c.window = field<int>(root, "config", "window", c.window);
  c.repetitions = field<int>(root, "config", "repetitions", c.repetitions);
  c.divergence_factor =
      field<double>(root, "config", "divergence_factor", c.divergence_factor);

  if (!root.contains("model")) config_error("config.model", "missing");
  const json& m = root["model"];
  check_keys(m, "model",
             {"kind", "dim", "forcing", "obs_interval", "substeps", "model_noise_var"});
  const std::string kind = field<std::string>(m, "model", "kind", "lorenz96");
  if (kind == "lorenz96")
    c.model.kind = ModelKind::Lorenz96;
  else if (kind == "stiff_linear")
    c.model.kind = ModelKind::StiffLinear;
  else
    config_error("model.kind", "unknown model '" + kind + "'");
  c.model.dim = field<int>(m, "model", "dim", c.model.dim);
  c.model.forcing = field<double>(m, "model", "forcing", c.model.forcing);
  c.model.obs_interval = field<double>(m, "model", "obs_interval", c.model.obs_interval);
  c.model.substeps = field<int>(m, "model", "substeps", c.model.substeps);
  c.model.model_noise_var =
      field<double>(m, "model", "model_noise_var", c.model.model_noise_var);

  if (!root.contains("observation")) config_error("config.observation", "missing");
  const json& o = root["observation"];
  check_keys(o, "observation", {"indices", "every", "offset", "noise_var"});
  c.observation.noise_var = field<double>(o, "observation", "noise_var", 0.0);
  if (o.contains("indices")) {
    if (o.contains("every"))
      config_error("observation", "give either indices or every, not both");
    if (!o["indices"].is_array()) config_error("observation.indices", "expected an array");
    for (std::size_t i = 0; i < o["indices"].size(); ++i) {
      const json& v = o["indices"][i];
      if (!v.is_number_integer())
        config_error("observation.indices[" + std::to_string(i) + "]",
                     "expected an integer");
      c.observation.indices.push_back(v.get<int>());
    }
  } else {
    const int every = field<int>(o, "observation", "every", 1);
    const int offset = field<int>(o, "observation", "offset", 0);
    if (every < 1) config_error("observation.every", "must be >= 1");
    if (offset < 0) config_error("observation.offset", "must be >= 0");
    for (int i = offset; i < c.model.dim; i += every) c.observation.indices.push_back(i);
  }

  if (root.contains("truth")) {
    const json& t = root["truth"];
    check_keys(t, "truth", {"perturbation_std", "transient_time", "model_noise_var"});
    c.truth.perturbation_std =
        field<double>(t, "truth", "perturbation_std", c.truth.perturbation_std);
    c.truth.transient_time =
        field<double>(t, "truth", "transient_time", c.truth.transient_time);
    c.truth.model_noise_var =
        field<double>(t, "truth", "model_noise_var", c.truth.model_noise_var);
  }
  if (root.contains("init")) {
    const json& t = root["init"];
    check_keys(t, "init", {"bias", "stddev"});
    c.init.bias = field<double>(t, "init", "bias", c.init.bias);
    c.init.stddev = field<double>(t, "init", "stddev", c.init.stddev);
  }
  if (root.contains("tracker")) {
    const json& t = root["tracker"];
    check_keys(t, "tracker", {"warmup_steps", "epsilon"});
    c.tracker.warmup_steps = field<int>(t, "tracker", "warmup_steps", 0);
    c.tracker.epsilon = field<double>(t, "tracker", "epsilon", 0.0);
  }
  if (root.contains("quick")) {
    const json& t = root["quick"];
    check_keys(t, "quick", {"repetitions", "n_particles"});
    c.quick.repetitions = field<int>(t, "quick", "repetitions", c.quick.repetitions);
    c.quick.n_particles = field<int>(t, "quick", "n_particles", c.quick.n_particles);
  }
  if (root.contains("sweep")) c.sweep = parse_grid(root["sweep"], "sweep");

  if (!root.contains("filters") || !root["filters"].is_array())
    config_error("config.filters", "expected an array of filters");
  const json& fs = root["filters"];
  for (std::size_t k = 0; k < fs.size(); ++k) {
    const std::string path = "filters[" + std::to_string(k) + "]";
    const json& f = fs[k];
    check_keys(f, path,
               {"kind", "label", "n_particles", "resample_threshold",
                "resample_noise", "resample_alpha", "proj_rank", "inflation",
                "fd_epsilon", "sweep"});
    FilterEntry e;
    const std::string kname = field<std::string>(f, path, "kind", "");
    const auto fk = filter_kind_from_string(kname);
    if (!fk) config_error(path + ".kind", "unknown filter '" + kname + "'");
    e.config.kind = *fk;
    e.config.label = field<std::string>(f, path, "label", kname);
    e.config.n_particles = field<int>(f, path, "n_particles", e.config.n_particles);
    e.config.resample_threshold =
        field<double>(f, path, "resample_threshold", e.config.resample_threshold);
    e.config.resample_noise = field<double>(f, path, "resample_noise", 0.0);
    e.config.resample_alpha = field<double>(f, path, "resample_alpha", 0.0);
    e.config.proj_rank = field<int>(f, path, "proj_rank", 0);
    e.config.inflation = field<double>(f, path, "inflation", 1.0);
    e.config.fd_epsilon = field<double>(f, path, "fd_epsilon", 0.0);
    if (f.contains("sweep")) e.sweep = parse_grid(f["sweep"], path + ".sweep");
    c.filters.push_back(std::move(e));
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["name"] = name;
  j["seed"] = seed;
  j["model"] = {{"kind", model_kind_name(model.kind)},
                {"dim", model.dim},
                {"forcing", model.forcing},
                {"obs_interval", model.obs_interval},
                {"substeps", model.substeps},
                {"model_noise_var", model.model_noise_var}};
  j["observation"] = {{"indices", observation.indices},
                      {"noise_var", observation.noise_var}};
  j["truth"] = {{"perturbation_std", truth.perturbation_std},
                {"transient_time", truth.transient_time},
                {"model_noise_var", truth.model_noise_var}};
  j["init"] = {{"bias", init.bias}, {"stddev", init.stddev}};
  j["n_steps"] = n_steps;
  j["spinup"] = spinup;
  j["window"] = window;
  j["repetitions"] = repetitions;
  j["divergence_factor"] = divergence_factor;
  j["tracker"] = {{"warmup_steps", tracker.warmup_steps}, {"epsilon", tracker.epsilon}};
  j["quick"] = {{"repetitions", quick.repetitions}, {"n_particles", quick.n_particles}};
  json fs = json::array();
  for (const auto& e : filters) {
    const FilterConfig& f = e.config;
    json fj = {{"kind", to_string(f.kind)},
               {"label", f.label},
               {"n_particles", f.n_particles},
               {"resample_threshold", f.resample_threshold},
               {"resample_noise", f.resample_noise},
               {"resample_alpha", f.resample_alpha},
               {"proj_rank", f.proj_rank},
               {"inflation", f.inflation},
               {"fd_epsilon", f.fd_epsilon}};
    if (!e.sweep.empty()) fj["sweep"] = grid_to_json(e.sweep);
    fs.push_back(std::move(fj));
  }
  j["filters"] = std::move(fs);
  if (!sweep.empty()) j["sweep"] = grid_to_json(sweep);
  return j.dump(2);
}

void ExperimentConfig::validate(bool sweep_mode) const {
  try {
    model.validate();
  } catch (const Error& e) {
    config_error("model", e.what());
  }
  const int n = model.dim;
  if (observation.indices.empty()) config_error("observation", "no observed indices");
  std::set<int> seen;
  for (std::size_t i = 0; i < observation.indices.size(); ++i) {
    const int idx = observation.indices[i];
    const std::string where = "observation.indices[" + std::to_string(i) + "]";
    if (idx < 0 || idx >= n)
      config_error(where, std::to_string(idx) + " outside [0, " + std::to_string(n) + ")");
    if (!seen.insert(idx).second) config_error(where, "duplicate index");
  }
  if (!(observation.noise_var >= 0.0)) config_error("observation.noise_var", "must be >= 0");
  if (!(truth.perturbation_std >= 0.0))
    config_error("truth.perturbation_std", "must be >= 0");
  if (!(truth.transient_time >= 0.0)) config_error("truth.transient_time", "must be >= 0");
  if (!(init.stddev >= 0.0)) config_error("init.stddev", "must be >= 0");
  if (n_steps < 1) config_error("n_steps", "must be >= 1");
  if (spinup < 0) config_error("spinup", "must be >= 0");
  if (window < 1) config_error("window", "must be >= 1");
  if (spinup + window > n_steps)
    config_error("window", "spinup + window exceeds n_steps");
  if (repetitions < 1) config_error("repetitions", "must be >= 1");
  if (!(divergence_factor > 0.0)) config_error("divergence_factor", "must be > 0");
  if (tracker.warmup_steps < 0) config_error("tracker.warmup_steps", "must be >= 0");
  if (quick.repetitions < 1) config_error("quick.repetitions", "must be >= 1");
  if (quick.n_particles < 0) config_error("quick.n_particles", "must be >= 0");
  if (filters.empty()) config_error("filters", "at least one filter is required");

  std::set<std::string> labels;
  bool any_grid = !sweep.empty();
  for (std::size_t k = 0; k < filters.size(); ++k) {
    const std::string path = "filters[" + std::to_string(k) + "]";
    const FilterConfig& f = filters[k].config;
    if (!labels.insert(f.label).second)
      config_error(path + ".label", "duplicate label '" + f.label + "'");
    try {
      if (sweep_mode) {
        // Grid values stand in for the base parameters they replace.
        for (const GridPoint& pt : expand_grid(*this, filters[k])) {
          FilterConfig c = f;
          c.proj_rank = pt.proj_rank;
          c.resample_noise = pt.omega;
          c.resample_alpha = pt.alpha;
          c.validate(n);
        }
      } else {
        f.validate(n);
      }
    } catch (const Error& e) {
      config_error(path, e.what());
    }
    if ((f.kind == FilterKind::OpPF || f.kind == FilterKind::ProjOpPF ||
         f.kind == FilterKind::OpPfProjResamp) &&
        !(model.model_noise_var > 0.0))
      config_error(path + ".kind",
                   "optimal proposal undefined without model noise (model.model_noise_var = 0)");
    if (f.kind == FilterKind::KF && model.kind != ModelKind::StiffLinear)
      config_error(path + ".kind", "kf requires a linear model");
    const SweepGrid& g = filters[k].sweep;
    any_grid = any_grid || !g.empty();
    for (const auto* grid : {&g, &sweep}) {
      for (int p : grid->proj_rank)
        if (needs_tracker(f.kind) && (p < 1 || p > n))
          config_error(path + ".sweep.proj_rank", "value " + std::to_string(p) +
                                                      " outside [1, " +
                                                      std::to_string(n) + "]");
      for (double w : grid->resample_noise)
        if (!(w >= 0.0)) config_error(path + ".sweep.resample_noise", "must be >= 0");
      for (double a : grid->resample_alpha)
        if (!(a >= 0.0 && a <= 1.0))
          config_error(path + ".sweep.resample_alpha", "must lie in [0, 1]");
    }
  }
  if (sweep_mode && !any_grid) config_error("sweep", "sweep grid is empty");
}

ExperimentConfig ExperimentConfig::quickened() const {
  ExperimentConfig c = *this;
  c.repetitions = std::min(repetitions, quick.repetitions);
  if (quick.n_particles > 0)
    for (auto& e : c.filters)
      if (is_ensemble_filter(e.config.kind))
        e.config.n_particles = std::min(e.config.n_particles, quick.n_particles);
  return c;
}

// --- Scenarios and runs ------------------------------------------------------------

ObservationModel make_observation_model(const ExperimentConfig& cfg) {
  return ObservationModel::selector(cfg.model.dim, cfg.observation.indices,
                                    cfg.observation.noise_var);
}

Model make_model(const ExperimentConfig& cfg) {
  if (cfg.model.kind == ModelKind::Lorenz96) return Model::lorenz96(cfg.model);
  RandomStream rng(derive_seed(cfg.seed, 0, SeedRole::System));
  return Model::stiff_linear(
      cfg.model, build_stiff_linear(cfg.model.dim, cfg.model.obs_interval, rng));
}

Scenario make_scenario(const ExperimentConfig& cfg, const Model& model,
                       int repetition) {
  ObservationModel obs = make_observation_model(cfg);
  RandomStream rng(derive_seed(cfg.seed, repetition, SeedRole::Truth));
  Model truth_model = model;
  if (cfg.truth.model_noise_var >= 0.0)
    truth_model.spec.model_noise_var = cfg.truth.model_noise_var;
  const int n = model.dim();
  const double center = model.spec.kind == ModelKind::Lorenz96 ? model.spec.forcing : 0.0;
  Vector u = Vector::Constant(n, center) + rng.normal_vector(n, cfg.truth.perturbation_std);
  const auto transient = static_cast<int>(
      std::llround(cfg.truth.transient_time / model.spec.obs_interval));
  Matrix prehistory(n, transient);
  for (int k = 0; k < transient; ++k) {
    prehistory.col(k) = u;
    u = step_stochastic(truth_model, u, rng);
  }
  TwinData twin = generate_truth_and_observations(truth_model, obs, u, cfg.n_steps, rng);
  twin.prehistory = std::move(prehistory);

  const double mean = twin.truth.mean();
  const double var =
      (twin.truth.array() - mean).square().sum() / static_cast<double>(twin.truth.size());
  const double ceiling = cfg.divergence_factor * std::sqrt(var);

  InitialCondition init{twin.truth.col(0) + Vector::Constant(n, cfg.init.bias),
                        cfg.init.stddev};
  return Scenario{model, std::move(obs), std::move(twin), std::move(init), ceiling};
}

namespace {

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  jobs = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(jobs), count));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct Task {
  int repetition;
  int filter_index;
  GridPoint point;
};

FilterConfig apply_point(FilterConfig f, const GridPoint& p) {
  f.proj_rank = p.proj_rank;
  f.resample_noise = p.omega;
  f.resample_alpha = p.alpha;
  return f;
}

ExperimentResult execute(const ExperimentConfig& cfg, const std::vector<Task>& tasks,
                         const RunOptions& options) {
  const Model model = make_model(cfg);
  std::vector<std::optional<Scenario>> scenarios(static_cast<std::size_t>(cfg.repetitions));
  std::vector<std::string> scenario_errors(scenarios.size());
  parallel_for(scenarios.size(), options.jobs, [&](std::size_t r) {
    try {
      scenarios[r].emplace(make_scenario(cfg, model, static_cast<int>(r)));
    } catch (const Error& e) {
      scenario_errors[r] = std::string(to_string(e.code())) + ": " + e.what();
    }
  });

  ExperimentResult result;
  result.runs.resize(tasks.size());
  parallel_for(tasks.size(), options.jobs, [&](std::size_t i) {
    const Task& t = tasks[i];
    const FilterEntry& entry = cfg.filters[static_cast<std::size_t>(t.filter_index)];
    RunResult& run = result.runs[i];
    run.repetition = t.repetition;
    run.filter_index = t.filter_index;
    run.filter = entry.config.label;
    run.kind = entry.config.kind;
    run.point = t.point;
    const auto& scenario = scenarios[static_cast<std::size_t>(t.repetition)];
    if (!scenario) {
      run.failed = true;
      run.error = "truth generation failed: " + scenario_errors[t.repetition];
      run.summary.mean_rmse = std::numeric_limits<double>::quiet_NaN();
      run.summary.diverged = true;
      return;
    }
    run.ceiling = scenario->ceiling;
    FilterConfig fc = apply_point(entry.config, t.point);
    fc.seed = derive_seed(cfg.seed, t.repetition, SeedRole::Filter, t.filter_index);
    TrackerPolicy tp = cfg.tracker;
    tp.seed = derive_seed(cfg.seed, t.repetition, SeedRole::Tracker);
    try {
      auto records = run_filter(fc, scenario->model, scenario->obs, scenario->twin,
                                scenario->init, tp, scenario->ceiling);
      run.summary = summarize_run(records, cfg.spinup, cfg.window, scenario->ceiling);
      if (options.keep_records) run.records = std::move(records);
    } catch (const Error& e) {
      run.failed = true;
      run.error = std::string(to_string(e.code())) + ": " + e.what();
      run.summary.mean_rmse = std::numeric_limits<double>::quiet_NaN();
      run.summary.diverged = true;
    }
  });
  result.rows = aggregate(result.runs);
  return result;
}

}  // namespace

std::vector<GridPoint> expand_grid(const ExperimentConfig& cfg, const FilterEntry& entry) {
  const FilterConfig& f = entry.config;
  auto pick = [](const auto& own, const auto& global) -> const auto& {
    return own.empty() ? global : own;
  };
  std::vector<int> ranks = pick(entry.sweep.proj_rank, cfg.sweep.proj_rank);
  std::vector<double> omegas = pick(entry.sweep.resample_noise, cfg.sweep.resample_noise);
  std::vector<double> alphas = pick(entry.sweep.resample_alpha, cfg.sweep.resample_alpha);
  if (ranks.empty() || !needs_tracker(f.kind)) ranks = {f.proj_rank};
  if (omegas.empty() || !is_particle_filter(f.kind)) omegas = {f.resample_noise};
  if (alphas.empty() || !uses_alpha(f.kind)) alphas = {f.resample_alpha};
  std::vector<GridPoint> points;
  for (int p : ranks)
    for (double w : omegas)
      for (double a : alphas) points.push_back(GridPoint{p, w, a});
  return points;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate(false);
  std::vector<Task> tasks;
  for (int r = 0; r < cfg.repetitions; ++r)
    for (int k = 0; k < static_cast<int>(cfg.filters.size()); ++k) {
      const FilterConfig& f = cfg.filters[static_cast<std::size_t>(k)].config;
      tasks.push_back(Task{r, k, GridPoint{f.proj_rank, f.resample_noise, f.resample_alpha}});
    }
  return execute(cfg, tasks, options);
}

ExperimentResult run_sweep(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate(true);
  std::vector<Task> tasks;
  for (int k = 0; k < static_cast<int>(cfg.filters.size()); ++k)
    for (const GridPoint& p : expand_grid(cfg, cfg.filters[static_cast<std::size_t>(k)]))
      for (int r = 0; r < cfg.repetitions; ++r) tasks.push_back(Task{r, k, p});
  return execute(cfg, tasks, options);
}

std::vector<SweepRow> aggregate(const std::vector<RunResult>& runs) {
  using Key = std::tuple<int, int, double, double>;
  std::map<Key, std::vector<const RunResult*>> groups;
  std::vector<Key> order;
  for (const auto& r : runs) {
    const Key key{r.filter_index, r.point.proj_rank, r.point.omega, r.point.alpha};
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<SweepRow> rows;
  for (const Key& key : order) {
    const auto& members = groups[key];
    SweepRow row;
    row.filter = members.front()->filter;
    row.kind = members.front()->kind;
    row.point = members.front()->point;
    row.repetitions = static_cast<int>(members.size());
    std::vector<double> values;
    double resample = 0.0;
    for (const RunResult* r : members) {
      if (r->summary.diverged) ++row.diverged_count;
      if (r->failed) {
        ++row.failed_count;
        continue;
      }
      values.push_back(r->summary.mean_rmse);
      resample += r->summary.resample_pct;
    }
    if (values.empty()) {
      row.mean_rmse = std::numeric_limits<double>::quiet_NaN();
      row.std_rmse = std::numeric_limits<double>::quiet_NaN();
      row.resample_pct = std::numeric_limits<double>::quiet_NaN();
    } else {
      double sum = 0.0;
      for (double v : values) sum += v;
      row.mean_rmse = sum / static_cast<double>(values.size());
      double ss = 0.0;
      for (double v : values) ss += (v - row.mean_rmse) * (v - row.mean_rmse);
      row.std_rmse = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1))
                                       : 0.0;
      row.resample_pct = resample / static_cast<double>(values.size());
    }
    rows.push_back(row);
  }
  std::map<std::string, std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].failed_count > 0 || !std::isfinite(rows[i].mean_rmse)) continue;
    auto it = best.find(rows[i].filter);
    if (it == best.end() || rows[i].mean_rmse < rows[it->second].mean_rmse)
      best[rows[i].filter] = i;
  }
  for (const auto& [label, i] : best) rows[i].best = true;
  return rows;
}

bool ExperimentResult::any_diverged() const {
  for (const auto& r : runs)
    if (r.summary.diverged) return true;
  return false;
}

bool ExperimentResult::any_failed() const {
  for (const auto& r : runs)
    if (r.failed) return true;
  return false;
}

const SweepRow* ExperimentResult::best(const std::string& filter) const {
  for (const auto& r : rows)
    if (r.best && r.filter == filter) return &r;
  return nullptr;
}

// --- Output ------------------------------------------------------------------------

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_results(const ExperimentConfig& cfg, const ExperimentResult& result,
                   const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir.string() + ": " + ec.message());

  bool have_records = false;
  std::ostringstream steps;
  steps << "repetition,step,time,filter,rmse,ess,resampled\n";
  for (const auto& r : result.runs)
    for (const auto& s : r.records) {
      have_records = true;
      steps << r.repetition << ',' << s.step << ',' << format_double(s.time) << ','
            << csv_field(r.filter) << ',' << format_double(s.rmse) << ','
            << format_double(s.ess) << ',' << (s.resampled ? 1 : 0) << '\n';
    }
  if (have_records) write_text(out_dir / "steps.csv", steps.str());

  std::ostringstream runs;
  runs << "repetition,filter,kind,p,omega,alpha,mean_rmse,resample_pct,mean_ess,"
          "diverged,failed\n";
  for (const auto& r : result.runs)
    runs << r.repetition << ',' << csv_field(r.filter) << ',' << to_string(r.kind) << ','
         << r.point.proj_rank << ',' << format_double(r.point.omega) << ','
         << format_double(r.point.alpha) << ',' << format_double(r.summary.mean_rmse)
         << ',' << format_double(r.summary.resample_pct) << ','
         << format_double(r.summary.mean_ess) << ',' << (r.summary.diverged ? 1 : 0)
         << ',' << (r.failed ? 1 : 0) << '\n';
  write_text(out_dir / "runs.csv", runs.str());

  std::ostringstream sweep;
  sweep << "filter,p,omega,alpha,mean_rmse,std_rmse,resample_pct,diverged_count,best\n";
  for (const auto& row : result.rows)
    sweep << csv_field(row.filter) << ',' << row.point.proj_rank << ','
          << format_double(row.point.omega) << ',' << format_double(row.point.alpha)
          << ',' << format_double(row.mean_rmse) << ',' << format_double(row.std_rmse)
          << ',' << format_double(row.resample_pct) << ',' << row.diverged_count << ','
          << (row.best ? 1 : 0) << '\n';
  write_text(out_dir / "sweep.csv", sweep.str());

  json j;
  j["schema_version"] = kSchemaVersion;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["config"] = json::parse(cfg.to_json());
  json rows = json::array();
  for (const auto& row : result.rows)
    rows.push_back({{"filter", row.filter},
                    {"kind", to_string(row.kind)},
                    {"p", row.point.proj_rank},
                    {"omega", row.point.omega},
                    {"alpha", row.point.alpha},
                    {"repetitions", row.repetitions},
                    {"mean_rmse", number_or_null(row.mean_rmse)},
                    {"std_rmse", number_or_null(row.std_rmse)},
                    {"resample_pct", number_or_null(row.resample_pct)},
                    {"diverged_count", row.diverged_count},
                    {"failed_count", row.failed_count},
                    {"best", row.best}});
  j["rows"] = std::move(rows);
  json failures = json::array();
  for (const auto& r : result.runs)
    if (r.failed)
      failures.push_back({{"repetition", r.repetition},
                          {"filter", r.filter},
                          {"p", r.point.proj_rank},
                          {"omega", r.point.omega},
                          {"alpha", r.point.alpha},
                          {"error", r.error}});
  j["failures"] = std::move(failures);
  write_text(out_dir / "summary.json", j.dump(2) + "\n");
}

// --- Figures ---------------------------------------------------------------------

namespace {

struct Row {
  std::string filter;
  std::string kind;
  int p = 0;
  double omega = 0.0;
  double alpha = 0.0;
  double mean_rmse = 0.0;
  double resample_pct = 0.0;
};

double json_number(const json& v) {
  return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

std::vector<Row> read_rows(const std::filesystem::path& dir) {
  const auto path = dir / "summary.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Gap, "no results: " + path.string() + " is missing");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Io, path.string() + " is not valid JSON: " + e.what());
  }
  std::vector<Row> rows;
  for (const auto& r : j.at("rows")) {
    Row row;
    row.filter = r.at("filter").get<std::string>();
    row.kind = r.at("kind").get<std::string>();
    row.p = r.at("p").get<int>();
    row.omega = r.at("omega").get<double>();
    row.alpha = r.at("alpha").get<double>();
    row.mean_rmse = json_number(r.at("mean_rmse"));
    row.resample_pct = json_number(r.at("resample_pct"));
    if (std::isfinite(row.mean_rmse)) rows.push_back(row);
  }
  return rows;
}

// Lowest-RMSE row per key among rows of one kind.
template <class KeyFn>
std::map<int, Row> best_by(const std::vector<Row>& rows, const std::string& kind,
                           KeyFn key) {
  std::map<int, Row> out;
  for (const auto& r : rows) {
    if (r.kind != kind) continue;
    auto it = out.find(key(r));
    if (it == out.end() || r.mean_rmse < it->second.mean_rmse) out[key(r)] = r;
  }
  return out;
}

[[noreturn]] void gap(const std::string& figure, const std::vector<std::string>& missing) {
  std::string msg = "figure " + figure + " lacks coverage:";
  for (const auto& m : missing) msg += " " + m + ";";
  throw Error(ErrorCode::Gap, msg);
}

std::string paired_p_scan(const std::vector<Row>& rows, const std::string& figure,
                          const std::string& proj_kind, const std::string& base_kind,
                          const std::string& proj_col, const std::string& base_col,
                          bool with_resample) {
  const auto proj = best_by(rows, proj_kind, [](const Row& r) { return r.p; });
  const auto base = best_by(rows, base_kind, [](const Row&) { return 0; });
  std::vector<std::string> missing;
  if (proj.empty()) missing.push_back(proj_kind + " rows");
  if (base.empty()) missing.push_back(base_kind + " rows");
  if (!missing.empty()) gap(figure, missing);
  const Row& b = base.begin()->second;
  std::ostringstream out;
  out << "p,mean_rmse_" << proj_col << ",mean_rmse_" << base_col;
  if (with_resample) out << ",resample_pct_" << proj_col << ",resample_pct_" << base_col;
  out << '\n';
  for (const auto& [p, r] : proj) {
    out << p << ',' << format_double(r.mean_rmse) << ',' << format_double(b.mean_rmse);
    if (with_resample)
      out << ',' << format_double(r.resample_pct) << ',' << format_double(b.resample_pct);
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::vector<std::string> figure_ids() {
  return {"l96_tune_p", "l96_tune_omega_alpha", "oppf_tune_omega", "etkf_tune_p",
          "rmse_series"};
}

std::filesystem::path emit_plot_data(const std::filesystem::path& results_dir,
                                     const std::string& figure_id,
                                     const std::filesystem::path& out_dir) {
  const auto ids = figure_ids();
  if (std::find(ids.begin(), ids.end(), figure_id) == ids.end())
    throw Error(ErrorCode::Config, "unknown figure id '" + figure_id + "'");
  std::string text;
  if (figure_id == "rmse_series") {
    const auto path = results_dir / "steps.csv";
    std::ifstream in(path);
    if (!in) gap(figure_id, {"per-step records (" + path.string() + ")"});
    std::string line;
    std::getline(in, line);
    // (filter, step) -> sum, count; filters keep first-seen order
    std::vector<std::string> filters;
    std::map<std::pair<std::string, int>, std::pair<double, int>> acc;
    std::map<std::pair<std::string, int>, double> times;
    while (std::getline(in, line)) {
      std::vector<std::string> cols;
      std::string cell;
      std::istringstream ls(line);
      while (std::getline(ls, cell, ',')) cols.push_back(cell);
      if (cols.size() != 7) throw Error(ErrorCode::Io, "malformed row in " + path.string());
      const int step = std::stoi(cols[1]);
      if (std::find(filters.begin(), filters.end(), cols[3]) == filters.end())
        filters.push_back(cols[3]);
      auto& a = acc[{cols[3], step}];
      a.first += std::stod(cols[4]);
      a.second += 1;
      times[{cols[3], step}] = std::stod(cols[2]);
    }
    if (acc.empty()) gap(figure_id, {"per-step records"});
    std::ostringstream out;
    out << "filter,step,time,mean_rmse\n";
    for (const auto& f : filters)
      for (const auto& [key, a] : acc)
        if (key.first == f)
          out << csv_field(f) << ',' << key.second << ',' << format_double(times[key])
              << ',' << format_double(a.first / a.second) << '\n';
    text = out.str();
  } else {
    const auto rows = read_rows(results_dir);
    if (rows.empty()) gap(figure_id, {"any finite sweep rows"});
    if (figure_id == "l96_tune_p") {
      text = paired_p_scan(rows, figure_id, "proj_op_pf", "op_pf", "projoppf", "oppf", true);
    } else if (figure_id == "etkf_tune_p") {
      text = paired_p_scan(rows, figure_id, "proj_etkf", "etkf", "projetkf", "etkf", false);
    } else if (figure_id == "l96_tune_omega_alpha") {
      std::ostringstream out;
      out << "p,omega,alpha,mean_rmse,resample_pct\n";
      bool any = false;
      for (const auto& r : rows)
        if (r.kind == "proj_op_pf") {
          any = true;
          out << r.p << ',' << format_double(r.omega) << ',' << format_double(r.alpha)
              << ',' << format_double(r.mean_rmse) << ',' << format_double(r.resample_pct)
              << '\n';
        }
      if (!any) gap(figure_id, {"proj_op_pf rows"});
      text = out.str();
    } else if (figure_id == "oppf_tune_omega") {
      std::ostringstream out;
      out << "omega,mean_rmse,resample_pct\n";
      bool any = false;
      for (const auto& r : rows)
        if (r.kind == "op_pf") {
          any = true;
          out << format_double(r.omega) << ',' << format_double(r.mean_rmse) << ','
              << format_double(r.resample_pct) << '\n';
        }
      if (!any) gap(figure_id, {"op_pf rows"});
      text = out.str();
    } else {
      throw Error(ErrorCode::Config, "unknown figure id '" + figure_id + "'");
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir.string());
  const auto path = out_dir / (figure_id + ".csv");
  write_text(path, text);
  return path;
}

}  // namespace projda::harness
