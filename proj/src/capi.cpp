#include "affplan.h"

#include <cstring>
#include <optional>
#include <fstream>
#include <sstream>
#include <string>

#include "affplan/experiment.hpp"

using namespace affplan;

struct affplan_config {
  experiment::ExperimentConfig rep;
};

struct affplan_bundle {
  models::ModelBundle rep;
};

namespace {

thread_local std::string g_last_error;

affplan_status fail(affplan_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
affplan_status guarded(F&& body) {
  g_last_error.clear();
  try {
    return body();
  } catch (const ParseError& e) {
    return fail(AFFPLAN_ERR_PARSE, e.what());
  } catch (const ConfigError& e) {
    return fail(AFFPLAN_ERR_CONFIG, e.what());
  } catch (const IoError& e) {
    return fail(AFFPLAN_ERR_IO, e.what());
  } catch (const NumericError& e) {
    return fail(AFFPLAN_ERR_NUMERIC, e.what());
  } catch (const InsufficientData& e) {
    return fail(AFFPLAN_ERR_DATA, e.what());
  } catch (const ContractError& e) {
    return fail(AFFPLAN_ERR_CONTRACT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(AFFPLAN_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(AFFPLAN_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(AFFPLAN_ERR_INTERNAL, "unknown error");
  }
}

void emit(affplan_sink sink, void* user, const std::string& text) {
  if (sink && !text.empty()) sink(text.data(), text.size(), user);
}

/// Forwards whole lines to a sink.
class SinkBuf : public std::stringbuf {
 public:
  SinkBuf(affplan_sink sink, void* user) : sink_(sink), user_(user) {}
  int sync() override {
    emit(sink_, user_, str());
    str("");
    return 0;
  }

 private:
  affplan_sink sink_;
  void* user_;
};

}  // namespace

extern "C" {

const char* affplan_version(void) { return "1.0.0"; }

const char* affplan_status_name(affplan_status status) {
  switch (status) {
    case AFFPLAN_OK: return "ok";
    case AFFPLAN_ERR_ARGUMENT: return "invalid argument";
    case AFFPLAN_ERR_CONFIG: return "invalid configuration";
    case AFFPLAN_ERR_PARSE: return "parse error";
    case AFFPLAN_ERR_IO: return "i/o error";
    case AFFPLAN_ERR_NUMERIC: return "numeric error";
    case AFFPLAN_ERR_DATA: return "insufficient data";
    case AFFPLAN_ERR_CONTRACT: return "contract violation";
    case AFFPLAN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* affplan_last_error(void) { return g_last_error.c_str(); }

// ---- configuration

affplan_status affplan_config_create(affplan_config** out) {
  if (!out) return fail(AFFPLAN_ERR_ARGUMENT, "out is null");
  return guarded([&] {
    *out = new affplan_config{};
    return AFFPLAN_OK;
  });
}

void affplan_config_destroy(affplan_config* config) { delete config; }

affplan_status affplan_config_parse(affplan_config* config, const char* text) {
  if (!config || !text) return fail(AFFPLAN_ERR_ARGUMENT, "config or text is null");
  return guarded([&] {
    config->rep = experiment::parse_config(text, config->rep);
    return AFFPLAN_OK;
  });
}

affplan_status affplan_config_load(affplan_config* config, const char* path) {
  if (!config || !path) return fail(AFFPLAN_ERR_ARGUMENT, "config or path is null");
  return guarded([&] {
    config->rep = experiment::load_config(path, config->rep);
    return AFFPLAN_OK;
  });
}

affplan_status affplan_config_set(affplan_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return fail(AFFPLAN_ERR_ARGUMENT, "config, key or value is null");
  return guarded([&] {
    experiment::set_value(config->rep, key, value);
    return AFFPLAN_OK;
  });
}

affplan_status affplan_config_get(const affplan_config* config, const char* key, affplan_sink sink, void* user) {
  if (!config || !key) return fail(AFFPLAN_ERR_ARGUMENT, "config or key is null");
  return guarded([&] {
    emit(sink, user, experiment::get_value(config->rep, key));
    return AFFPLAN_OK;
  });
}

affplan_status affplan_config_serialize(const affplan_config* config, affplan_sink sink, void* user) {
  if (!config) return fail(AFFPLAN_ERR_ARGUMENT, "config is null");
  return guarded([&] {
    emit(sink, user, experiment::serialize(config->rep));
    return AFFPLAN_OK;
  });
}

affplan_status affplan_config_validate(const affplan_config* config) {
  if (!config) return fail(AFFPLAN_ERR_ARGUMENT, "config is null");
  return guarded([&] {
    experiment::validate(config->rep);
    return AFFPLAN_OK;
  });
}

size_t affplan_config_key_count(void) { return experiment::config_keys().size(); }

const char* affplan_config_key(size_t index) {
  const auto& keys = experiment::config_keys();
  return index < keys.size() ? keys[index].c_str() : nullptr;
}

// ---- training

affplan_status affplan_train(const affplan_config* config, const char* out_dir, int resume, affplan_sink progress,
                             void* user) {
  if (!config || !out_dir) return fail(AFFPLAN_ERR_ARGUMENT, "config or out_dir is null");
  return guarded([&] {
    SinkBuf buf(progress, user);
    std::ostream log(&buf);
    experiment::RunOptions options;
    options.resume = resume != 0;
    options.log = progress ? &log : nullptr;
    try {
      experiment::run_training(config->rep, out_dir, options);
    } catch (...) {
      log.flush();
      throw;
    }
    log.flush();
    return AFFPLAN_OK;
  });
}

// ---- checkpoints

affplan_status affplan_bundle_load(const char* path, affplan_bundle** out) {
  if (!path || !out) return fail(AFFPLAN_ERR_ARGUMENT, "path or out is null");
  return guarded([&] {
    *out = new affplan_bundle{models::load_bundle(path)};
    return AFFPLAN_OK;
  });
}

void affplan_bundle_destroy(affplan_bundle* bundle) { delete bundle; }

size_t affplan_bundle_observation_width(const affplan_bundle* bundle) {
  return bundle ? bundle->rep.observation_width() : 0;
}

size_t affplan_bundle_skill_count(const affplan_bundle* bundle) { return bundle ? bundle->rep.vocabulary().size() : 0; }

// ---- evaluation

affplan_status affplan_eval(const affplan_config* config, const affplan_bundle* bundle, size_t episodes,
                            uint64_t seed, affplan_goal_rate* rates, size_t capacity, size_t* count,
                            affplan_sink sink, void* user) {
  if (!config) return fail(AFFPLAN_ERR_ARGUMENT, "config is null");
  if (capacity > 0 && !rates) return fail(AFFPLAN_ERR_ARGUMENT, "rates is null");
  return guarded([&] {
    const auto report = experiment::evaluate(config->rep, bundle ? &bundle->rep : nullptr, episodes, seed);
    if (count) *count = report.goals.size();
    for (std::size_t i = 0; i < report.goals.size() && i < capacity; ++i) {
      const auto& g = report.goals[i];
      affplan_goal_rate& r = rates[i];
      std::memset(r.goal, 0, sizeof r.goal);
      std::strncpy(r.goal, g.goal.c_str(), sizeof r.goal - 1);
      r.episodes = g.episodes;
      r.successes = g.successes;
      r.rate = g.rate;
      r.ci_low = g.lo;
      r.ci_high = g.hi;
    }
    std::ostringstream text;
    experiment::write_report(text, report);
    emit(sink, user, text.str());
    return AFFPLAN_OK;
  });
}

// ---- heatmaps

void affplan_heatmap_spec_default(affplan_heatmap_spec* spec) {
  if (!spec) return;
  const experiment::HeatmapSpec d;
  spec->width = d.width;
  spec->height = d.height;
  spec->skill = "grasp";
  spec->goal = "red";
  spec->seed = d.seed;
  spec->normalize = 1;
  for (int i = 0; i < 4; ++i) spec->fixed[i] = d.fixed[static_cast<std::size_t>(i)];
}

affplan_status affplan_heatmap(const affplan_bundle* bundle, const affplan_config* config,
                               const affplan_heatmap_spec* spec, const char* csv_path, const char* pgm_path) {
  if (!bundle || !config || !spec) return fail(AFFPLAN_ERR_ARGUMENT, "bundle, config or spec is null");
  return guarded([&] {
    experiment::HeatmapSpec s;
    s.width = spec->width;
    s.height = spec->height;
    if (spec->skill) s.skill = spec->skill;
    if (spec->goal) s.goal = spec->goal;
    s.seed = spec->seed;
    s.normalization = spec->normalize ? experiment::HeatmapSpec::Normalization::kMinMax
                                      : experiment::HeatmapSpec::Normalization::kNone;
    for (std::size_t i = 0; i < kMaxArity; ++i) s.fixed[i] = spec->fixed[i];
    const auto domain = experiment::make_domain(config->rep);
    if (!domain.world) throw ConfigError("heatmaps need a tool-use domain");
    const auto map = experiment::compute_heatmap(bundle->rep, *domain.world, s, config->rep.planner);
    if (csv_path) {
      std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError(std::string("cannot write ") + csv_path);
      experiment::write_heatmap_csv(out, map);
      if (!out.flush()) throw IoError(std::string("write failed: ") + csv_path);
    }
    if (pgm_path) {
      std::ofstream out(pgm_path, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError(std::string("cannot write ") + pgm_path);
      experiment::write_heatmap_pgm(out, map);
      if (!out.flush()) throw IoError(std::string("write failed: ") + pgm_path);
    }
    return AFFPLAN_OK;
  });
}

// ---- oracle

affplan_status affplan_oracle(const char* mdp_path, const char* goal, size_t max_length,
                              affplan_oracle_result* result, affplan_sink sink, void* user) {
  if (!mdp_path) return fail(AFFPLAN_ERR_ARGUMENT, "mdp_path is null");
  return guarded([&] {
    const auto mdp = tabular::load_mdp(mdp_path);
    if (mdp.goals.empty()) throw ConfigError("the MDP defines no goals");
    int g = 0;
    if (goal && *goal) {
      g = mdp.find_goal(goal);
      if (g < 0) throw ConfigError(std::string("unknown goal '") + goal + "'");
    }
    const auto report = experiment::oracle_report(mdp, g, max_length);
    if (result) {
      result->has_plan = report.best ? 1 : 0;
      result->cross_check_ok = report.cross_check_ok ? 1 : 0;
      result->probability = report.best ? report.best->probability : 0.0;
      result->max_discrepancy = report.max_discrepancy;
      result->ranked = report.ranking.size();
    }
    std::ostringstream text;
    text << "goal " << mdp.goals[static_cast<std::size_t>(g)].name << "\n";
    experiment::write_oracle_report(text, mdp, report);
    emit(sink, user, text.str());
    return AFFPLAN_OK;
  });
}

// ---- replay buffers

affplan_status affplan_replay_inspect(const char* buffer_path, const char* checkpoint_path, long episode,
                                      affplan_sink sink, void* user) {
  if (!buffer_path) return fail(AFFPLAN_ERR_ARGUMENT, "buffer_path is null");
  return guarded([&] {
    const auto buffer = trainer::ReplayBuffer::restore(read_array_file(buffer_path));
    std::optional<models::ModelBundle> names;
    if (checkpoint_path && *checkpoint_path) names.emplace(models::load_bundle(checkpoint_path));
    std::ostringstream text;
    if (episode >= 0) {
      experiment::write_buffer_episode(text, buffer, static_cast<std::size_t>(episode));
    } else {
      experiment::write_buffer_summary(text, buffer, names ? &names->vocabulary() : nullptr);
    }
    emit(sink, user, text.str());
    return AFFPLAN_OK;
  });
}

}  // extern "C"
