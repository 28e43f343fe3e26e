#include <CLI11.hpp>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "teach/curriculum.hpp"
#include "teach/envs.hpp"
#include "teach/extract.hpp"
#include "teach/harness.hpp"
#include "teach/random.hpp"
#include "teach/serve.hpp"
#include "teach/server.hpp"
#include "teach/student.hpp"

namespace fs = std::filesystem;
using namespace teach;

namespace {

// Failure tagged with the pipeline stage and a remediation hint.
struct StageError : Error {
  StageError(const std::string& msg, std::string h) : Error(msg), hint(std::move(h)) {}
  std::string hint;
};

fs::path storage_root() {
  const char* env = std::getenv("TEACH_HOME");
  return env && *env ? fs::path(env) : fs::path("teach-data");
}

fs::path or_default(const std::string& given, const fs::path& fallback) { return given.empty() ? fallback : fs::path(given); }

void need_file(const fs::path& p, const std::string& what, const std::string& producer) {
  if (!fs::exists(p)) {
    throw StageError(what + " not found at " + p.string(),
                     "run `teach " + producer + "` first, or pass the path explicitly");
  }
}

std::shared_ptr<const Environment> make_env(Schema schema) {
  if (schema == Schema::parking6) return std::make_shared<const ParkingEnv>();
  return std::make_shared<const WritingEnv>(default_writing_params());
}

Schema parse_env(const std::string& name) {
  if (name == "parking" || name == "parking6") return Schema::parking6;
  if (name == "writing" || name == "writing2") return Schema::writing2;
  throw StageError("unknown environment '" + name + "'", "use --env parking or --env writing");
}

std::string env_name(Schema s) { return s == Schema::parking6 ? "parking" : "writing"; }

StudentKind parse_student(std::string name) {
  std::replace(name.begin(), name.end(), '-', '_');
  try {
    return student_kind_from_string(name);
  } catch (const Error&) {
    throw StageError("unknown student '" + name + "'", "use --student reversing or --student half-trained");
  }
}

std::vector<Trajectory> load_demos_checked(const fs::path& path, Schema schema) {
  need_file(path, "demonstrations", "gen-demos");
  auto demos = load_demonstrations(path);
  for (const auto& d : demos) {
    if (d.scenario.schema != schema) {
      throw StageError(path.string() + " holds " + std::string(to_string(d.scenario.schema)) + " trajectories",
                       "pass --env matching the demonstration file");
    }
  }
  return demos;
}

std::unique_ptr<SkillExtractor> load_extractor_checked(const fs::path& path) {
  need_file(path, "skill extractor", "fit-extractor");
  return load_extractor(path);
}

Json labels_json(const LabelMap& labels, Schema schema) {
  Json l = Json::object();
  for (const auto& [id, seq] : labels) l[id] = seq;
  return Json{{"schema", std::string(to_string(schema))}, {"labels", l}};
}

LabelMap load_labels(const fs::path& path) {
  need_file(path, "skill labels", "extract");
  const Json j = read_json_file(path);
  LabelMap out;
  for (const auto& [id, seq] : require_field(j, "labels").items()) out[id] = seq.get<std::vector<int>>();
  return out;
}

std::vector<std::string> load_pool(const fs::path& path) {
  need_file(path, "scenario pool", "select-scenarios");
  return require_field(read_json_file(path), "scenarios").get<std::vector<std::string>>();
}

struct Paths {
  fs::path root;
  fs::path demos(Schema s) const { return root / "demos" / (env_name(s) + ".json"); }
  fs::path extractor(Schema s) const { return root / "extractor" / (env_name(s) + ".json"); }
  fs::path labels(Schema s) const { return root / "labels" / (env_name(s) + ".json"); }
  fs::path pool(Schema s) const { return root / "pool" / (env_name(s) + ".json"); }
  fs::path expertise(Schema s) const { return root / "expertise" / (env_name(s) + ".json"); }
  fs::path drills(Schema s) const { return root / "drills" / env_name(s); }
  fs::path student(StudentKind k) const { return root / "students" / std::string(to_string(k)); }
};

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skill-based teaching pipeline for motor control tasks"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  bool json_out = false;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
  app.add_flag("--json", json_out, "Print a machine-readable summary");

  std::string env_opt = "parking";
  auto add_env = [&](CLI::App* c) { c->add_option("--env", env_opt, "parking or writing")->capture_default_str(); };

  // gen-demos
  auto* gen = app.add_subcommand("gen-demos", "Generate expert demonstrations");
  int gen_count = 0;
  std::string gen_out;
  add_env(gen);
  gen->add_option("--count", gen_count, "Demonstrations to generate (default 200 parking, 100 writing)");
  gen->add_option("--out", gen_out, "Output file");

  // fit-extractor
  auto* fit = app.add_subcommand("fit-extractor", "Fit the skill extractor on demonstrations");
  std::string fit_demos, fit_out, fit_method = "builtin", fit_import;
  int fit_latent = 0, fit_k = 0;
  add_env(fit);
  fit->add_option("--demos", fit_demos, "Demonstration file");
  fit->add_option("--out", fit_out, "Extractor file");
  fit->add_option("--method", fit_method, "builtin or import")->check(CLI::IsMember({"builtin", "import"}));
  fit->add_option("--import-labels", fit_import, "Segmentation records to import (with --method import)");
  fit->add_option("--latent-dim", fit_latent, "Number of skills");
  fit->add_option("--k", fit_k, "Target segments per demonstration");

  // extract
  auto* ext = app.add_subcommand("extract", "Label demonstrations with skills");
  std::string ext_demos, ext_extractor, ext_out;
  add_env(ext);
  ext->add_option("--demos", ext_demos, "Demonstration file");
  ext->add_option("--extractor", ext_extractor, "Extractor file");
  ext->add_option("--out", ext_out, "Label file");

  // select-scenarios
  auto* sel = app.add_subcommand("select-scenarios", "Pick a diverse scenario pool");
  std::string sel_labels, sel_out;
  int sel_n = 25;
  add_env(sel);
  sel->add_option("--labels", sel_labels, "Label file");
  sel->add_option("--size", sel_n, "Pool size")->capture_default_str();
  sel->add_option("--out", sel_out, "Pool file");

  // assess
  auto* ass = app.add_subcommand("assess", "Estimate a student's expertise per skill");
  std::string ass_pool, ass_labels, ass_extractor, ass_students, ass_out;
  add_env(ass);
  ass->add_option("--pool", ass_pool, "Pool file");
  ass->add_option("--labels", ass_labels, "Label file");
  ass->add_option("--extractor", ass_extractor, "Extractor file");
  ass->add_option("--students", ass_students, "Student trajectories, one per pool scenario")->required();
  ass->add_option("--out", ass_out, "Expertise file");

  // make-drills
  auto* mk = app.add_subcommand("make-drills", "Create drills for the weakest skills");
  std::string mk_expertise, mk_demos, mk_labels, mk_extractor, mk_out;
  std::vector<int> mk_targets;
  int mk_n = 0, mk_rep = 0, mk_target = 0, mk_drills = 0;
  add_env(mk);
  mk->add_option("--expertise", mk_expertise, "Expertise file (default: all skills equal)");
  mk->add_option("--targets", mk_targets, "Explicit target skills instead of the expertise ranking");
  mk->add_option("--n", mk_n, "n-gram length");
  mk->add_option("--n-rep", mk_rep, "Repetitions per drill");
  mk->add_option("--n-target", mk_target, "Target skills");
  mk->add_option("--n-drills", mk_drills, "Drills per target skill");
  mk->add_option("--demos", mk_demos, "Demonstration file");
  mk->add_option("--labels", mk_labels, "Label file");
  mk->add_option("--extractor", mk_extractor, "Extractor file");
  mk->add_option("--out", mk_out, "Output directory");

  // train-student
  auto* tr = app.add_subcommand("train-student", "Train a synthetic parking student");
  std::string tr_student = "reversing", tr_demos, tr_out, tr_pool;
  int tr_epochs = -1;
  tr->add_option("--student", tr_student, "reversing or half-trained")->capture_default_str();
  tr->add_option("--demos", tr_demos, "Parking demonstration file");
  tr->add_option("--epochs", tr_epochs, "Override the training epochs");
  tr->add_option("--pool", tr_pool, "Also roll the student out on this pool (for assess)");
  tr->add_option("--out", tr_out, "Output directory");

  // run-experiment
  auto* run = app.add_subcommand("run-experiment", "Run the synthetic practice-setting comparison");
  std::string run_student = "reversing", run_out, run_config;
  std::vector<std::uint64_t> run_seeds;
  std::vector<std::string> run_settings;
  int run_pairs = 0, run_epochs = -1, run_eval_sets = 0, run_demo_count = 0, run_n = 0, run_rep = 0, run_target = 0,
      run_drills = 0, run_k = 0;
  bool quiet = false;
  add_env(run);
  run->add_option("--student", run_student, "reversing or half-trained")->capture_default_str();
  run->add_option("--seeds", run_seeds, "Seeds to run (default: --seed)");
  run->add_option("--settings", run_settings, "Practice settings to compare");
  run->add_option("--config", run_config, "Experiment config JSON; flags override it");
  run->add_option("--pairs", run_pairs, "Practice pairs per setting");
  run->add_option("--finetune-epochs", run_epochs, "Fine-tuning epochs");
  run->add_option("--eval-sets", run_eval_sets, "Evaluation sets");
  run->add_option("--demo-count", run_demo_count, "Expert demonstrations per seed");
  run->add_option("--n", run_n, "n-gram length");
  run->add_option("--n-rep", run_rep, "Repetitions per drill");
  run->add_option("--n-target", run_target, "Target skills");
  run->add_option("--n-drills", run_drills, "Drills per target skill");
  run->add_option("--k", run_k, "Intervals for the time heuristic");
  run->add_option("--out", run_out, "Output directory");
  run->add_flag("--quiet", quiet, "No progress on stderr");

  // serve
  auto* srv = app.add_subcommand("serve", "Run the practice server");
  ServerConfig server_cfg;
  std::vector<std::string> srv_envs{"parking", "writing"};
  int srv_demo_count = 60;
  srv->add_option("--host", server_cfg.host)->capture_default_str();
  srv->add_option("--port", server_cfg.port)->capture_default_str();
  srv->add_flag("--realtime", server_cfg.realtime, "Pace demo playback at the tick rate");
  srv->add_option("--envs", srv_envs, "Environments to serve")->capture_default_str();
  srv->add_option("--demo-count", srv_demo_count, "Demonstrations to build when none are stored")->capture_default_str();

  // report
  auto* rep = app.add_subcommand("report", "Re-emit experiment reports or summarize session logs");
  std::string rep_experiment, rep_sessions, rep_out;
  rep->add_option("--experiment", rep_experiment, "report.json from run-experiment");
  rep->add_option("--sessions", rep_sessions, "Directory of session logs");
  rep->add_option("--out", rep_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  const Paths paths{storage_root()};
  CLI::App* cmd = app.get_subcommands().front();
  const std::string stage = cmd->get_name();
  Json summary{{"command", stage}, {"seed", seed}};

  try {
    if (cmd == gen) {
      const Schema schema = parse_env(env_opt);
      const fs::path out = or_default(gen_out, paths.demos(schema));
      std::vector<Trajectory> demos;
      if (schema == Schema::parking6) {
        const int count = gen_count > 0 ? gen_count : 200;
        demos = generate_parking_demos({}, {}, static_cast<std::size_t>(count), seed, "demo");
        summary["dropped"] = count - static_cast<int>(demos.size());
      } else {
        const WritingEnv wenv(default_writing_params());
        for (const auto& sc : wenv.sample_scenarios(static_cast<std::size_t>(gen_count > 0 ? gen_count : 100), seed, "demo")) {
          demos.push_back(wenv.expert_demo(sc));
        }
      }
      ensure_parent(out);
      export_demonstrations(demos, out);
      summary["demonstrations"] = demos.size();
      summary["out"] = out.string();
    } else if (cmd == fit) {
      const Schema schema = parse_env(env_opt);
      const auto demos = load_demos_checked(or_default(fit_demos, paths.demos(schema)), schema);
      const fs::path out = or_default(fit_out, paths.extractor(schema));
      ensure_parent(out);
      if (fit_method == "import") {
        if (fit_import.empty()) throw StageError("--method import needs --import-labels", "pass the segmentation file");
        need_file(fit_import, "segmentation records", "an external skill extractor");
        const auto ex = import_segmentations(fs::path(fit_import), demos, fit_latent);
        save_extractor(ex, out);
        summary["latent_dim"] = ex.latent_dim();
      } else {
        if (!fit_import.empty()) {
          throw StageError("--import-labels only applies with --method import", "add --method import or drop the flag");
        }
        ExtractorConfig cfg = schema == Schema::parking6 ? parking_extractor_defaults() : writing_extractor_defaults();
        if (fit_latent > 0) cfg.latent_dim = fit_latent;
        if (fit_k > 0) cfg.segments_per_demo = fit_k;
        const auto ex = fit_builtin(demos, cfg, seed);
        save_extractor(ex, out);
        summary["latent_dim"] = ex.latent_dim();
        summary["warnings"] = ex.warnings();
      }
      summary["out"] = out.string();
    } else if (cmd == ext) {
      const Schema schema = parse_env(env_opt);
      const auto demos = load_demos_checked(or_default(ext_demos, paths.demos(schema)), schema);
      const auto ex = load_extractor_checked(or_default(ext_extractor, paths.extractor(schema)));
      const LabelMap labels = label_demonstrations(demos, *ex);
      const fs::path out = or_default(ext_out, paths.labels(schema));
      ensure_parent(out);
      write_json_file(out, labels_json(labels, schema), 1);
      summary["labeled"] = labels.size();
      summary["out"] = out.string();
    } else if (cmd == sel) {
      const Schema schema = parse_env(env_opt);
      const LabelMap labels = load_labels(or_default(sel_labels, paths.labels(schema)));
      const auto pool = select_diverse_scenarios(labels, static_cast<std::size_t>(sel_n));
      const fs::path out = or_default(sel_out, paths.pool(schema));
      ensure_parent(out);
      write_json_file(out, Json{{"schema", std::string(to_string(schema))}, {"scenarios", pool}}, 1);
      summary["scenarios"] = pool;
      summary["out"] = out.string();
    } else if (cmd == ass) {
      const Schema schema = parse_env(env_opt);
      const auto pool = load_pool(or_default(ass_pool, paths.pool(schema)));
      const LabelMap labels = load_labels(or_default(ass_labels, paths.labels(schema)));
      const auto ex = load_extractor_checked(or_default(ass_extractor, paths.extractor(schema)));
      need_file(ass_students, "student trajectories", "train-student --pool");
      std::map<std::string, Trajectory> trajs;
      const auto env = make_env(schema);
      for (auto& t : load_demonstrations(ass_students)) {
        if (t.scenario.schema != schema) throw UnsupportedSchema("student trajectory '" + t.id + "' has the wrong schema");
        t.reward = env->scenario_reward(t);
        trajs[t.scenario.id] = std::move(t);
      }
      for (const auto& id : pool) {
        if (!trajs.contains(id)) {
          throw StageError("no student trajectory for scenario '" + id + "'",
                           "roll the student out on every pool scenario before assessing");
        }
      }
      const ExpertiseVector e = assess_expertise(pool, labels, trajs, *ex);
      const fs::path out = or_default(ass_out, paths.expertise(schema));
      ensure_parent(out);
      write_json_file(out, expertise_to_json(e), 1);
      summary["weakest"] = lowest_expertise_skills(e, std::min<int>(3, static_cast<int>(e.scores.size())));
      summary["out"] = out.string();
    } else if (cmd == mk) {
      const Schema schema = parse_env(env_opt);
      DrillConfig cfg = schema == Schema::parking6 ? parking_drill_defaults() : writing_drill_defaults();
      if (mk_n > 0) cfg.n = mk_n;
      if (mk_rep > 0) cfg.n_rep = mk_rep;
      if (mk_target > 0) cfg.n_target = mk_target;
      if (mk_drills > 0) cfg.n_drills = mk_drills;
      cfg.check();
      const auto demos = load_demos_checked(or_default(mk_demos, paths.demos(schema)), schema);
      const LabelMap labels = load_labels(or_default(mk_labels, paths.labels(schema)));
      const auto ex = load_extractor_checked(or_default(mk_extractor, paths.extractor(schema)));
      const SkillLibrary* lib = skill_library_of(*ex);
      if (!lib) throw StageError("extractor has no skill library", "fit a builtin or imported extractor");
      const auto env = make_env(schema);
      DrillSet set;
      const std::uint64_t dseed = derive_seed(seed, "drills");
      if (!mk_targets.empty()) {
        set = create_drills_for_targets(mk_targets, cfg, labels, demos, *lib, *env, dseed);
      } else {
        ExpertiseVector e;
        const fs::path efile = mk_expertise.empty() ? paths.expertise(schema) : fs::path(mk_expertise);
        if (fs::exists(efile)) {
          e = expertise_from_json(read_json_file(efile));
        } else if (!mk_expertise.empty()) {
          need_file(efile, "expertise", "assess");
        } else {
          // No assessment yet: every populated skill ranks equally, lowest ids first.
          for (const auto& [m, segs] : lib->segments) {
            if (!segs.empty()) e.scores[m] = 0.0;
          }
        }
        set = create_drills(e, cfg, labels, demos, *lib, *env, dseed);
      }
      const fs::path out = or_default(mk_out, paths.drills(schema));
      fs::create_directories(out);
      for (const auto& entry : fs::directory_iterator(out)) {
        if (entry.path().extension() == ".json") fs::remove(entry.path());
      }
      const auto files = write_drills(set, out);
      summary["targets"] = set.targets;
      summary["drills"] = files.size();
      summary["warnings"] = set.warnings;
      summary["out"] = out.string();
    } else if (cmd == tr) {
      const Schema schema = Schema::parking6;
      ExperimentConfig cfg = parse_student(tr_student) == StudentKind::reversing ? reversing_experiment_defaults()
                                                                                 : half_trained_experiment_defaults();
      if (tr_epochs >= 0) {
        if (cfg.student == StudentKind::reversing) cfg.pretrain.epochs = tr_epochs;
        else cfg.half_trained_epochs = tr_epochs;
      }
      const auto demos = load_demos_checked(or_default(tr_demos, paths.demos(schema)), schema);
      const auto trained = train_synthetic_student(cfg, demos, seed);
      const fs::path out = or_default(tr_out, paths.student(cfg.student));
      fs::create_directories(out);
      trained.net.save(out / "student.net");
      trained.curve.write_csv(out / "loss.csv");
      summary["eval_mse"] = trained.eval_mse;
      summary["out"] = out.string();
      if (!tr_pool.empty()) {
        const auto pool = load_pool(tr_pool);
        const ParkingEnv env;
        std::vector<Trajectory> trajs;
        for (const auto& id : pool) {
          const Trajectory& d = find_trajectory(demos, id);
          trajs.push_back(rollout(trained.net, d.scenario, env, d.scenario.horizon, "student-" + id));
        }
        export_demonstrations(trajs, out / "trajectories.json");
        summary["trajectories"] = (out / "trajectories.json").string();
      }
    } else if (cmd == run) {
      if (parse_env(env_opt) != Schema::parking6) {
        throw StageError("synthetic students exist only for parking", "use --env parking");
      }
      const StudentKind kind = parse_student(run_student);
      ExperimentConfig cfg = kind == StudentKind::reversing ? reversing_experiment_defaults()
                                                            : half_trained_experiment_defaults();
      bool config_seeds = false;
      if (!run_config.empty()) {
        need_file(run_config, "experiment config", "a text editor");
        Json j = read_json_file(run_config);
        if (j.is_object() && !j.contains("student")) j["student"] = std::string(to_string(kind));
        config_seeds = j.is_object() && j.contains("seeds");
        cfg = ExperimentConfig::from_json(j);
      }
      if (!run_seeds.empty()) cfg.seeds = run_seeds;
      else if (!config_seeds) cfg.seeds = {seed};
      if (!run_settings.empty()) {
        cfg.settings.clear();
        for (const auto& s : run_settings) cfg.settings.push_back(setting_from_string(s));
      }
      if (run_pairs > 0) cfg.practice_pairs = static_cast<std::size_t>(run_pairs);
      if (run_epochs >= 0) cfg.finetune.epochs = run_epochs;
      if (run_eval_sets > 0) cfg.eval_sets = run_eval_sets;
      if (run_demo_count > 0) cfg.demo_count = run_demo_count;
      if (run_n > 0) cfg.drills.n = run_n;
      if (run_rep > 0) cfg.drills.n_rep = run_rep;
      if (run_target > 0) cfg.target_skills = run_target;
      if (run_drills > 0) cfg.drills.n_drills = run_drills;
      if (run_k > 0) cfg.time_heuristic_k = run_k;
      cfg.check();
      const auto report = run_synthetic_experiment(cfg, [&](const std::string& msg) {
        if (!quiet) std::cerr << msg << '\n';
      });
      const fs::path out = or_default(run_out, paths.root / "experiments" /
                                                   (std::string(to_string(cfg.student)) + "-" + cfg.hash().substr(0, 8)));
      emit_report(report, out);
      Json means = Json::object();
      for (Setting s : cfg.settings) means[std::string(to_string(s))] = report.run_mean(s);
      summary["mean_reward"] = means;
      summary["config_hash"] = report.config_hash;
      summary["out"] = out.string();
    } else if (cmd == srv) {
      std::map<Schema, std::shared_ptr<const EnvAssets>> assets;
      for (const auto& name : srv_envs) {
        const Schema schema = parse_env(name);
        if (fs::exists(paths.demos(schema)) && fs::exists(paths.extractor(schema))) {
          std::shared_ptr<const SkillExtractor> ex = load_extractor(paths.extractor(schema));
          assets[schema] = std::make_shared<const EnvAssets>(
              load_assets(make_env(schema), load_demos_checked(paths.demos(schema), schema), ex));
        } else if (schema == Schema::parking6) {
          assets[schema] = std::make_shared<const EnvAssets>(
              build_parking_assets({}, {}, static_cast<std::size_t>(srv_demo_count), seed));
        } else {
          assets[schema] = std::make_shared<const EnvAssets>(
              build_writing_assets(default_writing_params(), static_cast<std::size_t>(srv_demo_count), seed));
        }
      }
      SessionManager sessions(paths.root / "serve", assets);
      const auto recovered = sessions.recover();
      Server server(sessions, server_cfg);
      const auto port = server.start();
      summary["port"] = port;
      summary["recovered"] = recovered;
      std::cout << (json_out ? summary.dump() : "listening on " + server_cfg.host + ":" + std::to_string(port))
                << std::endl;
      static Server* active = &server;
      std::signal(SIGINT, [](int) { std::thread([] { active->stop(); }).detach(); });
      std::signal(SIGTERM, [](int) { std::thread([] { active->stop(); }).detach(); });
      server.wait();
      return 0;
    } else if (cmd == rep) {
      if (rep_experiment.empty() == rep_sessions.empty()) {
        throw StageError("pass exactly one of --experiment or --sessions", "see `teach report --help`");
      }
      if (!rep_experiment.empty()) {
        need_file(rep_experiment, "experiment report", "run-experiment");
        const auto report = ExperimentReport::from_json(read_json_file(rep_experiment));
        const fs::path out = or_default(rep_out, fs::path(rep_experiment).parent_path());
        emit_report(report, out);
        summary["runs"] = report.runs.size();
        summary["out"] = out.string();
      } else {
        need_file(rep_sessions, "session log directory", "serve");
        std::vector<fs::path> logs;
        for (const auto& entry : fs::directory_iterator(rep_sessions)) {
          if (entry.path().extension() == ".jsonl") logs.push_back(entry.path());
        }
        std::sort(logs.begin(), logs.end());
        std::vector<HumanResult> results;
        std::vector<std::string> skipped;
        for (const auto& log : logs) {
          const auto env = make_env(session_log_schema(log));
          const auto record = replay_session_log(log, *env);
          if (!record.finalized) {
            skipped.push_back(log.filename().string());
            continue;
          }
          results.push_back(ingest_session(record, *env));
        }
        const fs::path out = or_default(rep_out, paths.root / "reports");
        fs::create_directories(out);
        write_json_file(out / "human_report.json", human_report_json(results), 2);
        std::ofstream csv(out / "human_report.csv");
        csv << "username,env,setting,improvement\n";
        char buf[64];
        for (const auto& h : results) {
          std::snprintf(buf, sizeof buf, "%.17g", h.improvement);
          csv << h.username << ',' << to_string(h.schema) << ',' << to_string(h.setting) << ',' << buf << '\n';
        }
        summary["sessions"] = results.size();
        summary["skipped_unfinalized"] = skipped;
        summary["out"] = out.string();
      }
    }
  } catch (const StageError& e) {
    std::cerr << "teach " << stage << ": error: " << e.what() << "\n  hint: " << e.hint << '\n';
    return 2;
  } catch (const UnsupportedSchema& e) {
    std::cerr << "teach " << stage << ": schema mismatch: " << e.what() << "\n  hint: pass --env matching the input files\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "teach " << stage << ": cannot parse input: " << e.what()
              << "\n  hint: regenerate the file with the preceding teach command\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "teach " << stage << ": error: " << e.what() << '\n';
    return 1;
  }

  if (json_out) {
    std::cout << summary.dump(2) << '\n';
  } else {
    for (const auto& [k, v] : summary.items()) {
      if (k == "command") continue;
      std::cout << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
    }
  }
  return 0;
}
