#include "pcdf/cli.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pcdf/convert.hpp"
#include "pcdf/error.hpp"
#include "pcdf/eval.hpp"
#include "pcdf/image.hpp"
#include "pcdf/judge.hpp"
#include "pcdf/log.hpp"
#include "pcdf/service.hpp"
#include "pcdf/simulator.hpp"
#include "pcdf/store.hpp"

namespace pcdf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

void install_signal_handlers() {
  g_stop = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

// The JSON config file. Relative paths inside it resolve against its directory.
struct Config {
  json root = json::object();
  fs::path base;

  static Config load(const std::string& path) {
    Config c;
    if (path.empty()) return c;
    try {
      c.root = json::parse(read_file_bytes(path));
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
    if (!c.root.is_object()) throw ConfigError(path + ": top level must be an object");
    c.base = fs::path(path).parent_path();
    return c;
  }

  json section(const std::string& name) const {
    const auto it = root.find(name);
    return it != root.end() && it->is_object() ? *it : json::object();
  }

  fs::path resolve(const std::string& p) const { return p.empty() || base.empty() ? fs::path(p) : base / p; }

  // Flag value if given, else config value (resolved), else empty.
  std::string path(const std::string& flag, const std::string& sec, const std::string& key) const {
    if (!flag.empty()) return flag;
    const auto s = section(sec);
    return s.contains(key) ? resolve(s[key].get<std::string>()).string() : std::string();
  }

  std::optional<BackendConfig> backend(const std::string& flag_file, const std::string& role) const {
    if (!flag_file.empty()) {
      return parse_backend_config(json::parse(read_file_bytes(flag_file)), fs::path(flag_file).parent_path());
    }
    const auto b = section("backends");
    if (!b.contains(role)) return std::nullopt;
    if (b[role].is_string()) {
      const auto p = resolve(b[role].get<std::string>());
      return parse_backend_config(json::parse(read_file_bytes(p)), p.parent_path());
    }
    return parse_backend_config(b[role], base);
  }

  BackendConfig require_backend(const std::string& flag_file, const std::vector<std::string>& roles) const {
    for (const auto& r : roles) {
      if (auto b = backend(r == roles.front() ? flag_file : std::string(), r)) return *b;
    }
    throw ConfigError("no '" + roles.front() + "' backend configured (use a config file or a backend flag)");
  }
};

std::string require(const std::string& value, const std::string& what) {
  if (value.empty()) throw ConfigError("missing " + what);
  return value;
}

int report_failures(const std::vector<std::string>& failed, const std::string& what) {
  if (failed.empty()) return 0;
  std::cerr << failed.size() << " sample(s) failed during " << what << ":\n";
  for (const auto& id : failed) std::cerr << "  " << id << "\n";
  return 1;
}

std::map<std::string, Dialogue> dialogues_by_id(const std::vector<TripletRecord>& triplets) {
  std::map<std::string, Dialogue> out;
  for (const auto& t : triplets) out[t.sample_id] = t.dialogue;
  return out;
}

Corpus filter_split(Corpus corpus, const std::string& split) {
  if (split.empty()) return corpus;
  const Split s = parse_split(split);
  std::erase_if(corpus.samples, [&](const Sample& x) { return x.split != s; });
  return corpus;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"pcdf: pre-consultation dialogue pipeline"};
  app.require_subcommand(1);
  std::string config_path, template_dir, log_level = "info";
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--templates", template_dir, "prompt template directory")->check(CLI::ExistingDirectory);
  app.add_option("--log-level", log_level, "debug|info|warn|error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

  std::string manifest, classes, out, archive, triplets_path, verdicts_path, mode, split, run_id, runs_dir;
  std::string doc_backend, patient_backend, backend_flag, image_root, static_dir, annotations, host = "127.0.0.1";
  int T = 0, workers = 0, port = 8080, idle_minutes = 30;
  bool allow_empty = false;
  std::vector<std::string> serve_classes;

  auto* convert = app.add_subcommand("convert", "convert a zip-of-NPY archive into PNGs plus a manifest");
  convert->add_option("--archive", archive, "archive path")->required()->check(CLI::ExistingFile);
  convert->add_option("--classes", classes, "class config JSON");
  convert->add_option("--out", out, "output directory")->required();
  convert->add_option("--workers", workers, "parallel workers");

  auto* simulate = app.add_subcommand("simulate", "simulate doctor/patient dialogues for a corpus");
  simulate->add_option("--manifest", manifest, "corpus manifest");
  simulate->add_option("--classes", classes, "class config JSON");
  simulate->add_option("--T", T, "turns per dialogue")->check(CLI::Range(0, 64));
  simulate->add_option("--out", out, "dataset file (JSON lines)");
  simulate->add_option("--workers", workers, "samples in flight");
  simulate->add_option("--run-id", run_id, "journal id (default: output file stem)");
  simulate->add_option("--runs-dir", runs_dir, "journal root (default: <out dir>/runs)");
  simulate->add_option("--doc-backend", doc_backend, "backend JSON for the doctor role");
  simulate->add_option("--patient-backend", patient_backend, "backend JSON for the patient role");

  auto* evaluate = app.add_subcommand("evaluate", "predict diagnoses and write a metrics report");
  evaluate->add_option("--mode", mode, "zero_shot|cot|pcdf")->check(CLI::IsMember({"zero_shot", "cot", "pcdf"}));
  evaluate->add_option("--manifest", manifest, "corpus manifest");
  evaluate->add_option("--classes", classes, "class config JSON");
  evaluate->add_option("--triplets", triplets_path, "dialogue dataset (pcdf mode)");
  evaluate->add_option("--split", split, "only evaluate this split")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--out-dir", out, "report directory");
  evaluate->add_option("--backend", backend_flag, "backend JSON for the diagnoser");
  evaluate->add_option("--workers", workers, "parallel workers");

  auto* judge = app.add_subcommand("judge", "score dialogues with a judge model");
  judge->add_option("--triplets", triplets_path, "dialogue dataset")->required();
  judge->add_option("--classes", classes, "class config JSON (with knowledge)");
  judge->add_option("--image-root", image_root, "directory image refs resolve against");
  judge->add_option("--out", out, "verdicts file (JSON lines)")->required();
  judge->add_option("--backend", backend_flag, "backend JSON for the judge");
  judge->add_option("--workers", workers, "parallel workers");

  auto* export_sft_cmd = app.add_subcommand("export-sft", "export supervised fine-tuning records");
  export_sft_cmd->add_option("--triplets", triplets_path, "dialogue dataset")->required();
  export_sft_cmd->add_option("--classes", classes, "class config JSON");
  export_sft_cmd->add_option("--out", out, "output JSON lines")->required();
  export_sft_cmd->add_flag("--allow-empty-history", allow_empty, "accept dialogues with no turns");

  auto* aggregate_cmd = app.add_subcommand("aggregate", "summarize judge verdicts");
  aggregate_cmd->add_option("--verdicts", verdicts_path, "verdicts file")->required();
  aggregate_cmd->add_option("--triplets", triplets_path, "dialogue dataset (enables the leakage scan)");
  aggregate_cmd->add_option("--classes", classes, "class config JSON");
  aggregate_cmd->add_option("--out", out, "summary JSON path");

  auto* serve = app.add_subcommand("serve", "run the consultation and annotation HTTP service");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--classes", serve_classes, "class config JSON (repeatable)");
  serve->add_option("--manifest", manifest, "corpus manifest for sample_id sessions");
  serve->add_option("--triplets", triplets_path, "dialogue dataset for review");
  serve->add_option("--annotations", annotations, "annotation store (JSON lines)");
  serve->add_option("--static", static_dir, "directory served at /")->check(CLI::ExistingDirectory);
  serve->add_option("--doc-backend", doc_backend, "backend JSON for the doctor role");
  serve->add_option("--T", T, "default turns per session")->check(CLI::Range(1, 64));
  serve->add_option("--session-idle-minutes", idle_minutes, "session expiry")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    log::set_level(log_level == "debug" ? log::Level::debug
                   : log_level == "warn" ? log::Level::warn
                   : log_level == "error" ? log::Level::error
                                          : log::Level::info);
    const Config cfg = Config::load(config_path);
    const auto load_templates = [&] {
      return template_dir.empty() ? TemplateStore::load_default() : TemplateStore::load(template_dir);
    };
    const auto class_config = [&] {
      return load_class_config(require(cfg.path(classes, "corpus", "classes"), "--classes"));
    };
    const auto section_int = [&](const std::string& sec, const std::string& key, int flag, int fallback) {
      if (flag > 0) return flag;
      return cfg.section(sec).value(key, fallback);
    };

    if (*convert) {
      const auto cc = class_config();
      const auto manifest_path = convert_archive(archive, out, cc.class_set, {section_int("corpus", "workers", workers, 1)});
      std::cout << "wrote " << manifest_path.string() << "\n";
      return 0;
    }

    if (*simulate) {
      const auto cc = class_config();
      const auto corpus = load_manifest(require(cfg.path(manifest, "corpus", "manifest"), "--manifest"), cc.class_set);
      const auto sim = cfg.section("simulation");
      SimulationConfig sc;
      sc.T = simulate->count("--T") ? T : sim.value("T", 8);
      sc.workers = section_int("simulation", "workers", workers, 1);
      sc.leakage_check = sim.value("leakage_check", true);
      sc.record_timestamps = sim.value("record_timestamps", false);
      sc.doc_backend = cfg.require_backend(doc_backend, {"doc"});
      sc.patient_backend = cfg.require_backend(patient_backend, {"patient"});
      const fs::path out_path = require(cfg.path(out, "simulation", "out"), "--out");
      sc.run_id = !run_id.empty() ? run_id : sim.value("run_id", out_path.stem().string());
      sc.runs_dir = cfg.path(runs_dir, "simulation", "runs_dir");
      if (sc.runs_dir.empty()) sc.runs_dir = out_path.parent_path() / "runs";
      if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());

      install_signal_handlers();
      const auto templates = load_templates();
      const auto r = simulate_corpus(corpus, sc, templates, out_path, &g_stop);
      std::cout << "simulated " << r.simulated << ", resumed " << r.resumed << ", wrote " << r.written << " to "
                << out_path.string() << "\n";
      if (g_stop) {
        std::cerr << "interrupted; rerun the same command to resume\n";
        return 1;
      }
      return report_failures(r.failed_ids, "simulation");
    }

    if (*evaluate) {
      const auto ev = cfg.section("eval");
      const Mode m = parse_mode(!mode.empty() ? mode : ev.value("mode", std::string("zero_shot")));
      const auto cc = class_config();
      Corpus corpus = load_manifest(require(cfg.path(manifest, "corpus", "manifest"), "--manifest"), cc.class_set);
      corpus = filter_split(std::move(corpus), !split.empty() ? split : ev.value("split", std::string()));
      std::vector<TripletRecord> triplets;
      std::optional<int> turns;
      if (m == Mode::pcdf) {
        triplets = read_records(require(cfg.path(triplets_path, "eval", "triplets"), "--triplets"), &cc.class_set);
        if (!triplets.empty()) turns = triplets.front().sim_meta.T;
      }
      const auto bcfg = cfg.require_backend(backend_flag, {"diagnoser", "doc"});
      const auto backend = make_backend(bcfg);
      const auto templates = load_templates();
      const auto r = predict_corpus(corpus, m, *backend, templates, dialogues_by_id(triplets),
                                    section_int("eval", "workers", workers, 1));

      std::vector<std::optional<std::size_t>> preds;
      std::vector<std::size_t> golds;
      for (const auto& p : r.predictions) {
        preds.push_back(p.matched_index);
        golds.push_back(corpus.find(p.sample_id)->gold_index);
      }
      const auto metrics = compute_metrics(preds, golds, cc.class_set.size());
      const ReportMeta meta{cc.class_set.dataset_id(), m, bcfg.model_label(), turns,
                            m == Mode::pcdf ? cfg.path(triplets_path, "eval", "triplets") : std::string()};
      const fs::path dir = require(cfg.path(out, "eval", "out_dir"), "--out-dir");
      write_report(dir, metrics, cc.class_set, meta, r.predictions);
      std::cout << report_text(metrics, cc.class_set, meta);
      return report_failures(r.failed_ids, "evaluation");
    }

    if (*judge) {
      const auto cc = class_config();
      const auto triplets = read_records(triplets_path, &cc.class_set);
      fs::path root = image_root;
      if (root.empty()) {
        const auto m = cfg.path("", "corpus", "manifest");
        root = m.empty() ? fs::path(triplets_path).parent_path() : fs::path(m).parent_path();
      }
      const auto backend = make_backend(cfg.require_backend(backend_flag, {"judge"}));
      const auto templates = load_templates();
      const auto r = judge_triplets(triplets, KnowledgeBase(cc.knowledge), cc.class_set, templates, *backend, root,
                                    section_int("judge", "workers", workers, 1));
      write_verdicts(r.verdicts, out);
      std::cout << "wrote " << r.verdicts.size() << " verdicts to " << out << "\n";
      return report_failures(r.failed_ids, "judging");
    }

    if (*export_sft_cmd) {
      const auto cc = class_config();
      const auto triplets = read_records(triplets_path, &cc.class_set);
      const auto templates = load_templates();
      const auto n = export_sft(triplets, cc.class_set, templates, out, allow_empty);
      std::cout << "wrote " << n << " records to " << out << "\n";
      return 0;
    }

    if (*aggregate_cmd) {
      const auto verdicts = read_verdicts(verdicts_path);
      std::vector<DialogueLeakage> leakage;
      if (!triplets_path.empty()) {
        const auto cc = class_config();
        for (const auto& t : read_records(triplets_path, &cc.class_set)) {
          auto hits = detect_leakage(t.dialogue, cc.class_set.label(t.gold_index), cc.class_set.aliases(t.gold_index));
          if (!hits.empty()) leakage.push_back({t.sample_id, std::move(hits)});
        }
      }
      const auto agg = aggregate(verdicts, leakage);
      std::cout << format_aggregate(agg);
      if (!out.empty()) {
        std::ofstream f(out, std::ios::binary);
        f << to_json(agg).dump(2) << "\n";
        if (!f) throw IoError("cannot write " + out);
      }
      return 0;
    }

    if (*serve) {
      ServiceConfig sc;
      if (serve_classes.empty()) {
        const auto c = cfg.path("", "corpus", "classes");
        if (!c.empty()) serve_classes.push_back(c);
      }
      if (serve_classes.empty()) throw ConfigError("missing --classes");
      for (const auto& path : serve_classes) {
        auto cc = load_class_config(path);
        const std::string id = cc.class_set.dataset_id();
        sc.datasets.emplace(id, std::move(cc.class_set));
      }
      // The manifest belongs to the first class config.
      const auto mpath = cfg.path(manifest, "corpus", "manifest");
      if (!mpath.empty()) sc.corpus = load_manifest(mpath, load_class_config(serve_classes.front()).class_set);
      if (!triplets_path.empty()) sc.triplets = read_records(triplets_path);
      sc.annotations_path = annotations;
      sc.default_T = T > 0 ? T : cfg.section("simulation").value("T", 8);
      sc.session_idle = std::chrono::minutes(idle_minutes);
      sc.backends["doc"] = make_backend(cfg.require_backend(doc_backend, {"doc"}));
      const json backends = cfg.section("backends");
      for (const auto& [name, _] : backends.items()) {
        if (name != "doc" && name != "patient") sc.backends[name] = make_backend(*cfg.backend("", name));
      }

      const auto templates = load_templates();
      ConsultationService service(std::move(sc), templates);
      HttpService http(service, static_dir);
      const int bound = http.bind(host, port);
      std::cout << "listening on http://" << host << ":" << bound << std::endl;
      install_signal_handlers();
      std::thread watcher([&] {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        http.stop();
      });
      http.listen();
      g_stop = true;
      watcher.join();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pcdf
