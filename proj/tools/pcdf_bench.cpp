// Serial reference vs OpenMP timings for the per-sample kernels.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>

#include <CLI11.hpp>

#include "pcdf/convert.hpp"
#include "pcdf/eval.hpp"
#include "pcdf/npy.hpp"
#include "pcdf/simulator.hpp"
#include "synthetic.hpp"

namespace {

using Clock = std::chrono::steady_clock;

template <class Fn>
double seconds(Fn&& fn) {
  const auto start = Clock::now();
  fn();
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void row(const char* name, double serial, double parallel, int workers) {
  std::printf("%-10s serial %8.3fs   workers=%-3d %8.3fs   speedup %5.2fx\n", name, serial, workers, parallel,
              parallel > 0 ? serial / parallel : 0.0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcdf_bench: serial reference vs parallel kernels"};
  int workers = 8, images = 2000, samples = 64, latency_ms = 2;
  app.add_option("--workers", workers);
  app.add_option("--images", images, "rows for the PNG encode benchmark");
  app.add_option("--samples", samples, "corpus size for simulate/predict");
  app.add_option("--latency-ms", latency_ms, "scripted backend latency per call");
  CLI11_PARSE(app, argc, argv);

  using namespace pcdf;
  NpyArray arr;
  arr.shape = {static_cast<std::size_t>(images), 28, 28, 3};
  arr.data.resize(static_cast<std::size_t>(images) * 28 * 28 * 3);
  std::mt19937 rng(7);
  for (auto& b : arr.data) b = static_cast<std::uint8_t>(rng());
  std::vector<std::string> a, b;
  const double enc_serial = seconds([&] { a = reference::encode_rows(arr); });
  const double enc_par = seconds([&] { b = encode_rows(arr, workers); });
  if (a != b) {
    std::fprintf(stderr, "encode mismatch\n");
    return 1;
  }
  row("encode", enc_serial, enc_par, workers);

  const std::vector<std::string> labels = {"alpha", "beta", "gamma", "delta"};
  const auto dir = synthetic::fresh_dir("bench");
  const auto fx = synthetic::make_corpus(dir / "corpus", static_cast<std::size_t>(samples), labels);
  const auto templates = TemplateStore::load_default();
  SimulationConfig sc;
  sc.T = 4;
  sc.doc_backend = synthetic::backend(synthetic::doc_backend_json(latency_ms));
  sc.patient_backend = synthetic::backend(synthetic::patient_backend_json(labels, latency_ms));
  sc.runs_dir = dir / "runs";

  const auto simulate = [&](int w, const std::string& id) {
    sc.workers = w;
    sc.run_id = id;
    return seconds([&] { simulate_corpus(fx.corpus, sc, templates, dir / (id + ".jsonl")); });
  };
  const double sim_serial = simulate(1, "serial");
  const double sim_par = simulate(workers, "parallel");
  auto serial_records = read_records(dir / "serial.jsonl");
  auto parallel_records = read_records(dir / "parallel.jsonl");
  for (auto& r : parallel_records) r.sim_meta.run_id = "serial";
  if (serial_records != parallel_records) {
    std::fprintf(stderr, "simulate mismatch\n");
    return 1;
  }
  row("simulate", sim_serial, sim_par, workers);

  std::map<std::string, Dialogue> dialogues;
  for (const auto& t : serial_records) dialogues[t.sample_id] = t.dialogue;
  auto dcfg = synthetic::backend(synthetic::diagnoser_backend_json(labels));
  dcfg.scripted_latency = std::chrono::milliseconds(latency_ms);
  const auto diag = make_backend(dcfg);
  EvalRunResult ps, pp;
  const double pred_serial = seconds([&] { ps = predict_corpus(fx.corpus, Mode::pcdf, *diag, templates, dialogues, 1); });
  const double pred_par =
      seconds([&] { pp = predict_corpus(fx.corpus, Mode::pcdf, *diag, templates, dialogues, workers); });
  row("predict", pred_serial, pred_par, workers);

  std::filesystem::remove_all(dir);
  return 0;
}
