#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "driftlab/bench.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace driftlab;
  CLI::App app{"Synthetic drift streams and detection benchmarks"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string out_path = "-";
  std::string ticks_path;
  auto* gen = app.add_subcommand("generate", "Write a synthetic stream as CSV");
  gen->add_option("--spec", spec_path, "Synthetic spec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_path, "Output CSV path ('-' for stdout)");
  gen->add_option("--drift-ticks", ticks_path, "Optional JSON file for the true drift ticks");

  std::string detector_path;
  std::size_t runs = 10;
  std::optional<double> threshold;
  bool summary_only = false;
  auto* run = app.add_subcommand("run", "Run the detector and categorize its alerts");
  run->add_option("--spec", spec_path, "Synthetic spec JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--detector", detector_path, "Detector config JSON")->check(CLI::ExistingFile);
  run->add_option("--runs", runs, "Number of seeded runs")->check(CLI::PositiveNumber);
  run->add_option("--out", out_path, "Report JSON path ('-' for stdout)");
  run->add_option("--threshold", threshold, "Override the alert threshold");
  run->add_flag("--summary-only", summary_only, "Omit per-drift records from the report");

  CLI11_PARSE(app, argc, argv);

  try {
    const bench::SyntheticSpec spec = bench::parse_spec(slurp(spec_path));
    if (gen->parsed()) {
      const auto stream = bench::generate(spec);
      spit(out_path, to_csv(stream.dataset));
      if (!ticks_path.empty()) {
        std::ostringstream ss;
        ss << "[";
        for (std::size_t i = 0; i < stream.drift_ticks.size(); ++i) {
          ss << (i ? "," : "") << stream.drift_ticks[i];
        }
        ss << "]\n";
        spit(ticks_path, ss.str());
      }
      return 0;
    }
    bench::DetectorConfig det = detector_path.empty() ? bench::DetectorConfig{}
                                                      : bench::parse_detector(slurp(detector_path));
    if (threshold) det.alert_threshold = *threshold;
    const auto report = bench::run_benchmark(spec, det, runs);
    spit(out_path, bench::report_to_json(report, !summary_only) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
