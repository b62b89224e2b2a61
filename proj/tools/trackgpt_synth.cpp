// trackgpt-synth: writes a synthetic constant-velocity fleet as id,t,lat,lon CSV.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "trackgpt/error.hpp"
#include "trackgpt/harness/ingest.hpp"
#include "trackgpt/harness/pipeline.hpp"

int main(int argc, char** argv) {
  namespace th = trackgpt::harness;
  CLI::App app{"Synthetic vessel fleet generator"};
  th::FleetSpec spec;
  std::string out_path;
  app.add_option("-o,--out", out_path, "CSV file to write")->required();
  app.add_option("--vessels", spec.vessels, "Moving vessels")->check(CLI::NonNegativeNumber);
  app.add_option("--stationary", spec.stationary, "Extra vessels that never move")->check(CLI::NonNegativeNumber);
  app.add_option("--turn-fraction", spec.turn_fraction, "Share of vessels with one heading change")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--hours", spec.duration, "Track duration in hours")
      ->transform([](std::string s) { return std::to_string(std::stod(s) * 3600.0); });
  app.add_option("--aoi-km", spec.aoi_km, "Side of the square area (km)");
  app.add_option("--seed", spec.seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    std::ofstream out(out_path);
    if (!out) throw trackgpt::Error(trackgpt::ErrorCode::Io, "cannot write '" + out_path + "'");
    th::write_tracks_csv(out, th::synth_fleet(spec));
  } catch (const trackgpt::Error& e) {
    std::cerr << "error " << trackgpt::error_code_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
