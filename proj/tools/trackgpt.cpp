// trackgpt: prep, train, forecast, eval and plot subcommands.
//
// Every subcommand reads an optional run config (--config) and applies its
// own flags on top. Failures print one line, "error E_<CODE>: <message>",
// and exit with status 1.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "trackgpt/error.hpp"
#include "trackgpt/gptcore.hpp"
#include "trackgpt/harness/ingest.hpp"
#include "trackgpt/harness/pipeline.hpp"
#include "trackgpt/harness/protocol.hpp"
#include "trackgpt/log.hpp"
#include "trackgpt/trackprep.hpp"

namespace th = trackgpt::harness;
using trackgpt::Error;
using trackgpt::ErrorCode;

namespace {

struct Common {
  std::string config_path;
  std::string protocol;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  int threads = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Run config file (key = value with sections)");
  cmd->add_option("--protocol", c.protocol, "Built-in protocol name or protocol file; replaces the config's protocol");
  cmd->add_option("--seed", c.seed, "Global seed (default: $TRACKGPT_SEED, else the config's run.seed)");
  cmd->add_flag("--deterministic", c.deterministic, "Single-threaded execution everywhere");
  cmd->add_option("--threads", c.threads, "Worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);
  cmd->add_flag("-q,--quiet", c.quiet, "Suppress warnings and progress");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

th::RunConfig resolve(const Common& c) {
  th::RunConfig cfg = c.config_path.empty() ? th::RunConfig{} : th::RunConfig::load(c.config_path);
  if (!c.protocol.empty()) {
    const auto names = th::ProtocolSpec::builtin_names();
    cfg.protocol = std::find(names.begin(), names.end(), c.protocol) != names.end()
                       ? th::ProtocolSpec::builtin(c.protocol)
                       : th::ProtocolSpec::parse(read_file(c.protocol));
    cfg.protocol.sampler_seed = cfg.seed;
  }
  if (c.seed) {
    cfg.set_seed(*c.seed);
  } else if (const char* env = std::getenv("TRACKGPT_SEED"); env && *env) {
    try {
      cfg.set_seed(std::stoull(env));
    } catch (const std::exception&) {
      throw Error(ErrorCode::Config, std::string("TRACKGPT_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  if (c.deterministic) cfg.deterministic = true;
  if (c.threads > 0) cfg.threads = c.threads;
  if (c.quiet) trackgpt::log::set_level(trackgpt::log::Level::Error);
  return cfg;
}

int threads_of(const th::RunConfig& cfg) { return th::resolve_threads(cfg.threads, cfg.deterministic); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory forecasting with a decoder-only transformer over geohash tokens"};
  app.require_subcommand(1);

  // prep
  Common prep_c;
  std::string prep_in, prep_out;
  auto* prep = app.add_subcommand("prep", "Ingest a CSV and groom it into a token corpus");
  add_common(prep, prep_c);
  prep->add_option("-i,--input", prep_in, "Position report CSV")->required();
  prep->add_option("-o,--out", prep_out, "Corpus file to write (codec record goes to <out>.codec)")->required();

  // train
  Common train_c;
  std::string train_corpus, train_out, train_log, train_resume;
  std::optional<int> train_steps, train_batch, train_every;
  std::optional<double> train_lr;
  auto* train = app.add_subcommand("train", "Train a model on a token corpus");
  add_common(train, train_c);
  train->add_option("-c,--corpus", train_corpus, "Corpus file from prep")->required();
  train->add_option("-o,--out", train_out, "Checkpoint file to write")->required();
  train->add_option("--log", train_log, "Loss log ('step loss lr' per line)");
  train->add_option("--resume", train_resume, "Continue from this checkpoint");
  train->add_option("--steps", train_steps, "Total optimizer steps")->check(CLI::NonNegativeNumber);
  train->add_option("--batch-size", train_batch, "Rows per batch")->check(CLI::PositiveNumber);
  train->add_option("--lr", train_lr, "Peak learning rate")->check(CLI::PositiveNumber);
  train->add_option("--checkpoint-every", train_every, "Save every N steps (0: only at the end)")
      ->check(CLI::NonNegativeNumber);

  // forecast
  Common fc_c;
  std::string fc_ckpt, fc_in, fc_out, fc_summary;
  auto* fc = app.add_subcommand("forecast", "Forecast ensembles for prompt tracks");
  add_common(fc, fc_c);
  fc->add_option("-m,--checkpoint", fc_ckpt, "Checkpoint file")->required();
  fc->add_option("-i,--input", fc_in, "Prompt track CSV")->required();
  fc->add_option("-o,--out", fc_out, "GeoJSON FeatureCollection to write")->required();
  fc->add_option("--summary", fc_summary, "Write the text summary here instead of stdout");

  // eval
  Common ev_c;
  std::string ev_ckpt, ev_in, ev_out, ev_csv, ev_baseline_csv;
  auto* ev = app.add_subcommand("eval", "Score forecasts against held-out tracks");
  add_common(ev, ev_c);
  ev->add_option("-m,--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("-i,--input", ev_in, "Test track CSV")->required();
  ev->add_option("-o,--out", ev_out, "Text report to write (stdout if omitted)");
  ev->add_option("--csv", ev_csv, "Per-track CSV report for the model");
  ev->add_option("--baseline-csv", ev_baseline_csv, "Per-track CSV report for the constant-velocity baseline");

  // plot
  std::string plot_in, plot_out;
  auto* plot = app.add_subcommand("plot", "Render a forecast GeoJSON or a report CSV as SVG");
  plot->add_option("-i,--input", plot_in, "GeoJSON or report CSV")->required();
  plot->add_option("-o,--out", plot_out, "SVG file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error E_USAGE: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*prep) {
      const auto cfg = resolve(prep_c);
      const auto ingested = th::ingest_file(prep_in, cfg.ingest);
      const auto out = th::run_prep(ingested.tracks, cfg.protocol, cfg.model.block_size);
      trackgpt::trackprep::save_corpus(prep_out, out.corpus);
      write_file(prep_out + ".codec", out.corpus.codec.to_record());
      std::cout << "rows: " << ingested.stats.rows << "  malformed: " << ingested.stats.malformed
                << "  duplicates: " << ingested.stats.duplicates << "  entities: " << ingested.stats.entities << "\n";
      th::print_prep_stats(std::cout, out);
    } else if (*train) {
      auto cfg = resolve(train_c);
      if (train_steps) cfg.train.steps = *train_steps;
      if (train_batch) cfg.train.batch_size = *train_batch;
      if (train_lr) cfg.train.lr = *train_lr;
      if (train_every) cfg.checkpoint_every = *train_every;
      const auto corpus = trackgpt::trackprep::load_corpus(train_corpus);
      th::TrainRunOptions opts;
      opts.checkpoint_path = train_out;
      opts.log_path = train_log;
      if (!train_resume.empty()) opts.resume = trackgpt::gptcore::load_checkpoint(train_resume);
      if (!train_c.quiet) opts.progress = &std::cerr;
      const auto ckpt = th::run_train(corpus, cfg, opts);
      std::cout << "checkpoint: " << train_out << "  step: " << ckpt.step
                << "  parameters: " << trackgpt::gptcore::parameter_count(ckpt.config) << "\n";
    } else if (*fc) {
      const auto cfg = resolve(fc_c);
      const auto ckpt = trackgpt::gptcore::load_checkpoint(fc_ckpt);
      const auto tracks = th::ingest_file(fc_in, cfg.ingest).tracks;
      const auto run = th::run_forecast(ckpt, tracks, cfg.protocol, threads_of(cfg));
      write_file(fc_out, run.geojson.dump(1) + "\n");
      if (fc_summary.empty()) {
        std::cout << run.summary;
      } else {
        write_file(fc_summary, run.summary);
      }
    } else if (*ev) {
      const auto cfg = resolve(ev_c);
      const auto ckpt = trackgpt::gptcore::load_checkpoint(ev_ckpt);
      const auto tracks = th::ingest_file(ev_in, cfg.ingest).tracks;
      const auto run = th::run_eval(ckpt, tracks, cfg.protocol, threads_of(cfg));
      if (ev_out.empty()) {
        std::cout << run.report_text;
      } else {
        write_file(ev_out, run.report_text);
      }
      auto write_csv = [](const std::string& path, const auto& scores) {
        std::ostringstream csv;
        trackgpt::metrics::write_report_csv(csv, scores);
        write_file(path, csv.str());
      };
      if (!ev_csv.empty()) write_csv(ev_csv, run.model_scores);
      if (!ev_baseline_csv.empty()) write_csv(ev_baseline_csv, run.baseline_scores);
    } else if (*plot) {
      write_file(plot_out, th::run_plot(plot_in));
    }
  } catch (const Error& e) {
    std::cerr << "error " << trackgpt::error_code_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
