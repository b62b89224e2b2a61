#include "trackgpt/harness/protocol.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "trackgpt/error.hpp"

namespace trackgpt::harness {

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& part : split(text, ',')) {
    const std::string item = trim(part);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::Config, "invalid number '" + item + "' in list");
    }
  }
  return out;
}

std::string format_number_list(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ", ";
    out += format_double(values[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ProtocolSpec

ProtocolSpec ProtocolSpec::builtin(const std::string& name) {
  ProtocolSpec p;
  p.name = name;
  if (name == "dma-ais") {
    p.prep.max_gap = 3600.0;
    p.prep.min_duration = 4.0 * 3600.0;
    p.prep.max_duration = 20.0 * 3600.0;
    p.prep.dt_override = 600.0;
    p.prompt_duration = 5.0 * 3600.0;
    p.horizon_duration = 15.0 * 3600.0;
    p.max_hops = 3;
    p.k_samples = 16;
    p.eval.best_of_n = 16;
    p.eval.units = metrics::Units::NauticalMiles;
    for (int h = 1; h <= 15; ++h) p.eval.interval_marks.push_back(h * 3600.0);
  } else if (name == "trajair-adsb") {
    p.prep.max_gap = 10.0;
    p.prep.min_duration = 20.0;
    p.prep.max_duration = 120.0;
    p.prep.dt_override = 0.25;
    p.prompt_duration = 11.0;
    p.horizon_duration = 109.0;
    p.max_hops = 10;
    p.k_samples = 5;
    p.eval.best_of_n = 5;
    p.eval.units = metrics::Units::Kilometers;
    for (int s = 10; s <= 100; s += 10) p.eval.interval_marks.push_back(s);
  } else {
    throw Error(ErrorCode::Config, "unknown protocol '" + name + "' (built-ins: dma-ais, trajair-adsb)");
  }
  return p;
}

std::vector<std::string> ProtocolSpec::builtin_names() { return {"dma-ais", "trajair-adsb"}; }

void ProtocolSpec::validate() const {
  prep.validate();
  auto fail = [](const std::string& m) { throw Error(ErrorCode::Config, m); };
  if (!(prompt_duration >= 0.0) || !(horizon_duration > 0.0)) fail("prompt must be >= 0 s and horizon > 0 s");
  if (max_hops < 1) fail("max_hops must be at least 1");
  if (min_valid_steps && *min_valid_steps < 0) fail("min_valid_steps must be non-negative");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (k_samples < 1) fail("k_samples must be positive");
  if (consensus_coarsen_bits < 0) fail("consensus_coarsen_bits must be non-negative");
  eval.validate();
  if (eval.best_of_n > k_samples) fail("best_of_n exceeds k_samples");
}

int ProtocolSpec::prompt_points(double dt) const { return static_cast<int>(std::lround(prompt_duration / dt)) + 1; }
int ProtocolSpec::horizon_steps(double dt) const { return static_cast<int>(std::lround(horizon_duration / dt)); }

gptcore::SamplerConfig ProtocolSpec::sampler(double dt) const {
  return gptcore::SamplerConfig{temperature, k_samples, horizon_steps(dt), sampler_seed};
}

regulator::RegulatorConfig ProtocolSpec::regulator(double dt) const {
  auto cfg = regulator::RegulatorConfig::for_horizon(max_hops, horizon_steps(dt));
  if (min_valid_steps) cfg.min_valid_steps = *min_valid_steps;
  return cfg;
}

regulator::ForecastRequest ProtocolSpec::request(double dt) const {
  return regulator::ForecastRequest{sampler(dt), regulator(dt), regulator::EnsembleOptions{consensus_coarsen_bits}};
}

std::string ProtocolSpec::to_text() const {
  std::ostringstream out;
  out << "name = " << name << "\n\n[prep]\n";
  out << "max_gap = " << format_double(prep.max_gap) << "\n";
  out << "min_duration = " << format_double(prep.min_duration) << "\n";
  out << "max_duration = " << format_double(prep.max_duration) << "\n";
  out << "dt = " << (prep.dt_override ? format_double(*prep.dt_override) : "derive") << "\n\n[forecast]\n";
  out << "prompt = " << format_double(prompt_duration) << "\n";
  out << "horizon = " << format_double(horizon_duration) << "\n";
  out << "geohash_chars = " << format_double(geohash_chars) << "\n";
  out << "max_hops = " << max_hops << "\n";
  out << "min_valid_steps = " << (min_valid_steps ? std::to_string(*min_valid_steps) : "auto") << "\n";
  out << "temperature = " << format_double(temperature) << "\n";
  out << "k_samples = " << k_samples << "\n";
  out << "seed = " << sampler_seed << "\n";
  out << "consensus_coarsen_bits = " << consensus_coarsen_bits << "\n\n[eval]\n";
  out << "best_of_n = " << eval.best_of_n << "\n";
  out << "interval_marks = " << format_number_list(eval.interval_marks) << "\n";
  out << "units = " << metrics::units_label(eval.units) << "\n";
  out << "coarsen_bits = " << eval.coarsen_bits << "\n";
  out << "full_length_margin = " << format_double(eval.full_length_margin) << "\n";
  return out.str();
}

void ProtocolSpec::apply(const KvRecord& rec) {
  auto num = [&](const std::string& key, double& target) {
    if (rec.has(key)) target = rec.get_double(key);
  };
  auto integer = [&](const std::string& key, int& target) {
    if (rec.has(key)) target = static_cast<int>(rec.get_int(key));
  };
  num("prep.max_gap", prep.max_gap);
  num("prep.min_duration", prep.min_duration);
  num("prep.max_duration", prep.max_duration);
  if (rec.has("prep.dt")) {
    const std::string dt = rec.get("prep.dt");
    if (dt == "derive") {
      prep.dt_override.reset();
    } else {
      prep.dt_override = rec.get_double("prep.dt");
    }
  }
  num("forecast.prompt", prompt_duration);
  num("forecast.horizon", horizon_duration);
  num("forecast.geohash_chars", geohash_chars);
  integer("forecast.max_hops", max_hops);
  if (rec.has("forecast.min_valid_steps")) {
    if (rec.get("forecast.min_valid_steps") == "auto") {
      min_valid_steps.reset();
    } else {
      min_valid_steps = static_cast<int>(rec.get_int("forecast.min_valid_steps"));
    }
  }
  num("forecast.temperature", temperature);
  integer("forecast.k_samples", k_samples);
  if (rec.has("forecast.seed")) sampler_seed = std::stoull(rec.get("forecast.seed"));
  integer("forecast.consensus_coarsen_bits", consensus_coarsen_bits);
  integer("eval.best_of_n", eval.best_of_n);
  if (rec.has("eval.interval_marks")) eval.interval_marks = parse_number_list(rec.get("eval.interval_marks"));
  if (rec.has("eval.units")) eval.units = metrics::parse_units(rec.get("eval.units"));
  integer("eval.coarsen_bits", eval.coarsen_bits);
  num("eval.full_length_margin", eval.full_length_margin);
}

ProtocolSpec ProtocolSpec::from_record(const KvRecord& rec) {
  ProtocolSpec p = builtin(rec.get_or("name", "dma-ais"));
  p.apply(rec);
  p.validate();
  return p;
}

ProtocolSpec ProtocolSpec::parse(std::string_view text) { return from_record(KvRecord::parse(text)); }

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  model.seed = s;
  train.seed = s;
  protocol.sampler_seed = s;
}

RunConfig RunConfig::from_record(const KvRecord& rec) {
  RunConfig c;
  // Protocol keys live in the same file: "protocol" names the base.
  KvRecord proto = rec;
  if (rec.has("protocol")) proto.set("name", rec.get("protocol"));
  c.protocol = ProtocolSpec::from_record(proto);

  auto& in = c.ingest;
  in.id_column = rec.get_or("ingest.id_column", in.id_column);
  in.time_column = rec.get_or("ingest.time_column", in.time_column);
  in.lat_column = rec.get_or("ingest.lat_column", in.lat_column);
  in.lon_column = rec.get_or("ingest.lon_column", in.lon_column);
  in.altitude_column = rec.get_or("ingest.altitude_column", in.altitude_column);
  if (rec.has("ingest.time_format")) in.time_format = parse_time_format(rec.get("ingest.time_format"));
  if (rec.has("ingest.delimiter")) {
    const std::string d = rec.get("ingest.delimiter");
    if (d == "tab" || d == "\\t") {
      in.delimiter = '\t';
    } else if (d.size() == 1) {
      in.delimiter = d[0];
    } else {
      throw Error(ErrorCode::Config, "delimiter must be one character or 'tab'");
    }
  }
  if (rec.has("ingest.max_altitude")) in.max_altitude = rec.get_double("ingest.max_altitude");
  if (rec.has("ingest.aoi_box")) {
    const auto v = parse_number_list(rec.get("ingest.aoi_box"));
    if (v.size() != 4) throw Error(ErrorCode::Config, "aoi_box needs lat_min, lat_max, lon_min, lon_max");
    in.aoi_box = GeoBox{v[0], v[1], v[2], v[3]};
  }
  if (rec.has("ingest.aoi_center")) {
    const auto v = parse_number_list(rec.get("ingest.aoi_center"));
    if (v.size() != 2) throw Error(ErrorCode::Config, "aoi_center needs lat, lon");
    in.aoi_center = GeoPoint{v[0], v[1]};
    in.aoi_radius_km = rec.get_double("ingest.aoi_radius_km");
  }
  in.validate();

  auto& m = c.model;
  m.block_size = static_cast<int>(rec.get_int_or("model.block_size", m.block_size));
  m.n_layer = static_cast<int>(rec.get_int_or("model.n_layer", m.n_layer));
  m.n_head = static_cast<int>(rec.get_int_or("model.n_head", m.n_head));
  m.d_model = static_cast<int>(rec.get_int_or("model.d_model", m.d_model));
  m.dropout = rec.get_double_or("model.dropout", m.dropout);
  m.validate();

  auto& t = c.train;
  t.steps = static_cast<int>(rec.get_int_or("train.steps", t.steps));
  t.batch_size = static_cast<int>(rec.get_int_or("train.batch_size", t.batch_size));
  t.lr = rec.get_double_or("train.lr", t.lr);
  t.min_lr = rec.get_double_or("train.min_lr", t.lr / 10.0);
  t.warmup = static_cast<int>(rec.get_int_or("train.warmup", t.warmup));
  t.weight_decay = rec.get_double_or("train.weight_decay", t.weight_decay);
  t.grad_clip = rec.get_double_or("train.grad_clip", t.grad_clip);
  t.log_interval = static_cast<int>(rec.get_int_or("train.log_interval", t.log_interval));
  c.checkpoint_every = static_cast<int>(rec.get_int_or("train.checkpoint_every", c.checkpoint_every));

  c.threads = static_cast<int>(rec.get_int_or("run.threads", c.threads));
  if (rec.has("run.deterministic")) {
    const std::string v = rec.get("run.deterministic");
    c.deterministic = v == "true" || v == "1" || v == "yes";
  }
  // Seeds: one run seed, individually overridable.
  c.set_seed(rec.has("run.seed") ? std::stoull(rec.get("run.seed")) : c.seed);
  if (rec.has("model.seed")) c.model.seed = std::stoull(rec.get("model.seed"));
  if (rec.has("train.seed")) c.train.seed = std::stoull(rec.get("train.seed"));
  if (rec.has("forecast.seed")) c.protocol.sampler_seed = std::stoull(rec.get("forecast.seed"));
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_record(KvRecord::parse(buf.str()));
}

}  // namespace trackgpt::harness
