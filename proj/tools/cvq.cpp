// cvq: command-line front end.
//
//   cvq run prog.cvq --seed 7 [--backend fock] [--shots 8] [--out r.json]
//   cvq stream --spec 1d --pulses 1000000 --squeezing 15dB
//   cvq loop --kind ghz --modes 4 --squeezing 15dB
//   cvq gkp --seed 1 --samples 1000000
//   cvq budget --loss-db-km 0.2 --length-m 100 --pulse-ns 50
//
// Exit codes: 0 ok, 1 usage error, 2 runtime or physics error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "cvsim/cvsim.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace cvsim;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Diagnostic already rendered as JSON; exits with code 2.
struct Diagnosed : std::runtime_error {
  json body;
  explicit Diagnosed(json b) : std::runtime_error("diagnosed"), body(std::move(b)) {}
};

/// Per-shot seed derived from the run seed and the shot index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Runs job(i) for i in [0, n) on up to `threads` workers; rethrows the lowest-index failure.
template <class Job>
void parallel_for(int n, int threads, Job job) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, n);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  const auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double parse_squeezing(const std::string& text) {
  std::string_view w = text;
  bool db = true;
  if (w.ends_with("dB")) {
    w.remove_suffix(2);
  } else if (w.ends_with("r")) {
    w.remove_suffix(1);
    db = false;
  }
  const auto v = dsl::detail::to_double(w);
  if (!v) throw UsageError("--squeezing expects a value like 15dB or 1.2r, got '" + text + "'");
  return db ? squeezing_r(*v) : *v;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json array_of(const Vector& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

/// Row-major flattening.
json array_of(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
  return a;
}

json stream_json(const tdm::StreamStats& st) {
  json forms = json::array();
  for (const auto& f : st.forms) {
    forms.push_back({{"name", f.name},
                     {"expected_ratio", f.expected_ratio},
                     {"count", f.ratio.count},
                     {"mean_ratio", f.ratio.mean},
                     {"min_ratio", f.ratio.min},
                     {"max_ratio", f.ratio.max},
                     {"boundary", f.boundary}});
  }
  return {{"slots", st.slots},
          {"modes_emitted", st.modes_emitted},
          {"peak_active", st.peak_active},
          {"peak_retained", st.peak_retained},
          {"forms", forms}};
}

void stream_csv(std::ostream& out, const tdm::StreamStats& st, const std::string& prefix = {}) {
  for (const auto& f : st.forms) {
    out << prefix << f.name << ',' << format_double(f.expected_ratio) << ',' << f.ratio.count << ','
        << format_double(f.ratio.mean) << ',' << format_double(f.ratio.min) << ',' << format_double(f.ratio.max) << ','
        << f.boundary << '\n';
  }
}

struct OutputOptions {
  std::string path;
  std::string format = "json";
  bool timings = false;
};

void add_output_flags(CLI::App* cmd, OutputOptions& o) {
  cmd->add_option("--out,-o", o.path, "Output file (default: stdout, or $CVQ_OUT_DIR/<subcommand>.<format>)");
  cmd->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"json", "csv"}));
  cmd->add_flag("--timings", o.timings, "Include wall-clock timings (output is then not byte-stable)");
}

void write_output(const OutputOptions& o, const std::string& subcommand, const std::string& content) {
  std::filesystem::path path = o.path;
  if (path.empty()) {
    if (const char* dir = std::getenv("CVQ_OUT_DIR"); dir && *dir) {
      path = std::filesystem::path(dir) / (subcommand + "." + o.format);
    }
  }
  if (path.empty()) {
    std::cout << content;
    std::cout.flush();
    if (!std::cout) throw std::runtime_error("failed to write to stdout");
    return;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << content;
  f.close();
  if (!f) throw std::runtime_error("failed to write " + path.string());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- run --------------------------------------------------------------------

struct RunArgs {
  std::string input;
  std::string backend;
  std::optional<std::uint64_t> seed;
  int shots = 1;
  int threads = 0;
  OutputOptions out;
};

json report_json(const dsl::ReportEntry& e) {
  json j = {{"kind", e.kind}, {"line", e.line}};
  if (e.kind == "cov") {
    j["modes"] = e.modes;
    j["mean"] = array_of(e.mean);
    j["cov"] = array_of(e.cov);
  } else if (e.kind == "form") {
    j["mean"] = e.mean_value;
    j["variance"] = e.value;
    j["vacuum_variance"] = e.vacuum_value;
    j["ratio"] = e.value / e.vacuum_value;
  } else {
    j["mode"] = e.modes.front();
    j["fidelity"] = e.value;
  }
  return j;
}

void report_csv(std::ostream& out, int shot, const dsl::ReportEntry& e) {
  const auto row = [&](const std::string& field, double v) {
    out << shot << ',' << e.line << ',' << e.kind << ',' << field << ',' << format_double(v) << '\n';
  };
  if (e.kind == "cov") {
    for (Eigen::Index i = 0; i < e.mean.size(); ++i) row("mean[" + std::to_string(i) + "]", e.mean(i));
    for (Eigen::Index i = 0; i < e.cov.rows(); ++i)
      for (Eigen::Index k = 0; k < e.cov.cols(); ++k) row("cov[" + std::to_string(i) + "][" + std::to_string(k) + "]", e.cov(i, k));
  } else if (e.kind == "form") {
    row("mean", e.mean_value);
    row("variance", e.value);
    row("vacuum_variance", e.vacuum_value);
    row("ratio", e.value / e.vacuum_value);
  } else {
    row("fidelity", e.value);
  }
}

int cmd_run(const RunArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  std::ifstream f(a.input, std::ios::binary);
  if (!f) throw UsageError("cannot read " + a.input);
  std::stringstream buf;
  buf << f.rdbuf();
  const dsl::ParseResult parsed = dsl::parse(buf.str());
  if (!parsed) {
    const dsl::ParseError& e = *parsed.error;
    throw Diagnosed({{"error", "parse"},
                     {"file", a.input},
                     {"line", e.line},
                     {"column", e.column},
                     {"message", e.message},
                     {"token", e.token}});
  }
  const dsl::CircuitProgram& prog = *parsed.program;
  dsl::Backend backend = dsl::Backend::Gaussian;
  if (!a.backend.empty()) {
    backend = dsl::backend_from_string(a.backend);
  } else if (prog.backend) {
    backend = dsl::backend_from_string(*prog.backend);
  }
  const std::optional<std::uint64_t> seed = a.seed ? a.seed : prog.seed;
  if (!seed) throw UsageError("run needs a seed: pass --seed or add a 'seed <n>;' statement");
  if (auto diags = dsl::validate(prog, backend); !diags.empty()) {
    json list = json::array();
    for (const auto& d : diags) list.push_back({{"line", d.pos.line}, {"column", d.pos.column}, {"message", d.message}});
    throw Diagnosed({{"error", "validate"}, {"file", a.input}, {"backend", dsl::to_string(backend)}, {"diagnostics", list}});
  }

  std::vector<dsl::RunReport> shots(static_cast<std::size_t>(a.shots));
  parallel_for(a.shots, a.threads, [&](int i) {
    shots[static_cast<std::size_t>(i)] = dsl::run(prog, backend, derive_seed(*seed, static_cast<std::uint64_t>(i)));
  });

  std::ostringstream out;
  if (a.out.format == "csv") {
    out << "shot,line,kind,field,value\n";
    for (int i = 0; i < a.shots; ++i) {
      const auto& r = shots[static_cast<std::size_t>(i)];
      for (const auto& o : r.outcomes) out << i << ",,outcome," << o.id << ',' << format_double(o.value) << '\n';
      for (const auto& e : r.reports) report_csv(out, i, e);
      if (r.stream) {
        for (const auto& fs : r.stream->forms) {
          out << i << ",,stream," << fs.name << ".max_ratio," << format_double(fs.ratio.max) << '\n';
        }
      }
    }
    if (a.out.timings) out << ",,timing,wall_seconds," << format_double(seconds_since(t0)) << '\n';
  } else {
    json results = json::array();
    for (int i = 0; i < a.shots; ++i) {
      const auto& r = shots[static_cast<std::size_t>(i)];
      json outcomes = json::array();
      for (const auto& o : r.outcomes) outcomes.push_back({{"id", o.id}, {"value", o.value}});
      json reports = json::array();
      for (const auto& e : r.reports) reports.push_back(report_json(e));
      json shot = {{"shot", i}, {"seed", r.seed}, {"outcomes", outcomes}, {"reports", reports}};
      if (r.stream) shot["stream"] = stream_json(*r.stream);
      if (!r.loop_loss.empty()) {
        json loss = json::array();
        for (const auto& l : r.loop_loss) {
          loss.push_back({{"outer_passes", l.outer_passes}, {"inner_passes", l.inner_passes}, {"transmission", l.transmission}});
        }
        shot["loop_loss"] = loss;
      }
      results.push_back(std::move(shot));
    }
    json doc = {{"subcommand", "run"},
                {"input", a.input},
                {"backend", dsl::to_string(backend)},
                {"seed", *seed},
                {"shots", a.shots},
                {"results", results}};
    if (a.out.timings) doc["timings"] = {{"wall_seconds", seconds_since(t0)}};
    out << doc.dump(2) << '\n';
  }
  write_output(a.out, "run", out.str());
  return kExitOk;
}

// --- stream -----------------------------------------------------------------

struct StreamArgs {
  std::string spec = "1d";
  int pulses = 1000;
  int width = 5;
  int steps = 100;
  std::string squeezing = "15dB";
  double eta = 1.0;
  std::string slot_csv;
  OutputOptions out;
};

int cmd_stream(const StreamArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const double r = parse_squeezing(a.squeezing);
  const tdm::NetworkSpec spec = a.spec == "1d" ? tdm::default_1d(r) : tdm::default_2d(a.width, r);
  const int slots = a.spec == "1d" ? a.pulses : a.steps * a.width;
  std::ofstream slot_file;
  std::optional<tdm::CsvSink> sink;
  if (!a.slot_csv.empty()) {
    slot_file.open(a.slot_csv, std::ios::binary);
    if (!slot_file) throw std::runtime_error("cannot open " + a.slot_csv);
    std::vector<std::string> names;
    for (const auto& fm : tdm::derive_squeezed_forms(spec)) names.push_back(fm.name());
    sink.emplace(slot_file, names);
  }
  tdm::SlotSink cb;
  if (sink) cb = std::ref(*sink);
  const tdm::StreamStats st = tdm::run_stream(spec, slots, cb, {.eta = a.eta}).stats;

  std::ostringstream out;
  if (a.out.format == "csv") {
    out << "form,expected_ratio,count,mean_ratio,min_ratio,max_ratio,boundary\n";
    stream_csv(out, st);
  } else {
    json doc = {{"subcommand", "stream"}, {"spec", a.spec}, {"r", r}, {"squeezing_db", squeezing_db(r)}, {"eta", a.eta}};
    if (a.spec == "2d") doc["width"] = a.width;
    doc.update(stream_json(st));
    if (a.out.timings) doc["timings"] = {{"wall_seconds", seconds_since(t0)}};
    out << doc.dump(2) << '\n';
  }
  write_output(a.out, "stream", out.str());
  return kExitOk;
}

// --- loop -------------------------------------------------------------------

struct LoopArgs {
  std::string kind = "epr";
  int modes = 3;
  std::string squeezing = "15dB";
  double outer = 1.0;
  double inner = 1.0;
  OutputOptions out;
};

int cmd_loop(const LoopArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const double r = parse_squeezing(a.squeezing);
  const loop::EntangledKind kind = a.kind == "epr" ? loop::EntangledKind::EPR
                                   : a.kind == "ghz" ? loop::EntangledKind::GHZ
                                                     : loop::EntangledKind::ClusterLinear;
  loop::EntangledProgram ep = loop::generate_entangled(kind, a.modes, r);
  ep.config.outer_transmission = a.outer;
  ep.config.inner_transmission = a.inner;
  const loop::LoopResult res = loop::simulate(ep.config, ep.program, ep.input, 0);
  if (!res.state) throw std::runtime_error("loop: no pulses left to certify");
  const auto forms = loop::certificate_forms(kind, res.state->n_modes());
  const auto ratios = loop::certificate_ratios(*res.state, kind);

  std::ostringstream out;
  if (a.out.format == "csv") {
    out << "certificate,ratio,lossless_ratio\n";
    for (std::size_t k = 0; k < forms.size(); ++k) {
      out << forms[k].name << ',' << format_double(ratios[k]) << ',' << format_double(std::exp(-2.0 * r)) << '\n';
    }
  } else {
    json certs = json::array();
    for (std::size_t k = 0; k < forms.size(); ++k) {
      certs.push_back({{"name", forms[k].name}, {"ratio", ratios[k]}, {"lossless_ratio", std::exp(-2.0 * r)}});
    }
    json loss = json::array();
    for (const auto& l : res.loss) {
      loss.push_back({{"outer_passes", l.outer_passes}, {"inner_passes", l.inner_passes}, {"transmission", l.transmission}});
    }
    json doc = {{"subcommand", "loop"},
                {"kind", loop::to_string(kind)},
                {"modes", res.state->n_modes()},
                {"r", r},
                {"squeezing_db", squeezing_db(r)},
                {"outer_transmission", a.outer},
                {"inner_transmission", a.inner},
                {"schedule_steps", ep.program.steps.size()},
                {"ticks", res.ticks},
                {"certificates", certs},
                {"loss", loss}};
    if (a.out.timings) doc["timings"] = {{"wall_seconds", seconds_since(t0)}};
    out << doc.dump(2) << '\n';
  }
  write_output(a.out, "loop", out.str());
  return kExitOk;
}

// --- gkp --------------------------------------------------------------------

struct GkpArgs {
  std::optional<std::uint64_t> seed;
  double sigma_min = 0.1;
  double sigma_max = 0.6;
  double sigma_step = 0.1;
  std::int64_t samples = 1000000;
  double delta = 0.2;
  int cutoff = 100;
  bool skip_state = false;
  int threads = 0;
  OutputOptions out;
};

int cmd_gkp(const GkpArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!a.seed) throw UsageError("gkp needs --seed (the Monte-Carlo curve is sampled)");
  if (!(a.sigma_step > 0.0) || a.sigma_min > a.sigma_max) throw UsageError("gkp: need sigma-min <= sigma-max and sigma-step > 0");
  std::vector<double> sigmas;
  const int n = static_cast<int>(std::floor((a.sigma_max - a.sigma_min) / a.sigma_step + 1e-9)) + 1;
  for (int k = 0; k < n; ++k) sigmas.push_back(a.sigma_min + k * a.sigma_step);
  std::vector<gkp::MonteCarloEstimate> mc(sigmas.size());
  parallel_for(n, a.threads, [&](int k) {
    mc[static_cast<std::size_t>(k)] =
        gkp::logical_error_monte_carlo(sigmas[static_cast<std::size_t>(k)], a.samples, derive_seed(*a.seed, static_cast<std::uint64_t>(k)));
  });

  std::ostringstream out;
  if (a.out.format == "csv") {
    out << "sigma,p_closed_form,p_monte_carlo,stderr\n";
    for (std::size_t k = 0; k < sigmas.size(); ++k) {
      out << format_double(sigmas[k]) << ',' << format_double(gkp::logical_error_prob(sigmas[k])) << ','
          << format_double(mc[k].p) << ',' << format_double(mc[k].standard_error) << '\n';
    }
  } else {
    json curve = json::array();
    for (std::size_t k = 0; k < sigmas.size(); ++k) {
      const double p = gkp::logical_error_prob(sigmas[k]);
      curve.push_back({{"sigma", sigmas[k]},
                       {"p_closed_form", p},
                       {"p_monte_carlo", mc[k].p},
                       {"stderr", mc[k].standard_error},
                       {"samples", mc[k].samples}});
    }
    json doc = {{"subcommand", "gkp"}, {"seed", *a.seed}, {"curve", curve}};
    json code = {{"delta", a.delta},
                 {"squeezing_db", gkp::squeezing_db_of(a.delta)},
                 {"threshold_db", gkp::kThresholdDb},
                 {"threshold_margin_db", gkp::threshold_margin(a.delta)}};
    if (!a.skip_state) {
      const gkp::GkpParams params{a.delta, a.cutoff, {}};
      const gkp::GkpState s0 = gkp::gkp_state(0, params);
      const gkp::GkpState s1 = gkp::gkp_state(1, params);
      code["cutoff"] = a.cutoff;
      code["overlap_01"] = std::abs(fock::overlap(s0.state, s1.state));
      code["leakage"] = std::max(s0.leakage, s1.leakage);
      code["lattice_deficit"] = std::max(s0.lattice_deficit, s1.lattice_deficit);
    }
    doc["code"] = code;
    if (a.out.timings) doc["timings"] = {{"wall_seconds", seconds_since(t0)}};
    out << doc.dump(2) << '\n';
  }
  write_output(a.out, "gkp", out.str());
  return kExitOk;
}

// --- budget -----------------------------------------------------------------

struct BudgetArgs {
  double loss_db_km = 0.2;
  double length_m = 100.0;
  double pulse_ns = 50.0;
  double group_velocity = budget::kDefaultGroupVelocity;
  OutputOptions out;
};

int cmd_budget(const BudgetArgs& a) {
  const budget::BudgetReport r = budget::report({a.loss_db_km, a.length_m, a.pulse_ns * 1e-9, a.group_velocity});
  std::ostringstream out;
  if (a.out.format == "csv") {
    out << "loss_db_km,length_m,pulse_ns,group_velocity,transmission,capacity,round_trip_time_s,loss_db,loss_per_circulation\n"
        << format_double(a.loss_db_km) << ',' << format_double(a.length_m) << ',' << format_double(a.pulse_ns) << ','
        << format_double(a.group_velocity) << ',' << format_double(r.transmission) << ',' << r.capacity << ','
        << format_double(r.round_trip_time_s) << ',' << format_double(r.loss_db) << ',' << format_double(r.loss_per_circulation)
        << '\n';
  } else {
    const json doc = {{"subcommand", "budget"},
                      {"loss_db_km", a.loss_db_km},
                      {"length_m", a.length_m},
                      {"pulse_ns", a.pulse_ns},
                      {"group_velocity", a.group_velocity},
                      {"transmission", r.transmission},
                      {"capacity", r.capacity},
                      {"round_trip_time_s", r.round_trip_time_s},
                      {"loss_db", r.loss_db},
                      {"loss_per_circulation", r.loss_per_circulation}};
    out << doc.dump(2) << '\n';
  }
  write_output(a.out, "budget", out.str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cvq: continuous-variable photonic circuit simulator"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run a .cvq program");
  run->add_option("input", run_args.input, "Program file")->required()->check(CLI::ExistingFile);
  run->add_option("--backend,-b", run_args.backend, "Backend (overrides the program's hint)")->check(CLI::IsMember({"gaussian", "fock"}));
  run->add_option("--seed,-s", run_args.seed, "64-bit seed (overrides the program's seed statement)");
  run->add_option("--shots", run_args.shots, "Independent repetitions")->check(CLI::Range(1, 1000000));
  run->add_option("--threads", run_args.threads, "Worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);
  add_output_flags(run, run_args.out);

  StreamArgs stream_args;
  auto* stream = app.add_subcommand("stream", "Stream a time-multiplexed cluster and report nullifier statistics");
  stream->add_option("--spec", stream_args.spec, "Network")->check(CLI::IsMember({"1d", "2d"}));
  stream->add_option("--pulses", stream_args.pulses, "Time slots for the 1d network")->check(CLI::Range(2, 2000000000));
  stream->add_option("--width", stream_args.width, "Cluster width N for the 2d network")->check(CLI::Range(2, 100000));
  stream->add_option("--steps", stream_args.steps, "Rows of N slots for the 2d network")->check(CLI::Range(2, 100000000));
  stream->add_option("--squeezing", stream_args.squeezing, "Source squeezing, e.g. 15dB or 1.2r");
  stream->add_option("--eta", stream_args.eta, "Transmission applied to every emitted pulse")->check(CLI::Range(0.0, 1.0));
  stream->add_option("--slot-csv", stream_args.slot_csv, "Also write per-slot form values to this CSV file");
  add_output_flags(stream, stream_args.out);

  LoopArgs loop_args;
  auto* loopc = app.add_subcommand("loop", "Generate an entangled state on the loop processor and certify it");
  loopc->add_option("--kind", loop_args.kind, "State")->check(CLI::IsMember({"epr", "ghz", "cluster"}));
  loopc->add_option("--modes,-n", loop_args.modes, "Number of modes (ignored for epr)")->check(CLI::Range(2, 64));
  loopc->add_option("--squeezing", loop_args.squeezing, "Input squeezing, e.g. 15dB or 1.2r");
  loopc->add_option("--outer", loop_args.outer, "Outer loop transmission per circulation")->check(CLI::Range(0.0, 1.0));
  loopc->add_option("--inner", loop_args.inner, "Inner loop transmission per circulation")->check(CLI::Range(0.0, 1.0));
  add_output_flags(loopc, loop_args.out);

  GkpArgs gkp_args;
  auto* gkpc = app.add_subcommand("gkp", "GKP logical error curve and code-state diagnostics");
  gkpc->add_option("--seed,-s", gkp_args.seed, "64-bit seed for the Monte-Carlo curve");
  gkpc->add_option("--sigma-min", gkp_args.sigma_min)->check(CLI::PositiveNumber);
  gkpc->add_option("--sigma-max", gkp_args.sigma_max)->check(CLI::PositiveNumber);
  gkpc->add_option("--sigma-step", gkp_args.sigma_step)->check(CLI::PositiveNumber);
  gkpc->add_option("--samples", gkp_args.samples, "Monte-Carlo samples per sigma")->check(CLI::Range(std::int64_t{1}, std::int64_t{1} << 40));
  gkpc->add_option("--delta", gkp_args.delta, "Code-state peak width")->check(CLI::PositiveNumber);
  gkpc->add_option("--cutoff", gkp_args.cutoff, "Fock cutoff for the code states")->check(CLI::Range(2, 400));
  gkpc->add_flag("--skip-state", gkp_args.skip_state, "Do not build the Fock code states");
  gkpc->add_option("--threads", gkp_args.threads, "Worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);
  add_output_flags(gkpc, gkp_args.out);

  BudgetArgs budget_args;
  auto* budgetc = app.add_subcommand("budget", "Fiber-loop loss and capacity");
  budgetc->add_option("--loss-db-km", budget_args.loss_db_km, "Fiber loss in dB/km")->check(CLI::NonNegativeNumber);
  budgetc->add_option("--length-m", budget_args.length_m, "Loop length in meters")->check(CLI::NonNegativeNumber);
  budgetc->add_option("--pulse-ns", budget_args.pulse_ns, "Pulse width in ns")->check(CLI::PositiveNumber);
  budgetc->add_option("--group-velocity", budget_args.group_velocity, "Group velocity in m/s")->check(CLI::PositiveNumber);
  add_output_flags(budgetc, budget_args.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*stream) return cmd_stream(stream_args);
    if (*loopc) return cmd_loop(loop_args);
    if (*gkpc) return cmd_gkp(gkp_args);
    return cmd_budget(budget_args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Diagnosed& d) {
    std::cerr << d.body.dump() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "runtime"}, {"message", e.what()}}.dump() << "\n";
    return kExitRuntime;
  }
}
