#include "vseg_cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "vseg/loss.hpp"
#include "vseg/network.hpp"

#ifndef VSEG_VERSION
#define VSEG_VERSION "0.0.0"
#endif

namespace vseg::cli {

std::string tool_version() { return VSEG_VERSION; }

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "'");
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Extent3 parse_extent(const std::string& key, const std::string& v) {
  Extent3 e{};
  char x1 = 0, x2 = 0;
  std::istringstream is(v);
  if (!(is >> e[0] >> x1 >> e[1] >> x2 >> e[2]) || x1 != 'x' || x2 != 'x' || !is.eof()) {
    throw ConfigError(key + ": expected DxHxW, got '" + v + "'");
  }
  return e;
}

std::string extent_text(const Extent3& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

double parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

std::array<double, 2> parse_pair(const std::string& key, const std::string& v) {
  const auto comma = v.find(',');
  if (comma == std::string::npos) throw ConfigError(key + ": expected lo,hi, got '" + v + "'");
  return {parse_number(key, v.substr(0, comma)), parse_number(key, v.substr(comma + 1))};
}

std::string pair_text(double lo, double hi) { return format_real(lo) + "," + format_real(hi); }

NetConfig read_net_config(const std::string& path) { return NetConfig::from_text(read_text(path)); }

// Restores the gradient fault hook on scope exit.
struct FaultGuard {
  explicit FaultGuard(const std::string& rule) { set_gradient_fault(rule); }
  ~FaultGuard() { set_gradient_fault(""); }
};

// ---- gen-data -------------------------------------------------------------

struct GenDataArgs {
  std::string spec_path;
  std::int64_t count = 4;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const PhantomSpec spec = a.spec_path.empty() ? PhantomSpec{} : phantom_spec_from_text(read_text(a.spec_path));
  spec.validate();
  if (a.count < 1) throw ConfigError("count: must be >= 1");
  const std::filesystem::path dir = a.out;
  make_dir(dir);
  RunManifest m;
  m.command = "gen-data";
  m.config_text = phantom_spec_to_text(spec);
  m.seed = a.seed;
  m.out_dir = dir;
  m.extra = {{"count", std::to_string(a.count)}};
  write_manifest(m);
  for (std::int64_t i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04lld.vvol", static_cast<long long>(i));
    const VolumeSample s = generate_phantom(spec, a.seed + static_cast<std::uint64_t>(i));
    save_volume(dir / name, s);
    out << name << "\tlung " << s.lung_mask.count() << "\tlesion " << s.lesion_mask.count() << '\n';
  }
  return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

struct GradCheckArgs {
  std::string config_path;
  bool all = false;
  double eps = 1e-3;
  std::int64_t max_elements = 0;
  std::uint64_t seed = 1;
  std::string fault;
  std::string out;
};

NetConfig gradcheck_default() {
  NetConfig c;
  c.base_channels = 2;
  return c;
}

int cmd_gradcheck(const GradCheckArgs& a, std::ostream& out, std::ostream& err) {
  const NetConfig base = a.config_path.empty() ? gradcheck_default() : read_net_config(a.config_path);
  if (base.base_channels > 4) throw ConfigError("base_channels: gradient checks need <= 4");
  if (!(a.eps > 0.0)) throw ConfigError("eps: must be > 0");
  if (a.max_elements < 0) throw ConfigError("max-elements: must be >= 0");
  const std::vector<NetConfig> configs = a.all ? ablation_configs(base) : std::vector<NetConfig>{base};

  std::ostringstream report;
  GradCheckOptions opts;
  opts.eps = a.eps;
  opts.max_elements_per_param = a.max_elements;
  opts.seed = a.seed;
  if (!a.out.empty()) {
    make_dir(a.out);
    RunManifest m;
    m.command = "gradcheck";
    m.config_text = base.to_text();
    m.seed = a.seed;
    m.out_dir = a.out;
    m.extra = {{"all", a.all ? "true" : "false"},
               {"eps", format_real(a.eps)},
               {"max_elements", std::to_string(a.max_elements)},
               {"fault", a.fault}};
    write_manifest(m);
  }

  FaultGuard guard(a.fault);
  std::vector<std::string> offenders;
  for (const NetConfig& c : configs) {
    const GradCheckReport r = check_network(c, opts, a.seed);
    report << "# " << c.label() << '\n' << "param\tchecked\tskipped\tmax_rel_error\n";
    for (const auto& e : r.entries) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "\t%lld\t%lld\t%.3e", static_cast<long long>(e.checked),
                    static_cast<long long>(e.skipped), e.max_rel_error);
      report << e.name << buf << '\n';
      if (!(e.max_rel_error < kGradTolerance)) offenders.push_back(c.label() + ": " + e.name);
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "\tmax_rel_error %.3e\tchecked %lld\tskipped %lld\t", r.max_rel_error,
                  static_cast<long long>(r.checked), static_cast<long long>(r.skipped));
    report << c.label() << buf << (r.max_rel_error < kGradTolerance ? "PASS" : "FAIL") << "\tworst " << r.worst
           << "\n\n";
  }
  out << report.str();
  if (!a.out.empty()) write_text(std::filesystem::path(a.out) / "gradcheck.txt", report.str());
  if (!offenders.empty()) {
    err << "gradient check failed (tolerance 1e-4) for:\n";
    for (const auto& o : offenders) err << "  " << o << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

// ---- train / ablate -------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config_path;
  std::int64_t steps = 0;
  double lr = 0.0;
  double decay = 0.0;
  bool fixed_lr = false;
  std::int64_t batch_size = 0;
  std::uint64_t seed = 0;
  std::string patch;
  std::int64_t checkpoint_interval = 0;
  std::int64_t base = 0;
  std::string attention;
  std::string bottleneck;
  std::string task;
  std::string out_mode;
  bool deterministic = false;
};

struct Given {
  const CLI::App* app;
  bool operator()(const char* name) const { return app->count(name) > 0; }
};

TrainConfig resolve_train(const TrainArgs& a, Given given) {
  TrainConfig c = a.config_path.empty() ? TrainConfig{} : TrainConfig::from_text(read_text(a.config_path));
  if (given("--steps")) c.steps = a.steps;
  if (given("--lr")) c.lr0 = a.lr;
  if (given("--decay")) c.decay = a.decay;
  if (given("--fixed-lr")) c.fixed_lr = a.fixed_lr;
  if (given("--batch-size")) c.batch_size = a.batch_size;
  if (given("--seed")) c.seed = a.seed;
  if (given("--patch")) c.patch = parse_extent("patch", a.patch);
  if (given("--checkpoint-interval")) c.checkpoint_interval = a.checkpoint_interval;
  if (given("--base")) c.net.base_channels = a.base;
  if (given("--attention")) c.net.encoder_attention = parse_attention(a.attention);
  if (given("--bottleneck")) c.net.bottleneck = parse_pyramid(a.bottleneck);
  if (given("--task")) c.net.task = parse_task(a.task);
  if (given("--out-mode")) c.net.out_mode = parse_output_mode(a.out_mode);
  c.validate();
  return c;
}

int cmd_train(const TrainArgs& a, Given given, std::ostream& out) {
  const TrainConfig cfg = resolve_train(a, given);
  const auto data = load_dataset(a.data);
  const std::filesystem::path dir = a.out;
  make_dir(dir);
  RunManifest m;
  m.command = "train";
  m.config_text = cfg.to_text();
  m.seed = cfg.seed;
  m.out_dir = dir;
  m.deterministic = true;
  m.extra = {{"data", a.data}};
  write_manifest(m);

  std::ofstream log(dir / "train_log.tsv", std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot open '" + (dir / "train_log.tsv").string() + "' for writing");
  TrainOptions opts;
  opts.log = &log;
  opts.checkpoint_dir = dir;
  const TrainResult r = train(cfg, data, opts);
  log.flush();
  if (!log) throw IoError("failed writing the training log");
  const StepRecord& last = r.history.back();
  out << "trained " << cfg.net.label() << " (" << to_string(cfg.net.task) << ") for " << cfg.steps
      << " steps; final loss " << format_real(last.loss) << "\ncheckpoint " << (dir / "final.vseg").string() << '\n';
  return kExitOk;
}

struct AblateArgs : TrainArgs {};

int cmd_ablate(const AblateArgs& a, Given given, std::ostream& out, std::ostream& err) {
  const TrainConfig base = resolve_train(a, given);
  const auto data = load_dataset(a.data);
  const std::filesystem::path dir = a.out;
  make_dir(dir);
  RunManifest m;
  m.command = "ablate";
  m.config_text = base.to_text();
  m.seed = base.seed;
  m.out_dir = dir;
  m.extra = {{"data", a.data}};
  write_manifest(m);

  std::vector<AblationRow> rows;
  for (const NetConfig& net : ablation_configs(base.net)) {
    AblationRow row{net.label(), {}, {}};
    for (Task task : {Task::kLung, Task::kLesion}) {
      TrainConfig cfg = base;
      cfg.net = net;
      cfg.net.task = task;
      const std::string stem = net.label() + "_" + to_string(task);
      std::ofstream log(dir / (stem + ".tsv"), std::ios::binary | std::ios::trunc);
      if (!log) throw IoError("cannot write the training log for " + stem);
      TrainOptions opts;
      opts.log = &log;
      TrainResult r = train(cfg, data, opts);
      save_checkpoint(dir / (stem + ".vseg"), r.net);
      MetricsSummary s = evaluate(r.net, data);
      err << "[ablate] " << stem << " dice " << format_real(s.mean_dice) << '\n';
      (task == Task::kLung ? row.lung : row.lesion) = std::move(s);
    }
    rows.push_back(std::move(row));
  }
  std::ostringstream table;
  write_ablation_table(table, rows);
  write_text(dir / "ablation.tsv", table.str());
  out << table.str();
  return kExitOk;
}

// ---- infer / eval ---------------------------------------------------------

struct InferArgs {
  std::string ckpt;
  std::string in;
  std::string out;
  double threshold = 0.5;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  if (!(a.threshold >= 0.0 && a.threshold <= 1.0)) throw ConfigError("threshold: must lie in [0, 1]");
  Network net = load_checkpoint(a.ckpt);
  const VolumeSample in = load_volume(a.in);
  const NetConfig& cfg = net.config();
  if (cfg.in_channels != 1) {
    throw ConfigError("checkpoint expects " + std::to_string(cfg.in_channels) +
                      " input channels; volumes carry 1");
  }
  const std::filesystem::path path = a.out;
  if (path.has_parent_path()) make_dir(path.parent_path());
  RunManifest m;
  m.command = "infer";
  m.config_text = cfg.to_text();
  m.out_dir = path.parent_path();
  m.extra = {{"checkpoint", a.ckpt}, {"input", a.in}, {"threshold", format_real(a.threshold)}};
  write_text(std::filesystem::path(path).replace_extension(".manifest.txt"), m.to_text());

  VolumeSample pred;
  pred.image = in.image;
  pred.spacing = in.spacing;
  pred.mask_for(cfg.task) = predict_mask(net, normalize_input(cfg, in.image), a.threshold).front();
  save_volume(path, pred);
  const auto slice = std::filesystem::path(path).replace_extension(".pgm");
  export_slice(pred, 0, pred.extents()[0] / 2, slice);
  out << to_string(cfg.task) << " voxels " << pred.mask_for(cfg.task).count() << "\nmask " << path.string()
      << "\nslice " << slice.string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string pred;
  std::string ref;
  std::string task = "lesion";
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Task task = parse_task(a.task);
  if (!std::filesystem::is_directory(a.pred)) throw IoError("prediction directory '" + a.pred + "' not found");
  if (!std::filesystem::is_directory(a.ref)) throw IoError("reference directory '" + a.ref + "' not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(a.pred)) {
    if (e.is_regular_file() && e.path().extension() == ".vvol") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .vvol predictions in '" + a.pred + "'");
  std::vector<MetricsRecord> records;
  for (const auto& p : files) {
    const std::string id = p.stem().string();
    const auto ref_path = std::filesystem::path(a.ref) / p.filename();
    if (!std::filesystem::exists(ref_path)) {
      throw IoError("missing reference for case '" + id + "' (expected " + ref_path.string() + ")");
    }
    const VolumeSample pv = load_volume(p);
    const VolumeSample rv = load_volume(ref_path);
    if (pv.mask_for(task).size() == 0) throw ConfigError("case '" + id + "': prediction has no " + a.task + " mask");
    if (rv.mask_for(task).size() == 0) throw ConfigError("case '" + id + "': reference has no " + a.task + " mask");
    records.push_back(measure(id, task, pv.mask_for(task), rv.mask_for(task)));
  }
  std::ostringstream table;
  write_metrics_table(table, summarize(std::move(records)));
  if (!a.out.empty()) write_text(a.out, table.str());
  out << table.str();
  return kExitOk;
}

void add_train_options(CLI::App* sc, TrainArgs& a) {
  sc->add_option("--data", a.data, "Directory of .vvol training volumes")->required();
  sc->add_option("--out", a.out, "Output directory")->required();
  sc->add_option("--config", a.config_path, "Training config (key=value text, e.g. a manifest)");
  sc->add_option("--steps", a.steps, "Optimizer steps");
  sc->add_option("--lr", a.lr, "Initial learning rate");
  sc->add_option("--decay", a.decay, "Inverse-time learning-rate decay");
  sc->add_flag("--fixed-lr", a.fixed_lr, "Keep the learning rate constant");
  sc->add_option("--batch-size", a.batch_size, "Patches per step");
  sc->add_option("--seed", a.seed, "Run seed");
  sc->add_option("--patch", a.patch, "Patch extents DxHxW");
  sc->add_option("--checkpoint-interval", a.checkpoint_interval, "Checkpoint every N steps (0: final only)");
  sc->add_option("--base", a.base, "Base channel count");
  sc->add_option("--attention", a.attention, "none | cab | ceb | psb | fv");
  sc->add_option("--bottleneck", a.bottleneck, "none | aspp | res_aspp | paspp");
  sc->add_option("--task", a.task, "lung | lesion");
  sc->add_option("--out-mode", a.out_mode, "sigmoid1 | softmax2");
  sc->add_flag("--deterministic", a.deterministic, "Bit-reproducible run (always on)");
}

}  // namespace

// ---- public helpers -------------------------------------------------------

std::string RunManifest::to_text() const {
  std::ostringstream os;
  os << "# vseg run manifest\n"
     << "# command=" << command << '\n'
     << "# version=" << version << '\n'
     << "# created=" << utc_timestamp() << '\n'
     << "# seed=" << seed << '\n'
     << "# out=" << out_dir.string() << '\n'
     << "# deterministic=" << (deterministic ? "true" : "false") << '\n';
  for (const auto& [k, v] : extra) os << "# " << k << '=' << v << '\n';
  os << config_text;
  return os.str();
}

void write_manifest(const RunManifest& m) { write_text(m.out_dir / kManifestName, m.to_text()); }

std::string phantom_spec_to_text(const PhantomSpec& s) {
  std::ostringstream os;
  os << "air=" << format_real(s.air) << '\n'
     << "extents=" << extent_text(s.extents) << '\n'
     << "lesion_band=" << pair_text(s.lesion_band.lo, s.lesion_band.hi) << '\n'
     << "lesion_max=" << s.lesion_max << '\n'
     << "lesion_min=" << s.lesion_min << '\n'
     << "lesion_radius=" << pair_text(s.lesion_radius[0], s.lesion_radius[1]) << '\n'
     << "lung_band=" << pair_text(s.lung_band.lo, s.lung_band.hi) << '\n'
     << "lung_exponent=" << format_real(s.lung_exponent) << '\n'
     << "lung_radius_d=" << pair_text(s.lung_radius_d[0], s.lung_radius_d[1]) << '\n'
     << "lung_radius_h=" << pair_text(s.lung_radius_h[0], s.lung_radius_h[1]) << '\n'
     << "lung_radius_w=" << pair_text(s.lung_radius_w[0], s.lung_radius_w[1]) << '\n'
     << "noise=" << format_real(s.noise) << '\n'
     << "wall_band=" << pair_text(s.wall_band.lo, s.wall_band.hi) << '\n';
  return os.str();
}

PhantomSpec phantom_spec_from_text(std::string_view text) {
  PhantomSpec s;
  std::istringstream is{std::string(text)};
  std::string line;
  auto band = [](const std::string& k, const std::string& v) {
    const auto p = parse_pair(k, v);
    return Band{p[0], p[1]};
  };
  auto integer = [](const std::string& k, const std::string& v) {
    const double x = parse_number(k, v);
    if (x != static_cast<double>(static_cast<std::int64_t>(x))) throw ConfigError(k + ": expected an integer");
    return static_cast<std::int64_t>(x);
  };
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("phantom spec: expected key=value, got '" + line + "'");
    const std::string k = line.substr(0, eq);
    const std::string v = line.substr(eq + 1);
    if (k == "air") s.air = parse_number(k, v);
    else if (k == "extents") s.extents = parse_extent(k, v);
    else if (k == "lesion_band") s.lesion_band = band(k, v);
    else if (k == "lesion_max") s.lesion_max = integer(k, v);
    else if (k == "lesion_min") s.lesion_min = integer(k, v);
    else if (k == "lesion_radius") s.lesion_radius = parse_pair(k, v);
    else if (k == "lung_band") s.lung_band = band(k, v);
    else if (k == "lung_exponent") s.lung_exponent = parse_number(k, v);
    else if (k == "lung_radius_d") s.lung_radius_d = parse_pair(k, v);
    else if (k == "lung_radius_h") s.lung_radius_h = parse_pair(k, v);
    else if (k == "lung_radius_w") s.lung_radius_w = parse_pair(k, v);
    else if (k == "noise") s.noise = parse_number(k, v);
    else if (k == "wall_band") s.wall_band = band(k, v);
    else throw ConfigError("phantom spec: unknown key '" + k + "'");
  }
  s.validate();
  return s;
}

std::vector<LabeledSample> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("data directory '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".vvol") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .vvol volumes in '" + dir.string() + "'");
  std::vector<LabeledSample> out;
  for (const auto& f : files) out.push_back({f.stem().string(), load_volume(f)});
  return out;
}

GradCheckReport check_network(const NetConfig& cfg, const GradCheckOptions& opts, std::uint64_t seed) {
  cfg.validate();
  if (cfg.base_channels > 4) throw ConfigError("base_channels: gradient checks need <= 4");
  std::mt19937_64 rng(seed);
  const Tensor x = Tensor::uniform({1, cfg.in_channels, 8, 8, 8}, rng, 0.0, 1.0);
  Tensor ref(Shape5{1, 1, 8, 8, 8});
  for (std::int64_t i = 0; i < ref.numel(); ++i) ref[i] = x[i] > 0.6 ? 1.0 : 0.0;
  Network net(cfg, seed);
  randomize_offsets(net.params(), seed + 1);
  Graph g(net.params(), {"x"}, [&](Tape&, const std::map<std::string, Var>& in, ParamStore&) {
    return std::map<std::string, Var>{{"loss", ad::combined_loss(net.forward(in.at("x")), ref).combined}};
  });
  return grad_check(g, {{"x", x}}, opts);
}

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << kAblationHeader << '\n';
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f", r.lung.mean_dice,
                  r.lung.mean_sensitivity, r.lung.mean_precision, r.lesion.mean_dice, r.lesion.mean_sensitivity,
                  r.lesion.mean_precision);
    os << r.label << buf << '\n';
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"vseg: 3D lung and lesion segmentation toolkit"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* sc_gen = app.add_subcommand("gen-data", "Generate synthetic phantom volumes");
  sc_gen->add_option("--spec", gen.spec_path, "Phantom spec (key=value text)");
  sc_gen->add_option("--count", gen.count, "Number of volumes")->capture_default_str();
  sc_gen->add_option("--seed", gen.seed, "Seed of the first volume")->capture_default_str();
  sc_gen->add_option("--out", gen.out, "Output directory")->required();

  GradCheckArgs gc;
  auto* sc_gc = app.add_subcommand("gradcheck", "Finite-difference gradient check of a tiny network");
  sc_gc->add_option("--config", gc.config_path, "Network config (key=value text)");
  sc_gc->add_flag("--all", gc.all, "Check all nine ablation configurations");
  sc_gc->add_option("--eps", gc.eps, "Relative finite-difference step")->capture_default_str();
  sc_gc->add_option("--max-elements", gc.max_elements, "Elements per parameter (0: all)")->capture_default_str();
  sc_gc->add_option("--seed", gc.seed, "Seed for weights, input and sampling")->capture_default_str();
  sc_gc->add_option("--fault", gc.fault, "Corrupt the backward rule of this op (test hook)");
  sc_gc->add_option("--out", gc.out, "Optional directory for the manifest and report");

  TrainArgs tr;
  auto* sc_train = app.add_subcommand("train", "Train a network on a directory of volumes");
  add_train_options(sc_train, tr);

  InferArgs inf;
  auto* sc_infer = app.add_subcommand("infer", "Segment one volume with a checkpoint");
  sc_infer->add_option("--ckpt", inf.ckpt, "Checkpoint file")->required();
  sc_infer->add_option("--in", inf.in, "Input .vvol volume")->required();
  sc_infer->add_option("--out", inf.out, "Output .vvol mask; a .pgm midplane slice is written beside it")
      ->required();
  sc_infer->add_option("--threshold", inf.threshold, "Foreground probability threshold")->capture_default_str();

  EvalArgs ev;
  auto* sc_eval = app.add_subcommand("eval", "Compare predicted masks with references");
  sc_eval->add_option("--pred", ev.pred, "Directory of predicted .vvol masks")->required();
  sc_eval->add_option("--ref", ev.ref, "Directory of reference .vvol volumes")->required();
  sc_eval->add_option("--task", ev.task, "lung | lesion")->capture_default_str();
  sc_eval->add_option("--out", ev.out, "Also write the table to this file");

  AblateArgs ab;
  auto* sc_ablate = app.add_subcommand("ablate", "Train and evaluate all nine block configurations");
  add_train_options(sc_ablate, ab);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitFailure;
  }

  try {
    if (sc_gen->parsed()) return cmd_gen_data(gen, out);
    if (sc_gc->parsed()) return cmd_gradcheck(gc, out, err);
    if (sc_train->parsed()) return cmd_train(tr, Given{sc_train}, out);
    if (sc_infer->parsed()) return cmd_infer(inf, out);
    if (sc_eval->parsed()) return cmd_eval(ev, out);
    if (sc_ablate->parsed()) return cmd_ablate(ab, Given{sc_ablate}, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"vseg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace vseg::cli
