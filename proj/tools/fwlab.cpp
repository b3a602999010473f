// Command-line front end: gradient checks, equivalence suites, training
// runs and capacity sweeps, with reproducible key=value manifests.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "fwl/equiv.hpp"
#include "fwl/gradcheck.hpp"
#include "fwl/trainer.hpp"
#include "fwl/version.hpp"

namespace {

using namespace fwl;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- string <-> enum helpers ---------------------------------------------

UpdateRule parse_rule(const std::string& s) {
  if (s == "sum") return UpdateRule::Sum;
  if (s == "delta") return UpdateRule::Delta;
  throw UsageError("unknown rule: " + s + " (expected sum|delta)");
}

Normalization parse_norm(const std::string& s) {
  if (s == "none") return Normalization::None;
  if (s == "sum") return Normalization::SumNorm;
  if (s == "attention") return Normalization::Attention;
  throw UsageError("unknown normalization: " + s +
                   " (expected none|sum|attention)");
}

PhiKind parse_phi(const std::string& s) {
  if (s == "identity") return PhiKind::Identity;
  if (s == "elu1") return PhiKind::Elu1;
  if (s == "favor") return PhiKind::Favor;
  if (s == "dpfp") return PhiKind::Dpfp;
  throw UsageError("unknown phi: " + s + " (expected identity|elu1|favor|dpfp)");
}

const char* rule_name(UpdateRule r) {
  return r == UpdateRule::Sum ? "sum" : "delta";
}
const char* norm_name(Normalization n) {
  switch (n) {
    case Normalization::None: return "none";
    case Normalization::SumNorm: return "sum";
    case Normalization::Attention: return "attention";
  }
  return "?";
}
const char* phi_name(PhiKind p) {
  switch (p) {
    case PhiKind::Identity: return "identity";
    case PhiKind::Elu1: return "elu1";
    case PhiKind::Favor: return "favor";
    case PhiKind::Dpfp: return "dpfp";
  }
  return "?";
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

std::vector<std::string> parse_str_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int env_workers() {
  const char* w = std::getenv("FWLAB_WORKERS");
  if (!w) return 1;
  const int n = std::atoi(w);
  return n > 0 ? n : 1;
}

// ---- config file / manifest ----------------------------------------------

// UTF-8 lines of key=value, '#' comments; unknown keys are errors.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) +
                       ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

// Declarative option set shared by flag parsing, config files and
// manifests, so that re-running a manifest reproduces a run.
class OptionSet {
 public:
  void add(CLI::App* app, const std::string& key, std::string* target,
           const std::string& help) {
    CLI::Option* o = app->add_option("--" + key, *target, help);
    entries_.push_back({key, o, [target](const std::string& v) { *target = v; },
                        [target] { return *target; }});
  }
  void add(CLI::App* app, const std::string& key, int* target,
           const std::string& help) {
    CLI::Option* o = app->add_option("--" + key, *target, help);
    entries_.push_back({key, o,
                        [target](const std::string& v) { *target = std::stoi(v); },
                        [target] { return std::to_string(*target); }});
  }
  void add(CLI::App* app, const std::string& key, std::uint64_t* target,
           const std::string& help) {
    CLI::Option* o = app->add_option("--" + key, *target, help);
    entries_.push_back({key, o,
                        [target](const std::string& v) { *target = std::stoull(v); },
                        [target] { return std::to_string(*target); }});
  }
  void add(CLI::App* app, const std::string& key, double* target,
           const std::string& help) {
    CLI::Option* o = app->add_option("--" + key, *target, help);
    entries_.push_back({key, o,
                        [target](const std::string& v) { *target = std::stod(v); },
                        [target] { return fmt_double(*target); }});
  }
  void add_flag(CLI::App* app, const std::string& key, bool* target,
                const std::string& help) {
    CLI::Option* o = app->add_flag("--" + key, *target, help);
    entries_.push_back({key, o,
                        [target](const std::string& v) {
                          *target = (v == "1" || v == "true");
                        },
                        [target] { return *target ? "1" : "0"; }});
  }

  // file values apply only where no command-line flag was given
  void apply_config(const std::map<std::string, std::string>& kv) const {
    static const std::set<std::string> informational{"command",
                                                     "artifact_version",
                                                     "timestamp"};
    for (const auto& [key, value] : kv) {
      if (informational.count(key)) continue;
      const Entry* entry = nullptr;
      for (const auto& e : entries_)
        if (e.key == key) entry = &e;
      if (!entry) throw UsageError("unknown config key: " + key);
      if (entry->opt->count() == 0) entry->set(value);
    }
  }

  void write_manifest(std::ostream& out, const std::string& command) const {
    out << "command=" << command << "\n";
    out << "artifact_version=" << kVersion << "\n";
    out << "timestamp=" << std::time(nullptr) << "\n";
    for (const auto& e : entries_) out << e.key << "=" << e.get() << "\n";
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
  };
  std::vector<Entry> entries_;
};

// ---- CSV output -----------------------------------------------------------

constexpr const char* kCsvHeader =
    "variant,rule,phi,nu_or_m,d_key,d_dot,S,L,steps_run,best_eval_loss,"
    "accuracy,status,seed,wall_seconds";

std::string variant_label(const ModelConfig& m) {
  if (m.memory == MemoryKind::SoftmaxBaseline) return "softmax";
  switch (m.phi) {
    case PhiKind::Identity: return "identity";
    case PhiKind::Elu1: return "elu1";
    case PhiKind::Dpfp: return "dpfp" + std::to_string(m.nu);
    case PhiKind::Favor: return "favor" + std::to_string(m.m);
  }
  return "?";
}

std::string csv_row(const std::string& variant, const ModelConfig& m,
                    const RetrievalTaskConfig& task, const RunRecord& run) {
  const bool softmax = m.memory == MemoryKind::SoftmaxBaseline;
  FeatureMap dims;
  dims.kind = m.phi;
  dims.d_key = m.d_key;
  dims.nu = m.nu;
  dims.m = m.m;
  std::ostringstream os;
  os << variant << ',' << (softmax ? "-" : rule_name(m.rule)) << ','
     << (softmax ? "-" : phi_name(m.phi)) << ','
     << (softmax ? 0 : (m.phi == PhiKind::Favor ? m.m : m.nu)) << ','
     << m.d_key << ',' << (softmax ? 0 : dims.d_dot()) << ','
     << task.num_symbols << ',' << task.sequence_length() << ','
     << run.steps_run << ',' << fmt_double(run.best_eval_loss) << ','
     << fmt_double(run.accuracy) << ',' << to_string(run.status) << ','
     << run.seed << ',' << fmt_double(run.wall_seconds);
  return os.str();
}

void write_results(const std::string& out_path, const OptionSet& opts,
                   const std::string& command,
                   const std::vector<std::string>& rows) {
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << kCsvHeader << "\n";
  for (const auto& r : rows) out << r << "\n";
  std::ofstream mf(out_path + ".manifest");
  if (!mf) throw std::runtime_error("cannot write " + out_path + ".manifest");
  opts.write_manifest(mf, command);
  std::cout << "wrote " << out_path << " and " << out_path << ".manifest\n";
}

Normalization effective_norm(const std::string& norm, UpdateRule rule) {
  if (norm == "auto")
    return rule == UpdateRule::Sum ? Normalization::Attention
                                   : Normalization::SumNorm;
  return parse_norm(norm);
}

// ---- subcommands ----------------------------------------------------------

struct GradcheckOpts {
  std::string rule = "sum", phi = "elu1", norm = "none";
  int nu = 1, m = 8, length = 8, dim = 4;
  std::uint64_t seed = 0;
  bool all = false;
  std::string config_file;
};

int run_gradcheck(const GradcheckOpts& o) {
  struct Cell {
    UpdateRule rule;
    PhiKind phi;
    Normalization norm;
  };
  std::vector<Cell> cells;
  if (o.all) {
    for (UpdateRule r : {UpdateRule::Sum, UpdateRule::Delta})
      for (PhiKind p : {PhiKind::Elu1, PhiKind::Favor, PhiKind::Dpfp})
        for (Normalization n : {Normalization::None, Normalization::SumNorm,
                                Normalization::Attention})
          cells.push_back({r, p, n});
  } else {
    cells.push_back({parse_rule(o.rule), parse_phi(o.phi), parse_norm(o.norm)});
  }
  bool ok = true;
  for (const auto& c : cells) {
    const double err = gradcheck_combination(c.rule, c.phi, c.norm, o.length,
                                             o.dim, o.seed);
    const bool pass = err < 1e-4;
    ok = ok && pass;
    std::printf("rule=%-5s phi=%-6s norm=%-9s max_rel_err=%.3e %s\n",
                rule_name(c.rule), phi_name(c.phi), norm_name(c.norm), err,
                pass ? "PASS" : "FAIL");
  }
  std::printf("gradcheck: %s (%zu combination%s)\n", ok ? "PASS" : "FAIL",
              cells.size(), cells.size() == 1 ? "" : "s");
  return ok ? 0 : 1;
}

struct EquivOpts {
  std::string lengths;  // empty: random lengths up to max_len
  int cases = 100, max_len = 64, max_dim = 32;
  std::uint64_t seed = 0;
  bool fp32 = false;
  std::string config_file;
};

template <typename Scalar>
int run_equiv_t(const EquivOpts& o, double tol) {
  struct Row {
    std::string name;
    double diff;
  };
  std::vector<Row> rows;
  auto run_suites = [&](int min_len, int max_len, const std::string& tag) {
    for (PhiKind p : {PhiKind::Elu1, PhiKind::Favor, PhiKind::Dpfp}) {
      rows.push_back({std::string("recurrence-vs-quadratic ") + phi_name(p) +
                          tag,
                      equiv_recurrence_vs_quadratic<Scalar>(
                          p, o.cases, max_len, o.max_dim, o.seed, min_len)});
    }
    rows.push_back({"softmax-free-identity" + tag,
                    equiv_softmax_free<Scalar>(o.cases, max_len, o.max_dim,
                                               o.seed, min_len)});
  };
  if (o.lengths.empty()) {
    run_suites(1, o.max_len, "");
  } else {
    for (int len : parse_int_list(o.lengths))
      run_suites(len, len, " L=" + std::to_string(len));
  }
  bool ok = true;
  for (const auto& r : rows) {
    const bool pass = r.diff < tol;
    ok = ok && pass;
    std::printf("%-42s max_diff=%.3e %s\n", r.name.c_str(), r.diff,
                pass ? "PASS" : "FAIL");
  }
  std::printf("equiv: %s (tolerance %.1e, %s)\n", ok ? "PASS" : "FAIL", tol,
              o.fp32 ? "fp32" : "fp64");
  return ok ? 0 : 1;
}

int run_equiv(const EquivOpts& o) {
  return o.fp32 ? run_equiv_t<float>(o, 1e-4) : run_equiv_t<double>(o, 1e-10);
}

struct TrainOpts {
  int setting = 1;
  int s = 20, d_key = 16, d_emb = 32, nu = 1, m = 8;
  std::string rule = "sum", norm = "auto", phi = "identity";
  int batch_size = 32, patience = 1000, eval_every = 50, max_steps = 50000;
  double lr = 1e-3, loss_threshold = 0.001;
  std::uint64_t seed = 0;
  std::string out = "train.csv";
  std::string config_file;
};

ModelConfig model_config_from(const TrainOpts& o) {
  ModelConfig m;
  m.num_symbols = o.s;
  m.d_emb = o.d_emb;
  m.d_key = o.d_key;
  m.nu = o.nu;
  m.m = o.m;
  if (o.phi == "softmax") {
    m.memory = MemoryKind::SoftmaxBaseline;
  } else {
    m.phi = parse_phi(o.phi);
    m.rule = parse_rule(o.rule);
    m.norm = effective_norm(o.norm, m.rule);
  }
  return m;
}

TrainConfig train_config_from(const TrainOpts& o) {
  TrainConfig t;
  t.batch_size = o.batch_size;
  t.lr = o.lr;
  t.loss_threshold = o.loss_threshold;
  t.patience = o.patience;
  t.eval_every = o.eval_every;
  t.max_steps = o.max_steps;
  return t;
}

int run_train(const TrainOpts& o, const OptionSet& opts) {
  if (o.setting != 1 && o.setting != 2)
    throw UsageError("setting must be 1 or 2");
  RetrievalTaskConfig task{o.s, o.setting};
  ModelConfig mc = model_config_from(o);
  Rng rng(o.seed);
  RunRecord run;
  try {
    RetrievalModel model = init_model(mc, rng);
    run = train_until(model, task, train_config_from(o), rng);
  } catch (const NumericError& e) {
    run.status = RunStatus::Failed;
    run.diagnostic = e.what();
  }
  run.seed = o.seed;
  std::printf("status=%s steps=%d best_eval_loss=%g accuracy=%g\n",
              to_string(run.status), run.steps_run, run.best_eval_loss,
              run.accuracy);
  write_results(o.out, opts, "train",
                {csv_row(variant_label(mc), mc, task, run)});
  return 0;
}

struct SweepOpts {
  int setting = 1;
  std::string s_list = "8,16,32";
  std::string variants = "identity,dpfp1";
  int d_key = 16, d_emb = 32;
  std::string rule = "sum", norm = "auto";
  int batch_size = 32, patience = 1000, eval_every = 50, max_steps = 50000;
  double lr = 1e-3, loss_threshold = 0.001;
  std::uint64_t seed = 0;
  std::string out = "sweep.csv";
  std::string config_file;
};

int run_sweep(const SweepOpts& o, const OptionSet& opts) {
  if (o.setting != 1 && o.setting != 2)
    throw UsageError("setting must be 1 or 2");
  const std::vector<int> s_list = parse_int_list(o.s_list);
  const std::vector<std::string> names = parse_str_list(o.variants);
  if (s_list.empty()) throw UsageError("empty S list");
  if (names.empty()) throw UsageError("empty variant list");

  const UpdateRule rule = parse_rule(o.rule);
  const Normalization norm = effective_norm(o.norm, rule);
  std::vector<SweepVariant> variants;
  for (const auto& n : names) {
    try {
      variants.push_back(parse_variant(n, o.d_key, rule, norm));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    variants.back().model.d_emb = o.d_emb;
  }

  TrainConfig tc;
  tc.batch_size = o.batch_size;
  tc.lr = o.lr;
  tc.loss_threshold = o.loss_threshold;
  tc.patience = o.patience;
  tc.eval_every = o.eval_every;
  tc.max_steps = o.max_steps;

  const int workers = env_workers();
  const auto cells =
      capacity_sweep(variants, s_list, o.setting, tc, Rng(o.seed), workers);
  std::vector<std::string> rows;
  for (const auto& c : cells)
    rows.push_back(csv_row(c.variant, c.model, c.task, c.run));
  write_results(o.out, opts, "sweep", rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fast-weight attention laboratory"};
  app.require_subcommand(1);

  GradcheckOpts g;
  EquivOpts e;
  TrainOpts t;
  SweepOpts s;
  OptionSet g_opts, e_opts, t_opts, s_opts;

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference checks of the layer gradients");
  g_opts.add(gradcheck, "rule", &g.rule, "sum|delta");
  g_opts.add(gradcheck, "phi", &g.phi, "elu1|favor|dpfp");
  g_opts.add(gradcheck, "norm", &g.norm, "none|sum|attention");
  g_opts.add(gradcheck, "nu", &g.nu, "dpfp expansion factor");
  g_opts.add(gradcheck, "m", &g.m, "favor random features");
  g_opts.add(gradcheck, "length", &g.length, "sequence length");
  g_opts.add(gradcheck, "dim", &g.dim, "key/value dimension");
  g_opts.add(gradcheck, "seed", &g.seed, "master seed");
  g_opts.add_flag(gradcheck, "all", &g.all, "run the full 18-cell grid");
  gradcheck->add_option("--config", g.config_file, "key=value config file");

  CLI::App* equiv = app.add_subcommand(
      "equiv", "recurrence vs. quadratic attention equivalence suites");
  e_opts.add(equiv, "lengths", &e.lengths, "comma list of sequence lengths");
  e_opts.add(equiv, "cases", &e.cases, "random cases per suite");
  e_opts.add(equiv, "max-len", &e.max_len, "max random sequence length");
  e_opts.add(equiv, "max-dim", &e.max_dim, "max random dimension");
  e_opts.add(equiv, "seed", &e.seed, "master seed");
  e_opts.add_flag(equiv, "fp32", &e.fp32, "single precision (tolerance 1e-4)");
  equiv->add_option("--config", e.config_file, "key=value config file");

  CLI::App* train = app.add_subcommand("train", "train one retrieval model");
  t_opts.add(train, "setting", &t.setting, "1 (capacity) or 2 (overwrite)");
  t_opts.add(train, "s", &t.s, "number of unique keys/values");
  t_opts.add(train, "d-key", &t.d_key, "key dimension");
  t_opts.add(train, "d-emb", &t.d_emb, "symbol embedding dimension");
  t_opts.add(train, "rule", &t.rule, "sum|delta");
  t_opts.add(train, "norm", &t.norm, "none|sum|attention|auto");
  t_opts.add(train, "phi", &t.phi, "identity|elu1|favor|dpfp|softmax");
  t_opts.add(train, "nu", &t.nu, "dpfp expansion factor");
  t_opts.add(train, "m", &t.m, "favor random features");
  t_opts.add(train, "batch-size", &t.batch_size, "mini-batch size");
  t_opts.add(train, "lr", &t.lr, "Adam learning rate");
  t_opts.add(train, "loss-threshold", &t.loss_threshold, "convergence loss");
  t_opts.add(train, "patience", &t.patience, "steps without a new best");
  t_opts.add(train, "eval-every", &t.eval_every, "steps between evaluations");
  t_opts.add(train, "max-steps", &t.max_steps, "hard step cap");
  t_opts.add(train, "seed", &t.seed, "master seed");
  t_opts.add(train, "out", &t.out, "output CSV path");
  train->add_option("--config", t.config_file, "key=value config file");

  CLI::App* sweep = app.add_subcommand("sweep", "capacity sweep over (variant, S)");
  s_opts.add(sweep, "setting", &s.setting, "1 or 2");
  s_opts.add(sweep, "s-list", &s.s_list, "comma list of S values");
  s_opts.add(sweep, "variants", &s.variants,
             "comma list: identity|elu1|dpfpN|favorM|softmax");
  s_opts.add(sweep, "d-key", &s.d_key, "key dimension");
  s_opts.add(sweep, "d-emb", &s.d_emb, "symbol embedding dimension");
  s_opts.add(sweep, "rule", &s.rule, "sum|delta");
  s_opts.add(sweep, "norm", &s.norm, "none|sum|attention|auto");
  s_opts.add(sweep, "batch-size", &s.batch_size, "mini-batch size");
  s_opts.add(sweep, "lr", &s.lr, "Adam learning rate");
  s_opts.add(sweep, "loss-threshold", &s.loss_threshold, "convergence loss");
  s_opts.add(sweep, "patience", &s.patience, "steps without a new best");
  s_opts.add(sweep, "eval-every", &s.eval_every, "steps between evaluations");
  s_opts.add(sweep, "max-steps", &s.max_steps, "hard step cap");
  s_opts.add(sweep, "seed", &s.seed, "master seed");
  s_opts.add(sweep, "out", &s.out, "output CSV path");
  sweep->add_option("--config", s.config_file, "key=value config file");

  CLI::App* version = app.add_subcommand("version", "print version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    if (version->parsed()) {
      std::cout << "fwlab " << kVersion << "\n";
      return 0;
    }
    if (gradcheck->parsed()) {
      if (!g.config_file.empty())
        g_opts.apply_config(read_config_file(g.config_file));
      return run_gradcheck(g);
    }
    if (equiv->parsed()) {
      if (!e.config_file.empty())
        e_opts.apply_config(read_config_file(e.config_file));
      return run_equiv(e);
    }
    if (train->parsed()) {
      if (!t.config_file.empty())
        t_opts.apply_config(read_config_file(t.config_file));
      return run_train(t, t_opts);
    }
    if (sweep->parsed()) {
      if (!s.config_file.empty())
        s_opts.apply_config(read_config_file(s.config_file));
      return run_sweep(s, s_opts);
    }
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "internal error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
