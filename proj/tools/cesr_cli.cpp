// Command-line front end: dataset generation, staged training, evaluation.
#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cesr/checkpoint.hpp"
#include "cesr/config.hpp"
#include "cesr/dataset.hpp"
#include "cesr/eval.hpp"
#include "cesr/train.hpp"

#ifndef CESR_GIT_DESCRIBE
#define CESR_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using namespace cesr;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool force = false;
  std::string precision;
  bool check = false;
  std::vector<std::string> overrides;
  std::string command_line;
};

// Options shared by several subcommands.
struct Args {
  std::string profile;
  std::vector<std::string> profiles;
  std::optional<double> snr;
  std::optional<std::size_t> n;
  std::string split = "train";
  std::string file;
  std::vector<std::string> data;
  std::string model;
  std::string fisher;
  std::string task;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::optional<double> lambda;
  std::optional<double> alpha;
  bool no_attention = false;
  std::string scheme = "ls";
  std::string snr_list;
  std::optional<std::size_t> mc;
  std::string post_task1, naive, cl, multitask;
};

class CheckFailed : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

std::string fmt(double v) { return format_number(v); }

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

RunConfig resolve(const Globals& g, const Args& a) {
  RunConfig c;
  if (!g.config_path.empty()) c.load(g.config_path);
  for (const auto& kv : g.overrides) c.set_assignment(kv);
  if (g.seed) c.set("run.seed", std::to_string(*g.seed));
  if (!g.precision.empty()) c.set("run.precision", g.precision);
  if (a.epochs) c.set("train.epochs", std::to_string(*a.epochs));
  if (a.batch) c.set("train.batch_size", std::to_string(*a.batch));
  if (a.lr) c.set("train.learning_rate", fmt(*a.lr));
  if (a.lambda) c.set("train.lambda", fmt(*a.lambda));
  if (a.alpha) c.set("train.alpha", fmt(*a.alpha));
  if (a.no_attention) c.set("train.attention", "false");
  if (!a.snr_list.empty()) c.set("eval.snr_list", a.snr_list);
  if (a.mc) c.set("eval.mc", std::to_string(*a.mc));
  const auto& p = c.get("run.precision");
  if (p != "f32" && p != "f64") throw UsageError("precision must be f32 or f64, got '" + p + "'");
  return c;
}

void write_text(const fs::path& path, const std::string& text, bool force) {
  io::write_file_atomic(path, std::string_view(text), force);
}

// Config echo plus the seeds and build needed to reproduce the outputs.
void write_provenance(const Globals& g, const RunConfig& c, const std::string& stage,
                      const std::vector<std::pair<std::string, std::string>>& extra) {
  const fs::path out(g.out);
  write_text(out / (stage + ".config.ini"), c.echo(), true);
  std::ostringstream os;
  os << "command = " << g.command_line << '\n';
  os << "stage = " << stage << '\n';
  os << "git_describe = " << CESR_GIT_DESCRIBE << '\n';
  os << "seed = " << c.seed() << '\n';
  for (const auto& [k, v] : extra) os << k << " = " << v << '\n';
  write_text(out / (stage + ".run.txt"), os.str(), true);
}

SeedDomain split_domain(const std::string& split) {
  if (split == "train") return SeedDomain::train;
  if (split == "val") return SeedDomain::validation;
  if (split == "test") return SeedDomain::test;
  throw UsageError("split must be train, val or test");
}

std::uint64_t init_seed(const RunConfig& c) { return derive_seed(c.seed(), {tag(SeedDomain::init)}); }

std::string loss_csv(const std::vector<EpochLoss>& trace) {
  std::ostringstream os;
  os << "epoch,loss,ewc_loss,total_loss\n";
  for (const auto& e : trace)
    os << e.epoch << ',' << fmt(e.loss) << ',' << fmt(e.ewc_loss) << ',' << fmt(e.total_loss) << '\n';
  return os.str();
}

void check_trace(const std::vector<EpochLoss>& trace) {
  for (const auto& e : trace)
    if (!std::isfinite(e.total_loss)) throw CheckFailed("check: non-finite loss at epoch " + std::to_string(e.epoch));
  if (trace.size() > 1 && trace.back().loss > trace.front().loss)
    throw CheckFailed("check: final-epoch loss exceeds first-epoch loss");
}

ModelGeometry geometry_of(const RunConfig& c) { return ModelGeometry::from(c.ofdm(), c.pilots()); }

Dataset load_training_data(const std::string& path) {
  if (path.empty()) throw UsageError("--data is required");
  return load_dataset(path);
}

template <typename T>
ModelParams<T> load_model(const std::string& path, const RunConfig& c) {
  if (path.empty()) throw UsageError("--model is required");
  return load_checkpoint<T>(path, geometry_of(c));
}

// ---- gen ----

int cmd_gen(const Globals& g, const Args& a) {
  const RunConfig c = resolve(g, a);
  const std::string name = a.profile.empty() ? c.get("channel.task1") : a.profile;
  const double snr = a.snr ? *a.snr : c.number("data.train_snr");
  const std::string key = a.split == "val" ? "data.val_size" : a.split == "test" ? "data.test_size" : "data.train_size";
  const std::size_t n = a.n ? *a.n : c.count(key);
  const SeedDomain domain = split_domain(a.split);
  if (n == 0) throw DataError("gen: --n must be positive");
  const auto profile = c.profile(name);
  const fs::path file = a.file.empty() ? fs::path(g.out) / (lower(profile.name) + "_" + a.split + "_snr" + fmt(snr) + ".chds")
                                       : fs::path(a.file);
  if (!g.force && fs::exists(file)) throw UsageError(file.string() + " exists (use --force to overwrite)");

  const auto ds = generate_dataset(profile, c.ofdm(), c.pilots(), snr, n, c.seed(), domain);
  const auto bytes = encode_dataset(ds);
  io::write_file_atomic(file, bytes, g.force);
  if (g.check) {
    const auto back = load_dataset(file);
    if (encode_dataset(back) != bytes) throw CheckFailed("check: dataset does not round-trip");
  }
  write_provenance(g, c, "gen",
                   {{"profile", profile.name}, {"snr_db", fmt(snr)}, {"split", a.split}, {"samples", std::to_string(n)},
                    {"output", file.string()}});
  std::cout << "wrote " << file.string() << " (" << n << " samples, " << ds.pilot_rows << "x" << ds.pilot_cols
            << " -> " << ds.subcarriers << "x" << ds.timeslots << ")\n";
  return 0;
}

// ---- train / train-multitask ----

template <typename T>
int run_train(const Globals& g, const Args& a, bool multitask) {
  const RunConfig c = resolve(g, a);
  const fs::path out(g.out);
  const fs::path ckpt = out / "model.dasr";
  if (!g.force && fs::exists(ckpt)) throw UsageError(ckpt.string() + " exists (use --force to overwrite)");
  const auto cfg = c.train();

  ModelParams<T> params;
  if (!a.model.empty()) {
    params = load_model<T>(a.model, c);
  } else {
    Rng rng(init_seed(c));
    params = init_params<T>(geometry_of(c), rng);
  }
  std::vector<EpochLoss> trace;
  if (multitask) {
    if (a.data.size() != 2) throw UsageError("train-multitask needs exactly two --data files");
    trace = train_multitask(params, load_training_data(a.data[0]), load_training_data(a.data[1]), cfg);
  } else {
    if (a.data.size() != 1) throw UsageError("train needs exactly one --data file");
    trace = train_task(params, load_training_data(a.data[0]), cfg);
  }
  if (g.check) check_trace(trace);
  save_checkpoint(ckpt, params, g.force);
  write_text(out / "loss.csv", loss_csv(trace), true);
  std::string inputs;
  for (const auto& d : a.data) inputs += (inputs.empty() ? "" : ";") + d;
  write_provenance(g, c, multitask ? "train-multitask" : "train",
                   {{"init_seed", a.model.empty() ? std::to_string(init_seed(c)) : "from " + a.model},
                    {"data", inputs}});
  std::cout << "final loss " << fmt(trace.back().loss) << ", wrote " << ckpt.string() << '\n';
  return 0;
}

// ---- fisher ----

template <typename T>
int run_fisher(const Globals& g, const Args& a) {
  const RunConfig c = resolve(g, a);
  const fs::path out(g.out);
  const fs::path file = out / "fisher.fish";
  if (!g.force && fs::exists(file)) throw UsageError(file.string() + " exists (use --force to overwrite)");
  if (a.data.size() != 1) throw UsageError("fisher needs exactly one --data file");
  auto params = load_model<T>(a.model, c);
  const auto data = load_training_data(a.data[0]);
  const auto f = estimate_fisher(params, data, c.train(), a.task.empty() ? "I" : a.task);
  save_fisher(file, f, params, g.force);

  std::ostringstream os;
  os << "parameter,count,mean,max\n";
  for (std::size_t i = 0; i < f.fisher.size(); ++i) {
    double sum = 0, mx = 0;
    for (T v : f.fisher[i].data()) {
      sum += static_cast<double>(v);
      mx = std::max(mx, static_cast<double>(v));
      if (g.check && !(v >= T{0})) throw CheckFailed("check: negative Fisher entry in " + params.tensors[i].name);
    }
    os << params.tensors[i].name << ',' << f.fisher[i].size() << ','
       << fmt(sum / static_cast<double>(f.fisher[i].size())) << ',' << fmt(mx) << '\n';
  }
  write_text(out / "fisher_summary.csv", os.str(), true);
  write_provenance(g, c, "fisher", {{"model", a.model}, {"data", a.data[0]}, {"task", f.task}});
  std::cout << "wrote " << file.string() << '\n';
  return 0;
}

// ---- train-cl ----

template <typename T>
int run_train_cl(const Globals& g, const Args& a) {
  if (a.fisher.empty() || !fs::exists(a.fisher))
    throw UsageError("train-cl: missing Fisher file" + (a.fisher.empty() ? std::string() : " '" + a.fisher + "'") +
                     "; the Fisher-estimation stage has not run. Run `fisher --model <task-I checkpoint> --data "
                     "<task-I data>` first, then pass --fisher <out>/fisher.fish");
  const RunConfig c = resolve(g, a);
  const fs::path out(g.out);
  const fs::path ckpt = out / "model.dasr";
  if (!g.force && fs::exists(ckpt)) throw UsageError(ckpt.string() + " exists (use --force to overwrite)");
  if (a.data.size() != 1) throw UsageError("train-cl needs exactly one --data file (task II)");
  auto params = load_model<T>(a.model, c);
  const auto fisher = load_fisher<T>(a.fisher, params);
  const auto trace = train_task_cl(params, load_training_data(a.data[0]), fisher, c.train());
  if (g.check) check_trace(trace);
  save_checkpoint(ckpt, params, g.force);
  write_text(out / "loss.csv", loss_csv(trace), true);
  write_provenance(g, c, "train-cl",
                   {{"model", a.model}, {"fisher", a.fisher}, {"fisher_task", fisher.task}, {"data", a.data[0]}});
  std::cout << "final loss " << fmt(trace.back().loss) << " (ewc " << fmt(trace.back().ewc_loss) << "), wrote "
            << ckpt.string() << '\n';
  return 0;
}

// ---- eval ----

void check_report(const EvalReport& r, const std::optional<EvalReport>& baseline) {
  for (std::size_t i = 0; i < r.snr_db.size(); ++i) {
    if (!std::isfinite(r.nmse_linear[i]) || r.nmse_linear[i] < 0)
      throw CheckFailed("check: invalid NMSE at " + fmt(r.snr_db[i]) + " dB");
    if (i > 0 && r.snr_db[i] > r.snr_db[i - 1] && r.nmse_db[i] > r.nmse_db[i - 1] + 0.3)
      throw CheckFailed("check: NMSE rises by more than 0.3 dB between " + fmt(r.snr_db[i - 1]) + " and " +
                        fmt(r.snr_db[i]) + " dB");
    if (baseline && !(r.nmse_linear[i] < baseline->nmse_linear[i]))
      throw CheckFailed("check: " + r.scheme + " does not beat ls at " + fmt(r.snr_db[i]) + " dB");
  }
}

template <typename T>
int run_eval(const Globals& g, const Args& a) {
  const RunConfig c = resolve(g, a);
  const auto ofdm = c.ofdm();
  const auto pattern = c.pilots();
  const auto settings = c.sweep();
  std::vector<std::string> names = a.profiles;
  if (names.empty()) names.push_back(c.get("channel.task1"));
  std::vector<TdlProfile> profiles;
  for (const auto& n : names) profiles.push_back(c.profile(n));

  Estimator est;
  const bool baseline = a.scheme == "ls";
  if (baseline) {
    est = ls_bilinear_estimator(pattern, ofdm);
  } else {
    if (a.model.empty()) throw UsageError("eval: scheme '" + a.scheme + "' needs --model");
    est = model_estimator(load_model<T>(a.model, c), ForwardOptions{c.flag("train.attention")});
  }
  const fs::path file = a.file.empty() ? fs::path(g.out) / ("eval_" + a.scheme + ".csv") : fs::path(a.file);
  if (!g.force && fs::exists(file)) throw UsageError(file.string() + " exists (use --force to overwrite)");
  const auto report = sweep(a.scheme, est, profiles, ofdm, pattern, settings);
  if (g.check) {
    std::optional<EvalReport> ls;
    if (!baseline) ls = sweep("ls", ls_bilinear_estimator(pattern, ofdm), profiles, ofdm, pattern, settings);
    check_report(report, ls);
  }
  write_text(file, to_csv({report}), g.force);
  write_provenance(g, c, "eval", {{"scheme", a.scheme}, {"model", a.model}, {"output", file.string()}});
  for (std::size_t i = 0; i < report.snr_db.size(); ++i)
    std::cout << a.scheme << ' ' << report.profile << " snr " << fmt(report.snr_db[i]) << " dB: nmse "
              << fmt(report.nmse_db[i]) << " dB\n";
  return 0;
}

// ---- report-forgetting ----

template <typename T>
int run_report(const Globals& g, const Args& a) {
  const RunConfig c = resolve(g, a);
  const auto ofdm = c.ofdm();
  const auto pattern = c.pilots();
  auto settings = c.sweep();
  settings.snr_db = c.list("eval.forgetting_snr_list");
  const ForwardOptions opts{c.flag("train.attention")};
  const auto need = [&](const std::string& path, const char* flag) {
    if (path.empty()) throw UsageError(std::string("report-forgetting needs ") + flag);
    return model_estimator(load_model<T>(path, c), opts);
  };
  ForgettingInputs in{need(a.post_task1, "--post-task1"), need(a.naive, "--naive"), need(a.cl, "--cl"),
                      need(a.multitask, "--multitask")};
  const fs::path out(g.out);
  const fs::path table = out / "forgetting.csv";
  if (!g.force && fs::exists(table)) throw UsageError(table.string() + " exists (use --force to overwrite)");
  const auto task1 = c.profile(c.get("channel.task1"));
  const auto task2 = c.profile(c.get("channel.task2"));
  const auto rep = forgetting_report(in, task1, task2, ofdm, pattern, settings);

  if (g.check) {
    const auto it = std::find(settings.snr_db.begin(), settings.snr_db.end(), 10.0);
    if (it == settings.snr_db.end()) throw UsageError("--check needs 10 dB in eval.forgetting_snr_list");
    const auto i = static_cast<std::size_t>(it - settings.snr_db.begin());
    const std::string mixed = task1.name + "+" + task2.name;
    const double naive = rep.find("naive", mixed).nmse_db[i];
    const double cl = rep.find("cl", mixed).nmse_db[i];
    const double multi = rep.find("multitask", mixed).nmse_db[i];
    if (rep.naive_task1_degradation_db[i] < 3.0) throw CheckFailed("check: naive forgetting below 3 dB");
    if (!(multi <= cl && cl <= naive - 1.0)) throw CheckFailed("check: mixed-set ordering multitask <= cl <= naive - 1 dB fails");
    if (!(rep.cl_task1_degradation_db[i] < 3.0)) throw CheckFailed("check: CL task-I degradation is 3 dB or more");
  }
  write_text(table, to_csv(rep.rows), g.force);
  write_text(out / "retention.csv", retention_csv(rep), true);
  write_provenance(g, c, "report-forgetting",
                   {{"post_task1", a.post_task1}, {"naive", a.naive}, {"cl", a.cl}, {"multitask", a.multitask}});
  for (std::size_t i = 0; i < rep.snr_db.size(); ++i)
    std::cout << "snr " << fmt(rep.snr_db[i]) << " dB: task-I degradation naive " << fmt(rep.naive_task1_degradation_db[i])
              << " dB, cl " << fmt(rep.cl_task1_degradation_db[i]) << " dB\n";
  return 0;
}

template <template <typename> class Fn>
int dispatch(const Globals& g, const Args& a) {
  const RunConfig c = resolve(g, a);
  if (c.get("run.precision") == "f64") return Fn<double>::run(g, a);
  return Fn<float>::run(g, a);
}

template <typename T> struct Train { static int run(const Globals& g, const Args& a) { return run_train<T>(g, a, false); } };
template <typename T> struct Multi { static int run(const Globals& g, const Args& a) { return run_train<T>(g, a, true); } };
template <typename T> struct Fisher { static int run(const Globals& g, const Args& a) { return run_fisher<T>(g, a); } };
template <typename T> struct TrainCl { static int run(const Globals& g, const Args& a) { return run_train_cl<T>(g, a); } };
template <typename T> struct Eval { static int run(const Globals& g, const Args& a) { return run_eval<T>(g, a); } };
template <typename T> struct Report { static int run(const Globals& g, const Args& a) { return run_report<T>(g, a); } };

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  Args a;
  for (int i = 0; i < argc; ++i) g.command_line += (i ? " " : "") + std::string(i ? argv[i] : "cesr_cli");

  CLI::App app{"Pilot-based channel estimation: data generation, training with continual learning, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", g.config_path, "Config file (key = value with [sections])");
  app.add_option("--seed", g.seed, "Global seed (overrides run.seed)");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--force", g.force, "Overwrite existing outputs");
  app.add_option("--precision", g.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("--check", g.check, "Run property checks; exit 3 if one fails");
  app.add_option("--set", g.overrides, "Config override section.key=value (repeatable)");

  auto* gen = app.add_subcommand("gen", "Generate a dataset file");
  gen->add_option("--profile", a.profile, "tdl-a, tdl-d or a profile file");
  gen->add_option("--snr", a.snr, "Pilot SNR in dB");
  gen->add_option("--n", a.n, "Number of samples");
  gen->add_option("--split", a.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  gen->add_option("--file", a.file, "Output file (default: <out>/<profile>_<split>_snr<snr>.chds)");

  auto add_training = [&](CLI::App* sub) {
    sub->add_option("--epochs", a.epochs);
    sub->add_option("--batch-size", a.batch);
    sub->add_option("--lr", a.lr);
    sub->add_flag("--no-attention", a.no_attention, "Bypass both attention stages");
  };
  auto* train = app.add_subcommand("train", "Train on one task (optionally continuing from --model)");
  train->add_option("--data", a.data, "Training dataset")->required();
  train->add_option("--model", a.model, "Checkpoint to continue from");
  add_training(train);

  auto* fisher = app.add_subcommand("fisher", "Estimate the diagonal Fisher information of a trained model");
  fisher->add_option("--data", a.data, "Dataset of the task the model was trained on")->required();
  fisher->add_option("--model", a.model, "Trained checkpoint")->required();
  fisher->add_option("--task", a.task, "Task label stored in the file");
  fisher->add_option("--batch-size", a.batch);
  fisher->add_flag("--no-attention", a.no_attention);

  auto* train_cl = app.add_subcommand("train-cl", "Train on a new task with the EWC penalty");
  train_cl->add_option("--data", a.data, "Task-II dataset")->required();
  train_cl->add_option("--model", a.model, "Task-I checkpoint")->required();
  train_cl->add_option("--fisher", a.fisher, "Fisher file from the `fisher` stage");
  train_cl->add_option("--lambda", a.lambda);
  train_cl->add_option("--alpha", a.alpha);
  add_training(train_cl);

  auto* multi = app.add_subcommand("train-multitask", "Train on the union of two datasets");
  multi->add_option("--data", a.data, "Two datasets")->required()->expected(2);
  add_training(multi);

  auto* eval = app.add_subcommand("eval", "NMSE sweep over SNR");
  eval->add_option("--scheme", a.scheme, "ls, or a label for --model");
  eval->add_option("--model", a.model, "Checkpoint (not needed for ls)");
  eval->add_option("--profile", a.profiles, "Profile(s); two or more give an equal mixture");
  eval->add_option("--snr-list", a.snr_list, "Comma-separated SNRs in dB");
  eval->add_option("--mc", a.mc, "Channel realizations per SNR");
  eval->add_option("--file", a.file, "Output CSV (default: <out>/eval_<scheme>.csv)");
  eval->add_flag("--no-attention", a.no_attention);

  auto* report = app.add_subcommand("report-forgetting", "Four schemes on task I, task II and their mixture");
  report->add_option("--post-task1", a.post_task1)->required();
  report->add_option("--naive", a.naive)->required();
  report->add_option("--cl", a.cl)->required();
  report->add_option("--multitask", a.multitask)->required();
  report->add_option("--mc", a.mc);
  report->add_flag("--no-attention", a.no_attention);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return cmd_gen(g, a);
    if (*train) return dispatch<Train>(g, a);
    if (*fisher) return dispatch<Fisher>(g, a);
    if (*train_cl) return dispatch<TrainCl>(g, a);
    if (*multi) return dispatch<Multi>(g, a);
    if (*eval) return dispatch<Eval>(g, a);
    if (*report) return dispatch<Report>(g, a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
