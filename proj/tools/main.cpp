// tamseg: generate synthetic echo sequences, train and evaluate temporal
// attention segmentation networks, run ablations, gradient checks and cost
// reports.
//
// Exit codes: 0 success, 1 validation/usage error, 2 runtime or numeric failure.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "tamseg/checkpoint.hpp"
#include "tamseg/cost.hpp"
#include "tamseg/harness.hpp"
#include "tamseg/synth.hpp"
#include "tamseg/tnsr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tamseg;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

/// Experiment flags bound to a scratch struct; only flags given on the command
/// line override the --config file (or the defaults).
class ExperimentFlags {
 public:
  void add(CLI::App* app, bool data_flags) {
    config_ = app->add_option("--config", config_file_, "JSON experiment config; flags override it")
                  ->check(CLI::ExistingFile);
    bind(app->add_option("--config-id", f_.config_id, "Configuration C1..C11"),
         [](auto& c, auto& f) { c.config_id = f.config_id; });
    bind(app->add_option("--frames", f_.frames, "Frames per sample T (2-5)"), [](auto& c, auto& f) { c.frames = f.frames; });
    bind(app->add_option("--heads", f_.heads, "Attention heads"), [](auto& c, auto& f) { c.heads = f.heads; });
    bind(app->add_option("--d-embed", f_.d_embed, "Attention width (0: channels at the slot)"),
         [](auto& c, auto& f) { c.d_embed = f.d_embed; });
    bind(app->add_option("--levels", f_.levels, "UNet levels"), [](auto& c, auto& f) { c.levels = f.levels; });
    bind(app->add_option("--channels", f_.channels, "Channel widths per level")->delimiter(','),
         [](auto& c, auto& f) { c.channels = f.channels; });
    bind(app->add_option("--epochs", f_.epochs, "Training epochs"), [](auto& c, auto& f) { c.epochs = f.epochs; });
    bind(app->add_option("--batch-size", f_.batch_size, "Cases per optimizer step"),
         [](auto& c, auto& f) { c.batch_size = f.batch_size; });
    bind(app->add_option("--lr", f_.lr, "Adam learning rate"), [](auto& c, auto& f) { c.lr = f.lr; });
    bind(app->add_option("--seed", f_.seed, "Weight and shuffling seed"), [](auto& c, auto& f) { c.seed = f.seed; });
    if (data_flags) {
      bind(app->add_option("--size", f_.size, "Image side in pixels"), [](auto& c, auto& f) { c.size = f.size; });
      bind(app->add_option("--tier", f_.tier, "Quality tier good|medium|poor"), [](auto& c, auto& f) { c.tier = f.tier; });
      bind(app->add_option("--dropout-frames", f_.dropout_frames, "non_annotated|annotated|all"),
           [](auto& c, auto& f) { c.dropout_frames = f.dropout_frames; });
      bind(app->add_option("--dropout-size", f_.dropout_size, "Dropout patch edge as a fraction of the side"),
           [](auto& c, auto& f) { c.dropout_size = f.dropout_size; });
      bind(app->add_option("--data-seed", f_.data_seed, "Dataset seed"), [](auto& c, auto& f) { c.data_seed = f.data_seed; });
      bind(app->add_option("--train-cases", f_.train_cases, "Training cases"),
           [](auto& c, auto& f) { c.train_cases = f.train_cases; });
      bind(app->add_option("--test-cases", f_.test_cases, "Test cases"), [](auto& c, auto& f) { c.test_cases = f.test_cases; });
    }
    bind(app->add_option("--val-cases", f_.val_cases, "Validation cases"), [](auto& c, auto& f) { c.val_cases = f.val_cases; });
    bind(app->add_option("--out", f_.output_dir, "Output directory")->required(),
         [](auto& c, auto& f) { c.output_dir = f.output_dir; });
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config_->count() > 0 ? experiment_config_from_json(read_file(config_file_)) : ExperimentConfig{};
    for (const auto& [opt, apply] : setters_) {
      if (opt->count() > 0) apply(c, f_);
    }
    c.validate();
    return c;
  }

 private:
  using Setter = std::function<void(ExperimentConfig&, const ExperimentConfig&)>;
  void bind(CLI::Option* opt, Setter s) {
    opt->capture_default_str();
    setters_.emplace_back(opt, std::move(s));
  }

  ExperimentConfig f_;
  std::string config_file_;
  CLI::Option* config_ = nullptr;
  std::vector<std::pair<CLI::Option*, Setter>> setters_;
};

json provenance(const ExperimentConfig& c) {
  return {{"version", version()}, {"config", json::parse(experiment_config_to_json(c))}};
}

/// CSV with a leading comment line naming the tool version and resolved config.
std::string with_header(const json& prov, const std::string& csv) {
  return "# tamseg " + version() + " " + prov.at("config").dump() + "\n" + csv;
}

void write(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  atomic_write(path, text);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_headline(const Headline& h) {
  std::cout << "mean DSC " << fmt(h.dsc) << "  HD " << fmt(h.hd_mm) << " mm  MASD " << fmt(h.masd_mm) << " mm";
  if (h.undefined > 0) std::cout << "  (" << h.undefined << " undefined HD/MASD entries)";
  std::cout << '\n';
}

json metrics_json(const MetricReport& report, const json& prov) {
  json j = prov;
  j["metrics"] = json::parse(report.to_json());
  const Headline h = headline(report);
  j["headline"] = {{"dsc", h.dsc}, {"hd_mm", std::isfinite(h.hd_mm) ? json(h.hd_mm) : json(nullptr)},
                   {"masd_mm", std::isfinite(h.masd_mm) ? json(h.masd_mm) : json(nullptr)}, {"undefined", h.undefined}};
  return j;
}

// ---- gen ----

struct GenArgs {
  std::uint64_t seed = 42;
  std::size_t t = 3;
  std::size_t size = 64;
  std::size_t depth = 0;
  std::string tier = "good";
  std::string dropout_frames = "non_annotated";
  double dropout_size = 0.2;
  std::size_t cases = 1;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  SequenceSpec spec = SequenceSpec::with_tier(parse_tier(a.tier), a.seed, {a.size, a.size}, a.t);
  if (a.depth > 0) spec.extents = {a.depth, a.size, a.size};
  spec.dropout_frames = parse_dropout_frames(a.dropout_frames);
  spec.dropout_size = a.dropout_size;
  spec.validate();
  if (a.cases == 0) throw ValidationError("gen: --cases must be >= 1");
  save_dataset(a.out, spec, generate_dataset(spec, a.cases));
  std::cout << "wrote " << a.cases << " case(s) of " << a.t << " frames to " << a.out << '\n';
  return kOk;
}

// ---- train ----

int cmd_train(const ExperimentConfig& cfg, const std::string& data_dir, const std::string& val_dir) {
  LoadedDataset data = load_dataset(data_dir);
  std::vector<DatasetCase> train = std::move(data.cases);
  std::vector<DatasetCase> val;
  if (!val_dir.empty()) {
    val = load_dataset(val_dir).cases;
  } else if (cfg.val_cases > 0 && train.size() > cfg.val_cases) {
    val.assign(train.end() - static_cast<std::ptrdiff_t>(cfg.val_cases), train.end());
    train.resize(train.size() - cfg.val_cases);
  }
  if (train.empty()) throw ValidationError("train: dataset has no cases");
  const Shape& s = train.front().sequence.frames.front().shape();
  if (s.size() != 3) throw ValidationError("train: only 2D datasets are supported by the backbone");
  if (train.front().sequence.frames.size() < cfg.frames) {
    throw ValidationError("train: dataset has " + std::to_string(train.front().sequence.frames.size()) +
                          " frames per case, --frames asks for " + std::to_string(cfg.frames));
  }
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  const json prov = provenance(cfg);
  write(out / "config.json", experiment_config_to_json(cfg) + "\n");

  SegmentationNet net(cfg.backbone(), cfg.seed);
  auto log = [](const EpochRecord& r) {
    std::cout << "epoch " << r.epoch << " step " << r.step << " train " << fmt(r.train_loss);
    if (std::isfinite(r.val_loss)) std::cout << " val " << fmt(r.val_loss);
    std::cout << std::endl;
  };
  TrainResult r = train_network(net, cfg, train, val, out / "checkpoint", log);
  write(out / "loss_curve.csv", with_header(prov, r.curve_csv()));
  json summary = prov;
  summary["data"] = data_dir;
  summary["train_cases"] = train.size();
  summary["val_cases"] = val.size();
  summary["steps"] = r.step_losses.size();
  summary["initial_loss"] = r.step_losses.front();
  summary["final_loss"] = r.curve.back().train_loss;
  summary["best_epoch"] = r.best_epoch;
  summary["best_val_loss"] = std::isfinite(r.best_val_loss) ? json(r.best_val_loss) : json(nullptr);
  write(out / "train.json", summary.dump(2) + "\n");
  std::cout << "best epoch " << r.best_epoch << "; checkpoint in " << (out / "checkpoint").string() << '\n';
  return kOk;
}

// ---- eval ----

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, std::size_t frames, bool oracle,
             const std::string& out_dir) {
  LoadedDataset data = load_dataset(data_dir);
  ExperimentConfig cfg;
  cfg.output_dir = out_dir;
  MetricReport report;
  if (oracle) {
    cfg.config_id = "oracle";
    report = evaluate_oracle(data.cases);
  } else {
    if (checkpoint.empty()) throw ValidationError("eval: --checkpoint is required unless --oracle is given");
    SegmentationNet net = load_network(checkpoint);
    if (net.config().classes != kSynthClasses) {
      throw ValidationError("eval: checkpoint predicts " + std::to_string(net.config().classes) +
                            " classes, dataset has " + std::to_string(kSynthClasses));
    }
    const fs::path run_config = fs::path(checkpoint).parent_path() / "config.json";
    if (fs::exists(run_config)) cfg = experiment_config_from_json(read_file(run_config));
    cfg.output_dir = out_dir;
    if (frames > 0) cfg.frames = frames;
    report = evaluate(net, data.cases, cfg.frames);
  }
  json prov{{"version", version()}, {"config", json::parse(experiment_config_to_json(cfg))},
            {"checkpoint", oracle ? json(nullptr) : json(checkpoint)}, {"data", data_dir}};
  const fs::path out = out_dir;
  write(out / "metrics.csv", with_header(prov, report.to_csv()));
  write(out / "ecdf.csv", with_header(prov, ecdf_csv(report)));
  write(out / "metrics.json", metrics_json(report, prov).dump(2) + "\n");
  print_headline(headline(report));
  return kOk;
}

// ---- ablate ----

int cmd_ablate(const ExperimentConfig& base, const std::string& axis, const std::vector<std::string>& values) {
  // Validate every cell before spending time on training.
  for (const auto& v : values) apply_axis(base, axis, v);
  auto rows = run_ablation(axis, values, base, [](const AblationRow& r) {
    std::cout << r.value << ": ";
    print_headline(r.summary);
  });
  const json prov = provenance(base);
  json j = prov;
  j["axis"] = axis;
  j["rows"] = json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"value", r.value},
                         {"config", json::parse(experiment_config_to_json(r.config))},
                         {"dsc", r.summary.dsc},
                         {"hd_mm", std::isfinite(r.summary.hd_mm) ? json(r.summary.hd_mm) : json(nullptr)},
                         {"masd_mm", std::isfinite(r.summary.masd_mm) ? json(r.summary.masd_mm) : json(nullptr)},
                         {"flops", r.flops},
                         {"params", r.params},
                         {"final_loss", r.final_loss}});
  }
  const fs::path out = base.output_dir;
  write(out / "ablation.csv", with_header(prov, ablation_csv(rows)));
  write(out / "ablation.json", j.dump(2) + "\n");
  return kOk;
}

// ---- gradcheck ----

int cmd_gradcheck(const std::string& scope) {
  const auto results = run_gradcheck(scope);
  bool ok = true;
  for (const auto& r : results) {
    char line[200];
    std::snprintf(line, sizeof line, "%-24s %-4s max rel error %.3e over %zu elements", r.name.c_str(),
                  r.passed ? "ok" : "FAIL", r.max_rel_error, r.checked);
    std::cout << line;
    if (!r.passed) std::cout << "  (" << r.worst << ")";
    std::cout << '\n';
    ok = ok && r.passed;
  }
  std::cout << (ok ? "all passed" : "gradient check failed") << '\n';
  return ok ? kOk : kRuntime;
}

// ---- cost ----

struct CostArgs {
  std::vector<std::string> configs{"C1", "C3", "C2"};
  std::size_t size = 64;
  std::size_t frames = 2;
  std::size_t levels = 5;
  std::vector<std::size_t> channels{16, 32, 64, 128, 256};
  std::size_t heads = 1;
  std::string compare;
  std::string out;
};

int cmd_cost(const CostArgs& a) {
  BackboneConfig base;
  base.levels = a.levels;
  base.channels = a.channels;
  base.heads = a.heads;
  json j{{"version", version()},
         {"config", {{"size", a.size}, {"frames", a.frames}, {"levels", a.levels}, {"channels", a.channels},
                     {"heads", a.heads}}},
         {"reports", json::array()}};
  for (const auto& id : a.configs) {
    CostReport r = network_cost(apply_configuration(base, id), {a.size, a.size}, a.frames, id);
    std::cout << r.to_table() << '\n';
    j["reports"].push_back(json::parse(r.to_json()));
  }
  if (!a.compare.empty()) {
    auto cmp = compare_architectures(base, {a.size, a.size}, a.frames, a.compare);
    std::cout << cmp.to_table();
    j["comparison"] = json::parse(cmp.to_json());
  }
  if (!a.out.empty()) write(fs::path(a.out) / "cost.json", j.dump(2) + "\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal attention segmentation toolkit"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  gen_cmd->add_option("--t", gen.t, "Frames per sequence (2-16)")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Height and width in pixels (>= 32)")->capture_default_str();
  gen_cmd->add_option("--depth", gen.depth, "Depth for 3D sequences (0: 2D)")->capture_default_str();
  gen_cmd->add_option("--tier", gen.tier, "good|medium|poor")->capture_default_str();
  gen_cmd->add_option("--dropout-frames", gen.dropout_frames, "non_annotated|annotated|all")->capture_default_str();
  gen_cmd->add_option("--dropout-size", gen.dropout_size, "Dropout patch edge as a fraction of the side")
      ->capture_default_str();
  gen_cmd->add_option("--cases", gen.cases, "Number of sequences")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  ExperimentFlags train_flags;
  std::string train_data, train_val;
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset directory");
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--val", train_val, "Validation dataset (default: hold out --val-cases)");
  train_flags.add(train_cmd, false);

  std::string eval_ckpt, eval_data, eval_out;
  std::size_t eval_frames = 0;
  bool eval_oracle = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint directory written by train");
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--frames", eval_frames, "Frames per sample (default: from the run config)");
  eval_cmd->add_flag("--oracle", eval_oracle, "Score the ground truth against itself");
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();

  ExperimentFlags ablate_flags;
  std::string axis;
  std::vector<std::string> values;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate one cell per axis value");
  ablate_cmd->add_option("--axis", axis, "config|heads|frames|tier")->required();
  ablate_cmd->add_option("--values", values, "Comma-separated axis values")->delimiter(',')->required();
  ablate_flags.add(ablate_cmd, true);

  std::string scope = "ops";
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  grad_cmd->add_option("--scope", scope, "ops|tam|end2end")->capture_default_str();

  CostArgs cost;
  auto* cost_cmd = app.add_subcommand("cost", "MACs, FLOPs and parameter counts");
  cost_cmd->add_option("--configs", cost.configs, "Configurations to report")->delimiter(',')->capture_default_str();
  cost_cmd->add_option("--size", cost.size, "Image side")->capture_default_str();
  cost_cmd->add_option("--frames", cost.frames, "Frames T")->capture_default_str();
  cost_cmd->add_option("--levels", cost.levels, "UNet levels")->capture_default_str();
  cost_cmd->add_option("--channels", cost.channels, "Channel widths")->delimiter(',')->capture_default_str();
  cost_cmd->add_option("--heads", cost.heads, "Attention heads")->capture_default_str();
  cost_cmd->add_option("--compare", cost.compare, "Also compare C1, C2 and this TAM configuration");
  cost_cmd->add_option("--out", cost.out, "Directory for cost.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*train_cmd) return cmd_train(train_flags.resolve(), train_data, train_val);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_frames, eval_oracle, eval_out);
    if (*ablate_cmd) return cmd_ablate(ablate_flags.resolve(), axis, values);
    if (*grad_cmd) return cmd_gradcheck(scope);
    if (*cost_cmd) return cmd_cost(cost);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
