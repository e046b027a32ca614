#include "tamseg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <random>
#include <sstream>

#include "tamseg/checkpoint.hpp"
#include "tamseg/grad_suites.hpp"
#include "tamseg/loss.hpp"
#include "tamseg/ops.hpp"
#include "tamseg/optim.hpp"

namespace tamseg {

using nlohmann::json;

std::string version() { return TAMSEG_VERSION; }

namespace {

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct Snapshot {
  std::vector<Tensor> values;
};

Snapshot snapshot(const ParameterSet& params) {
  Snapshot s;
  for (const auto& e : params.entries()) s.values.push_back(e.tensor.clone());
  return s;
}

void restore(const ParameterSet& params, const Snapshot& s) {
  const auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) copy_values(entries[i].tensor, s.values[i]);
}

std::vector<Tensor> pick(const std::vector<Tensor>& frames, const std::vector<std::size_t>& idx) {
  std::vector<Tensor> out;
  for (std::size_t i : idx) out.push_back(frames[i]);
  return out;
}

bool contains(const std::vector<std::size_t>& v, std::size_t x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("experiment config: " + msg); };
  find_configuration(config_id);
  if (frames < 2 || frames > 5) fail("frames must be in [2, 5]");
  if (epochs == 0) fail("epochs must be >= 1");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and >= 0");
  if (train_cases == 0) fail("train_cases must be >= 1");
  if (test_cases == 0) fail("test_cases must be >= 1");
  parse_tier(tier);
  parse_dropout_frames(dropout_frames);
  if (output_dir.empty()) fail("output_dir must not be empty");
  backbone().validate();
  sequence_spec(0).validate();
  if (size % backbone().extent_divisor() != 0) {
    fail("size " + std::to_string(size) + " must be divisible by " + std::to_string(backbone().extent_divisor()));
  }
}

BackboneConfig ExperimentConfig::backbone() const {
  BackboneConfig b;
  b.levels = levels;
  b.channels = channels;
  b.classes = kSynthClasses;
  b.heads = heads;
  b.d_embed = d_embed;
  return apply_configuration(b, config_id);
}

SequenceSpec ExperimentConfig::sequence_spec(std::size_t split) const {
  SequenceSpec s = SequenceSpec::with_tier(parse_tier(tier), data_seed + 1000003ULL * split, {size, size}, frames);
  s.dropout_frames = parse_dropout_frames(dropout_frames);
  s.dropout_size = dropout_size;
  return s;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  json j{{"config_id", c.config_id},     {"frames", c.frames},         {"heads", c.heads},
         {"d_embed", c.d_embed},         {"levels", c.levels},         {"channels", c.channels},
         {"epochs", c.epochs},           {"batch_size", c.batch_size}, {"lr", c.lr},
         {"seed", c.seed},               {"size", c.size},             {"tier", c.tier},
         {"dropout_frames", c.dropout_frames}, {"dropout_size", c.dropout_size}, {"data_seed", c.data_seed}, {"train_cases", c.train_cases},
         {"val_cases", c.val_cases},     {"test_cases", c.test_cases}, {"output_dir", c.output_dir}};
  return j.dump(2);
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    // Missing keys keep their defaults so partial config files work.
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("config_id", c.config_id);
    get("frames", c.frames);
    get("heads", c.heads);
    get("d_embed", c.d_embed);
    get("levels", c.levels);
    get("channels", c.channels);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("seed", c.seed);
    get("size", c.size);
    get("tier", c.tier);
    get("dropout_frames", c.dropout_frames);
    get("dropout_size", c.dropout_size);
    get("data_seed", c.data_seed);
    get("train_cases", c.train_cases);
    get("val_cases", c.val_cases);
    get("test_cases", c.test_cases);
    get("output_dir", c.output_dir);
    for (const auto& [key, value] : j.items()) {
      static const char* known[] = {"config_id", "frames", "heads", "d_embed", "levels", "channels",
                                    "epochs", "batch_size", "lr", "seed", "size", "tier", "dropout_frames", "dropout_size",
                                    "data_seed", "train_cases", "val_cases", "test_cases", "output_dir"};
      if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return key == k; })) {
        throw ValidationError("experiment config: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
  return c;
}

std::vector<std::size_t> select_frames(std::size_t available, std::size_t count) {
  if (count < 2 || count > available) {
    throw ValidationError("select_frames: cannot take " + std::to_string(count) + " of " + std::to_string(available) +
                          " frames");
  }
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < count; ++k) {
    idx.push_back(static_cast<std::size_t>(
        std::lround(static_cast<double>(k) * static_cast<double>(available - 1) / static_cast<double>(count - 1))));
  }
  return idx;
}

Tensor case_loss(const SegmentationNet& net, const Sequence& seq, std::size_t frames, bool training) {
  const auto idx = select_frames(seq.frames.size(), frames);
  auto probs = class_probabilities(net.forward(pick(seq.frames, idx), training));
  Tensor total;
  std::size_t used = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (!contains(seq.annotated, idx[k])) continue;
    Tensor truth = one_hot(seq.masks[idx[k]], net.config().classes, net.dtype());
    Tensor l = compound_loss(truth, probs[k]);
    total = total.defined() ? add(total, l) : l;
    ++used;
  }
  if (used == 0) throw ValidationError("case_loss: no annotated frame among the selected frames");
  return scale(total, 1.0 / static_cast<double>(used));
}

std::string TrainResult::curve_csv() const {
  std::ostringstream os;
  os << "epoch,step,train_loss,val_loss\n";
  for (const auto& r : curve) os << r.epoch << ',' << r.step << ',' << fmt(r.train_loss) << ',' << fmt(r.val_loss) << '\n';
  return os.str();
}

TrainResult train_network(SegmentationNet& net, const ExperimentConfig& config, const std::vector<DatasetCase>& train,
                          const std::vector<DatasetCase>& val, const std::filesystem::path& checkpoint_dir,
                          const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train.empty()) throw ValidationError("train: no training cases");
  const ParameterSet& params = net.parameters();
  AdamOptions opts;
  opts.lr = config.lr;
  Adam adam(params.trainable(), opts);
  std::mt19937_64 rng(config.seed ^ 0x5DEECE66DULL);

  TrainResult result;
  result.best_val_loss = INFINITY;
  Snapshot best;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      adam.zero_grad();
      double value = 0.0;
      {
        Tape tape;
        Tensor total;
        for (std::size_t b = start; b < end; ++b) {
          try {
            Tensor l = case_loss(net, train[order[b]].sequence, config.frames, true);
            total = total.defined() ? add(total, l) : l;
          } catch (const NumericError& e) {
            throw NumericError("train: diverged at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step + 1) + ", case " + train[order[b]].id + ": " + e.what());
          }
        }
        Tensor loss = scale(total, 1.0 / static_cast<double>(end - start));
        value = loss.item();
        ++step;
        if (!std::isfinite(value)) {
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + " (lr " + fmt(config.lr) + ")");
        }
        tape.backward(loss);
      }
      adam.step();
      result.step_losses.push_back(value);
      epoch_loss += value;
      ++batches;
    }
    EpochRecord rec{epoch, step, epoch_loss / static_cast<double>(batches), NAN};
    if (!val.empty()) {
      NoGradScope no_grad;
      double v = 0.0;
      for (const auto& c : val) v += case_loss(net, c.sequence, config.frames, false).item();
      rec.val_loss = v / static_cast<double>(val.size());
      if (!std::isfinite(rec.val_loss)) {
        throw NumericError("train: non-finite validation loss at epoch " + std::to_string(epoch));
      }
    }
    const bool improved = val.empty() || rec.val_loss < result.best_val_loss;
    if (improved) {
      result.best_epoch = epoch;
      result.best_val_loss = val.empty() ? NAN : rec.val_loss;
      best = snapshot(params);
      if (!checkpoint_dir.empty()) save_network(checkpoint_dir, net);
    }
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  restore(params, best);
  return result;
}

MetricReport evaluate(const SegmentationNet& net, const std::vector<DatasetCase>& cases, std::size_t frames) {
  NoGradScope no_grad;
  MetricReport report;
  for (const auto& c : cases) {
    const auto idx = select_frames(c.sequence.frames.size(), frames);
    auto logits = net.forward(pick(c.sequence.frames, idx), false);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (!contains(c.sequence.annotated, idx[k])) continue;
      const SegmentationMask& truth = c.sequence.masks[idx[k]];
      SegmentationMask pred = argmax_labels(logits[k], truth.spacing);
      report.add_case(c.id + "/frame" + std::to_string(idx[k]), truth, pred, net.config().classes);
    }
  }
  return report;
}

MetricReport evaluate_oracle(const std::vector<DatasetCase>& cases) {
  MetricReport report;
  for (const auto& c : cases) {
    for (std::size_t t : c.sequence.annotated) {
      const auto& m = c.sequence.masks[t];
      report.add_case(c.id + "/frame" + std::to_string(t), m, m, kSynthClasses);
    }
  }
  return report;
}

Headline headline(const MetricReport& report) {
  Headline h;
  std::size_t defined = 0;
  const auto summary = report.summarize();
  for (const auto& s : summary) {
    h.dsc += s.mean_dsc;
    h.undefined += s.undefined;
    if (std::isfinite(s.mean_hd_mm)) {
      h.hd_mm += s.mean_hd_mm;
      h.masd_mm += s.mean_masd_mm;
      ++defined;
    }
  }
  if (!summary.empty()) h.dsc /= static_cast<double>(summary.size());
  if (defined > 0) {
    h.hd_mm /= static_cast<double>(defined);
    h.masd_mm /= static_cast<double>(defined);
  } else {
    h.hd_mm = h.masd_mm = NAN;
  }
  return h;
}

std::string ecdf_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "metric,class,value,fraction\n";
  std::vector<std::size_t> classes;
  for (const auto& r : report.rows) {
    if (!contains(classes, r.cls)) classes.push_back(r.cls);
  }
  std::sort(classes.begin(), classes.end());
  for (const char* metric : {"dsc", "hd_mm", "masd_mm"}) {
    const std::string m = metric;
    for (std::size_t cls : classes) {
      std::vector<double> values;
      for (const auto& r : report.rows) {
        if (r.cls != cls) continue;
        if (m == "dsc") values.push_back(r.dsc);
        if (m == "hd_mm" && r.hd_mm) values.push_back(*r.hd_mm);
        if (m == "masd_mm" && r.masd_mm) values.push_back(*r.masd_mm);
      }
      for (const auto& [v, f] : ecdf(values)) os << m << ',' << cls << ',' << fmt(v) << ',' << fmt(f) << '\n';
    }
  }
  return os.str();
}

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  const auto train = generate_dataset(config.sequence_spec(0), config.train_cases);
  const auto val = generate_dataset(config.sequence_spec(1), config.val_cases);
  const auto test = generate_dataset(config.sequence_spec(2), config.test_cases);
  SegmentationNet net(config.backbone(), config.seed);
  ExperimentResult r;
  r.training = train_network(net, config, train, val, {}, on_epoch);
  r.metrics = evaluate(net, test, config.frames);
  r.summary = headline(r.metrics);
  r.cost = network_cost(config.backbone(), {config.size, config.size}, config.frames, config.config_id);
  return r;
}

ExperimentConfig apply_axis(const ExperimentConfig& base, const std::string& axis, const std::string& value) {
  ExperimentConfig c = base;
  auto number = [&]() -> std::size_t {
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ValidationError("ablate: '" + value + "' is not a valid " + axis + " value");
    }
  };
  if (axis == "config") {
    c.config_id = value;
  } else if (axis == "heads") {
    c.heads = number();
  } else if (axis == "frames") {
    c.frames = number();
  } else if (axis == "tier") {
    c.tier = value;
  } else {
    throw ValidationError("ablate: unknown axis '" + axis + "' (config|heads|frames|tier)");
  }
  c.validate();
  return c;
}

std::vector<AblationRow> run_ablation(const std::string& axis, const std::vector<std::string>& values,
                                      const ExperimentConfig& base,
                                      const std::function<void(const AblationRow&)>& on_row) {
  if (values.empty()) throw ValidationError("ablate: no values");
  std::vector<ExperimentConfig> cells;
  for (const auto& v : values) cells.push_back(apply_axis(base, axis, v));
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    ExperimentResult r = run_experiment(cells[i]);
    AblationRow row{values[i], cells[i], r.summary, r.cost.total_flops(), r.cost.total_params(),
                    r.training.curve.back().train_loss};
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "value,config,frames,heads,tier,dsc,hd_mm,masd_mm,flops,params,final_loss\n";
  for (const auto& r : rows) {
    os << r.value << ',' << r.config.config_id << ',' << r.config.frames << ',' << r.config.heads << ','
       << r.config.tier << ',' << fmt(r.summary.dsc) << ',' << fmt(r.summary.hd_mm) << ',' << fmt(r.summary.masd_mm)
       << ',' << r.flops << ',' << r.params << ',' << fmt(r.final_loss) << '\n';
  }
  return os.str();
}

std::vector<GradCheckResult> run_gradcheck(const std::string& scope) {
  if (scope == "ops") return check_op_suite(20);
  if (scope == "tam") {
    GradCheckResult worst;
    worst.name = "tam";
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      GradCheckResult r = check_tam_suite(seed);
      worst.checked += r.checked;
      worst.passed = worst.passed && r.passed;
      if (!r.passed || r.max_rel_error > worst.max_rel_error) {
        worst.max_rel_error = std::max(worst.max_rel_error, r.max_rel_error);
        worst.worst = "seed " + std::to_string(seed) + ": " + r.worst;
      }
    }
    return {worst};
  }
  if (scope == "end2end") return {check_end_to_end_suite(9)};
  throw ValidationError("gradcheck: unknown scope '" + scope + "' (ops|tam|end2end)");
}

}  // namespace tamseg
