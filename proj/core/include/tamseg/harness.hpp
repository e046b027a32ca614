#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tamseg/cost.hpp"
#include "tamseg/gradcheck.hpp"
#include "tamseg/metrics.hpp"
#include "tamseg/synth.hpp"
#include "tamseg/unet.hpp"

namespace tamseg {

/// Library version string.
std::string version();

/// One training/evaluation run, data included. Every result file embeds the
/// resolved config.
struct ExperimentConfig {
  std::string config_id = "C1";
  std::size_t frames = 3;
  std::size_t heads = 1;
  std::size_t d_embed = 0;
  std::size_t levels = 5;
  std::vector<std::size_t> channels{16, 32, 64, 128, 256};
  std::size_t epochs = 25;
  std::size_t batch_size = 1;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  std::size_t size = 64;
  std::string tier = "good";
  std::string dropout_frames = "non_annotated";
  /// Dropout patch edge as a fraction of the image side.
  double dropout_size = 0.2;
  std::uint64_t data_seed = 42;
  std::size_t train_cases = 8;
  std::size_t val_cases = 2;
  std::size_t test_cases = 8;

  std::string output_dir = "runs/default";

  /// Throws ValidationError naming the offending field.
  void validate() const;
  BackboneConfig backbone() const;
  /// Generator spec of split 0 (train), 1 (validation) or 2 (test).
  SequenceSpec sequence_spec(std::size_t split) const;
};

std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const std::string& text);

/// Indices of `count` frames out of a sequence of `available`: ED, ES and
/// evenly spaced frames between them, in time order.
std::vector<std::size_t> select_frames(std::size_t available, std::size_t count);

/// Mean compound loss over the annotated frames of one case.
Tensor case_loss(const SegmentationNet& net, const Sequence& seq, std::size_t frames, bool training);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = 0.0;
  /// NaN without validation cases.
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::vector<double> step_losses;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;

  std::string curve_csv() const;
};

/// Adam on the compound loss of annotated frames. Keeps the weights of the
/// epoch with the lowest validation loss (the last epoch without validation
/// data) and, when `checkpoint_dir` is non-empty, saves them there.
/// A non-finite loss throws NumericError naming the epoch and step.
TrainResult train_network(SegmentationNet& net, const ExperimentConfig& config, const std::vector<DatasetCase>& train,
                          const std::vector<DatasetCase>& val, const std::filesystem::path& checkpoint_dir = {},
                          const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Metric rows for the annotated frames of every case, ids "<case>/frame<t>".
MetricReport evaluate(const SegmentationNet& net, const std::vector<DatasetCase>& cases, std::size_t frames);
/// Same rows with the ground truth as prediction.
MetricReport evaluate_oracle(const std::vector<DatasetCase>& cases);

/// Means over foreground classes of the per-class summaries.
struct Headline {
  double dsc = 0.0;
  double hd_mm = 0.0;
  double masd_mm = 0.0;
  std::size_t undefined = 0;
};
Headline headline(const MetricReport& report);

/// Rows "metric,class,value,fraction" for dsc, hd_mm and masd_mm.
std::string ecdf_csv(const MetricReport& report);

struct ExperimentResult {
  TrainResult training;
  MetricReport metrics;
  Headline summary;
  CostReport cost;
};

/// Generates the three splits in memory, trains and evaluates on test.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::function<void(const EpochRecord&)>& on_epoch = {});

struct AblationRow {
  std::string value;
  ExperimentConfig config;
  Headline summary;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  double final_loss = 0.0;
};

/// axis: config | heads | frames | tier. Every cell shares seeds.
std::vector<AblationRow> run_ablation(const std::string& axis, const std::vector<std::string>& values,
                                      const ExperimentConfig& base,
                                      const std::function<void(const AblationRow&)>& on_row = {});
ExperimentConfig apply_axis(const ExperimentConfig& base, const std::string& axis, const std::string& value);
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// scope: ops | tam | end2end.
std::vector<GradCheckResult> run_gradcheck(const std::string& scope);

}  // namespace tamseg
