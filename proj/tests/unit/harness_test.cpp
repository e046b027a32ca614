#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "tamseg/harness.hpp"
#include "tamseg/ops.hpp"

namespace tamseg {
namespace {

ExperimentConfig tiny(const std::string& id = "C1") {
  ExperimentConfig c;
  c.config_id = id;
  c.size = 32;
  c.channels = {8, 16, 32, 32, 32};
  c.frames = 2;
  c.epochs = 1;
  c.train_cases = 1;
  c.val_cases = 1;
  c.test_cases = 1;
  c.output_dir = "unused";
  return c;
}

TEST(ExperimentConfigTest, JsonRoundTripAndValidation) {
  ExperimentConfig c = tiny("C7");
  c.lr = 3.25e-4;
  c.tier = "poor";
  c.dropout_frames = "annotated";
  const std::string text = experiment_config_to_json(c);
  EXPECT_EQ(experiment_config_to_json(experiment_config_from_json(text)), text);
  EXPECT_THROW(experiment_config_from_json(R"({"epochs": 3, "colour": 1})"), ValidationError);
  EXPECT_EQ(experiment_config_from_json(R"({"epochs": 3})").epochs, 3u);
  c.frames = 6;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny();
  c.size = 40;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny();
  c.tier = "great";
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(HarnessTest, FrameSelectionKeepsEndpoints) {
  EXPECT_EQ(select_frames(3, 2), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(select_frames(3, 3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(select_frames(9, 3), (std::vector<std::size_t>{0, 4, 8}));
  EXPECT_THROW(select_frames(2, 3), ValidationError);
}

TEST(HarnessTest, ZeroLearningRateLeavesWeightsUnchanged) {
  ExperimentConfig c = tiny();
  c.lr = 0.0;
  SegmentationNet net(c.backbone(), 1);
  std::vector<std::vector<double>> before;
  for (const auto& t : net.parameters().trainable()) before.push_back(t.to_vector());
  auto train = generate_dataset(c.sequence_spec(0), 1);
  train_network(net, c, train, {});
  const auto after = net.parameters().trainable();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i].to_vector(), before[i]);
}

TEST(HarnessTest, TrainingReducesLossAndIsReproducible) {
  ExperimentConfig c = tiny();
  c.epochs = 30;
  c.train_cases = 2;
  c.tier = "good";
  auto train = generate_dataset(c.sequence_spec(0), c.train_cases);
  SegmentationNet a(c.backbone(), 3);
  SegmentationNet b(c.backbone(), 3);
  auto ra = train_network(a, c, train, {});
  auto rb = train_network(b, c, train, {});
  EXPECT_LT(ra.curve.back().train_loss, 0.5 * ra.step_losses.front());
  EXPECT_EQ(ra.step_losses, rb.step_losses);
}

TEST(HarnessTest, NonFiniteLossAborts) {
  ExperimentConfig c = tiny();
  auto train = generate_dataset(c.sequence_spec(0), 1);
  Tensor f = train[0].sequence.frames[0];
  f.set(5, NAN);
  SegmentationNet net(c.backbone(), 1);
  try {
    train_network(net, c, train, {});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST(HarnessTest, AttentionConfigTrainsAtEveryHeadCount) {
  for (std::size_t heads : {1, 2, 4, 8}) {
    ExperimentConfig c = tiny("C4");
    c.heads = heads;
    auto train = generate_dataset(c.sequence_spec(0), 1);
    SegmentationNet net(c.backbone(), 1);
    auto r = train_network(net, c, train, {});
    EXPECT_TRUE(std::isfinite(r.curve.back().train_loss)) << heads;
  }
}

TEST(HarnessTest, BestValidationWeightsAreKept) {
  ExperimentConfig c = tiny();
  c.epochs = 3;
  auto train = generate_dataset(c.sequence_spec(0), 1);
  auto val = generate_dataset(c.sequence_spec(1), 1);
  SegmentationNet net(c.backbone(), 1);
  const auto dir = std::filesystem::temp_directory_path() / "tamseg_train_ckpt_test";
  std::filesystem::remove_all(dir);
  auto r = train_network(net, c, train, val, dir);
  ASSERT_EQ(r.curve.size(), 3u);
  double best = INFINITY;
  for (const auto& e : r.curve) best = std::min(best, e.val_loss);
  EXPECT_EQ(r.best_val_loss, best);
  SegmentationNet saved = load_network(dir);
  EXPECT_EQ(saved.parameters().trainable().front().to_vector(), net.parameters().trainable().front().to_vector());
  EXPECT_NE(r.curve_csv().find("epoch,step,train_loss,val_loss"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(EvaluationTest, OracleIsPerfectAndEcdfEndsAtOne) {
  ExperimentConfig c = tiny();
  auto cases = generate_dataset(c.sequence_spec(2), 3);
  MetricReport r = evaluate_oracle(cases);
  ASSERT_EQ(r.rows.size(), 3u * 2 * 2);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.dsc, 1.0);
    EXPECT_EQ(row.hd_mm, 0.0);
  }
  const std::string e = ecdf_csv(r);
  EXPECT_NE(e.find("dsc,1,1,1\n"), std::string::npos);
}

TEST(EvaluationTest, BatchRowsEqualSingleCaseRows) {
  ExperimentConfig c = tiny("C3");
  auto cases = generate_dataset(c.sequence_spec(2), 3);
  SegmentationNet net(c.backbone(), 5);
  MetricReport all = evaluate(net, cases, 2);
  std::size_t k = 0;
  for (const auto& one : cases) {
    MetricReport single = evaluate(net, {one}, 2);
    for (const auto& row : single.rows) {
      const auto& b = all.rows[k++];
      EXPECT_EQ(row.case_id, b.case_id);
      EXPECT_EQ(row.dsc, b.dsc);
      EXPECT_EQ(row.hd_mm, b.hd_mm);
      EXPECT_EQ(row.masd_mm, b.masd_mm);
    }
  }
  EXPECT_EQ(k, all.rows.size());
}

TEST(AblationTest, ConfigAxisRowsCarryCosts) {
  ExperimentConfig c = tiny();
  auto rows = run_ablation("config", {"C1", "C3", "C4"}, c);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_LT(rows[0].flops, rows[1].flops);
  EXPECT_LT(rows[0].params, rows[1].params);
  EXPECT_LT(rows[1].params, rows[2].params);
  EXPECT_NE(ablation_csv(rows).find("C4"), std::string::npos);
  EXPECT_THROW(run_ablation("colour", {"red"}, c), ValidationError);
  EXPECT_THROW(run_ablation("heads", {"3"}, tiny("C3")), ValidationError);
}

TEST(AblationTest, HeadsAxisIsReproducible) {
  ExperimentConfig c = tiny("C3");
  auto a = run_ablation("heads", {"1", "8"}, c);
  auto b = run_ablation("heads", {"1", "8"}, c);
  EXPECT_EQ(ablation_csv(a), ablation_csv(b));
  EXPECT_EQ(a[1].config.heads, 8u);
}

TEST(GradcheckScopeTest, UnknownScopeIsRejected) { EXPECT_THROW(run_gradcheck("all"), ValidationError); }

}  // namespace
}  // namespace tamseg
