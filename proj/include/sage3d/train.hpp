#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sage3d/config.hpp"
#include "sage3d/evaluation.hpp"
#include "sage3d/geometry.hpp"
#include "sage3d/loss.hpp"
#include "sage3d/network.hpp"
#include "sage3d/optim.hpp"
#include "sage3d/postprocess.hpp"

namespace sage3d {

struct DatasetSpec {
  std::size_t flat_box = 67;
  std::size_t gable = 67;
  std::size_t hip = 66;
  std::size_t points = 256;
  double noise = 0.01;
  bool walls = true;

  std::size_t total() const { return flat_box + gable + hip; }
};

struct Sample {
  std::string id;
  RoofFamily family = RoofFamily::Gable;
  PointCloud cloud;
  Wireframe wireframe;
};

// Roofs in family order (flat boxes, gables, hips); ids are "%06d".
std::vector<Sample> make_dataset(const DatasetSpec& spec, std::uint64_t seed);

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> holdout;
};

// Seeded shuffle, then the last round(holdout·n) samples are held out.
DatasetSplit split_dataset(std::vector<Sample> samples, double holdout, std::uint64_t seed);

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  AdamWConfig adamw;
  OneCycleConfig schedule;
  PostprocessConfig post;
  DatasetSpec data;
  double match_threshold = 0.1;
  std::size_t epochs = 30;
  std::size_t batch = 8;
  std::size_t eval_every = 5;  // 0: only after the last epoch
  double holdout = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

ModelConfig model_config_from(const Config& cfg);
PostprocessConfig post_config_from(const Config& cfg);
TrainConfig train_config_from(const Config& cfg);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean sample loss over the epoch
  double lr = 0.0;        // rate of the epoch's last step
  std::optional<MetricReport> holdout;
};

// `epoch,loss,lr[,cf1,aco]`, no header.
std::string format_epoch(const EpochLog& entry);

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  std::optional<MetricReport> final_report;
  // Set when a non-finite value stopped the run; `model` then holds the
  // parameters from before the failing step.
  std::optional<std::string> numeric_failure;
};

// The generated roofs and split train(cfg) uses.
DatasetSplit training_data(const TrainConfig& cfg);

// The freshly initialised model a run with this config starts from.
Model initial_model(const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch = {});
TrainResult train(const TrainConfig& cfg, std::span<const Sample> train_set,
                  std::span<const Sample> holdout_set, const EpochCallback& on_epoch = {});

// Detection plus metrics per sample, aggregated with mean_report.
MetricReport evaluate(const Model& model, std::span<const Sample> samples,
                      const PostprocessConfig& post, double match_threshold, std::uint64_t seed,
                      std::vector<MetricReport>* per_sample = nullptr);

struct AblationRow {
  std::string architecture;
  std::vector<MetricReport> runs;  // one per seed
  MetricReport median;             // per-column medians over the runs
};

// The four cumulative variants, base PointNet++ grouping first.
std::vector<std::pair<std::string, ModelConfig>> ablation_variants(const ModelConfig& full);

// Trains every variant on the same data for each seed in `seeds`.
std::vector<AblationRow> ablate(const TrainConfig& cfg, std::span<const std::uint64_t> seeds);

// `architecture,cp,cr,f1` per row.
std::string format_ablation(std::span<const AblationRow> rows);

}  // namespace sage3d
