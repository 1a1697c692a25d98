#include "sage3d/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "sage3d/errors.hpp"
#include "sage3d/io.hpp"
#include "sage3d/random.hpp"

namespace sage3d {

namespace {

// Stream tags for derive_seed.
enum Stream : std::uint64_t {
  kRoofSpec = 1,
  kRoofSample,
  kSplit,
  kData,
  kInit,
  kShuffle,
  kForward,
  kEval,
};

std::string sample_id(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

template <typename Range>
bool all_finite(const Range& values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::vector<std::vector<double>> snapshot(const ParameterSet& params) {
  std::vector<std::vector<double>> out;
  for (const auto& e : params.entries()) out.emplace_back(e.tensor.values().begin(), e.tensor.values().end());
  return out;
}

void restore(ParameterSet& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Tensor t = params.entries()[i].tensor;
    std::copy(values[i].begin(), values[i].end(), t.mutable_values().begin());
  }
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<Sample> make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.total() == 0) throw InvalidArgument("dataset: no roofs requested");
  if (spec.points == 0) throw InvalidArgument("dataset: points must be positive");
  std::vector<Sample> out;
  out.reserve(spec.total());
  const std::pair<RoofFamily, std::size_t> plan[] = {
      {RoofFamily::FlatBox, spec.flat_box}, {RoofFamily::Gable, spec.gable}, {RoofFamily::Hip, spec.hip}};
  for (const auto& [family, count] : plan) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = out.size();
      const RoofSpec rs =
          random_roof_spec(family, spec.points, spec.noise, spec.walls, derive_seed(seed, kRoofSpec, idx));
      auto [cloud, wf] = synth_roof(rs, derive_seed(seed, kRoofSample, idx));
      out.push_back(Sample{sample_id(idx), family, std::move(cloud), std::move(wf)});
    }
  }
  return out;
}

DatasetSplit split_dataset(std::vector<Sample> samples, double holdout, std::uint64_t seed) {
  if (!(holdout >= 0.0 && holdout < 1.0)) throw InvalidArgument("holdout fraction must be in [0, 1)");
  Rng rng(seed);
  for (std::size_t i = samples.size(); i > 1; --i) {
    std::swap(samples[i - 1], samples[uniform_index(rng, i)]);
  }
  std::size_t held = static_cast<std::size_t>(std::llround(holdout * static_cast<double>(samples.size())));
  if (samples.size() > 0) held = std::min(held, samples.size() - 1);
  DatasetSplit split;
  const auto cut = samples.end() - static_cast<std::ptrdiff_t>(held);
  split.train.assign(std::make_move_iterator(samples.begin()), std::make_move_iterator(cut));
  split.holdout.assign(std::make_move_iterator(cut), std::make_move_iterator(samples.end()));
  return split;
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (epochs == 0) throw InvalidArgument("train.epochs must be positive");
  if (batch == 0) throw InvalidArgument("train.batch must be positive");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw InvalidArgument("train.holdout must be in [0, 1)");
  if (data.total() == 0) throw InvalidArgument("dataset must contain at least one roof");
  if (data.points == 0) throw InvalidArgument("data.points must be positive");
  if (!(data.noise >= 0.0)) throw InvalidArgument("data.noise must be non-negative");
  if (!(match_threshold > 0.0)) throw InvalidArgument("eval.match_threshold must be positive");
  if (!(post.tau >= 0.0 && post.tau <= 1.0)) throw InvalidArgument("post.tau must be in [0, 1]");
  if (!(post.eps > 0.0)) throw InvalidArgument("post.eps must be positive");
  if (post.min_pts == 0) throw InvalidArgument("post.min_pts must be at least 1");
  if (!(schedule.max_lr > 0.0)) throw InvalidArgument("train.max_lr must be positive");
  if (!(schedule.warmup_fraction >= 0.0 && schedule.warmup_fraction < 1.0)) {
    throw InvalidArgument("train.warmup must be in [0, 1)");
  }
  if (!(schedule.initial_div > 0.0 && schedule.final_div > 0.0)) {
    throw InvalidArgument("schedule divisors must be positive");
  }
  if (!(adamw.weight_decay >= 0.0)) throw InvalidArgument("train.weight_decay must be non-negative");
}

ModelConfig model_config_from(const Config& cfg) {
  ModelConfig m;
  m.input_points = cfg.get_count("model.points");
  const auto factors = cfg.get_counts("model.factors");
  if (factors.size() != 4) throw InvalidArgument("model.factors needs exactly 4 entries");
  std::copy(factors.begin(), factors.end(), m.factors.begin());
  m.msg_k = cfg.get_counts("model.msg_k");
  m.sa4_k = cfg.get_count("model.sa4_k");
  m.gnn_k = cfg.get_count("model.gnn_k");
  const auto widths = cfg.get_counts("model.widths");
  if (widths.size() != 4) throw InvalidArgument("model.widths needs exactly 4 entries");
  std::copy(widths.begin(), widths.end(), m.widths.begin());
  m.decoder_width = cfg.get_count("model.decoder_width");
  m.head_hidden = cfg.get_count("model.head_hidden");
  m.point_transformer = cfg.get_bool("model.point_transformer");
  m.sa4_guided = cfg.get_bool("model.sa4_guided");
  m.cgnn_sa2 = cfg.get_bool("model.cgnn_sa2");
  m.cgnn_sa4 = cfg.get_bool("model.cgnn_sa4");
  m.guide_eps = cfg.get_real("model.guide_eps");
  m.fp_eps = cfg.get_real("model.fp_eps");
  m.label_d_thresh = cfg.get_real("loss.d_thresh");
  m.validate();
  return m;
}

PostprocessConfig post_config_from(const Config& cfg) {
  PostprocessConfig p;
  p.tau = cfg.get_real("post.tau");
  p.eps = cfg.get_real("post.eps");
  p.min_pts = cfg.get_count("post.min_pts");
  return p;
}

TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.model = model_config_from(cfg);
  t.loss.alpha = cfg.get_real("loss.alpha");
  t.loss.gamma = cfg.get_real("loss.gamma");
  t.loss.beta = cfg.get_real("loss.beta");
  t.loss.d_thresh = cfg.get_real("loss.d_thresh");
  t.loss.delta = cfg.get_real("loss.delta");
  t.loss.cls_weight = cfg.get_real("loss.cls_weight");
  t.loss.offset_weight = cfg.get_real("loss.offset_weight");
  t.adamw.weight_decay = cfg.get_real("train.weight_decay");
  t.schedule.max_lr = cfg.get_real("train.max_lr");
  t.schedule.warmup_fraction = cfg.get_real("train.warmup");
  t.schedule.initial_div = cfg.get_real("train.initial_div");
  t.schedule.final_div = cfg.get_real("train.final_div");
  t.post = post_config_from(cfg);
  t.data.flat_box = cfg.get_count("data.flat_box");
  t.data.gable = cfg.get_count("data.gable");
  t.data.hip = cfg.get_count("data.hip");
  t.data.points = cfg.get_count("data.points");
  t.data.noise = cfg.get_real("data.noise");
  t.data.walls = cfg.get_bool("data.walls");
  t.match_threshold = cfg.get_real("eval.match_threshold");
  t.epochs = cfg.get_count("train.epochs");
  t.batch = cfg.get_count("train.batch");
  t.eval_every = cfg.get_count("train.eval_every");
  t.holdout = cfg.get_real("train.holdout");
  t.seed = cfg.get_u64("seed");
  t.validate();
  return t;
}

std::string format_epoch(const EpochLog& entry) {
  std::string line = std::to_string(entry.epoch) + "," + format_real(entry.loss) + "," + format_real(entry.lr);
  if (entry.holdout) line += "," + format_real(entry.holdout->cf1) + "," + format_real(entry.holdout->aco);
  return line;
}

MetricReport evaluate(const Model& model, std::span<const Sample> samples,
                      const PostprocessConfig& post, double match_threshold, std::uint64_t seed,
                      std::vector<MetricReport>* per_sample) {
  std::vector<MetricReport> reports(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    try {
      const CornerSet corners = detect_corners(model, samples[u].cloud, post, derive_seed(seed, kEval, u));
      reports[u] = corner_metrics(corners, samples[u].wireframe, match_threshold);
    } catch (...) {
      errors[u] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  const MetricReport mean = mean_report(reports);
  if (per_sample) *per_sample = std::move(reports);
  return mean;
}

Model initial_model(const TrainConfig& cfg) { return Model(cfg.model, derive_seed(cfg.seed, kInit, 0)); }

DatasetSplit training_data(const TrainConfig& cfg) {
  return split_dataset(make_dataset(cfg.data, derive_seed(cfg.seed, kData, 0)), cfg.holdout,
                       derive_seed(cfg.seed, kSplit, 0));
}

TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const DatasetSplit split = training_data(cfg);
  return train(cfg, split.train, split.holdout, on_epoch);
}

TrainResult train(const TrainConfig& cfg, std::span<const Sample> train_set,
                  std::span<const Sample> holdout_set, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw InvalidArgument("train: empty training set");

  Model model = initial_model(cfg);
  ParameterSet& params = model.parameters();
  AdamW optimizer(params, cfg.adamw);

  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;

  std::vector<EpochLog> log;
  std::optional<MetricReport> final_report;
  std::optional<std::string> failure;
  std::size_t step = 0;

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !failure; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg.seed, kShuffle, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle, i)]);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch) {
      const std::size_t count = std::min(cfg.batch, n - begin);
      std::vector<ag::GradientMap> grads(count);
      std::vector<double> losses(count, 0.0);
      std::vector<std::exception_ptr> errors(count);

#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(count); ++b) {
        const auto u = static_cast<std::size_t>(b);
        const std::size_t idx = order[begin + u];
        try {
          ag::Tape tape;
          ag::TapeScope scope(tape);
          ForwardOptions opts;
          opts.mode = Mode::Train;
          opts.seed = derive_seed(cfg.seed, kForward, (epoch - 1) * n + idx);
          const ForwardResult r = model.forward(train_set[idx].cloud, &train_set[idx].wireframe, opts);
          const ag::Tensor loss = total_loss(r.logits, r.offsets, *r.levels[0].labels, cfg.loss);
          losses[u] = loss.item();
          grads[u] = tape.backward(loss);
        } catch (...) {
          errors[u] = std::current_exception();
        }
      }

      for (std::size_t u = 0; u < count && !failure; ++u) {
        if (!errors[u]) continue;
        try {
          std::rethrow_exception(errors[u]);
        } catch (const NumericError& e) {
          failure = "epoch " + std::to_string(epoch) + ", sample " + train_set[order[begin + u]].id + ": " +
                    e.what();
        }
      }
      if (failure) break;

      GradientBuffers sum = zero_gradients(params);
      for (std::size_t u = 0; u < count; ++u) {
        loss_sum += losses[u];
        accumulate(sum, params, grads[u]);
      }
      const double inv = 1.0 / static_cast<double>(count);
      bool finite = true;
      for (auto& g : sum) {
        for (double& v : g) v *= inv;
        finite = finite && all_finite(g);
      }
      if (!finite) {
        failure = "epoch " + std::to_string(epoch) + ": non-finite gradient";
        break;
      }

      lr = onecycle_lr(step, total_steps, cfg.schedule);
      const auto before = snapshot(params);
      optimizer.step(params, sum, lr);
      ++step;
      const bool ok = std::all_of(params.entries().begin(), params.entries().end(),
                                  [](const ParameterSet::Entry& e) { return all_finite(e.tensor.values()); });
      if (!ok) {
        restore(params, before);
        failure = "epoch " + std::to_string(epoch) + ": non-finite parameters after the update";
      }
    }
    if (failure) break;

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(n);
    entry.lr = lr;
    const bool eval_epoch = (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) || epoch == cfg.epochs;
    if (eval_epoch && !holdout_set.empty()) {
      try {
        entry.holdout = evaluate(model, holdout_set, cfg.post, cfg.match_threshold, cfg.seed);
        final_report = entry.holdout;
      } catch (const NumericError& e) {
        failure = "epoch " + std::to_string(epoch) + " evaluation: " + e.what();
      }
    }
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }

  return TrainResult{std::move(model), std::move(log), final_report, failure};
}

std::vector<std::pair<std::string, ModelConfig>> ablation_variants(const ModelConfig& full) {
  ModelConfig base = full;
  base.point_transformer = false;
  base.cgnn_sa2 = false;
  base.cgnn_sa4 = false;
  base.sa4_guided = false;
  ModelConfig gnn = base;
  gnn.cgnn_sa2 = true;
  gnn.cgnn_sa4 = true;
  ModelConfig transformer = gnn;
  transformer.point_transformer = true;
  ModelConfig guided = transformer;
  guided.sa4_guided = true;
  return {{"pointnet2", base}, {"+centroid_gnn", gnn}, {"+vector_attention", transformer},
          {"+soft_guided", guided}};
}

std::vector<AblationRow> ablate(const TrainConfig& cfg, std::span<const std::uint64_t> seeds) {
  cfg.validate();
  if (seeds.empty()) throw InvalidArgument("ablate: at least one seed is required");
  const auto variants = ablation_variants(cfg.model);
  std::vector<AblationRow> rows;
  for (const auto& [name, model] : variants) rows.push_back(AblationRow{name, {}, {}});

  for (const std::uint64_t seed : seeds) {
    TrainConfig run = cfg;
    run.seed = seed;
    const DatasetSplit split = training_data(run);
    if (split.holdout.empty()) throw InvalidArgument("ablate: the holdout split is empty");
    for (std::size_t v = 0; v < variants.size(); ++v) {
      run.model = variants[v].second;
      TrainResult result = train(run, split.train, split.holdout);
      if (result.numeric_failure) throw NumericError("ablate " + variants[v].first + ": " + *result.numeric_failure);
      rows[v].runs.push_back(*result.final_report);
    }
  }

  for (AblationRow& row : rows) {
    std::vector<double> cp, cr, cf1, aco;
    for (const MetricReport& r : row.runs) {
      cp.push_back(r.cp);
      cr.push_back(r.cr);
      cf1.push_back(r.cf1);
      aco.push_back(r.aco);
    }
    row.median.cp = median(cp);
    row.median.cr = median(cr);
    row.median.cf1 = median(cf1);
    row.median.aco = median(aco);
    row.median.match_threshold = cfg.match_threshold;
  }
  return rows;
}

std::string format_ablation(std::span<const AblationRow> rows) {
  std::string out = "architecture,cp,cr,f1\n";
  for (const AblationRow& row : rows) {
    out += row.architecture + "," + format_real(row.median.cp) + "," + format_real(row.median.cr) + "," +
           format_real(row.median.cf1) + "\n";
  }
  return out;
}

}  // namespace sage3d
