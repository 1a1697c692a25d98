// sage3d command line: synth, train, infer, eval, ablate, gradcheck.
//
// Exit codes: 0 ok, 1 unexpected failure (or a failed gradient check),
// 2 bad input or arguments, 3 numeric failure.

#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sage3d/config.hpp"
#include "sage3d/errors.hpp"
#include "sage3d/evaluation.hpp"
#include "sage3d/gradsuite.hpp"
#include "sage3d/io.hpp"
#include "sage3d/network.hpp"
#include "sage3d/postprocess.hpp"
#include "sage3d/train.hpp"

namespace fs = std::filesystem;
using namespace sage3d;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value configuration file");
  cmd->add_option("--set", c.overrides, "override one key, e.g. --set train.epochs=5")->allow_extra_args(false);
  cmd->add_option("--threads", c.threads, "cap OpenMP threads")->check(CLI::PositiveNumber);
}

// Defaults, then SAGE3D_SEED, then the file, then --set.
Config resolve(const Common& c) {
  Config cfg = Config::defaults();
  if (const char* env = std::getenv("SAGE3D_SEED"); env != nullptr && *env != '\0') {
    try {
      cfg.set("seed", env);
      (void)cfg.get_u64("seed");
    } catch (const std::exception& e) {
      throw InvalidArgument(std::string("SAGE3D_SEED: ") + e.what());
    }
  }
  if (!c.config_path.empty()) cfg.merge_file(c.config_path);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  if (c.threads) cfg.set("threads", std::to_string(*c.threads));
  const std::size_t threads = cfg.get_count("threads");
  if (threads == 0) throw InvalidArgument("threads must be positive");
  omp_set_num_threads(static_cast<int>(threads));
  return cfg;
}

fs::path dir_of(const fs::path& file) {
  const fs::path parent = file.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
}

void echo_config(const fs::path& dir, const Config& cfg) {
  ensure_dir(dir);
  write_text(dir / "effective.cfg", cfg.dump());
}

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Model load_model(const Config& cfg, const fs::path& ckpt) {
  Model model(model_config_from(cfg), cfg.get_u64("seed"));
  load_checkpoint(ckpt, model.parameters());
  return model;
}

// ---- synth ----

struct SynthArgs {
  std::string out;
  std::size_t count = 0;
  std::optional<std::uint64_t> seed;
  std::string family = "mixed";
  std::optional<std::size_t> points;
  std::optional<double> noise;
};

int run_synth(const SynthArgs& a, const Common& common) {
  Config cfg = resolve(common);
  if (a.seed) cfg.set("seed", std::to_string(*a.seed));
  if (a.points) cfg.set("data.points", std::to_string(*a.points));
  if (a.noise) cfg.set("data.noise", format_real(*a.noise));
  if (a.count == 0) throw InvalidArgument("--count must be positive");

  DatasetSpec spec = train_config_from(cfg).data;
  if (a.family == "mixed") {
    spec.flat_box = (a.count + 2) / 3;
    spec.gable = (a.count + 1) / 3;
    spec.hip = a.count / 3;
  } else {
    const RoofFamily f = parse_roof_family(a.family);
    spec.flat_box = f == RoofFamily::FlatBox ? a.count : 0;
    spec.gable = f == RoofFamily::Gable ? a.count : 0;
    spec.hip = f == RoofFamily::Hip ? a.count : 0;
  }
  cfg.set("data.flat_box", std::to_string(spec.flat_box));
  cfg.set("data.gable", std::to_string(spec.gable));
  cfg.set("data.hip", std::to_string(spec.hip));

  const fs::path dir(a.out);
  ensure_dir(dir);
  const auto samples = make_dataset(spec, cfg.get_u64("seed"));
  std::ostringstream manifest;
  manifest << "id,family,points,vertices\n";
  for (const auto& s : samples) {
    write_point_cloud(dir / (s.id + ".pcd"), s.cloud);
    write_wireframe(dir / (s.id + ".wf"), s.wireframe);
    manifest << s.id << ',' << to_string(s.family) << ',' << s.cloud.size() << ',' << s.wireframe.vertices.size()
             << '\n';
  }
  write_text(dir / "manifest.csv", manifest.str());
  echo_config(dir, cfg);
  std::cout << "wrote " << samples.size() << " roofs to " << dir.string() << '\n';
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string out;
  std::string log;
};

int run_train(const TrainArgs& a, const Common& common) {
  const Config cfg = resolve(common);
  const TrainConfig tc = train_config_from(cfg);
  const fs::path ckpt(a.out);
  const fs::path log_path = a.log.empty() ? dir_of(ckpt) / "train_log.csv" : fs::path(a.log);
  echo_config(dir_of(ckpt), cfg);

  std::string log_text;
  const TrainResult r = train(tc, [&](const EpochLog& e) {
    const std::string line = format_epoch(e);
    log_text += line + '\n';
    std::cout << line << std::endl;
  });
  ensure_dir(dir_of(log_path));
  write_text(log_path, log_text);
  save_checkpoint(ckpt, r.model.parameters());
  if (r.numeric_failure) {
    std::cerr << "sage3d: numeric failure: " << *r.numeric_failure << " (checkpoint holds the last finite state)\n";
    return 3;
  }
  if (r.final_report) {
    std::cout << "holdout cf1=" << format_real(r.final_report->cf1) << " aco=" << format_real(r.final_report->aco)
              << '\n';
  }
  return 0;
}

// ---- infer ----

struct InferArgs {
  std::string ckpt;
  std::string in;
  std::string out;
  std::string probs;
  std::string svg;
};

std::string svg_color(double p) {
  p = std::clamp(p, 0.0, 1.0);
  const auto lerp = [p](int from, int to) { return static_cast<int>(std::lround(from + (to - from) * p)); };
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", lerp(160, 220), lerp(160, 20), lerp(160, 20));
  return buf;
}

// Top-down (x right, y up) orthographic view in a fixed 800x800 box.
std::string render_svg(const Detection& d) {
  const auto& pts = d.input.coords;
  double lo_x = -1, hi_x = 1, lo_y = -1, hi_y = 1;
  if (!pts.empty()) {
    lo_x = hi_x = pts[0][0];
    lo_y = hi_y = pts[0][1];
    for (const auto& p : pts) {
      lo_x = std::min(lo_x, p[0]);
      hi_x = std::max(hi_x, p[0]);
      lo_y = std::min(lo_y, p[1]);
      hi_y = std::max(hi_y, p[1]);
    }
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const double scale = 720.0 / span;
  const double cx = 0.5 * (lo_x + hi_x), cy = 0.5 * (lo_y + hi_y);
  auto px = [&](const Vec3& p) { return 400.0 + (p[0] - cx) * scale; };
  auto py = [&](const Vec3& p) { return 400.0 - (p[1] - cy) * scale; };

  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Hot points last so they stay visible.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d.probs[a] < d.probs[b]; });

  std::string s =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n"
      "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
  char buf[160];
  for (std::size_t i : order) {
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"%s\"/>\n", px(pts[i]), py(pts[i]),
                  svg_color(d.probs[i]).c_str());
    s += buf;
  }
  for (const auto& c : d.corners.corners) {
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"9\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n",
                  px(c.position), py(c.position));
    s += buf;
  }
  return s + "</svg>\n";
}

std::string probs_csv(const Detection& d) {
  std::string s = "x,y,z,prob,dx,dy,dz\n";
  for (std::size_t i = 0; i < d.input.size(); ++i) {
    const auto& p = d.input.coords[i];
    const auto& o = d.offsets[i];
    s += format_real(p[0]) + ',' + format_real(p[1]) + ',' + format_real(p[2]) + ',' + format_real(d.probs[i]) + ',' +
         format_real(o[0]) + ',' + format_real(o[1]) + ',' + format_real(o[2]) + '\n';
  }
  return s;
}

int run_infer(const InferArgs& a, const Common& common) {
  const Config cfg = resolve(common);
  const Model model = load_model(cfg, a.ckpt);
  const PostprocessConfig post = post_config_from(cfg);
  const std::uint64_t seed = cfg.get_u64("seed");

  auto one = [&](const fs::path& in, const fs::path& out, const fs::path& probs, const fs::path& svg) {
    const PointCloud cloud = read_point_cloud(in);
    const Detection d = detect(model, cloud, post, seed);
    write_corners(out, d.corners);
    if (!probs.empty()) write_text(probs, probs_csv(d));
    if (!svg.empty()) write_text(svg, render_svg(d));
    return d.corners.size();
  };

  if (fs::is_directory(a.in)) {
    // Batch mode: every *.pcd in --in becomes <id>.corners in --out.
    const fs::path out_dir(a.out);
    ensure_dir(out_dir);
    if (!a.probs.empty()) ensure_dir(a.probs);
    if (!a.svg.empty()) ensure_dir(a.svg);
    const auto inputs = files_with_extension(a.in, ".pcd");
    for (const auto& in : inputs) {
      const std::string id = in.stem().string();
      one(in, out_dir / (id + ".corners"), a.probs.empty() ? fs::path() : fs::path(a.probs) / (id + ".csv"),
          a.svg.empty() ? fs::path() : fs::path(a.svg) / (id + ".svg"));
    }
    echo_config(out_dir, cfg);
    std::cout << "inferred " << inputs.size() << " clouds\n";
    return 0;
  }
  const fs::path out(a.out);
  ensure_dir(dir_of(out));
  const std::size_t n = one(a.in, out, a.probs, a.svg);
  echo_config(dir_of(out), cfg);
  std::cout << n << " corners\n";
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string out;
};

int run_eval(const EvalArgs& a, const Common& common) {
  const Config cfg = resolve(common);
  const double threshold = cfg.get_real("eval.match_threshold");
  const auto gts = files_with_extension(a.gt, ".wf");
  if (gts.empty()) throw InvalidArgument(a.gt + ": no .wf files");

  std::vector<std::string> ids;
  std::vector<fs::path> preds;
  for (const auto& g : gts) {
    const std::string id = g.stem().string();
    fs::path p = fs::path(a.pred) / (id + ".corners");
    if (!fs::exists(p)) p = fs::path(a.pred) / (id + ".txt");
    if (!fs::exists(p)) throw IoError(p.parent_path().string() + ": no prediction for " + id);
    ids.push_back(id);
    preds.push_back(p);
  }

  const std::size_t n = gts.size();
  std::vector<MetricReport> reports(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      reports[k] = corner_metrics(read_corners(preds[k]), read_wireframe(gts[k]), threshold);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  // First failure in file order, whatever thread hit it.
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const fs::path out(a.out);
  ensure_dir(dir_of(out));
  std::ostringstream csv;
  write_report_csv(csv, ids, reports);
  write_text(out, csv.str());
  echo_config(dir_of(out), cfg);
  const MetricReport m = mean_report(reports);
  std::cout << "cf1=" << format_real(m.cf1) << " aco=" << format_real(m.aco) << " over " << n << " samples\n";
  return 0;
}

// ---- ablate ----

struct AblateArgs {
  std::string out;
  std::size_t runs = 5;
};

int run_ablate(const AblateArgs& a, const Common& common) {
  const Config cfg = resolve(common);
  const TrainConfig tc = train_config_from(cfg);
  if (a.runs == 0) throw InvalidArgument("--runs must be positive");
  std::vector<std::uint64_t> seeds(a.runs);
  std::iota(seeds.begin(), seeds.end(), tc.seed);

  const fs::path out(a.out);
  echo_config(dir_of(out), cfg);
  const auto rows = ablate(tc, seeds);
  write_text(out, format_ablation(rows));
  std::cout << format_ablation(rows);
  const double base = rows.front().median.cf1, full = rows.back().median.cf1;
  std::cout << "direction: full " << format_real(full) << (full >= base ? " >= " : " < ") << "base "
            << format_real(base) << '\n';
  return 0;
}

// ---- gradcheck ----

int run_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_gradient_suite(seed)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-24s %.3e  (tol %.0e, %zu entries) %s", r.block.c_str(), r.max_rel_error,
                  r.tolerance, r.entries, r.passed() ? "ok" : "FAIL");
    std::cout << buf << '\n';
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAGE3D corner detection on roof point clouds"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sage3d 0.1.0");

  Common common;
  SynthArgs synth_args;
  TrainArgs train_args;
  InferArgs infer_args;
  EvalArgs eval_args;
  AblateArgs ablate_args;
  std::uint64_t grad_seed = 0;

  auto* synth = app.add_subcommand("synth", "write synthetic roofs with exact wireframes");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--count", synth_args.count, "number of roofs")->required();
  synth->add_option("--seed", synth_args.seed, "generator seed (falls back to SAGE3D_SEED)");
  synth->add_option("--family", synth_args.family, "flat_box, gable, hip or mixed");
  synth->add_option("--points", synth_args.points, "points per roof");
  synth->add_option("--noise", synth_args.noise, "gaussian noise sigma");
  add_common(synth, common);

  auto* tr = app.add_subcommand("train", "train on generated roofs, write a checkpoint");
  tr->add_option("--out", train_args.out, "checkpoint path")->required();
  tr->add_option("--log", train_args.log, "epoch log (default: train_log.csv next to the checkpoint)");
  add_common(tr, common);

  auto* inf = app.add_subcommand("infer", "detect corners in a cloud, or in every .pcd of a directory");
  inf->add_option("--ckpt", infer_args.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--in", infer_args.in, "point cloud or directory")->required()->check(CLI::ExistingPath);
  inf->add_option("--out", infer_args.out, "corners file or directory")->required();
  inf->add_option("--probs", infer_args.probs, "per-point probabilities CSV");
  inf->add_option("--svg", infer_args.svg, "top-down probability plot");
  add_common(inf, common);

  auto* ev = app.add_subcommand("eval", "score predicted corners against wireframes");
  ev->add_option("--pred", eval_args.pred, "directory of <id>.corners")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--gt", eval_args.gt, "directory of <id>.wf")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", eval_args.out, "report CSV")->required();
  add_common(ev, common);

  auto* ab = app.add_subcommand("ablate", "train the four cumulative variants over several seeds");
  ab->add_option("--out", ablate_args.out, "table CSV")->required();
  ab->add_option("--runs", ablate_args.runs, "seeds per variant, counting up from `seed`");
  add_common(ab, common);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every block");
  gc->add_option("--seed", grad_seed, "fixture seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return run_synth(synth_args, common);
    if (*tr) return run_train(train_args, common);
    if (*inf) return run_infer(infer_args, common);
    if (*ev) return run_eval(eval_args, common);
    if (*ab) return run_ablate(ablate_args, common);
    if (*gc) return run_gradcheck(grad_seed);
  } catch (const NumericError& e) {
    std::cerr << "sage3d: numeric error: " << e.what() << '\n';
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "sage3d: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "sage3d: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "sage3d: " << e.what() << '\n';
    return 2;
  } catch (const InvalidState& e) {
    std::cerr << "sage3d: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "sage3d: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
