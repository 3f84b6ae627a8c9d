// geoseg command-line interface.
//
//   geoseg gen-synth     --out DIR [--config SYNTH.json] [--seed N] [--labeled-fraction F]
//   geoseg propagate     --dataset DIR [--seed N] [--occl-threshold M] [--out DIR]
//   geoseg train         --dataset DIR --out DIR [--config RUN.json] [--seed N] [--lambda L]
//                        [--occl-threshold M] [--resume CKPT] [--max-steps N]
//   geoseg eval          --dataset DIR --checkpoint CKPT [--split NAME] [--weights best|last] [--out FILE]
//   geoseg warp-preview  --dataset DIR --source SEQ/IDX --target SEQ/IDX --out DIR [--occl-threshold M]
//   geoseg gradcheck     [--seed N] [--instances N] [--max-entries N] [--op NAME]... [--out FILE]
//
// Reports are JSON on stdout (and in --out when given); the resolved configuration of
// every run is logged to stderr. Exit status: 0 success, 1 failed check, 2 error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "geoseg/config.hpp"
#include "geoseg/error.hpp"
#include "geoseg/gradcheck.hpp"
#include "geoseg/io.hpp"
#include "geoseg/kernels.hpp"
#include "geoseg/propagation.hpp"
#include "geoseg/synth.hpp"
#include "geoseg/trainer.hpp"
#include "geoseg/warp.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace geoseg;

namespace {

struct Options {
  std::string dataset, config, out, resume, checkpoint, split = "test", weights = "best";
  std::string source, target;
  std::optional<std::uint64_t> seed;
  std::optional<float> lambda;
  std::optional<double> labeled_fraction, occl_threshold;
  std::optional<std::uint64_t> max_steps;
  bool predict_truth = false;
  int instances = 20;
  std::size_t max_entries = 0;
  std::vector<std::string> ops;
};

std::string slurp(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string(), "cannot open file for writing");
  out << text;
}

void log_config(const std::string& command, const json& config) {
  std::cerr << "[geoseg " << command << "] config " << config.dump() << "\n";
}

void log(const std::string& command, const std::string& message) {
  std::cerr << "[geoseg " << command << "] " << message << "\n";
}

json iou_json(const IoUReport& r) {
  json per = json::array();
  for (double v : r.per_class) per.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return {{"mean", r.mean}, {"per_class", per}};
}

json evaluation_json(const Evaluation& e) {
  json j = {{"accuracy", e.accuracy},
            {"iou", iou_json(e.iou)},
            {"predicted_histogram", e.predicted_histogram},
            {"truth_histogram", e.truth_histogram}};
  const auto collapse = detect_collapse(e);
  j["collapse"] = collapse ? json(*collapse) : json(nullptr);
  return j;
}

std::vector<const Frame*> pointers(const std::vector<Frame>& frames) {
  std::vector<const Frame*> out;
  for (const auto& f : frames) out.push_back(&f);
  return out;
}

const Frame& find_frame(const Dataset& ds, const std::string& id) {
  for (Split s : {Split::train, Split::validation, Split::test, Split::generalization})
    for (const auto& f : ds.split(s))
      if (f.id() == id) return f;
  throw ConfigError("no frame with id '" + id + "' (expected SEQUENCE/INDEX)");
}

// ---- gen-synth ------------------------------------------------------------------------

int gen_synth(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  SynthConfig cfg = parse_synth_config(slurp(o.config), o.config.empty() ? "<default synth config>" : o.config, seed);
  if (o.labeled_fraction) {
    if (!(*o.labeled_fraction > 0 && *o.labeled_fraction <= 1))
      throw ConfigError("--labeled-fraction must lie in (0, 1]");
    cfg.options.labeled_fraction = *o.labeled_fraction;
  }
  json resolved = json::parse(to_json(cfg));
  resolved["seed"] = seed;
  log_config("gen-synth", resolved);
  const Dataset ds = generate_dataset(cfg.annotated, cfg.options, seed);
  io::write_dataset(ds, o.out);
  write_text(fs::path(o.out) / "synth_config.json", resolved.dump(2) + "\n");
  const json report = {{"out", o.out},
                       {"train_frames", ds.train.size()},
                       {"labeled_frames", ds.labeled().size()},
                       {"validation_frames", ds.validation.size()},
                       {"test_frames", ds.test.size()},
                       {"generalization_frames", ds.generalization.size()}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---- propagate ------------------------------------------------------------------------

json propagation_report(const Dataset& ds, const std::map<std::string, LabelMap>& labels,
                        const std::vector<std::string>& uncovered) {
  std::size_t pixels = 0, covered = 0, checked = 0, agree = 0;
  for (const auto* f : ds.unlabeled()) {
    const auto it = labels.find(f->id());
    if (it == labels.end()) continue;
    for (std::size_t p = 0; p < it->second.labels.size(); ++p) {
      ++pixels;
      const auto l = it->second.labels[p];
      if (l == kIgnore) continue;
      ++covered;
      if (f->truth && f->truth->labels[p] != kIgnore) {
        ++checked;
        agree += f->truth->labels[p] == l;
      }
    }
  }
  json j = {{"frames", labels.size()},
            {"uncovered_frames", uncovered},
            {"pixel_coverage", pixels ? static_cast<double>(covered) / pixels : 0.0}};
  j["agreement_with_truth"] = checked ? json(static_cast<double>(agree) / checked) : json(nullptr);
  return j;
}

int propagate(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  const double thr = o.occl_threshold.value_or(kDefaultOcclusionThreshold);
  const std::string out = o.out.empty() ? o.dataset : o.out;
  log_config("propagate", {{"dataset", o.dataset}, {"seed", seed}, {"occl_threshold", thr}, {"out", out}});
  const Dataset ds = io::read_dataset(o.dataset);
  const PropagationResult r = propagate_dataset(ds, thr, seed);
  io::write_propagated(r.labels, out);
  json report = propagation_report(ds, r.labels, r.uncovered);
  report["seed"] = seed;
  report["occl_threshold"] = thr;
  write_text(fs::path(out) / "propagated" / "report.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------------------

int train(const Options& o) {
  RunConfig rc = parse_run_config(slurp(o.config), o.config.empty() ? "<default run config>" : o.config);
  if (o.seed) rc.train.seed = *o.seed;
  if (o.lambda) rc.train.lambda = *o.lambda;
  if (o.occl_threshold) rc.train.occl_threshold = *o.occl_threshold;
  rc.train.validate();

  const Dataset ds = io::read_dataset(o.dataset);
  const NetConfig nc = rc.net_config(ds.num_classes(), ds.intrinsics.height, ds.intrinsics.width);
  json resolved = json::parse(to_json(rc));
  resolved["dataset"] = o.dataset;
  resolved["out"] = o.out;
  resolved["resume"] = o.resume.empty() ? json(nullptr) : json(o.resume);
  resolved["max_steps"] = o.max_steps ? json(*o.max_steps) : json(nullptr);
  resolved["threads"] = kernels::configure_threads();
  log_config("train", resolved);

  std::map<std::string, LabelMap> propagated;
  if (rc.use_propagation) {
    if (io::has_propagated(o.dataset)) {
      propagated = io::read_propagated(o.dataset);
      log("train", "using cached propagated labels from " + (fs::path(o.dataset) / "propagated").string());
    } else {
      propagated = propagate_dataset(ds, rc.train.occl_threshold, rc.train.seed).labels;
      log("train", "propagated annotations on the fly (no cache found)");
    }
  }
  const TrainingData data = TrainingData::from(ds, rc.use_propagation ? &propagated : nullptr);

  TrainState state;
  if (!o.resume.empty()) {
    state = io::read_checkpoint(o.resume);
    if (!(state.net.config() == nc)) throw ConfigError("--resume: checkpoint network does not match the run config");
    log("train", "resumed at step " + std::to_string(state.step));
  } else {
    state = TrainState::fresh(nc, rc.weight_seed());
  }

  fs::create_directories(o.out);
  const fs::path metrics_path = fs::path(o.out) / "metrics.jsonl";
  std::ofstream metrics(metrics_path, o.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw FormatError(metrics_path.string(), "cannot open for writing");
  const auto t0 = std::chrono::steady_clock::now();
  const LogSink sink = [&](const LogRecord& r) {
    json j = {{"step", r.step}, {"phase", r.phase}, {"supervised", r.supervised}, {"consistency", r.consistency},
              {"total", r.total}};
    if (r.val_accuracy) {
      j["val_accuracy"] = *r.val_accuracy;
      j["val_mean_iou"] = *r.val_iou;
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ostringstream ss;
      ss << "step " << r.step << " " << r.phase << " loss " << r.total << " val acc " << *r.val_accuracy
         << " mIoU " << *r.val_iou << " (" << secs << " s)";
      log("train", ss.str());
    }
    metrics << j.dump() << "\n";
  };

  std::optional<std::uint64_t> budget = o.max_steps;
  auto spend = [&](std::uint64_t before) {
    if (budget) *budget -= std::min(*budget, state.step - before);
  };
  const auto pre_end = static_cast<std::uint64_t>(rc.train.pretrain_steps);
  if (state.step < pre_end && (!budget || *budget > 0)) {
    const std::uint64_t before = state.step;
    pretrain(state, data, rc.train, sink, budget);
    spend(before);
  }
  if (state.step >= pre_end) state.pretrained = true;
  if (rc.train.joint_steps > 0 && state.step >= pre_end && (!budget || *budget > 0)) {
    const std::uint64_t before = state.step;
    train_joint(state, data, rc.train, sink, budget);
    spend(before);
  }
  metrics.close();

  const fs::path ckpt = fs::path(o.out) / "checkpoint.gsck";
  io::write_checkpoint(state, ckpt);
  write_text(fs::path(o.out) / "config.json", resolved.dump(2) + "\n");

  json report = {{"step", state.step}, {"best_step", state.best_step}};
  report["best_val_accuracy"] = state.best_accuracy >= 0 ? json(state.best_accuracy) : json(nullptr);
  const int C = ds.num_classes();
  for (Split s : {Split::validation, Split::test, Split::generalization}) {
    const auto& frames = ds.split(s);
    if (frames.empty()) continue;
    report[to_string(s)] = {{"best", evaluation_json(evaluate(state.best, pointers(frames), C))},
                            {"last", evaluation_json(evaluate(state.net, pointers(frames), C))}};
  }
  write_text(fs::path(o.out) / "report.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---- eval -----------------------------------------------------------------------------

int eval(const Options& o) {
  const Split split = split_from_string(o.split);
  if (o.weights != "best" && o.weights != "last") throw ConfigError("--weights must be best or last");
  json resolved = {{"dataset", o.dataset}, {"split", o.split}, {"weights", o.weights},
                   {"predict_truth", o.predict_truth}};
  resolved["checkpoint"] = o.checkpoint.empty() ? json(nullptr) : json(o.checkpoint);
  log_config("eval", resolved);
  const Dataset ds = io::read_dataset(o.dataset);
  const auto frames = pointers(ds.split(split));
  if (frames.empty()) throw ConfigError("split '" + o.split + "' is empty");
  Evaluation ev;
  if (o.predict_truth) {
    // Scores the stored ground truth against the annotations: a format and metric sanity check.
    std::vector<LabelMap> preds, truths;
    for (const auto* f : frames) {
      if (!f->truth) throw ConfigError("frame " + f->id() + " carries no ground truth");
      preds.push_back(*f->truth);
      truths.push_back(*f->annotation);
    }
    ConfusionMatrix cm(ds.num_classes());
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], truths[i]);
    ev.accuracy = accuracy(preds, truths);
    ev.iou = iou(cm);
    ev.predicted_histogram.assign(ds.num_classes(), 0);
    ev.truth_histogram.assign(ds.num_classes(), 0);
    for (int t = 0; t < ds.num_classes(); ++t)
      for (int p = 0; p < ds.num_classes(); ++p) {
        ev.truth_histogram[t] += cm.at(t, p);
        ev.predicted_histogram[p] += cm.at(t, p);
      }
  } else {
    if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required unless --predict-truth is given");
    const TrainState state = io::read_checkpoint(o.checkpoint);
    const NetConfig& nc = state.net.config();
    if (nc.num_classes != ds.num_classes() || nc.height != ds.intrinsics.height || nc.width != ds.intrinsics.width)
      throw ConfigError("checkpoint network does not match the dataset (classes or extents)");
    ev = evaluate(o.weights == "best" ? state.best : state.net, frames, ds.num_classes());
  }
  json report = evaluation_json(ev);
  report["split"] = o.split;
  report["frames"] = frames.size();
  if (!o.out.empty()) write_text(o.out, report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---- warp-preview ---------------------------------------------------------------------

std::array<std::uint8_t, 3> class_color(int c) {
  static const std::array<std::array<std::uint8_t, 3>, 4> base = {
      {{150, 110, 60}, {70, 130, 180}, {230, 140, 30}, {200, 40, 160}}};
  if (c < 4) return base[c];
  return {static_cast<std::uint8_t>(37 * c), static_cast<std::uint8_t>(91 * c), static_cast<std::uint8_t>(173 * c)};
}

int warp_preview(const Options& o) {
  const double thr = o.occl_threshold.value_or(kDefaultOcclusionThreshold);
  log_config("warp-preview",
             {{"dataset", o.dataset}, {"source", o.source}, {"target", o.target}, {"occl_threshold", thr}, {"out", o.out}});
  const Dataset ds = io::read_dataset(o.dataset);
  const Frame& src = find_frame(ds, o.source);
  const Frame& tgt = find_frame(ds, o.target);
  const LabelMap* src_labels = src.truth ? &*src.truth : (src.annotation ? &*src.annotation : nullptr);
  if (!src_labels) throw ConfigError("source frame " + src.id() + " has neither ground truth nor annotation");

  Frame labeled = src;
  labeled.annotation = *src_labels;
  const LabelMap warped = warp_annotation(labeled, tgt, ds.intrinsics, thr);
  const CorrespondenceField field = frame_correspondence(tgt, src, ds.intrinsics, thr);

  // Source colour gathered into the target view.
  const int w = tgt.width(), h = tgt.height();
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  std::vector<float> maps(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) maps[c * plane + p] = src.color.rgb[p * 3 + c];
  Tape tape = Tape::inference();
  const WarpResult wc = bilinear_sample(tape, Tensor::from({1, 3, h, w}, maps), field);
  ColorImage warped_color(w, h), overlay(w, h);
  for (std::size_t p = 0; p < plane; ++p) {
    const auto col = class_color(warped.labels[p] == kIgnore ? 0 : warped.labels[p]);
    for (int c = 0; c < 3; ++c) {
      warped_color.rgb[p * 3 + c] = static_cast<std::uint8_t>(std::lround(wc.probabilities.data()[c * plane + p]));
      const int t = tgt.color.rgb[p * 3 + c];
      overlay.rgb[p * 3 + c] = warped.labels[p] == kIgnore ? static_cast<std::uint8_t>(t / 4)
                                                           : static_cast<std::uint8_t>((t + col[c]) / 2);
    }
  }
  const fs::path out(o.out);
  io::write_ppm(out / "target_color.ppm", tgt.color);
  io::write_ppm(out / "source_color.ppm", src.color);
  io::write_ppm(out / "warped_color.ppm", warped_color);
  io::write_ppm(out / "overlay.ppm", overlay);
  io::write_pgm(out / "warped_labels.pgm", warped);

  std::size_t valid = 0, checked = 0, agree = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    if (warped.labels[p] == kIgnore) continue;
    ++valid;
    if (tgt.truth && tgt.truth->labels[p] != kIgnore) {
      ++checked;
      agree += tgt.truth->labels[p] == warped.labels[p];
    }
  }
  json report = {{"source", src.id()}, {"target", tgt.id()}, {"valid_fraction", static_cast<double>(valid) / plane}};
  report["agreement_with_truth"] = checked ? json(static_cast<double>(agree) / checked) : json(nullptr);
  write_text(out / "report.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---- gradcheck ------------------------------------------------------------------------

int gradcheck(const Options& o) {
  GradCheckOptions g;
  g.seed = o.seed.value_or(0);
  g.instances = o.instances;
  g.max_entries = o.max_entries;
  log_config("gradcheck", {{"seed", g.seed},
                           {"instances", g.instances},
                           {"max_entries", g.max_entries},
                           {"step", g.step},
                           {"min_magnitude", g.min_magnitude},
                           {"ops", o.ops}});
  const GradCheckReport r = run_gradcheck(g, o.ops);
  constexpr double tolerance = 1e-3;
  json ops = json::array();
  for (const auto& op : r.ops) {
    ops.push_back({{"op", op.op},
                   {"instances", op.instances},
                   {"compared", op.compared},
                   {"excluded_kinks", op.excluded},
                   {"max_rel_error", op.max_rel_error},
                   {"max_rel_error_above_1e-5", op.max_rel_error_large},
                   {"max_abs_teacher_grad", op.max_abs_teacher_grad},
                   {"passed", op.max_rel_error < tolerance && op.compared > 0 && op.max_abs_teacher_grad == 0.0}});
    std::ostringstream ss;
    ss << op.op << ": max rel error " << op.max_rel_error << " over " << op.compared << " entries ("
       << op.seconds << " s)";
    log("gradcheck", ss.str());
  }
  const json report = {{"tolerance", tolerance}, {"max_rel_error", r.max_rel_error()}, {"passed", r.passed(tolerance)},
                       {"ops", ops}};
  if (!o.out.empty()) write_text(o.out, report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return r.passed(tolerance) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geoseg: semantic segmentation from few annotations with multi-view geometric consistency"};
  app.require_subcommand(1, 1);
  Options o;

  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "random seed (default 0)"); };
  auto thr = [&](CLI::App* c) {
    c->add_option("--occl-threshold", o.occl_threshold, "occlusion threshold in meters")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen-synth", "render a synthetic RGB-D dataset");
  gen->add_option("--config", o.config, "scene config (JSON); default: desk benchmark")->check(CLI::ExistingFile);
  gen->add_option("--labeled-fraction", o.labeled_fraction, "fraction of annotated frames per sequence");
  gen->add_option("--out", o.out, "output dataset directory")->required();
  seed(gen);

  auto* prop = app.add_subcommand("propagate", "warp manual annotations onto unlabeled frames");
  prop->add_option("--dataset", o.dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  prop->add_option("--out", o.out, "cache directory (default: the dataset)");
  seed(prop);
  thr(prop);

  auto* tr = app.add_subcommand("train", "pretrain, then train with the geometric consistency loss");
  tr->add_option("--dataset", o.dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--config", o.config, "run config (JSON)")->check(CLI::ExistingFile);
  tr->add_option("--lambda", o.lambda, "weight of the consistency loss")->check(CLI::NonNegativeNumber);
  tr->add_option("--out", o.out, "output directory")->required();
  tr->add_option("--resume", o.resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--max-steps", o.max_steps, "stop after this many optimization steps");
  seed(tr);
  thr(tr);

  auto* ev = app.add_subcommand("eval", "accuracy and IoU of a checkpoint on a split");
  ev->add_option("--dataset", o.dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint file")->check(CLI::ExistingFile);
  ev->add_option("--split", o.split, "train, validation, test or generalization")->capture_default_str();
  ev->add_option("--weights", o.weights, "best (validation-selected) or last")->capture_default_str();
  ev->add_flag("--predict-truth", o.predict_truth, "score the stored ground truth instead of a network");
  ev->add_option("--out", o.out, "report file (JSON)");

  auto* wp = app.add_subcommand("warp-preview", "warp a frame's labels and colour into another view");
  wp->add_option("--dataset", o.dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  wp->add_option("--source", o.source, "source frame id SEQUENCE/INDEX")->required();
  wp->add_option("--target", o.target, "target frame id SEQUENCE/INDEX")->required();
  wp->add_option("--out", o.out, "output directory")->required();
  thr(wp);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--instances", o.instances, "random instances per operation")->capture_default_str()->check(
      CLI::PositiveNumber);
  gc->add_option("--max-entries", o.max_entries, "entries checked per tensor and instance, 0 = all")
      ->capture_default_str();
  gc->add_option("--op", o.ops, "restrict to these operations")->check(CLI::IsMember(gradcheck_ops()));
  gc->add_option("--out", o.out, "report file (JSON)");
  seed(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    kernels::configure_threads();
    if (*gen) return gen_synth(o);
    if (*prop) return propagate(o);
    if (*tr) return train(o);
    if (*ev) return eval(o);
    if (*wp) return warp_preview(o);
    if (*gc) return gradcheck(o);
  } catch (const std::exception& e) {
    std::cerr << "geoseg: error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
