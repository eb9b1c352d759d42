// Copyright 2026 The BobQC Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// bobqc: phantom generation, organ-label quality control, segmentation
// metrics, and BN-based test-time adaptation, as batch subcommands.
//
// Exit codes: 0 success, 2 configuration error, 3 data/IO error,
// 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bobqc/cohort.hpp"
#include "bobqc/errors.hpp"
#include "bobqc/etta.hpp"
#include "bobqc/manifest.hpp"
#include "bobqc/nifti.hpp"
#include "bobqc/parallel.hpp"
#include "bobqc/phantom.hpp"
#include "bobqc/rng.hpp"
#include "bobqc/seg_metrics.hpp"
#include "bobqc/shape_features.hpp"
#include "bobqc/tinyseg.hpp"
#include "bobqc/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw bobqc::io_error("cannot create directory " + dir + ": " + ec.message());
}

// Every subcommand records its resolved configuration next to its outputs.
void write_run_json(const std::string& out_dir, const std::string& subcommand,
                    ordered_json flags) {
  ordered_json j{{"subcommand", subcommand}, {"flags", std::move(flags)}};
  std::ofstream out(out_dir + "/run.json");
  if (!out) throw bobqc::io_error("cannot write run.json in " + out_dir);
  out << j.dump(2) << "\n";
}

// Manifest entries hold paths relative to the manifest file.
std::string resolve_path(const std::string& manifest_path,
                         const std::string& entry_path) {
  const fs::path p(entry_path);
  if (p.is_absolute()) return entry_path;
  return (fs::path(manifest_path).parent_path() / p).string();
}

bobqc::LabelVolume load_labels(const std::string& manifest_path,
                               const bobqc::ManifestEntry& entry) {
  bobqc::LabelVolume labels =
      bobqc::read_label_nifti(resolve_path(manifest_path, entry.label_path));
  // Classes removed by per-organ filtering count as background downstream.
  if (!entry.removed_classes.empty()) {
    std::set<int> removed(entry.removed_classes.begin(),
                          entry.removed_classes.end());
    for (std::uint16_t& v : labels.voxels)
      if (removed.count(v) != 0) v = 0;
  }
  return labels;
}

std::vector<int> cohort_universe(const std::string& manifest_path,
                                 const bobqc::Manifest& manifest) {
  std::set<int> classes;
  for (const bobqc::ManifestEntry& e : manifest.samples) {
    const bobqc::LabelVolume labels = load_labels(manifest_path, e);
    for (int c : bobqc::observed_classes(labels)) classes.insert(c);
  }
  return {classes.begin(), classes.end()};
}

struct PhantomArgs {
  int n = 100;
  int corrupt = 0;
  int grid = 48;
  std::uint64_t seed = 0;
  std::string out;
};

void run_phantom(const PhantomArgs& a) {
  if (a.corrupt < 0 || a.corrupt > a.n)
    throw bobqc::config_error("--corrupt must lie in [0, n]");
  ensure_dir(a.out);
  write_run_json(a.out, "phantom",
                 ordered_json{{"n", a.n},
                              {"corrupt", a.corrupt},
                              {"grid", a.grid},
                              {"seed", a.seed},
                              {"out", a.out}});
  bobqc::CohortOptions opts;
  opts.n = a.n;
  opts.seed = a.seed;
  opts.out_dir = a.out;
  opts.corruptions = bobqc::default_corruptions();
  // Corrupted samples are spread evenly across the cohort.
  for (int j = 0; j < a.corrupt; ++j)
    opts.corrupt_indices.push_back(j * a.n / a.corrupt);
  const bobqc::Manifest manifest =
      bobqc::make_cohort(bobqc::default_template(a.grid), opts);
  bobqc::write_manifest(manifest, a.out + "/manifest.json");
  std::cout << "wrote " << manifest.samples.size() << " samples to " << a.out
            << "\n";
}

struct FeaturesArgs {
  std::string manifest;
  std::string out;
};

void run_features(const FeaturesArgs& a) {
  ensure_dir(a.out);
  write_run_json(a.out, "features",
                 ordered_json{{"manifest", a.manifest}, {"out", a.out}});
  const bobqc::Manifest manifest = bobqc::read_manifest(a.manifest);
  if (manifest.samples.empty()) throw bobqc::data_error("manifest has no samples");
  const std::vector<int> universe = cohort_universe(a.manifest, manifest);

  bobqc::CohortTable table;
  table.universe = universe;
  for (const bobqc::ManifestEntry& e : manifest.samples) {
    const bobqc::LabelVolume labels = load_labels(a.manifest, e);
    bobqc::FeatureSet set = bobqc::compute_features(labels, e.id, universe);
    for (bobqc::OrganFeatures& row : set.rows)
      table.rows.push_back(std::move(row));
  }
  bobqc::write_feature_csv(table, a.out + "/features.csv");
  std::cout << "wrote " << table.rows.size() << " feature rows\n";
}

struct FilterArgs {
  std::string features;
  std::string manifest;  // optional
  std::string out;
  std::string method = "solf";
  double epsilon = 2.0;
  int k = 2;
  std::string use_features = "volume,sphericity,eccentricity";
  std::string scope = "per-organ";
  bool missing_is_inaccurate = false;
  double iqr_factor = 1.5;
};

void run_filter(const FilterArgs& a) {
  bobqc::SolfConfig cfg;
  cfg.epsilon = a.epsilon;
  cfg.k = a.k;
  cfg.missing_is_inaccurate = a.missing_is_inaccurate;
  cfg.features.clear();
  std::stringstream names(a.use_features);
  for (std::string name; std::getline(names, name, ',');)
    cfg.features.push_back(bobqc::feature_from_name(name));
  if (a.scope == "per-organ")
    cfg.scope = bobqc::FilterScope::kPerOrgan;
  else if (a.scope == "whole-sample")
    cfg.scope = bobqc::FilterScope::kWholeSample;
  else
    throw bobqc::config_error("unknown scope: \"" + a.scope + "\"");
  if (a.method != "solf" && a.method != "iqr")
    throw bobqc::config_error("unknown method: \"" + a.method + "\"");
  cfg.validate();

  ensure_dir(a.out);
  write_run_json(a.out, "filter",
                 ordered_json{{"features", a.features},
                              {"manifest", a.manifest},
                              {"out", a.out},
                              {"method", a.method},
                              {"epsilon", a.epsilon},
                              {"k", a.k},
                              {"use_features", a.use_features},
                              {"scope", a.scope},
                              {"missing_is_inaccurate", a.missing_is_inaccurate},
                              {"iqr_factor", a.iqr_factor}});

  const bobqc::CohortTable table = bobqc::read_feature_csv(a.features);
  std::vector<bobqc::FilterVerdict> verdicts;
  if (a.method == "solf") {
    const auto bounds = bobqc::solf_bounds(table, cfg);
    for (const bobqc::FeatureBounds& b : bounds)
      if (!b.usable)
        std::cerr << "warning: class " << b.class_id
                  << " has fewer than 2 present rows; no bounds computed\n";
    bobqc::write_bounds_json(bounds, cfg, a.out + "/bounds.json");
    verdicts = bobqc::solf_verdicts(table, bounds, cfg);
  } else {
    verdicts = bobqc::iqr_verdicts(table, a.iqr_factor);
  }
  bobqc::write_verdict_csv(verdicts, a.out + "/verdicts.csv");

  int flagged = 0;
  for (const bobqc::FilterVerdict& v : verdicts) flagged += v.inaccurate;
  std::cout << flagged << " of " << verdicts.size()
            << " rows flagged inaccurate\n";

  if (!a.manifest.empty()) {
    const bobqc::Manifest manifest = bobqc::read_manifest(a.manifest);
    const bobqc::Manifest filtered =
        bobqc::apply_filter(manifest, verdicts, cfg.scope);
    bobqc::write_manifest(filtered, a.out + "/filtered_manifest.json");
  }
}

struct MetricsArgs {
  std::string pred;
  std::string gt;
  std::string out;
};

void run_metrics(const MetricsArgs& a) {
  ensure_dir(a.out);
  write_run_json(a.out, "metrics",
                 ordered_json{{"pred", a.pred}, {"gt", a.gt}, {"out", a.out}});
  const bobqc::Manifest pred = bobqc::read_manifest(a.pred);
  const bobqc::Manifest gt = bobqc::read_manifest(a.gt);
  std::map<std::string, const bobqc::ManifestEntry*> pred_by_id;
  for (const bobqc::ManifestEntry& e : pred.samples) pred_by_id[e.id] = &e;

  double dice_sum = 0, hd_sum = 0;
  int hd_cases = 0, cases = 0;
  for (const bobqc::ManifestEntry& g : gt.samples) {
    const auto it = pred_by_id.find(g.id);
    if (it == pred_by_id.end())
      throw bobqc::data_error("sample " + g.id + " missing from predictions");
    const bobqc::LabelVolume pv = load_labels(a.pred, *it->second);
    const bobqc::LabelVolume gv = load_labels(a.gt, g);
    if (!(pv.dims == gv.dims))
      throw bobqc::data_error("dimension mismatch for sample " + g.id);

    std::set<int> classes;
    for (int c : bobqc::observed_classes(pv)) classes.insert(c);
    for (int c : bobqc::observed_classes(gv)) classes.insert(c);
    const bobqc::SegMetrics m =
        bobqc::evaluate(pv, gv, {classes.begin(), classes.end()});
    bobqc::write_metrics_json(m, a.out + "/metrics_" + g.id + ".json");
    dice_sum += m.mean_dice;
    if (m.mean_hausdorff_mm) {
      hd_sum += *m.mean_hausdorff_mm;
      ++hd_cases;
    }
    ++cases;
  }
  if (cases == 0) throw bobqc::data_error("no samples to evaluate");

  ordered_json agg{{"cases", cases},
                   {"mean_dice", dice_sum / cases},
                   {"mean_hausdorff_mm",
                    hd_cases > 0 ? ordered_json(hd_sum / hd_cases)
                                 : ordered_json(nullptr)}};
  std::ofstream out(a.out + "/metrics_aggregate.json");
  if (!out) throw bobqc::io_error("cannot write aggregate metrics");
  out << agg.dump(2) << "\n";
  std::cout << "mean dice over " << cases << " cases: " << dice_sum / cases
            << "\n";
}

struct TrainArgs {
  std::string manifest;
  std::string out;
  double lr = 1e-4;
  int epochs = 20;
  int batch_size = 4;
  std::uint64_t seed = 0;
  double ce_weight = 1.0;
  double dice_weight = 1.0;
};

void run_train(const TrainArgs& a) {
  ensure_dir(a.out);
  write_run_json(a.out, "train",
                 ordered_json{{"manifest", a.manifest},
                              {"out", a.out},
                              {"lr", a.lr},
                              {"epochs", a.epochs},
                              {"batch_size", a.batch_size},
                              {"seed", a.seed},
                              {"ce_weight", a.ce_weight},
                              {"dice_weight", a.dice_weight}});
  const bobqc::Manifest manifest = bobqc::read_manifest(a.manifest);
  if (manifest.samples.empty()) throw bobqc::data_error("manifest has no samples");

  std::vector<std::pair<bobqc::ScalarVolume, bobqc::LabelVolume>> dataset;
  int max_class = 0;
  for (const bobqc::ManifestEntry& e : manifest.samples) {
    bobqc::ScalarVolume x =
        bobqc::read_scalar_nifti(resolve_path(a.manifest, e.intensity_path));
    bobqc::LabelVolume y = load_labels(a.manifest, e);
    max_class = std::max(max_class, static_cast<int>(y.max_class()));
    dataset.emplace_back(std::move(x), std::move(y));
  }
  if (max_class < 1) throw bobqc::data_error("training labels are all background");

  bobqc::TrainConfig cfg;
  cfg.lr = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.seed = a.seed;
  cfg.ce_weight = a.ce_weight;
  cfg.dice_weight = a.dice_weight;

  bobqc::TinySegParams params = bobqc::init_params(a.seed, max_class + 1);
  const bobqc::TrainResult result = bobqc::train(params, dataset, cfg);
  bobqc::save_checkpoint(params, a.out + "/checkpoint.bin");

  std::ofstream curve(a.out + "/loss_curve.csv");
  if (!curve) throw bobqc::io_error("cannot write loss curve");
  curve << "epoch,loss\n";
  char buf[40];
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%.17g", result.epoch_loss[e]);
    curve << e << ',' << buf << "\n";
  }
  if (!result.epoch_loss.empty())
    std::cout << "final epoch loss: " << result.epoch_loss.back() << "\n";
}

struct InferArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
};

void run_infer(const InferArgs& a) {
  ensure_dir(a.out);
  write_run_json(a.out, "infer",
                 ordered_json{{"checkpoint", a.checkpoint},
                              {"manifest", a.manifest},
                              {"out", a.out}});
  const bobqc::TinySegParams params = bobqc::load_checkpoint(a.checkpoint);
  const bobqc::Manifest manifest = bobqc::read_manifest(a.manifest);
  bobqc::Manifest pred_manifest;
  pred_manifest.seed = manifest.seed;
  for (const bobqc::ManifestEntry& e : manifest.samples) {
    const std::string intensity = resolve_path(a.manifest, e.intensity_path);
    const bobqc::ScalarVolume x = bobqc::read_scalar_nifti(intensity);
    const bobqc::InferResult r = bobqc::infer(params, x);
    bobqc::write_nifti(r.labels, a.out + "/" + e.id + "_pred.nii");
    bobqc::ManifestEntry p;
    p.id = e.id;
    p.intensity_path = fs::absolute(intensity).string();
    p.label_path = e.id + "_pred.nii";
    pred_manifest.samples.push_back(std::move(p));
  }
  bobqc::write_manifest(pred_manifest, a.out + "/manifest.json");
  std::cout << "predicted " << manifest.samples.size() << " samples\n";
}

struct AdaptArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  std::string mode = "both";
  int steps = 10;
  double lr = 1e-3;
  int stats_epochs = 1;
  bool cumulative = false;
  bool no_backtrack = false;
};

void run_adapt(const AdaptArgs& a) {
  bobqc::AdaptConfig cfg;
  cfg.mode = bobqc::adapt_mode_from_name(a.mode);
  cfg.steps = a.steps;
  cfg.lr = a.lr;
  cfg.stats_epochs = a.stats_epochs;
  cfg.backtrack = !a.no_backtrack;
  cfg.validate();

  ensure_dir(a.out);
  write_run_json(a.out, "adapt",
                 ordered_json{{"checkpoint", a.checkpoint},
                              {"manifest", a.manifest},
                              {"out", a.out},
                              {"mode", a.mode},
                              {"steps", a.steps},
                              {"lr", a.lr},
                              {"stats_epochs", a.stats_epochs},
                              {"cumulative", a.cumulative},
                              {"backtrack", cfg.backtrack}});

  bobqc::TinySegParams params = bobqc::load_checkpoint(a.checkpoint);
  const bobqc::Manifest manifest = bobqc::read_manifest(a.manifest);
  bobqc::Manifest pred_manifest;
  pred_manifest.seed = manifest.seed;
  for (const bobqc::ManifestEntry& e : manifest.samples) {
    const std::string intensity = resolve_path(a.manifest, e.intensity_path);
    const bobqc::ScalarVolume x = bobqc::read_scalar_nifti(intensity);
    // Episodic by default: each sample starts from the loaded checkpoint.
    const bobqc::AdaptResult r = bobqc::adapt(params, x, cfg);
    if (a.cumulative) params = r.params;

    const bobqc::InferResult pred = bobqc::infer(r.params, x);
    bobqc::write_nifti(pred.labels, a.out + "/" + e.id + "_pred.nii");
    bobqc::write_nifti(bobqc::entropy_map(pred.probs),
                       a.out + "/" + e.id + "_entropy.nii");
    bobqc::write_entropy_trace_csv(r.entropy_trace,
                                   a.out + "/" + e.id + "_entropy_trace.csv");
    bobqc::save_checkpoint(r.params, a.out + "/" + e.id + "_adapted.bin");
    bobqc::ManifestEntry p;
    p.id = e.id;
    p.intensity_path = fs::absolute(intensity).string();
    p.label_path = e.id + "_pred.nii";
    pred_manifest.samples.push_back(std::move(p));
  }
  bobqc::write_manifest(pred_manifest, a.out + "/manifest.json");
  std::cout << "adapted " << manifest.samples.size() << " samples\n";
}

struct ReportArgs {
  std::string features;
  std::string verdicts;
  std::string out;
  int bins = 50;
};

void run_report(const ReportArgs& a) {
  ensure_dir(a.out);
  write_run_json(a.out, "report",
                 ordered_json{{"features", a.features},
                              {"verdicts", a.verdicts},
                              {"out", a.out},
                              {"bins", a.bins}});
  const bobqc::CohortTable table = bobqc::read_feature_csv(a.features);
  const std::vector<bobqc::FilterVerdict> verdicts =
      bobqc::read_verdict_csv(a.verdicts);
  const auto hists = bobqc::distribution_report(table, verdicts, a.bins);
  bobqc::write_histogram_csv(hists, a.out + "/histograms.csv");
  for (const bobqc::ClassHistogram& h : hists)
    bobqc::write_histogram_svg(
        h, a.out + "/class_" + std::to_string(h.class_id) + ".svg");
  std::cout << "wrote histograms for " << hists.size() << " classes\n";
}

}  // namespace

int main(int argc, char** argv) {
  bobqc::init_threads_from_env();

  CLI::App app{"Organ-label quality control, segmentation metrics, and "
               "test-time adaptation on synthetic phantoms"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a phantom cohort");
  phantom->add_option("--n", pa.n, "Cohort size");
  phantom->add_option("--corrupt", pa.corrupt, "Number of corrupted samples");
  phantom->add_option("--grid", pa.grid, "Grid edge length in voxels");
  phantom->add_option("--seed", pa.seed, "Cohort seed");
  phantom->add_option("--out", pa.out, "Output directory")->required();

  FeaturesArgs fa;
  auto* features = app.add_subcommand("features", "Compute per-organ shape features");
  features->add_option("--manifest", fa.manifest, "Dataset manifest")->required();
  features->add_option("--out", fa.out, "Output directory")->required();

  FilterArgs la;
  auto* filter = app.add_subcommand("filter", "Flag inaccurate organ labels");
  filter->add_option("--features", la.features, "Feature table CSV")->required();
  filter->add_option("--manifest", la.manifest, "Manifest to filter");
  filter->add_option("--out", la.out, "Output directory")->required();
  filter->add_option("--method", la.method, "solf or iqr");
  filter->add_option("--epsilon", la.epsilon, "Total excluded percent");
  filter->add_option("--k", la.k, "Features out of range to flag");
  filter->add_option("--use-features", la.use_features,
                     "Comma list of features to bound");
  filter->add_option("--scope", la.scope, "per-organ or whole-sample");
  filter->add_flag("--missing-is-inaccurate", la.missing_is_inaccurate,
                   "Treat missing organs as inaccurate");
  filter->add_option("--iqr-factor", la.iqr_factor, "IQR fence factor");

  MetricsArgs ma;
  auto* metrics = app.add_subcommand("metrics", "Score predictions against truth");
  metrics->add_option("--pred", ma.pred, "Prediction manifest")->required();
  metrics->add_option("--gt", ma.gt, "Ground-truth manifest")->required();
  metrics->add_option("--out", ma.out, "Output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the segmentation network");
  train->add_option("--manifest", ta.manifest, "Training manifest")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--lr", ta.lr, "Learning rate");
  train->add_option("--epochs", ta.epochs, "Training epochs");
  train->add_option("--batch-size", ta.batch_size, "Batch size");
  train->add_option("--seed", ta.seed, "Training seed");
  train->add_option("--ce-weight", ta.ce_weight, "Cross-entropy weight");
  train->add_option("--dice-weight", ta.dice_weight, "Soft-Dice weight");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Segment samples with a checkpoint");
  infer->add_option("--checkpoint", ia.checkpoint, "Checkpoint file")->required();
  infer->add_option("--manifest", ia.manifest, "Input manifest")->required();
  infer->add_option("--out", ia.out, "Output directory")->required();

  AdaptArgs aa;
  auto* adapt = app.add_subcommand("adapt", "Test-time adaptation per sample");
  adapt->add_option("--checkpoint", aa.checkpoint, "Checkpoint file")->required();
  adapt->add_option("--manifest", aa.manifest, "Input manifest")->required();
  adapt->add_option("--out", aa.out, "Output directory")->required();
  adapt->add_option("--mode", aa.mode, "stats, entropy, or both");
  adapt->add_option("--steps", aa.steps, "Entropy descent steps");
  adapt->add_option("--lr", aa.lr, "Entropy descent learning rate");
  adapt->add_option("--stats-epochs", aa.stats_epochs, "Statistics sweeps");
  adapt->add_flag("--cumulative", aa.cumulative,
                  "Carry adapted parameters across samples");
  adapt->add_flag("--no-backtrack", aa.no_backtrack,
                  "Disable learning-rate backtracking");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Volume distributions before/after filtering");
  report->add_option("--features", ra.features, "Feature table CSV")->required();
  report->add_option("--verdicts", ra.verdicts, "Verdict CSV")->required();
  report->add_option("--out", ra.out, "Output directory")->required();
  report->add_option("--bins", ra.bins, "Histogram bins");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (*phantom) run_phantom(pa);
    if (*features) run_features(fa);
    if (*filter) run_filter(la);
    if (*metrics) run_metrics(ma);
    if (*train) run_train(ta);
    if (*infer) run_infer(ia);
    if (*adapt) run_adapt(aa);
    if (*report) run_report(ra);
  } catch (const bobqc::config_error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const bobqc::io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const bobqc::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const bobqc::numeric_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
