#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "sscn/color_space.hpp"
#include "sscn/common.hpp"
#include "sscn/evaluator.hpp"
#include "sscn/image_io.hpp"
#include "sscn/model.hpp"
#include "sscn/trainer.hpp"
#include "sscn/warp.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace sscn;

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ';');
  return s;
}

AttendMode parse_mode(const std::string& mode) {
  if (mode == "dense") {
    return AttendMode::kDense;
  }
  if (mode == "sparse") {
    return AttendMode::kSparse;
  }
  throw std::runtime_error("unknown mode: " + mode + " (expected dense|sparse)");
}

std::vector<std::string> list_images(const std::string& root) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) {
      continue;
    }
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
      files.push_back(e.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<int64_t> parse_int_list(const std::string& csv) {
  std::vector<int64_t> out;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        out.push_back(std::stoll(cur));
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  return out;
}

struct ColorizeArgs {
  std::string target, ref, out, checkpoint, mode = "sparse", save_ab;
  int64_t k = 256, r = 256;
  uint64_t seed = 0;
};

int run_colorize(const ColorizeArgs& a) {
  auto loaded = load_checkpoint(a.checkpoint);
  auto target = load_image_rgb(a.target);
  auto reference = load_image_rgb(a.ref);
  auto lab = loaded.model->colorize(rgb_to_lab(target).L, reference, parse_mode(a.mode), a.k,
                                    a.r, a.seed);
  save_image_rgb(a.out, lab_to_rgb(lab));
  if (!a.save_ab.empty()) {
    save_ab_png16(a.save_ab, lab.ab());
  }
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string manifest, checkpoint, report, table, mode = "sparse";
  int64_t k = 256, r = 256, jobs = 1;
  uint64_t seed = 0;
  bool with_his = false;
};

EvalReport run_eval_once(SscnModel& model, const std::vector<ManifestEntry>& entries,
                         const EvaluateArgs& a, const std::string& tag) {
  EvalOptions opts;
  opts.mode = parse_mode(a.mode);
  opts.k = a.k;
  opts.r = a.r;
  opts.selection_seed = a.seed;
  opts.jobs = a.jobs;
  opts.with_his = a.with_his;
  opts.checkpoint_tag = tag;
  return evaluate(model, entries, opts);
}

int run_evaluate(const EvaluateArgs& a) {
  auto loaded = load_checkpoint(a.checkpoint);
  auto entries = read_manifest(a.manifest);
  auto tag = a.checkpoint + "@step" + std::to_string(loaded.meta.step);
  auto report = run_eval_once(loaded.model, entries, a, tag);
  report.validate();
  std::ofstream out(a.report);
  if (!out) {
    throw std::runtime_error("cannot write report: " + a.report);
  }
  out << report.to_csv();
  if (!a.table.empty()) {
    std::ofstream t(a.table);
    t << report.to_table();
  }
  std::cout << report.to_table();
  std::cout << "wrote " << a.report << "\n";
  return 0;
}

struct ManifestArgs {
  std::string images, out, augs = "TPS,RR,RC", materialize;
  int64_t count = 0;
  uint64_t seed = 0;
};

int run_make_manifest(const ManifestArgs& a) {
  auto files = list_images(a.images);
  if (files.empty()) {
    throw std::runtime_error("no images under " + a.images);
  }
  if (a.count > 0 && static_cast<int64_t>(files.size()) > a.count) {
    files.resize(a.count);
  }
  std::vector<AugType> augs;
  std::string cur;
  for (char c : a.augs + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        augs.push_back(aug_type_from_name(cur));
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  std::vector<ManifestEntry> entries;
  uint64_t i = 0;
  for (const auto& f : files) {
    for (auto aug : augs) {
      entries.push_back({f, aug, mix_seed(a.seed, 0xF00D, i++)});
    }
  }
  write_manifest(a.out, entries);
  std::cout << "wrote " << a.out << " (" << entries.size() << " triplets)\n";

  if (!a.materialize.empty()) {
    fs::create_directories(a.materialize);
    for (size_t n = 0; n < entries.size(); ++n) {
      const auto& e = entries[n];
      auto rng = make_rng(e.seed);
      auto t = make_eval_triplet(load_image_rgb(e.source_path), e.aug, rng);
      auto stem = fs::path(a.materialize) / (std::to_string(n) + "_" + aug_type_name(e.aug));
      auto L_gray = torch::stack({t.target_L, t.target_L, t.target_L}) * 2.55;
      save_image_rgb(stem.string() + "_target.png", L_gray);
      save_image_rgb(stem.string() + "_reference.png", t.reference_rgb);
      save_image_rgb(stem.string() + "_gt.png", t.gt_rgb);
    }
    std::cout << "materialized " << entries.size() << " triplets under " << a.materialize
              << "\n";
  }
  return 0;
}

struct DumpArgs {
  std::string target, ref, checkpoint, out, mode = "sparse", queries;
  int64_t k = 256, r = 256;
  uint64_t seed = 0;
};

int run_dump_attention(const DumpArgs& a) {
  auto loaded = load_checkpoint(a.checkpoint);
  auto target = load_image_rgb(a.target);
  auto reference = load_image_rgb(a.ref);
  ColorizeDiagnostics diag;
  (void)loaded.model->colorize(rgb_to_lab(target).L, reference, parse_mode(a.mode), a.k, a.r,
                               a.seed, &diag);
  std::vector<int64_t> queries;
  if (!a.queries.empty()) {
    queries = parse_int_list(a.queries);
  }
  auto j = diagnostics_json(diag, queries);
  std::ofstream out(a.out);
  if (!out) {
    throw std::runtime_error("cannot write " + a.out);
  }
  out << j.dump(2) << "\n";
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

struct AblateArgs {
  std::string manifest, checkpoint, compare, report;
  std::vector<std::string> sweep;
  int64_t jobs = 1;
  uint64_t seed = 0;
};

int run_ablate(const AblateArgs& a) {
  auto entries = read_manifest(a.manifest);
  std::vector<int64_t> ks = {256}, rs = {256};
  for (const auto& term : a.sweep) {
    auto eq = term.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("bad sweep term: " + term + " (expected k=... or r=...)");
    }
    auto key = term.substr(0, eq);
    auto vals = parse_int_list(term.substr(eq + 1));
    if (key == "k") {
      ks = vals;
    } else if (key == "r") {
      rs = vals;
    } else {
      throw std::runtime_error("bad sweep key: " + key);
    }
  }

  std::vector<std::pair<std::string, std::string>> checkpoints = {{a.checkpoint, "primary"}};
  if (!a.compare.empty()) {
    checkpoints.emplace_back(a.compare, "compare");
  }

  std::ostringstream csv;
  csv << "checkpoint,variant,k,r,psnr_db,ssim\n";
  std::cout << std::left << std::setw(10) << "variant" << std::setw(12) << "two_stage"
            << std::setw(6) << "k" << std::setw(6) << "r" << std::setw(12) << "psnr"
            << std::setw(10) << "ssim" << "\n";
  for (const auto& [path, label] : checkpoints) {
    auto loaded = load_checkpoint(path);
    const int64_t regions = loaded.model->config.regions();
    for (auto k : ks) {
      for (auto r : rs) {
        if (k + r < 1 || k + r > regions) {
          continue;  // out of range for this resolution
        }
        EvaluateArgs ea;
        ea.k = k;
        ea.r = r;
        ea.jobs = a.jobs;
        ea.seed = a.seed;
        auto report = run_eval_once(loaded.model, entries, ea, path);
        csv << path << "," << label << "," << k << "," << r << "," << std::fixed
            << std::setprecision(6) << report.overall.psnr << "," << report.overall.ssim
            << "\n";
        std::ostringstream p, s;
        p << std::fixed << std::setprecision(2) << report.overall.psnr;
        s << std::fixed << std::setprecision(3) << report.overall.ssim;
        std::cout << std::left << std::setw(10) << label << std::setw(12)
                  << (loaded.model->config.two_stage ? "yes" : "no") << std::setw(6) << k
                  << std::setw(6) << r << std::setw(12) << p.str() << std::setw(10) << s.str()
                  << "\n";
      }
    }
  }
  std::ofstream out(a.report);
  if (!out) {
    throw std::runtime_error("cannot write report: " + a.report);
  }
  out << csv.str();
  std::cout << "wrote " << a.report << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, preset, resume, data, out_dir;
  int64_t steps = -1;
  int64_t seed = -1;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.preset.empty()) {
    if (a.preset == "desk") {
      cfg = TrainConfig::desk_scale();
    } else if (a.preset == "overfit") {
      cfg = TrainConfig::overfit_preset();
    } else if (a.preset == "paper") {
      cfg = TrainConfig();
    } else {
      throw std::runtime_error("unknown preset: " + a.preset);
    }
  }
  if (!a.config.empty()) {
    cfg = TrainConfig::load(a.config);
  }
  if (!a.data.empty()) {
    cfg.dataset_root = a.data;
  }
  if (!a.out_dir.empty()) {
    cfg.out_dir = a.out_dir;
  }
  if (a.steps >= 0) {
    cfg.max_steps = a.steps;
  }
  if (a.seed >= 0) {
    cfg.seed = static_cast<uint64_t>(a.seed);
  }
  auto result = train(cfg, a.resume);
  std::cout << "steps=" << result.steps_run << " best_val=" << result.best_val << "\n";
  std::cout << "last checkpoint: " << result.last_checkpoint << "\n";
  std::cout << "best checkpoint: " << result.best_checkpoint << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sscn: exemplar-based image colorization"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* cmd_train = app.add_subcommand("train", "optimize the model on a labeled image tree");
  cmd_train->add_option("--config", train_args.config, "TrainConfig JSON file");
  cmd_train->add_option("--preset", train_args.preset, "paper|desk|overfit");
  cmd_train->add_option("--resume", train_args.resume, "checkpoint to resume from");
  cmd_train->add_option("--data", train_args.data, "dataset root (SSCN_DATA overrides)");
  cmd_train->add_option("--out", train_args.out_dir, "output directory");
  cmd_train->add_option("--steps", train_args.steps, "cap on optimization steps");
  cmd_train->add_option("--seed", train_args.seed, "seed override");

  ColorizeArgs col;
  auto* cmd_col = app.add_subcommand("colorize", "colorize a gray target from a reference");
  cmd_col->add_option("--target", col.target, "gray target image")->required();
  cmd_col->add_option("--ref", col.ref, "color reference image")->required();
  cmd_col->add_option("--out", col.out, "output PNG")->required();
  cmd_col->add_option("--checkpoint", col.checkpoint, "model checkpoint")->required();
  cmd_col->add_option("--mode", col.mode, "dense|sparse");
  cmd_col->add_option("--k", col.k, "top-CAM region count");
  cmd_col->add_option("--r", col.r, "random region count");
  cmd_col->add_option("--seed", col.seed, "selection seed");
  cmd_col->add_option("--save-ab", col.save_ab, "also dump raw ab planes (16-bit png)");

  EvaluateArgs ev;
  auto* cmd_ev = app.add_subcommand("evaluate", "self-augmentation PSNR/SSIM protocol");
  cmd_ev->add_option("--manifest", ev.manifest, "JSONL triplet manifest")->required();
  cmd_ev->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  cmd_ev->add_option("--report", ev.report, "CSV report path")->required();
  cmd_ev->add_option("--table", ev.table, "also write the text table here");
  cmd_ev->add_option("--mode", ev.mode, "dense|sparse");
  cmd_ev->add_option("--k", ev.k, "top-CAM region count");
  cmd_ev->add_option("--r", ev.r, "random region count");
  cmd_ev->add_option("--seed", ev.seed, "selection seed");
  cmd_ev->add_option("--jobs", ev.jobs, "worker pool size");
  cmd_ev->add_flag("--his", ev.with_his, "include histogram intersection (diagnostic)");

  ManifestArgs mf;
  auto* cmd_mf = app.add_subcommand("make-manifest", "build an evaluation manifest");
  cmd_mf->add_option("--images", mf.images, "image directory")->required();
  cmd_mf->add_option("--out", mf.out, "manifest JSONL path")->required();
  cmd_mf->add_option("--count", mf.count, "max source images (0 = all)");
  cmd_mf->add_option("--augs", mf.augs, "comma list of TPS,RR,RC");
  cmd_mf->add_option("--seed", mf.seed, "seed for per-triplet streams");
  cmd_mf->add_option("--materialize", mf.materialize, "write triplet PNGs to this directory");

  DumpArgs dump;
  auto* cmd_dump = app.add_subcommand("dump-attention", "export attention rows as JSON");
  cmd_dump->add_option("--target", dump.target, "gray target image")->required();
  cmd_dump->add_option("--ref", dump.ref, "color reference image")->required();
  cmd_dump->add_option("--checkpoint", dump.checkpoint, "model checkpoint")->required();
  cmd_dump->add_option("--out", dump.out, "output JSON path")->required();
  cmd_dump->add_option("--mode", dump.mode, "dense|sparse");
  cmd_dump->add_option("--k", dump.k, "top-CAM region count");
  cmd_dump->add_option("--r", dump.r, "random region count");
  cmd_dump->add_option("--seed", dump.seed, "selection seed");
  cmd_dump->add_option("--queries", dump.queries, "comma list of query rows (default all)");

  AblateArgs ab;
  auto* cmd_ab = app.add_subcommand("ablate", "k/r sweeps and checkpoint comparisons");
  cmd_ab->add_option("--manifest", ab.manifest, "JSONL triplet manifest")->required();
  cmd_ab->add_option("--checkpoint", ab.checkpoint, "model checkpoint")->required();
  cmd_ab->add_option("--compare", ab.compare, "second checkpoint for side-by-side rows");
  cmd_ab->add_option("--report", ab.report, "CSV report path")->required();
  cmd_ab->add_option("--sweep", ab.sweep, "sweep terms, e.g. k=128,256 r=0,128");
  cmd_ab->add_option("--jobs", ab.jobs, "worker pool size");
  cmd_ab->add_option("--seed", ab.seed, "selection seed");

  try {
    app.parse(argc, argv);
    if (*cmd_train) {
      return run_train(train_args);
    }
    if (*cmd_col) {
      return run_colorize(col);
    }
    if (*cmd_ev) {
      return run_evaluate(ev);
    }
    if (*cmd_mf) {
      return run_make_manifest(mf);
    }
    if (*cmd_dump) {
      return run_dump_attention(dump);
    }
    if (*cmd_ab) {
      return run_ablate(ab);
    }
    std::cerr << "error: no command\n";
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);  // --help
    }
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}
