#include "sscn/trainer.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "sscn/common.hpp"
#include "sscn/image_io.hpp"
#include "sscn/warp.hpp"

namespace sscn {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

constexpr uint64_t kPairTag = 0xDA7A;
constexpr uint64_t kSelectTag = 0x5E1;
constexpr uint64_t kSplitTag = 0x5011;
constexpr uint64_t kShuffleTag = 0xE40C;
constexpr uint64_t kValTag = 0xA11D;

struct ImageCache {
  std::unordered_map<std::string, torch::Tensor> images;
  int64_t resolution;

  const torch::Tensor& get(const std::string& path) {
    auto it = images.find(path);
    if (it == images.end()) {
      auto img = resize_image(load_image_rgb(path), resolution, resolution);
      it = images.emplace(path, std::move(img)).first;
    }
    return it->second;
  }
};

struct Batch {
  torch::Tensor L_norm;        // (B,1,H,W) f32
  torch::Tensor ref_lab_norm;  // (B,3,H,W) f32
  torch::Tensor gt_ab_norm;    // (B,2,H,W) f32
  torch::Tensor gt_ab_raw;     // (B,2,H,W) f64
  torch::Tensor labels;        // (B) i64
};

Batch assemble(const std::vector<Dataset::Item>& items, ImageCache& cache,
               const TrainConfig& cfg, uint64_t pair_index_base) {
  const auto b = static_cast<int64_t>(items.size());
  std::vector<torch::Tensor> L, ref, gt, gtraw;
  auto labels = torch::empty({b}, torch::kInt64);
  for (int64_t i = 0; i < b; ++i) {
    auto rng = make_rng(cfg.seed, kPairTag, pair_index_base + i);
    auto pair = make_training_pair(cache.get(items[i].path), rng, cfg.violent_prob,
                                   items[i].label);
    L.push_back(normalize_luminance(pair.target_L).to(torch::kFloat32).unsqueeze(0));
    ref.push_back(lab_norm_from_rgb(pair.reference_rgb));
    gt.push_back(normalize_chroma(pair.gt_ab).to(torch::kFloat32));
    gtraw.push_back(pair.gt_ab);
    labels[i] = items[i].label;
  }
  Batch out;
  out.L_norm = torch::stack(L);
  out.ref_lab_norm = torch::stack(ref);
  out.gt_ab_norm = torch::stack(gt);
  out.gt_ab_raw = torch::stack(gtraw);
  out.labels = labels;
  return out;
}

// soft-encoded targets for the distribution head, (B,h4,w4,Q) f32
torch::Tensor his_targets(const torch::Tensor& gt_ab_raw) {
  auto pooled = F::avg_pool2d(gt_ab_raw, F::AvgPool2dFuncOptions(4));
  const auto& gamut = AbGamut::instance();
  std::vector<torch::Tensor> per;
  for (int64_t i = 0; i < pooled.size(0); ++i) {
    per.push_back(encode_ab(pooled[i], gamut).probs.to(torch::kFloat32));
  }
  return torch::stack(per);
}

LossParts compute_parts(SscnModel& model, const Batch& batch, const TrainConfig& cfg,
                        std::mt19937_64& sel_rng) {
  auto fwd = model->forward_train(batch.L_norm, batch.ref_lab_norm, batch.labels, cfg.k,
                                  cfg.r, sel_rng);
  LossParts parts;
  if (cfg.weights.stage1 != 0.0 && fwd.coarse_ab.defined()) {
    parts.stage1 = smooth_l1(fwd.coarse_ab, batch.gt_ab_norm, cfg.weights.delta);
  }
  if (cfg.weights.stage2 != 0.0) {
    parts.stage2 = smooth_l1(fwd.final_ab, batch.gt_ab_norm, cfg.weights.delta);
  }
  if (cfg.weights.tv != 0.0) {
    parts.tv = tv_regularization(fwd.final_ab);
  }
  if (cfg.weights.cls != 0.0) {
    parts.cls = classification_loss(fwd.logits, batch.labels);
  }
  if (cfg.weights.his != 0.0) {
    parts.his = histogram_loss(fwd.distribution.permute({0, 2, 3, 1}),
                               his_targets(batch.gt_ab_raw));
  }
  return parts;
}

double part_value(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

std::string optimizer_to_blob(torch::optim::Adam& opt) {
  torch::serialize::OutputArchive ar;
  opt.save(ar);
  std::string blob;
  ar.save_to([&blob](const void* data, size_t n) {
    blob.append(static_cast<const char*>(data), n);
    return n;
  });
  return blob;
}

void optimizer_from_blob(torch::optim::Adam& opt, const std::string& blob) {
  torch::serialize::InputArchive ar;
  ar.load_from(blob.data(), blob.size());
  opt.load(ar);
}

}  // namespace

void TrainConfig::validate() const {
  TORCH_CHECK(resolution > 0 && resolution % 16 == 0, "resolution must be divisible by 16");
  TORCH_CHECK(batch_size > 0 && epochs > 0 && lr > 0, "positive batch/epochs/lr required");
  TORCH_CHECK(k >= 0 && r >= 0 && k + r >= 1, "need at least one selected region");
  TORCH_CHECK(k + r <= (resolution / 4) * (resolution / 4), "k+r exceeds region count");
  TORCH_CHECK(violent_prob >= 0 && violent_prob <= 1, "violent_prob must be in [0,1]");
  TORCH_CHECK(scale_factor > 0, "scale_factor must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"resolution", resolution},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"lr", lr},
          {"adam_betas", {adam_beta1, adam_beta2}},
          {"k", k},
          {"r", r},
          {"violent_prob", violent_prob},
          {"seed", seed},
          {"dataset_root", dataset_root},
          {"class_count", class_count},
          {"scale_factor", scale_factor},
          {"two_stage", two_stage},
          {"max_steps", max_steps},
          {"checkpoint_every_epochs", checkpoint_every_epochs},
          {"out_dir", out_dir},
          {"loss_weights",
           {{"stage1", weights.stage1},
            {"stage2", weights.stage2},
            {"tv", weights.tv},
            {"cls", weights.cls},
            {"his", weights.his},
            {"delta", weights.delta}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  if (j.contains("adam_betas")) {
    c.adam_beta1 = j["adam_betas"][0].get<double>();
    c.adam_beta2 = j["adam_betas"][1].get<double>();
  }
  c.k = j.value("k", c.k);
  c.r = j.value("r", c.r);
  c.violent_prob = j.value("violent_prob", c.violent_prob);
  c.seed = j.value("seed", c.seed);
  c.dataset_root = j.value("dataset_root", c.dataset_root);
  c.class_count = j.value("class_count", c.class_count);
  c.scale_factor = j.value("scale_factor", c.scale_factor);
  c.two_stage = j.value("two_stage", c.two_stage);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.checkpoint_every_epochs = j.value("checkpoint_every_epochs", c.checkpoint_every_epochs);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("loss_weights")) {
    const auto& w = j["loss_weights"];
    c.weights.stage1 = w.value("stage1", c.weights.stage1);
    c.weights.stage2 = w.value("stage2", c.weights.stage2);
    c.weights.tv = w.value("tv", c.weights.tv);
    c.weights.cls = w.value("cls", c.weights.cls);
    c.weights.his = w.value("his", c.weights.his);
    c.weights.delta = w.value("delta", c.weights.delta);
  }
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot read config: " + path);
  }
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write config: " + path);
  }
  out << to_json().dump(2) << "\n";
}

TrainConfig TrainConfig::desk_scale() {
  TrainConfig c;
  c.resolution = 96;
  c.scale_factor = 0.25;
  c.batch_size = 4;
  c.class_count = 0;  // derive from the dataset (10-class subsets)
  return c;
}

TrainConfig TrainConfig::overfit_preset() {
  auto c = desk_scale();
  c.max_steps = 2000;
  c.epochs = 1 << 20;  // step-capped
  c.lr = 3e-4;
  c.checkpoint_every_epochs = 0;
  c.violent_prob = 0.05;
  return c;
}

ModelConfig TrainConfig::model_config(int64_t resolved_class_count) const {
  ModelConfig m;
  m.resolution = resolution;
  m.scale_factor = scale_factor;
  m.class_count = resolved_class_count;
  m.two_stage = two_stage;
  return m;
}

std::string TrainConfig::resolved_dataset_root() const {
  if (const char* env = std::getenv("SSCN_DATA"); env != nullptr && *env != '\0') {
    return env;
  }
  return dataset_root;
}

Dataset Dataset::scan(const std::string& root) {
  Dataset ds;
  TORCH_CHECK(fs::is_directory(root), "dataset root is not a directory: ", root);
  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) {
      class_dirs.push_back(e.path().filename().string());
    }
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  for (size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[c])) {
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
        files.push_back(e.path().string());
      }
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) {
      ds.items.push_back({std::move(f), static_cast<int64_t>(c)});
    }
    ds.class_names.push_back(class_dirs[c]);
  }
  TORCH_CHECK(!ds.items.empty(), "empty dataset under ", root);
  return ds;
}

TrainResult train(const TrainConfig& cfg, const std::string& resume_path) {
  cfg.validate();
  auto root = cfg.resolved_dataset_root();
  TORCH_CHECK(!root.empty(), "no dataset root given (config or SSCN_DATA)");
  auto dataset = Dataset::scan(root);

  int64_t class_count = cfg.class_count > 0 ? cfg.class_count
                                            : static_cast<int64_t>(dataset.class_names.size());
  for (const auto& item : dataset.items) {
    TORCH_CHECK(item.label < class_count, "dataset has more classes than class_count");
  }

  fs::create_directories(cfg.out_dir);
  cfg.save((fs::path(cfg.out_dir) / "train_config.json").string());

  // fixed validation split: 2% of the images, at least one when possible
  std::vector<int64_t> order(dataset.items.size());
  std::iota(order.begin(), order.end(), 0);
  {
    auto rng = make_rng(cfg.seed, kSplitTag);
    std::shuffle(order.begin(), order.end(), rng);
  }
  int64_t val_n = dataset.items.size() >= 2
                      ? std::max<int64_t>(1, std::llround(0.02 * dataset.items.size()))
                      : 0;
  std::vector<int64_t> val_idx(order.begin(), order.begin() + val_n);
  std::vector<int64_t> train_idx(order.begin() + val_n, order.end());
  TORCH_CHECK(!train_idx.empty(), "dataset too small to train on");

  const auto model_cfg = cfg.model_config(class_count);
  torch::manual_seed(cfg.seed);
  SscnModel model(model_cfg);
  torch::optim::Adam optimizer(
      model->parameters(),
      torch::optim::AdamOptions(cfg.lr).betas({cfg.adam_beta1, cfg.adam_beta2}));

  int64_t start_step = 0;
  if (!resume_path.empty()) {
    auto loaded = load_checkpoint(resume_path, model_cfg);
    torch::NoGradGuard ng;
    auto src = loaded.model->named_parameters();
    for (auto& p : model->named_parameters()) {
      p.value().copy_(*src.find(p.key()));
    }
    if (!loaded.optimizer_blob.empty()) {
      optimizer_from_blob(optimizer, loaded.optimizer_blob);
    }
    start_step = loaded.meta.step;
  }

  ImageCache cache{{}, cfg.resolution};
  const int64_t spe = (static_cast<int64_t>(train_idx.size()) + cfg.batch_size - 1) /
                      cfg.batch_size;  // steps per epoch
  const int64_t total_steps =
      cfg.max_steps > 0 ? cfg.max_steps : spe * cfg.epochs;

  std::ofstream loss_csv;
  auto csv_path = fs::path(cfg.out_dir) / "loss_log.csv";
  if (start_step == 0 || !fs::exists(csv_path)) {
    loss_csv.open(csv_path);
    loss_csv << "step,L_stage1,L_stage2,L_cls,L_his,L_TV,total\n";
  } else {
    loss_csv.open(csv_path, std::ios::app);
  }

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  auto best_path = (fs::path(cfg.out_dir) / "ckpt_best.sscn").string();
  auto last_path = (fs::path(cfg.out_dir) / "ckpt_last.sscn").string();

  auto save_at = [&](const std::string& path, int64_t step, int64_t epoch) {
    CheckpointMeta meta;
    meta.step = step;
    meta.epoch = epoch;
    meta.class_names = dataset.class_names;
    auto blob = optimizer_to_blob(optimizer);
    save_checkpoint(path, model, meta, blob);
  };

  auto run_validation = [&]() {
    if (val_idx.empty()) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    torch::NoGradGuard ng;
    model->eval();
    double sum = 0;
    for (size_t i = 0; i < val_idx.size(); ++i) {
      const auto& item = dataset.items[val_idx[i]];
      auto rng = make_rng(cfg.seed, kValTag, i);
      auto pair = make_training_pair(cache.get(item.path), rng, 0.0, item.label);
      Batch b;
      b.L_norm = normalize_luminance(pair.target_L).to(torch::kFloat32).reshape(
          {1, 1, cfg.resolution, cfg.resolution});
      b.ref_lab_norm = lab_norm_from_rgb(pair.reference_rgb).unsqueeze(0);
      b.gt_ab_norm = normalize_chroma(pair.gt_ab).to(torch::kFloat32).unsqueeze(0);
      b.labels = torch::tensor({item.label}, torch::kInt64);
      auto sel_rng = make_rng(cfg.seed, kValTag + 1, i);
      auto fwd = model->forward_train(b.L_norm, b.ref_lab_norm, b.labels, cfg.k, cfg.r,
                                      sel_rng);
      sum += smooth_l1(fwd.final_ab, b.gt_ab_norm, cfg.weights.delta).item<double>();
    }
    model->train();
    return sum / static_cast<double>(val_idx.size());
  };

  model->train();
  std::vector<int64_t> epoch_order;
  int64_t shuffled_epoch = -1;
  for (int64_t step = start_step; step < total_steps; ++step) {
    const int64_t epoch = step / spe;
    const int64_t pos = step % spe;
    if (cfg.max_steps == 0 && epoch >= cfg.epochs) {
      break;
    }
    if (epoch != shuffled_epoch) {
      epoch_order = train_idx;
      auto rng = make_rng(cfg.seed, kShuffleTag, epoch);
      std::shuffle(epoch_order.begin(), epoch_order.end(), rng);
      shuffled_epoch = epoch;
    }

    std::vector<Dataset::Item> items;
    for (int64_t i = pos * cfg.batch_size;
         i < std::min<int64_t>((pos + 1) * cfg.batch_size, epoch_order.size()); ++i) {
      items.push_back(dataset.items[epoch_order[i]]);
    }
    auto batch = assemble(items, cache, cfg, static_cast<uint64_t>(step) * cfg.batch_size);

    auto sel_rng = make_rng(cfg.seed, kSelectTag, step);
    auto parts = compute_parts(model, batch, cfg, sel_rng);
    torch::Tensor total;
    try {
      total = total_loss(parts, cfg.weights);
    } catch (const std::exception&) {
      // parameters have not been stepped with the bad gradient yet
      save_at((fs::path(cfg.out_dir) / "ckpt_abort.sscn").string(), step, epoch);
      throw;
    }

    optimizer.zero_grad();
    total.backward();
    optimizer.step();

    StepLog log{step + 1,
                part_value(parts.stage1),
                part_value(parts.stage2),
                part_value(parts.cls),
                part_value(parts.his),
                part_value(parts.tv),
                total.item<double>()};
    result.logs.push_back(log);
    loss_csv << log.step << "," << std::setprecision(10) << log.stage1 << "," << log.stage2
             << "," << log.cls << "," << log.his << "," << log.tv << "," << log.total
             << "\n";
    loss_csv.flush();
    ++result.steps_run;

    const bool epoch_end = (pos == spe - 1) || (step + 1 == total_steps);
    if (epoch_end) {
      double val = run_validation();
      if (cfg.checkpoint_every_epochs > 0 && (epoch % cfg.checkpoint_every_epochs == 0)) {
        save_at((fs::path(cfg.out_dir) / ("ckpt_epoch_" + std::to_string(epoch) + ".sscn"))
                    .string(),
                step + 1, epoch);
      }
      if (std::isnan(val) || val < result.best_val) {
        if (!std::isnan(val)) {
          result.best_val = val;
        }
        save_at(best_path, step + 1, epoch);
        result.best_checkpoint = best_path;
      }
      save_at(last_path, step + 1, epoch);
      result.last_checkpoint = last_path;
    }
  }

  if (result.last_checkpoint.empty()) {
    save_at(last_path, start_step, 0);
    result.last_checkpoint = last_path;
  }
  if (result.best_checkpoint.empty()) {
    result.best_checkpoint = result.last_checkpoint;
  }
  model->mark_trained();
  return result;
}

}  // namespace sscn
