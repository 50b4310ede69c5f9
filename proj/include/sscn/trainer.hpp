#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sscn/losses.hpp"
#include "sscn/model.hpp"

namespace sscn {

struct TrainConfig {
  int64_t resolution = 256;
  int64_t batch_size = 8;
  int64_t epochs = 5;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int64_t k = 256;
  int64_t r = 256;
  double violent_prob = 0.1;
  uint64_t seed = 0;
  std::string dataset_root;  // SSCN_DATA overrides when set
  int64_t class_count = 0;   // 0 = number of dataset classes
  double scale_factor = 1.0;
  bool two_stage = true;
  int64_t max_steps = 0;  // 0 = run the configured epochs
  int64_t checkpoint_every_epochs = 1;  // 0 = rolling last/best only
  std::string out_dir = "runs/default";
  LossWeights weights;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;

  // 96x96, quarter-width channels; fits a small CPU budget.
  static TrainConfig desk_scale();
  // desk scale driven for a fixed number of steps on a small image set
  static TrainConfig overfit_preset();

  ModelConfig model_config(int64_t resolved_class_count) const;
  std::string resolved_dataset_root() const;
};

// Class-labeled image directory: root/<class_dir>/<image files>.
struct Dataset {
  struct Item {
    std::string path;
    int64_t label = 0;
  };
  std::vector<Item> items;
  std::vector<std::string> class_names;

  static Dataset scan(const std::string& root);
};

struct StepLog {
  int64_t step = 0;
  double stage1 = 0, stage2 = 0, cls = 0, his = 0, tv = 0, total = 0;
};

struct TrainResult {
  std::string last_checkpoint;
  std::string best_checkpoint;
  std::vector<StepLog> logs;
  double best_val = 0;
  int64_t steps_run = 0;
};

// End-to-end optimization of the weighted objective over self-supervised
// pairs; checkpoints per epoch plus best-by-validation; CSV loss log in
// out_dir. Resumable from a checkpoint written by the same config.
TrainResult train(const TrainConfig& cfg, const std::string& resume_path = {});

}  // namespace sscn
