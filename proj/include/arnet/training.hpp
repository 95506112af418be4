#pragma once

#include <functional>

#include "arnet/dataset.hpp"
#include "arnet/metrics.hpp"
#include "arnet/model.hpp"
#include "arnet/png_io.hpp"

namespace arnet {

struct LrStep {
  int epoch = 30;        // 1-indexed epoch at which the factor kicks in
  double factor = 0.1;
};

struct TrainConfig {
  ModelConfig model;
  double lambda = 1.0;  // reason-loss coefficient; may be infinity
  std::array<double, 4> action_weights{1, 1, 2, 2};
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 30;
  int batch_size = 16;
  std::vector<LrStep> lr_schedule{{30, 0.1}};
  std::uint64_t seed = 1;
};

// Rejects contradictory settings; notably lambda=inf (reason-only training)
// with the predicted reason input, where the action head would receive
// gradients only through its own predictions while never being supervised.
void validate_config(const TrainConfig& cfg);

std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

struct LossParts {
  double total = 0;
  double action = 0;  // weighted action BCE
  double reason = 0;  // unweighted reason BCE (before lambda)
};

// total = action_bce + lambda * reason_bce, with the reason term dropped from
// the graph entirely at lambda=0 and the action term dropped at lambda=inf.
Var multitask_loss(const ForwardTrace& trace, const Tensor& action_gt,
                   const Tensor& reason_gt, const TrainConfig& cfg,
                   LossParts* parts = nullptr);

// SGD with momentum; weight decay only on parameters flagged for it.
// Parameters whose gradient was never allocated in the current step are
// skipped outright, so heads excluded from the loss stay bit-identical.
struct Sgd {
  double lr, momentum, weight_decay;
  std::vector<Tensor> velocity;

  Sgd(double lr_, double momentum_, double decay)
      : lr(lr_), momentum(momentum_), weight_decay(decay) {}
  void step(ParamSet& ps);
};

// Dataset decoded into RAM (uint8), resized to the model input size.
struct LoadedDataset {
  std::vector<ImageU8> images;
  BitMatrix actions, reasons;
  std::vector<std::string> ids;
  std::string split;

  int size() const { return actions.rows; }
  static LoadedDataset load(const DatasetManifest& m, int height, int width);
};

ImageU8 resize_image(const ImageU8& img, int height, int width);
// Gray and gray+alpha replicate into all channels; RGBA drops alpha.
ImageU8 to_rgb(const ImageU8& img);

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double loss = 0, action_loss = 0, reason_loss = 0;
  double val_action_overall = 0, val_reason_overall = 0, val_joint_overall = 0;
};

struct Checkpoint {
  std::string config_json;  // full TrainConfig
  int epoch = 0;
  double best_metric = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> weights;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
Checkpoint snapshot(const ArNet& model, const TrainConfig& cfg, int epoch,
                    double best_metric);
ArNet model_from_checkpoint(const Checkpoint& ck);
// Stable hex digest over weight names and values; reports reference it.
std::string checkpoint_fingerprint(const Checkpoint& ck);

struct TrainResult {
  std::vector<EpochStats> history;
  Checkpoint best;  // highest validation overall reason F1
  Checkpoint last;
};

using EpochCallback = std::function<void(const EpochStats&)>;

TrainResult train_model(const TrainConfig& cfg, const LoadedDataset& train_set,
                        const LoadedDataset& val_set, const EpochCallback& on_epoch = {});

// Batched inference over a loaded dataset.  `gt_actions` feeds oracle-mode
// models and is ignored otherwise.
ModelOutput predict(const ArNet& model, const LoadedDataset& ds, int batch_size,
                    const BitMatrix* gt_actions = nullptr);

MetricsReport evaluate_model(const ArNet& model, const LoadedDataset& ds,
                             const PairMatrix& pm, bool turn_exclusion = true,
                             const F1Options& opt = {}, int batch_size = 16);

// ---------------------------------------------------------------------------
// ablation sweep
// ---------------------------------------------------------------------------

struct SweepGrid {
  std::vector<double> lambdas;      // paired with every mode
  std::vector<std::string> modes;   // predicted/oracle/detached
  std::vector<int> reductions;      // attention bottleneck ratios
};

struct SweepRow {
  std::string kind;  // "lambda" or "reduction"
  double lambda = 1;
  std::string mode = "predicted";
  int reduction = 16;
  bool skipped = false;
  std::string reason;
  double action_overall = 0, reason_overall = 0, joint_overall = 0;
  std::int64_t attention_params = 0, total_params = 0;
};

std::vector<SweepRow> run_sweep(const TrainConfig& base, const SweepGrid& grid,
                                const LoadedDataset& train_set,
                                const LoadedDataset& val_set,
                                const std::function<void(const SweepRow&)>& on_row = {});

}  // namespace arnet
