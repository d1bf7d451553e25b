#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dhog/data.hpp"
#include "dhog/eval.hpp"
#include "dhog/model.hpp"

namespace dhog {

enum class OptimizerKind { sgd_momentum, adam };

struct TrainConfig {
    int k = 8;           // regular head count (must match the model)
    int c = 10;          // labels per regular head
    double alpha = 0.05; // cross-head push coefficient; 0 = pull-only ablation
    int epochs = 1;      // 0 is the documented no-op (zero optimizer steps)
    int batch_size = 220;
    int repeats = 4;     // augmented views per sample
    double initial_lr = 1e-3;  // cosine-annealed to 0 over all steps
    OptimizerKind optimizer = OptimizerKind::adam;
    double momentum = 0.9;                          // sgd_momentum
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // adam
    uint64_t seed = 0;
    bool align_enabled = true;  // per-pair label alignment before push terms
    int overcluster_c = 0;      // informational; twins are configured on the model
    int eval_every = 1;         // epochs between metric evaluations; 0 = final only
    std::string checkpoint_path;  // when set, written at cadence and at the end
    int checkpoint_every = 0;     // 0 = final only
};

void validate(const TrainConfig& cfg);

// Cosine annealing: initial_lr * 0.5 * (1 + cos(pi * step / total_steps)).
double lr_at(int64_t step, int64_t total_steps, double initial_lr);

// Adam or SGD-with-momentum over the model's named parameters. State is
// exportable by name so checkpoints can restore it exactly.
class Optimizer {
  public:
    Optimizer(const TrainConfig& cfg, std::vector<std::pair<std::string, Tensor>> params);

    // One update from the currently accumulated gradients.
    void step(double lr);
    int64_t steps_taken() const { return t_; }
    void set_steps_taken(int64_t t) { t_ = t; }

    std::vector<std::pair<std::string, std::vector<double>>> named_state() const;
    void load_state(const std::vector<std::pair<std::string, std::vector<double>>>& state);

  private:
    OptimizerKind kind_;
    double momentum_, beta1_, beta2_, eps_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_;  // adam first moment / sgd momentum buffer
    std::vector<std::vector<double>> v_;  // adam second moment
    int64_t t_ = 0;
};

struct StepReport {
    double loss = 0.0;
    double mi_pull = 0.0;
    double mi_push = 0.0;
    std::vector<double> head_mi_aug;        // per pull head (twins appended)
    std::vector<double> head_push_contrib;  // per regular head, rank-weighted
};

// One optimizer update: forwards every view, assembles the pull term over
// all heads and the rank-weighted push term over stop-gradient pairs
// (aligned when cfg.align_enabled), then runs term-wise backward passes --
// the push pass is skipped entirely when alpha is 0, so an ablation run's
// gradients are bit-identical to a pull-only implementation. mi_push is
// still measured for the report in that case.
StepReport train_step(DhogModel& model, const Minibatch& batch, const TrainConfig& cfg,
                      Optimizer& opt, double lr);

struct MetricRow {
    int epoch = 0;  // 1-based
    int head = 0;   // 1-based regular head
    double mi_aug = 0.0;
    double mi_push_contrib = 0.0;
    double acc = 0.0;
    double nmi = 0.0;
    double ari = 0.0;
    int selected = 0;  // 1 on the unsupervised-choice head
};

// Header: epoch,head,mi_aug,mi_push_contrib,acc,nmi,ari,selected
void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path);

struct EpochStats {
    int epoch = 0;  // 1-based
    double loss = 0.0, mi_pull = 0.0, mi_push = 0.0;  // means over the epoch's steps
};

struct FitResult {
    std::vector<MetricRow> history;
    std::vector<EpochStats> epochs;
    int selected_head = 1;
};

using EvalCallback = std::function<void(int epoch, const std::vector<MetricRow>&)>;

// Seed for the head-selection pass of a given epoch; exposed so a later
// standalone evaluation can reproduce the selection made during fit().
uint64_t eval_stream_seed(uint64_t seed, int epoch);

// Epochs of shuffled minibatches with per-batch augmentation streams;
// deterministic per cfg.seed. Evaluation (and head selection) runs at
// cfg.eval_every and after the last epoch.
FitResult fit(DhogModel& model, const ToyDataset& ds, const AugmentationPolicy& policy,
              const TrainConfig& cfg, const EvalCallback& on_eval = {});
FitResult fit(DhogModel& model, const ImageDataset& ds, const AugmentationPolicy& policy,
              const TrainConfig& cfg, const EvalCallback& on_eval = {});

// ---------------------------------------------------------------------------
// Checkpoints: magic "DHOG", u32 version, length-prefixed JSON config
// snapshot, then length-prefixed named f64 blocks (parameters first, then
// optimizer state). Round-trips are bit-identical.

struct Checkpoint {
    uint32_t version = 1;
    std::string config_json;
    std::vector<std::pair<std::string, std::vector<double>>> params;
    std::vector<Shape> param_shapes;
    std::vector<std::pair<std::string, std::vector<double>>> opt_state;
};

Checkpoint make_checkpoint(const DhogModel& model, const Optimizer& opt, const TrainConfig& cfg,
                           int epoch, int64_t global_step);
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the architecture recorded in the checkpoint and restores its
// parameters exactly.
DhogModel model_from_checkpoint(const Checkpoint& ck);
// Restores parameters (and optimizer state if `opt` is non-null) into an
// existing model; shape or name mismatches name the offending parameter.
void restore_checkpoint(const Checkpoint& ck, DhogModel& model, Optimizer* opt);

// Config snapshot helpers shared with the experiment CLI.
std::string config_to_json(const TrainConfig& cfg, const TrunkConfig& trunk,
                           const std::vector<HeadConfig>& heads, uint64_t model_seed, int epoch,
                           int64_t global_step);
struct ConfigSnapshot {
    TrainConfig train;
    TrunkConfig trunk;
    std::vector<HeadConfig> heads;
    uint64_t model_seed = 0;
    int epoch = 0;
    int64_t global_step = 0;
};
ConfigSnapshot parse_config_json(const std::string& text);

}  // namespace dhog
