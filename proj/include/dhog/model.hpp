#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dhog/mi.hpp"
#include "dhog/rng.hpp"
#include "dhog/tensor.hpp"

namespace dhog {

enum class TrunkKind { mlp, smallcnn };
enum class Mode { train, eval };

// Shared trunk. Heads read the trunk activation at their branch point;
// branch points must be nondecreasing so earlier heads never branch deeper
// than later ones (the simple-to-complex hierarchy).
struct TrunkConfig {
  TrunkKind kind = TrunkKind::mlp;

  // mlp trunk: input_dim -> mlp_widths..., relu after every layer.
  int input_dim = 2;
  std::vector<int> mlp_widths = {64, 64};

  // smallcnn trunk: [in_channels, in_h, in_w] input; one 3x3 stride-2 pad-1
  // conv + relu per entry of conv_channels.
  int in_channels = 3;
  int in_h = 32;
  int in_w = 32;
  std::vector<int> conv_channels = {32, 64, 128};

  // 1-based trunk depth each head reads from; size = number of heads.
  std::vector<int> branch_points;
};

struct HeadConfig {
  int index = 1;                      // 1-based hierarchy position
  std::vector<int> own_block_widths;  // per-head sub-network; empty = one
                                      // block at the branch activation width
  int mlp_hidden = 200;
  int c = 2;
  int overcluster_c = 0;  // > 0 adds an overclustering twin with that many labels

  // smallcnn heads only: pool to a feature vector before the own block (the
  // block widths are then fully-connected widths instead of conv channels).
  bool pool_before_block = false;
};

struct ForwardResult {
  // One labelling per head, overclustering twins appended after the regular
  // heads in head order.
  std::vector<LabelDistribution> pull;
  // Same regular heads applied to stop-gradient trunk features: the inputs
  // of the cross-head push term. Empty in eval mode or when not requested.
  std::vector<LabelDistribution> push;
};

class DhogModel {
 public:
  DhogModel(TrunkConfig trunk, std::vector<HeadConfig> heads, uint64_t seed);

  // Trunk activations are computed once and shared across heads. In train
  // mode the result carries gradients; eval mode builds no graph.
  ForwardResult forward(const Tensor& batch, Mode mode, bool with_push = true);

  // Named parameters in deterministic construction order.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  std::vector<std::pair<std::string, Tensor>> parameters_with_prefix(const std::string& prefix) const;
  int64_t parameter_count() const;

  const TrunkConfig& trunk_config() const { return trunk_; }
  const std::vector<HeadConfig>& head_configs() const { return head_cfgs_; }
  uint64_t seed() const { return seed_; }
  int head_count() const { return static_cast<int>(head_cfgs_.size()); }

 private:
  struct Linear {
    Tensor w, b;  // w [in x out], b [out]
  };
  struct Conv {
    Tensor k, b;  // k [co x ci x 3 x 3], b [co]
  };
  struct HeadNet {
    int head_index = 1;
    bool overcluster = false;
    int branch = 1;
    bool pool_before_block = false;
    std::vector<Conv> conv_blocks;  // spatial own blocks (smallcnn only)
    std::vector<Linear> fc_blocks;  // fully-connected own blocks
    Linear fc1, fc2;                // classifier: hidden relu, then labels
  };

  Tensor make_weight(const std::string& name, Shape shape, int fan_in);
  Tensor make_bias(const std::string& name, int width);
  Linear make_linear(const std::string& name, int in, int out);
  Conv make_conv(const std::string& name, int ci, int co);
  HeadNet build_head(const HeadConfig& cfg, int branch, int c, bool overcluster,
                     const std::string& name);
  std::vector<Tensor> trunk_forward(const Tensor& batch) const;
  LabelDistribution head_forward(const HeadNet& head, const Tensor& feature) const;

  TrunkConfig trunk_;
  std::vector<HeadConfig> head_cfgs_;
  uint64_t seed_;
  Rng rng_;

  std::vector<Linear> trunk_fc_;
  std::vector<Conv> trunk_conv_;
  std::vector<HeadNet> heads_;  // regular heads in order, then twins
  std::vector<std::pair<std::string, Tensor>> params_;
};

// Argmax class per row; ties break toward the smallest label index.
std::vector<int> hard_labels(const LabelDistribution& dist);

}  // namespace dhog
