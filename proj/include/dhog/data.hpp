#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dhog/rng.hpp"
#include "dhog/tensor.hpp"

namespace dhog {

// ---------------------------------------------------------------------------
// Toy data: four 2-d Gaussians on the corners of a square.

struct ToySpec {
    std::array<std::array<double, 2>, 4> means = {{{2, 2}, {-2, 2}, {-2, -2}, {2, -2}}};
    double std_dev = 0.5;
    int n_per_cluster = 250;
    double augment_noise_std = 0.15;
    uint64_t seed = 0;
};

struct ToyDataset {
    Tensor points;            // [n x 2], grouped by cluster
    std::vector<int> labels;  // ground truth, evaluation only
};

// Deterministic per spec.seed; n_per_cluster samples per Gaussian.
ToyDataset gen_toy(const ToySpec& spec);

// CSV with header `x,y,cluster`, one row per point.
void write_toy_csv(const ToyDataset& ds, const std::string& path);

// ---------------------------------------------------------------------------
// Image data: raw byte images, channel-planar.

struct ImageDataset {
    std::vector<std::uint8_t> images;  // n*ch*h*w bytes
    std::vector<int> labels;           // empty, or length n; -1 marks unlabelled
    std::string name;
    int n = 0;
    int ch = 0;
    int h = 0;
    int w = 0;
};

// 3073-byte records: 1 label byte, then 3072 pixel bytes (R,G,B planes,
// row-major 32x32).
ImageDataset load_cifar_binary(const std::string& path);
// 3074-byte records: coarse label byte, fine label byte, 3072 pixel bytes.
// Keeps the 20 coarse labels, drops the fine ones.
ImageDataset load_cifar100_coarse(const std::string& path);
// Fixture writer for the 3073-byte layout; write-then-read is byte-identical.
void write_cifar_binary(const ImageDataset& ds, const std::string& path);

// Intersperses the second dataset evenly through the first; its labels are
// replaced by -1 so metrics skip them.
ImageDataset mix_evenly(const ImageDataset& a, const ImageDataset& unlabelled);

// Selected rows as a [n,ch,h,w] tensor with pixels scaled to [0,1].
Tensor images_to_tensor(const ImageDataset& ds, const std::vector<int>& indices);

// Copies the selected rows (and their labels) into a new dataset.
ImageDataset subset(const ImageDataset& ds, const std::vector<int>& indices);

// ---------------------------------------------------------------------------
// Augmentation: an ordered op list applied per view.

struct AugmentOp {
    enum class Kind { random_crop, horizontal_flip, grayscale, jitter, gaussian_noise };
    Kind kind;
    int size = 0;        // random_crop output side
    int pad = 0;         // random_crop zero padding
    double p = 0.0;      // flip / grayscale probability
    double range = 0.0;  // jitter: brightness +-range, contrast 1 +- range
    double noise_std = 0.0;
};

AugmentOp random_crop(int size, int pad);
AugmentOp horizontal_flip(double p);
AugmentOp grayscale(double p);
AugmentOp jitter(double range);
AugmentOp gaussian_noise(double noise_std);

struct AugmentationPolicy {
    std::vector<AugmentOp> ops;
    int repeats = 2;
};

// flip 0.5, jitter 0.2, grayscale 0.5, crop 20 with 4px pad.
AugmentationPolicy default_image_policy(int repeats = 2);
// A single gaussian_noise op for 2-d point data.
AugmentationPolicy default_toy_policy(double noise_std, int repeats = 2);

void validate(const AugmentationPolicy& policy, bool for_points);

// `repeats` independently sampled views of a [n,ch,h,w] batch in [0,1].
// Deterministic per rng state; the source batch is never modified.
std::vector<Tensor> augment_images(const Tensor& batch, const AugmentationPolicy& policy,
                                   Rng& rng);
// Same for [n,2] point batches; only gaussian_noise ops are meaningful here.
std::vector<Tensor> augment_points(const Tensor& batch, const AugmentationPolicy& policy,
                                   Rng& rng);

// Deterministic eval-side counterpart of random_crop.
Tensor center_crop(const Tensor& batch, int size, int pad);

// ---------------------------------------------------------------------------
// Batching: shuffled epoch order, final partial batch dropped. Each batch
// exposes its own augmentation seed derived from (seed, epoch, batch), so
// batches can be built in parallel without changing results.

class BatchPlan {
  public:
    BatchPlan(int n, int batch_size, uint64_t seed, int64_t epoch);

    int count() const { return count_; }
    std::vector<int> indices(int b) const;
    uint64_t augment_seed(int b) const;

  private:
    int batch_size_;
    int count_;
    uint64_t seed_;
    int64_t epoch_;
    std::vector<int> order_;
};

struct Minibatch {
    std::vector<Tensor> views;  // `repeats` augmented views
    std::vector<int> labels;    // ground truth for metrics only
    std::vector<int> indices;   // dataset rows in this batch
};

Minibatch make_minibatch(const ToyDataset& ds, const std::vector<int>& indices,
                         const AugmentationPolicy& policy, Rng rng);
Minibatch make_minibatch(const ImageDataset& ds, const std::vector<int>& indices,
                         const AugmentationPolicy& policy, Rng rng);

}  // namespace dhog
