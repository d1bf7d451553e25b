#include "dhog/data.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <utility>

#include "dhog/errors.hpp"

namespace dhog {

namespace {

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

void check_image_batch(const Tensor& batch, const char* who) {
    if (!batch.defined() || batch.ndim() != 4)
        throw ShapeError(std::string(who) + " expects a [n,ch,h,w] batch");
}

ImageDataset load_records(const std::string& path, int label_bytes, const char* what) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path);
    const std::streamoff size = in.tellg();
    const int rec = label_bytes + 3072;
    if (size % rec != 0)
        throw IoError(path + ": size " + std::to_string(size) + " is not a multiple of " +
                      std::to_string(rec) + " (" + what + ")");
    const int n = static_cast<int>(size / rec);

    ImageDataset ds;
    ds.n = n;
    ds.ch = 3;
    ds.h = 32;
    ds.w = 32;
    ds.name = what;
    ds.images.resize(static_cast<size_t>(n) * 3072);
    ds.labels.resize(static_cast<size_t>(n));

    in.seekg(0);
    std::vector<char> buf(static_cast<size_t>(rec));
    for (int i = 0; i < n; ++i) {
        if (!in.read(buf.data(), rec)) throw IoError(path + ": short read");
        ds.labels[static_cast<size_t>(i)] = static_cast<unsigned char>(buf[0]);
        std::transform(buf.begin() + label_bytes, buf.end(),
                       ds.images.begin() + static_cast<int64_t>(i) * 3072,
                       [](char c) { return static_cast<std::uint8_t>(c); });
    }
    return ds;
}

}  // namespace

ToyDataset gen_toy(const ToySpec& spec) {
    if (!(spec.std_dev > 0.0)) throw ConfigError("toy std_dev must be positive");
    if (spec.augment_noise_std < 0.0) throw ConfigError("toy augment_noise_std must be >= 0");
    if (spec.n_per_cluster < 1) throw ConfigError("toy n_per_cluster must be positive");

    Rng rng(spec.seed);
    const int n = 4 * spec.n_per_cluster;
    std::vector<double> pts(static_cast<size_t>(n) * 2);
    std::vector<int> labels(static_cast<size_t>(n));
    size_t at = 0;
    for (int k = 0; k < 4; ++k) {
        for (int i = 0; i < spec.n_per_cluster; ++i) {
            pts[at * 2] = spec.means[static_cast<size_t>(k)][0] + spec.std_dev * rng.normal();
            pts[at * 2 + 1] = spec.means[static_cast<size_t>(k)][1] + spec.std_dev * rng.normal();
            labels[at] = k;
            ++at;
        }
    }
    ToyDataset ds;
    ds.points = Tensor::from_values({n, 2}, std::move(pts));
    ds.labels = std::move(labels);
    return ds;
}

void write_toy_csv(const ToyDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "x,y,cluster\n" << std::setprecision(17);
    const int n = ds.points.dim(0);
    for (int i = 0; i < n; ++i)
        out << ds.points.at(i, 0) << ',' << ds.points.at(i, 1) << ','
            << ds.labels[static_cast<size_t>(i)] << '\n';
    if (!out) throw IoError("failed writing " + path);
}

ImageDataset load_cifar_binary(const std::string& path) {
    return load_records(path, 1, "cifar10");
}

ImageDataset load_cifar100_coarse(const std::string& path) {
    return load_records(path, 2, "cifar100-20");
}

void write_cifar_binary(const ImageDataset& ds, const std::string& path) {
    if (ds.ch != 3 || ds.h != 32 || ds.w != 32)
        throw ConfigError("cifar writer needs 3x32x32 images");
    if (static_cast<int>(ds.labels.size()) != ds.n)
        throw ConfigError("cifar writer needs one label per image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (int i = 0; i < ds.n; ++i) {
        const int label = ds.labels[static_cast<size_t>(i)];
        if (label < 0 || label > 255) throw NumericError("cifar label outside byte range");
        const char lb = static_cast<char>(label);
        out.write(&lb, 1);
        out.write(reinterpret_cast<const char*>(ds.images.data()) + static_cast<int64_t>(i) * 3072,
                  3072);
    }
    if (!out) throw IoError("failed writing " + path);
}

ImageDataset mix_evenly(const ImageDataset& a, const ImageDataset& unlabelled) {
    if (a.ch != unlabelled.ch || a.h != unlabelled.h || a.w != unlabelled.w)
        throw ShapeError("mixed datasets must share image dimensions");
    const int total = a.n + unlabelled.n;
    const int64_t px = static_cast<int64_t>(a.ch) * a.h * a.w;

    ImageDataset out;
    out.n = total;
    out.ch = a.ch;
    out.h = a.h;
    out.w = a.w;
    out.name = a.name + "+" + unlabelled.name;
    out.images.resize(static_cast<size_t>(total) * static_cast<size_t>(px));
    out.labels.resize(static_cast<size_t>(total));

    // Unlabelled rows land at the midpoints of an even partition; the gap
    // between consecutive positions is total/unlabelled.n >= 1, so the slots
    // are distinct.
    std::vector<bool> from_u(static_cast<size_t>(total), false);
    for (int j = 0; j < unlabelled.n; ++j) {
        const int64_t pos = (static_cast<int64_t>(j) * 2 + 1) * total / (2 * unlabelled.n);
        from_u[static_cast<size_t>(pos)] = true;
    }
    int ia = 0, iu = 0;
    for (int i = 0; i < total; ++i) {
        const ImageDataset& src = from_u[static_cast<size_t>(i)] ? unlabelled : a;
        int& idx = from_u[static_cast<size_t>(i)] ? iu : ia;
        std::copy_n(src.images.begin() + idx * px, px, out.images.begin() + i * px);
        out.labels[static_cast<size_t>(i)] =
            from_u[static_cast<size_t>(i)]
                ? -1
                : (a.labels.empty() ? -1 : a.labels[static_cast<size_t>(idx)]);
        ++idx;
    }
    return out;
}

Tensor images_to_tensor(const ImageDataset& ds, const std::vector<int>& indices) {
    const int64_t px = static_cast<int64_t>(ds.ch) * ds.h * ds.w;
    std::vector<double> vals(indices.size() * static_cast<size_t>(px));
    size_t at = 0;
    for (int idx : indices) {
        if (idx < 0 || idx >= ds.n) throw ShapeError("image index out of range");
        for (int64_t j = 0; j < px; ++j)
            vals[at++] = static_cast<double>(ds.images[static_cast<size_t>(idx * px + j)]) / 255.0;
    }
    return Tensor::from_values({static_cast<int>(indices.size()), ds.ch, ds.h, ds.w},
                               std::move(vals));
}

ImageDataset subset(const ImageDataset& ds, const std::vector<int>& indices) {
    const int64_t px = static_cast<int64_t>(ds.ch) * ds.h * ds.w;
    ImageDataset out;
    out.n = static_cast<int>(indices.size());
    out.ch = ds.ch;
    out.h = ds.h;
    out.w = ds.w;
    out.name = ds.name + "-subset";
    out.images.resize(indices.size() * static_cast<size_t>(px));
    if (!ds.labels.empty()) out.labels.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= ds.n) throw ShapeError("image index out of range");
        std::copy_n(ds.images.begin() + idx * px, px,
                    out.images.begin() + static_cast<int64_t>(i) * px);
        if (!ds.labels.empty()) out.labels[i] = ds.labels[static_cast<size_t>(idx)];
    }
    return out;
}

AugmentOp random_crop(int size, int pad) {
    AugmentOp op;
    op.kind = AugmentOp::Kind::random_crop;
    op.size = size;
    op.pad = pad;
    return op;
}

AugmentOp horizontal_flip(double p) {
    AugmentOp op;
    op.kind = AugmentOp::Kind::horizontal_flip;
    op.p = p;
    return op;
}

AugmentOp grayscale(double p) {
    AugmentOp op;
    op.kind = AugmentOp::Kind::grayscale;
    op.p = p;
    return op;
}

AugmentOp jitter(double range) {
    AugmentOp op;
    op.kind = AugmentOp::Kind::jitter;
    op.range = range;
    return op;
}

AugmentOp gaussian_noise(double noise_std) {
    AugmentOp op;
    op.kind = AugmentOp::Kind::gaussian_noise;
    op.noise_std = noise_std;
    return op;
}

AugmentationPolicy default_image_policy(int repeats) {
    AugmentationPolicy p;
    p.ops = {horizontal_flip(0.5), jitter(0.2), grayscale(0.5), random_crop(20, 4)};
    p.repeats = repeats;
    return p;
}

AugmentationPolicy default_toy_policy(double noise_std, int repeats) {
    AugmentationPolicy p;
    p.ops = {gaussian_noise(noise_std)};
    p.repeats = repeats;
    return p;
}

void validate(const AugmentationPolicy& policy, bool for_points) {
    if (policy.repeats < 2) throw ConfigError("augmentation needs at least 2 repeats");
    for (const AugmentOp& op : policy.ops) {
        switch (op.kind) {
            case AugmentOp::Kind::random_crop:
                if (op.size < 1 || op.pad < 0) throw ConfigError("bad crop size/pad");
                break;
            case AugmentOp::Kind::horizontal_flip:
            case AugmentOp::Kind::grayscale:
                if (op.p < 0.0 || op.p > 1.0) throw ConfigError("probability outside [0,1]");
                break;
            case AugmentOp::Kind::jitter:
                if (op.range < 0.0 || op.range > 1.0) throw ConfigError("jitter range outside [0,1]");
                break;
            case AugmentOp::Kind::gaussian_noise:
                if (op.noise_std < 0.0) throw ConfigError("noise std must be >= 0");
                break;
        }
        if (for_points && op.kind != AugmentOp::Kind::gaussian_noise)
            throw ConfigError("point data supports gaussian_noise only");
    }
}

std::vector<Tensor> augment_images(const Tensor& batch, const AugmentationPolicy& policy,
                                   Rng& rng) {
    check_image_batch(batch, "augment_images");
    validate(policy, /*for_points=*/false);
    const int n = batch.dim(0);
    const int ch = batch.dim(1);

    std::vector<Tensor> views;
    views.reserve(static_cast<size_t>(policy.repeats));
    for (int v = 0; v < policy.repeats; ++v) {
        std::vector<double> cur(batch.values().begin(), batch.values().end());
        int h = batch.dim(2);
        int w = batch.dim(3);
        for (const AugmentOp& op : policy.ops) {
            const int64_t img_px = static_cast<int64_t>(ch) * h * w;
            switch (op.kind) {
                case AugmentOp::Kind::horizontal_flip:
                    for (int i = 0; i < n; ++i) {
                        if (rng.uniform() >= op.p) continue;
                        double* img = cur.data() + i * img_px;
                        for (int c = 0; c < ch; ++c)
                            for (int y = 0; y < h; ++y) {
                                double* row = img + (static_cast<int64_t>(c) * h + y) * w;
                                std::reverse(row, row + w);
                            }
                    }
                    break;
                case AugmentOp::Kind::jitter:
                    for (int i = 0; i < n; ++i) {
                        const double bright = rng.uniform(-op.range, op.range);
                        const double contrast = rng.uniform(1.0 - op.range, 1.0 + op.range);
                        // Contrast scales around mid-gray; written as x*c + off
                        // so range 0 is an exact identity.
                        const double off = 0.5 * (1.0 - contrast) + bright;
                        double* img = cur.data() + i * img_px;
                        for (int64_t j = 0; j < img_px; ++j)
                            img[j] = clamp01(img[j] * contrast + off);
                    }
                    break;
                case AugmentOp::Kind::grayscale:
                    for (int i = 0; i < n; ++i) {
                        if (rng.uniform() >= op.p) continue;
                        if (ch != 3) throw ConfigError("grayscale needs 3-channel images");
                        double* img = cur.data() + i * img_px;
                        const int64_t plane = static_cast<int64_t>(h) * w;
                        for (int64_t j = 0; j < plane; ++j) {
                            const double luma = 0.299 * img[j] + 0.587 * img[plane + j] +
                                                0.114 * img[2 * plane + j];
                            img[j] = luma;
                            img[plane + j] = luma;
                            img[2 * plane + j] = luma;
                        }
                    }
                    break;
                case AugmentOp::Kind::random_crop: {
                    const int ph = h + 2 * op.pad;
                    const int pw = w + 2 * op.pad;
                    if (op.size > ph || op.size > pw)
                        throw ConfigError("crop size exceeds the padded image");
                    std::vector<double> next(static_cast<size_t>(n) * ch * op.size * op.size);
                    for (int i = 0; i < n; ++i) {
                        const int y0 = rng.uniform_int(ph - op.size + 1);
                        const int x0 = rng.uniform_int(pw - op.size + 1);
                        const double* img = cur.data() + i * img_px;
                        double* dst =
                            next.data() + static_cast<int64_t>(i) * ch * op.size * op.size;
                        for (int c = 0; c < ch; ++c)
                            for (int yy = 0; yy < op.size; ++yy)
                                for (int xx = 0; xx < op.size; ++xx) {
                                    const int sy = y0 + yy - op.pad;
                                    const int sx = x0 + xx - op.pad;
                                    const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
                                    dst[(static_cast<int64_t>(c) * op.size + yy) * op.size + xx] =
                                        inside
                                            ? img[(static_cast<int64_t>(c) * h + sy) * w + sx]
                                            : 0.0;
                                }
                    }
                    cur = std::move(next);
                    h = op.size;
                    w = op.size;
                    break;
                }
                case AugmentOp::Kind::gaussian_noise:
                    for (double& x : cur) x += op.noise_std * rng.normal();
                    break;
            }
        }
        views.push_back(Tensor::from_values({n, ch, h, w}, std::move(cur)));
    }
    return views;
}

std::vector<Tensor> augment_points(const Tensor& batch, const AugmentationPolicy& policy,
                                   Rng& rng) {
    if (!batch.defined() || batch.ndim() != 2)
        throw ShapeError("augment_points expects a [n,d] batch");
    validate(policy, /*for_points=*/true);

    std::vector<Tensor> views;
    views.reserve(static_cast<size_t>(policy.repeats));
    for (int v = 0; v < policy.repeats; ++v) {
        std::vector<double> cur(batch.values().begin(), batch.values().end());
        for (const AugmentOp& op : policy.ops)
            for (double& x : cur) x += op.noise_std * rng.normal();
        views.push_back(Tensor::from_values(batch.shape(), std::move(cur)));
    }
    return views;
}

Tensor center_crop(const Tensor& batch, int size, int pad) {
    check_image_batch(batch, "center_crop");
    const int n = batch.dim(0), ch = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    const int ph = h + 2 * pad;
    const int pw = w + 2 * pad;
    if (size < 1 || size > ph || size > pw)
        throw ConfigError("crop size exceeds the padded image");
    const int y0 = (ph - size) / 2;
    const int x0 = (pw - size) / 2;

    std::vector<double> out(static_cast<size_t>(n) * ch * size * size);
    const double* src = batch.values().data();
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < ch; ++c)
            for (int yy = 0; yy < size; ++yy)
                for (int xx = 0; xx < size; ++xx) {
                    const int sy = y0 + yy - pad;
                    const int sx = x0 + xx - pad;
                    const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
                    out[((static_cast<int64_t>(i) * ch + c) * size + yy) * size + xx] =
                        inside ? src[((static_cast<int64_t>(i) * ch + c) * h + sy) * w + sx] : 0.0;
                }
    return Tensor::from_values({n, ch, size, size}, std::move(out));
}

BatchPlan::BatchPlan(int n, int batch_size, uint64_t seed, int64_t epoch)
    : batch_size_(batch_size), seed_(seed), epoch_(epoch) {
    if (n < 1) throw ConfigError("empty dataset");
    if (batch_size < 1 || batch_size > n) throw ConfigError("batch_size must be in [1, n]");
    count_ = n / batch_size;
    order_.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order_[static_cast<size_t>(i)] = i;
    Rng shuffle(Rng::mix(Rng::mix(seed, static_cast<uint64_t>(epoch)), 0));
    for (int i = n - 1; i > 0; --i)
        std::swap(order_[static_cast<size_t>(i)],
                  order_[static_cast<size_t>(shuffle.uniform_int(i + 1))]);
}

std::vector<int> BatchPlan::indices(int b) const {
    if (b < 0 || b >= count_) throw ShapeError("batch index out of range");
    const auto first = order_.begin() + static_cast<int64_t>(b) * batch_size_;
    return std::vector<int>(first, first + batch_size_);
}

uint64_t BatchPlan::augment_seed(int b) const {
    if (b < 0 || b >= count_) throw ShapeError("batch index out of range");
    return Rng::mix(Rng::mix(seed_, static_cast<uint64_t>(epoch_)),
                    1 + static_cast<uint64_t>(b));
}

namespace {

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<int>& indices) {
    std::vector<int> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i)
        out[i] = labels.empty() ? -1 : labels[static_cast<size_t>(indices[i])];
    return out;
}

}  // namespace

Minibatch make_minibatch(const ToyDataset& ds, const std::vector<int>& indices,
                         const AugmentationPolicy& policy, Rng rng) {
    const int n = ds.points.dim(0);
    std::vector<double> rows(indices.size() * 2);
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= n) throw ShapeError("point index out of range");
        rows[i * 2] = ds.points.at(indices[i], 0);
        rows[i * 2 + 1] = ds.points.at(indices[i], 1);
    }
    Tensor batch = Tensor::from_values({static_cast<int>(indices.size()), 2}, std::move(rows));
    Minibatch mb;
    mb.views = augment_points(batch, policy, rng);
    mb.labels = gather_labels(ds.labels, indices);
    mb.indices = indices;
    return mb;
}

Minibatch make_minibatch(const ImageDataset& ds, const std::vector<int>& indices,
                         const AugmentationPolicy& policy, Rng rng) {
    Minibatch mb;
    mb.views = augment_images(images_to_tensor(ds, indices), policy, rng);
    mb.labels = gather_labels(ds.labels, indices);
    mb.indices = indices;
    return mb;
}

}  // namespace dhog
