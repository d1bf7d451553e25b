// dhog: experiment runner for multi-head mutual-information clustering.
//
// Subcommands:
//   toy     four-Gaussians experiment with per-head decision-region exports
//   images  CIFAR-format image experiment (or --kmeans-baseline)
//   eval    load a checkpoint and report per-head metrics + head selection
//   rerun   repeat a run recorded in a manifest.json
//
// Exit codes: 0 success, 1 numeric failure, 2 I/O or configuration failure.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dhog/assignment.hpp"
#include "dhog/data.hpp"
#include "dhog/errors.hpp"
#include "dhog/eval.hpp"
#include "dhog/kernels.hpp"
#include "dhog/model.hpp"
#include "dhog/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dhog;

namespace {

constexpr const char* kVersion = "dhog 1.0.0";
constexpr uint64_t kModelStream = 0x6d6f646cULL;

// Content hash of the version string, FNV-1a 64, printed like a short
// commit id so manifests pin the code revision they were produced with.
std::string code_hash() {
    uint64_t h = 1469598103934665603ULL;
    for (const char* p = kVersion; *p; ++p) {
        h ^= static_cast<uint64_t>(static_cast<unsigned char>(*p));
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

struct CommonFlags {
    double alpha = 0.05;
    int heads = 4;
    int classes = 2;
    int epochs = 200;
    int batch_size = 250;
    int repeats = 2;
    double lr = 1e-3;
    uint64_t seed = 1;
    bool align = true;
    int overcluster = 0;
    int eval_every = 10;
    int checkpoint_every = 0;
    std::string out = "dhog_out";
    int threads = 0;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--alpha", f.alpha, "cross-head push coefficient (0 = pull-only)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--heads", f.heads, "number of regular heads");
    cmd->add_option("--classes", f.classes, "labels per head");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--batch-size", f.batch_size, "minibatch size");
    cmd->add_option("--repeats", f.repeats, "augmented views per sample");
    cmd->add_option("--lr", f.lr, "initial learning rate (cosine-annealed to 0)");
    cmd->add_option("--seed", f.seed, "run seed (data, batches, augmentation, init)");
    cmd->add_flag("--align,!--no-align", f.align, "align labels across heads before push terms");
    cmd->add_option("--overcluster", f.overcluster,
                    "add a twin head with this many labels per regular head");
    cmd->add_option("--eval-every", f.eval_every, "epochs between evaluations (0 = final only)");
    cmd->add_option("--checkpoint-every", f.checkpoint_every,
                    "epochs between checkpoints (0 = final only)");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--threads", f.threads,
                    "cap worker threads (1 = bit-exact reproducibility)");
    cmd->set_config("--config", "", "flat key=value config file (flags override it)");
}

void apply_threads(int threads) {
    if (threads > 0) {
        omp_set_num_threads(threads);
        kernels::set_max_threads(threads);
    }
}

TrainConfig to_train_config(const CommonFlags& f) {
    TrainConfig cfg;
    cfg.k = f.heads;
    cfg.c = f.classes;
    cfg.alpha = f.alpha;
    cfg.epochs = f.epochs;
    cfg.batch_size = f.batch_size;
    cfg.repeats = f.repeats;
    cfg.initial_lr = f.lr;
    cfg.seed = f.seed;
    cfg.align_enabled = f.align;
    cfg.overcluster_c = f.overcluster;
    cfg.eval_every = f.eval_every;
    cfg.checkpoint_every = f.checkpoint_every;
    cfg.checkpoint_path = (fs::path(f.out) / "checkpoint.dhog").string();
    return cfg;
}

// Heads branch at successive trunk stages, later heads sharing the deepest.
std::vector<int> default_branch_points(int k, int stages) {
    std::vector<int> b(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) b[static_cast<size_t>(i)] = std::min(i + 1, stages);
    return b;
}

DhogModel build_toy_model(const CommonFlags& f) {
    TrunkConfig trunk;
    trunk.kind = TrunkKind::mlp;
    trunk.input_dim = 2;
    trunk.mlp_widths = {64, 64};
    // All heads read the deepest trunk stage. On this two-layer trunk a
    // depth-1 head is too decoupled from its siblings: the pull-only
    // ablation then fails to collapse to a single shared solution, which
    // is the behaviour this experiment demonstrates.
    trunk.branch_points.assign(static_cast<size_t>(f.heads), 2);
    std::vector<HeadConfig> heads;
    for (int i = 1; i <= f.heads; ++i) {
        HeadConfig h;
        h.index = i;
        h.mlp_hidden = 200;
        h.c = f.classes;
        h.overcluster_c = f.overcluster;
        heads.push_back(h);
    }
    return DhogModel(trunk, heads, Rng::mix(f.seed, kModelStream));
}

DhogModel build_image_model(const CommonFlags& f, const std::vector<int>& channels, int head_fc,
                            int head_hidden, int in_hw) {
    TrunkConfig trunk;
    trunk.kind = TrunkKind::smallcnn;
    trunk.in_channels = 3;
    trunk.in_h = in_hw;
    trunk.in_w = in_hw;
    trunk.conv_channels = channels;
    trunk.branch_points = default_branch_points(f.heads, static_cast<int>(channels.size()));
    std::vector<HeadConfig> heads;
    for (int i = 1; i <= f.heads; ++i) {
        HeadConfig h;
        h.index = i;
        if (head_fc > 0) {
            h.own_block_widths = {head_fc};
            h.pool_before_block = true;
        }
        h.mlp_hidden = head_hidden;
        h.c = f.classes;
        h.overcluster_c = f.overcluster;
        heads.push_back(h);
    }
    return DhogModel(trunk, heads, Rng::mix(f.seed, kModelStream));
}

// ---------------------------------------------------------------------------
// Artifact writers.

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

json rows_to_json(const std::vector<MetricRow>& rows) {
    json arr = json::array();
    for (const MetricRow& r : rows)
        arr.push_back({r.epoch, r.head, r.mi_aug, r.mi_push_contrib, r.acc, r.nmi, r.ari,
                       r.selected});
    return arr;
}

struct RunRecord {
    std::string command;    // "toy" or "images"
    std::string dataset;    // toy, cifar10, cifar100-20, svhn-like, custom
    std::string data_path;  // images only
    int subset = 0;         // images only; 0 = all
    double noise_std = 0.15;  // toy only
    std::vector<int> channels;  // images only
    int head_fc = 0;
    int head_hidden = 200;
};

void write_manifest(const fs::path& path, const RunRecord& rec, const std::string& config_json,
                    uint64_t seed, const FitResult& result, double wall_sec) {
    json j;
    j["version"] = kVersion;
    j["code_hash"] = code_hash();
    j["command"] = rec.command;
    j["dataset"] = rec.dataset;
    j["data_path"] = rec.data_path;
    j["subset"] = rec.subset;
    j["noise_std"] = rec.noise_std;
    j["channels"] = rec.channels;
    j["head_fc"] = rec.head_fc;
    j["head_hidden"] = rec.head_hidden;
    j["seed"] = seed;
    j["config"] = json::parse(config_json);
    j["selected_head"] = result.selected_head;
    j["wall_clock_sec"] = wall_sec;
    j["rows"] = rows_to_json(result.history);
    open_out(path) << j.dump(2) << "\n";
}

const std::vector<std::array<int, 3>>& palette() {
    static const std::vector<std::array<int, 3>> p = {
        {31, 119, 180}, {255, 127, 14},  {44, 160, 44},  {214, 39, 40},   {148, 103, 189},
        {140, 86, 75},  {227, 119, 194}, {127, 127, 127}, {188, 189, 34}, {23, 190, 207}};
    return p;
}

// Per-head soft labels over arbitrary inputs, computed in fixed-size chunks.
std::vector<std::vector<double>> head_probs(DhogModel& model, const Tensor& inputs,
                                            int chunk = 512) {
    const int n = inputs.dim(0);
    const size_t k = model.head_count();
    std::vector<std::vector<double>> probs(k);
    for (int start = 0; start < n; start += chunk) {
        const int len = std::min(chunk, n - start);
        std::vector<int> idx(static_cast<size_t>(len));
        std::iota(idx.begin(), idx.end(), start);
        // Slice rows [start, start+len) whatever the input rank.
        std::vector<int> dims(inputs.shape().begin(), inputs.shape().end());
        int64_t row = 1;
        for (size_t d = 1; d < dims.size(); ++d) row *= dims[d];
        dims[0] = len;
        std::vector<double> vals(static_cast<size_t>(row * len));
        std::copy_n(inputs.values().begin() + static_cast<int64_t>(start) * row, row * len,
                    vals.begin());
        ForwardResult r = model.forward(Tensor::from_values(Shape(dims.begin(), dims.end()),
                                                            std::move(vals)),
                                        Mode::eval);
        for (size_t h = 0; h < k; ++h)
            probs[h].insert(probs[h].end(), r.pull[h].probs.values().begin(),
                            r.pull[h].probs.values().end());
    }
    return probs;
}

std::vector<int> argmax_rows(const std::vector<double>& probs, int c) {
    const int n = static_cast<int>(probs.size()) / c;
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (probs[static_cast<size_t>(i * c + j)] > probs[static_cast<size_t>(i * c + best)])
                best = j;
        labels[static_cast<size_t>(i)] = best;
    }
    return labels;
}

// Decision-region grid over [-4,4]^2: CSV rows x,y,head,label,prob plus a
// small P6 raster per head for quick visual inspection.
void write_regions(const fs::path& out_dir, DhogModel& model, int c) {
    const int grid = 101;
    const double lo = -4.0, hi = 4.0;
    std::vector<double> coords(static_cast<size_t>(grid * grid * 2));
    for (int iy = 0; iy < grid; ++iy)
        for (int ix = 0; ix < grid; ++ix) {
            const double x = lo + (hi - lo) * ix / (grid - 1);
            const double y = lo + (hi - lo) * iy / (grid - 1);
            coords[static_cast<size_t>((iy * grid + ix) * 2)] = x;
            coords[static_cast<size_t>((iy * grid + ix) * 2 + 1)] = y;
        }
    Tensor pts = Tensor::from_values({grid * grid, 2}, coords);
    std::vector<std::vector<double>> probs = head_probs(model, pts);

    std::ofstream csv = open_out(out_dir / "regions.csv");
    csv << "x,y,head,label,prob\n" << std::setprecision(10);
    for (size_t h = 0; h < probs.size(); ++h) {
        for (int i = 0; i < grid * grid; ++i) {
            int best = 0;
            for (int j = 1; j < c; ++j)
                if (probs[h][static_cast<size_t>(i * c + j)] >
                    probs[h][static_cast<size_t>(i * c + best)])
                    best = j;
            csv << coords[static_cast<size_t>(i * 2)] << ','
                << coords[static_cast<size_t>(i * 2 + 1)] << ',' << h + 1 << ',' << best << ','
                << probs[h][static_cast<size_t>(i * c + best)] << '\n';
        }

        std::ofstream ppm(out_dir / ("regions_head" + std::to_string(h + 1) + ".ppm"),
                          std::ios::binary);
        if (!ppm) throw IoError("cannot write region raster for head " + std::to_string(h + 1));
        ppm << "P6\n" << grid << ' ' << grid << "\n255\n";
        for (int iy = grid - 1; iy >= 0; --iy)  // top row = max y
            for (int ix = 0; ix < grid; ++ix) {
                const int i = iy * grid + ix;
                int best = 0;
                for (int j = 1; j < c; ++j)
                    if (probs[h][static_cast<size_t>(i * c + j)] >
                        probs[h][static_cast<size_t>(i * c + best)])
                        best = j;
                const auto& rgb = palette()[static_cast<size_t>(best) % palette().size()];
                ppm.put(static_cast<char>(rgb[0]));
                ppm.put(static_cast<char>(rgb[1]));
                ppm.put(static_cast<char>(rgb[2]));
            }
    }
}

void write_partition(const fs::path& out_dir, DhogModel& model, const ToyDataset& ds) {
    std::vector<std::vector<int>> labels = hard_labels_by_head(model, ds.points);
    std::ofstream csv = open_out(out_dir / "partition.csv");
    csv << "index,x,y,truth";
    for (size_t h = 0; h < labels.size(); ++h) csv << ",head" << h + 1;
    csv << '\n' << std::setprecision(10);
    for (int i = 0; i < ds.points.dim(0); ++i) {
        csv << i << ',' << ds.points.at(i, 0) << ',' << ds.points.at(i, 1) << ','
            << ds.labels[static_cast<size_t>(i)];
        for (const auto& head : labels) csv << ',' << head[static_cast<size_t>(i)];
        csv << '\n';
    }
}

// Confusion counts for one head after the cluster->class remap.
void write_confusion(const fs::path& out_dir, const std::vector<int>& pred,
                     const std::vector<int>& truth, int c_eval) {
    std::vector<int> p, t;
    for (size_t i = 0; i < pred.size(); ++i)
        if (truth[i] >= 0) {
            p.push_back(pred[i]);
            t.push_back(truth[i]);
        }
    AlignmentMap remap = remap_to_classes(p, t, c_eval);
    std::vector<std::vector<int>> counts(static_cast<size_t>(c_eval),
                                         std::vector<int>(static_cast<size_t>(c_eval), 0));
    for (size_t i = 0; i < p.size(); ++i)
        ++counts[static_cast<size_t>(t[i])][static_cast<size_t>(remap.perm[static_cast<size_t>(
            p[i])])];

    std::ofstream csv = open_out(out_dir / "confusion.csv");
    csv << "truth";
    for (int j = 0; j < c_eval; ++j) csv << ",pred" << j;
    csv << '\n';
    for (int i = 0; i < c_eval; ++i) {
        csv << i;
        for (int j = 0; j < c_eval; ++j) csv << ',' << counts[static_cast<size_t>(i)][static_cast<size_t>(j)];
        csv << '\n';
    }
}

// Highest-probability sample indices per label of one head.
void write_top_samples(const fs::path& out_dir, const std::vector<double>& probs, int c,
                       int top_n = 10) {
    const int n = static_cast<int>(probs.size()) / c;
    std::ofstream csv = open_out(out_dir / "top_samples.csv");
    csv << "label,rank,index,prob\n" << std::setprecision(10);
    std::vector<int> order(static_cast<size_t>(n));
    for (int j = 0; j < c; ++j) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return probs[static_cast<size_t>(a * c + j)] > probs[static_cast<size_t>(b * c + j)];
        });
        for (int r = 0; r < std::min(top_n, n); ++r)
            csv << j << ',' << r + 1 << ',' << order[static_cast<size_t>(r)] << ','
                << probs[static_cast<size_t>(order[static_cast<size_t>(r)] * c + j)] << '\n';
    }
}

// The deterministic counterpart of the training-time augmentation: a center
// crop when the policy crops, otherwise the raw pixels.
Tensor eval_inputs_for(const ImageDataset& ds, const AugmentationPolicy& policy) {
    std::vector<int> all(static_cast<size_t>(ds.n));
    std::iota(all.begin(), all.end(), 0);
    Tensor x = images_to_tensor(ds, all);
    for (const AugmentOp& op : policy.ops)
        if (op.kind == AugmentOp::Kind::random_crop) x = center_crop(x, op.size, op.pad);
    return x;
}

// ---------------------------------------------------------------------------
// Dataset loading.

ImageDataset concat_datasets(std::vector<ImageDataset> parts, const std::string& name) {
    if (parts.empty()) throw IoError("no dataset files found for " + name);
    ImageDataset all = std::move(parts.front());
    for (size_t i = 1; i < parts.size(); ++i) {
        ImageDataset& p = parts[i];
        if (p.ch != all.ch || p.h != all.h || p.w != all.w)
            throw ConfigError("dataset files disagree on image shape");
        all.images.insert(all.images.end(), p.images.begin(), p.images.end());
        all.labels.insert(all.labels.end(), p.labels.begin(), p.labels.end());
        all.n += p.n;
    }
    all.name = name;
    return all;
}

std::vector<fs::path> sorted_bin_files(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".bin")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    return files;
}

ImageDataset load_images(const std::string& dataset, const std::string& data_path, int subset) {
    fs::path root;
    if (!data_path.empty()) {
        root = data_path;
    } else {
        const char* env = std::getenv("DHOG_DATA_DIR");
        if (env == nullptr || *env == '\0')
            throw IoError("no --data-path given and DHOG_DATA_DIR is unset");
        root = fs::path(env) / dataset;
    }
    if (!fs::exists(root)) throw IoError("dataset path does not exist: " + root.string());

    const bool coarse = dataset == "cifar100-20";
    std::vector<fs::path> files;
    if (fs::is_regular_file(root))
        files.push_back(root);
    else
        files = sorted_bin_files(root);
    if (files.empty()) throw IoError("no .bin files under " + root.string());

    std::vector<ImageDataset> parts;
    for (const fs::path& f : files)
        parts.push_back(coarse ? load_cifar100_coarse(f.string()) : load_cifar_binary(f.string()));
    ImageDataset all = concat_datasets(std::move(parts), dataset);

    if (subset > 0) {
        if (subset > all.n)
            throw ConfigError("--subset " + std::to_string(subset) + " exceeds dataset size " +
                              std::to_string(all.n));
        std::vector<int> idx(static_cast<size_t>(subset));
        std::iota(idx.begin(), idx.end(), 0);
        all = dhog::subset(all, idx);
    }
    return all;
}

// For --epochs 0 runs: evaluate the untrained model so the artifacts still
// carry (near-chance) metrics, and write an initial checkpoint so `eval`
// works on the output directory.
template <typename Dataset>
void eval_untrained(DhogModel& model, const Dataset& ds, const Tensor& eval_inputs,
                    const AugmentationPolicy& policy, const TrainConfig& cfg,
                    FitResult& result) {
    if (cfg.epochs != 0) return;

    std::vector<std::vector<int>> labels = hard_labels_by_head(model, eval_inputs);
    int c_eval = cfg.c;
    for (int t : ds.labels) c_eval = std::max(c_eval, t + 1);
    result.selected_head = select_head(model, ds, policy, eval_stream_seed(cfg.seed, 0));

    const int n = eval_inputs.dim(0);
    std::vector<int> all_idx(static_cast<size_t>(n));
    std::iota(all_idx.begin(), all_idx.end(), 0);
    Minibatch mb = make_minibatch(ds, all_idx, policy, Rng(eval_stream_seed(cfg.seed, 0)));
    NoGradGuard guard;
    std::vector<std::vector<LabelDistribution>> views(static_cast<size_t>(cfg.k));
    for (const Tensor& v : mb.views) {
        ForwardResult fr = model.forward(v, Mode::eval);
        for (int h = 0; h < cfg.k; ++h)
            views[static_cast<size_t>(h)].push_back(fr.pull[static_cast<size_t>(h)]);
    }
    for (int h = 1; h <= cfg.k; ++h) {
        ClusterMetrics m = evaluate(labels[static_cast<size_t>(h - 1)], ds.labels, c_eval, h);
        MetricRow row;
        row.epoch = 0;
        row.head = h;
        row.mi_aug = mi_aug(views[static_cast<size_t>(h - 1)]).item();
        row.mi_push_contrib = 0.0;
        row.acc = m.accuracy;
        row.nmi = m.nmi;
        row.ari = m.ari;
        row.selected = (h == result.selected_head) ? 1 : 0;
        result.history.push_back(row);
    }

    Optimizer opt(cfg, model.parameters());
    save_checkpoint(make_checkpoint(model, opt, cfg, 0, 0), cfg.checkpoint_path);
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_toy(const CommonFlags& f, double noise_std) {
    apply_threads(f.threads);
    fs::create_directories(f.out);

    ToySpec spec;
    spec.seed = f.seed;
    ToyDataset ds = gen_toy(spec);
    write_toy_csv(ds, (fs::path(f.out) / "toy_points.csv").string());

    AugmentationPolicy policy = default_toy_policy(noise_std, f.repeats);
    TrainConfig cfg = to_train_config(f);
    DhogModel model = build_toy_model(f);

    const auto t0 = std::chrono::steady_clock::now();
    FitResult result = fit(model, ds, policy, cfg, [](int epoch, const std::vector<MetricRow>& rows) {
        std::cout << "epoch " << epoch;
        for (const MetricRow& r : rows)
            std::cout << "  h" << r.head << (r.selected ? "*" : "") << " mi=" << std::setprecision(4)
                      << r.mi_aug << " acc=" << r.acc;
        std::cout << '\n';
    });
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    eval_untrained(model, ds, ds.points, policy, cfg, result);

    write_metrics_csv(result.history, (fs::path(f.out) / "metrics.csv").string());
    RunRecord rec;
    rec.command = "toy";
    rec.dataset = "toy";
    rec.noise_std = noise_std;
    write_manifest(fs::path(f.out) / "manifest.json", rec,
                   config_to_json(cfg, model.trunk_config(), model.head_configs(), model.seed(),
                                  cfg.epochs, 0),
                   f.seed, result, wall);

    write_regions(f.out, model, f.classes);
    write_partition(f.out, model, ds);
    {
        std::vector<std::vector<int>> labels = hard_labels_by_head(model, ds.points);
        int c_eval = f.classes;
        for (int t : ds.labels) c_eval = std::max(c_eval, t + 1);
        write_confusion(f.out, labels[static_cast<size_t>(result.selected_head - 1)], ds.labels,
                        c_eval);
    }
    std::cout << "selected head " << result.selected_head << "; artifacts in " << f.out << " ("
              << std::setprecision(3) << wall << "s)\n";
    return 0;
}

int cmd_images(const CommonFlags& f, const RunRecord& rec_in, bool kmeans_baseline,
               int kmeans_restarts) {
    apply_threads(f.threads);
    fs::create_directories(f.out);
    ImageDataset ds = load_images(rec_in.dataset, rec_in.data_path, rec_in.subset);
    std::cout << "loaded " << ds.n << " images (" << ds.ch << 'x' << ds.h << 'x' << ds.w
              << ") from " << rec_in.dataset << '\n';

    if (kmeans_baseline) {
        const auto t0 = std::chrono::steady_clock::now();
        ClusterMetrics m = kmeans_pixels(ds, f.classes, kmeans_restarts, f.seed);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ofstream csv = open_out(fs::path(f.out) / "baseline.csv");
        csv << "method,acc,nmi,ari\n"
            << std::setprecision(10) << "kmeans_pixels," << m.accuracy << ',' << m.nmi << ','
            << m.ari << '\n';
        std::cout << std::setprecision(6) << "kmeans on raw pixels: acc=" << m.accuracy
                  << " nmi=" << m.nmi << " ari=" << m.ari << " (" << std::setprecision(3) << wall
                  << "s)\n";
        return 0;
    }

    AugmentationPolicy policy = default_image_policy(f.repeats);
    int crop = ds.h;
    for (const AugmentOp& op : policy.ops)
        if (op.kind == AugmentOp::Kind::random_crop) crop = op.size;

    TrainConfig cfg = to_train_config(f);
    DhogModel model = build_image_model(f, rec_in.channels, rec_in.head_fc, rec_in.head_hidden,
                                        crop);
    std::cout << "model: " << model.parameter_count() << " parameters, " << f.heads
              << " heads\n";

    const auto t0 = std::chrono::steady_clock::now();
    FitResult result = fit(model, ds, policy, cfg, [](int epoch, const std::vector<MetricRow>& rows) {
        std::cout << "epoch " << epoch;
        for (const MetricRow& r : rows)
            std::cout << "  h" << r.head << (r.selected ? "*" : "") << " mi=" << std::setprecision(4)
                      << r.mi_aug << " acc=" << r.acc;
        std::cout << std::endl;
    });
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    eval_untrained(model, ds, eval_inputs_for(ds, policy), policy, cfg, result);

    write_metrics_csv(result.history, (fs::path(f.out) / "metrics.csv").string());
    RunRecord rec = rec_in;
    rec.command = "images";
    write_manifest(fs::path(f.out) / "manifest.json", rec,
                   config_to_json(cfg, model.trunk_config(), model.head_configs(), model.seed(),
                                  cfg.epochs, 0),
                   f.seed, result, wall);

    {
        Tensor eval_in = eval_inputs_for(ds, policy);
        std::vector<std::vector<double>> probs = head_probs(model, eval_in);
        const size_t sel = static_cast<size_t>(result.selected_head - 1);
        std::vector<int> pred = argmax_rows(probs[sel], f.classes);
        int c_eval = f.classes;
        for (int t : ds.labels) c_eval = std::max(c_eval, t + 1);
        write_confusion(f.out, pred, ds.labels, c_eval);
        write_top_samples(f.out, probs[sel], f.classes);
    }
    std::cout << "selected head " << result.selected_head << "; artifacts in " << f.out << " ("
              << std::setprecision(3) << wall << "s)\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset,
             const std::string& data_path, int subset, int head_override, int classes_check,
             int threads) {
    apply_threads(threads);
    Checkpoint ck = load_checkpoint(checkpoint_path);
    ConfigSnapshot snap = parse_config_json(ck.config_json);
    if (classes_check > 0 && classes_check != snap.train.c)
        throw ConfigError("checkpoint was trained with c=" + std::to_string(snap.train.c) +
                          ", but --classes " + std::to_string(classes_check) + " was requested");
    DhogModel model = model_from_checkpoint(ck);

    std::vector<std::vector<int>> labels;
    std::vector<int> truth;
    int selected = 0;
    if (dataset == "toy") {
        ToySpec spec;
        spec.seed = snap.train.seed;
        ToyDataset ds = gen_toy(spec);
        AugmentationPolicy policy = default_toy_policy(0.15, snap.train.repeats);
        labels = hard_labels_by_head(model, ds.points);
        truth = ds.labels;
        selected = select_head(model, ds, policy,
                               eval_stream_seed(snap.train.seed, snap.epoch));
    } else {
        ImageDataset ds = load_images(dataset, data_path, subset);
        AugmentationPolicy policy = default_image_policy(snap.train.repeats);
        labels = hard_labels_by_head(model, eval_inputs_for(ds, policy));
        truth = ds.labels;
        selected = select_head(model, ds, policy,
                               eval_stream_seed(snap.train.seed, snap.epoch));
    }
    if (head_override > 0) {
        if (head_override > static_cast<int>(labels.size()))
            throw ConfigError("--head " + std::to_string(head_override) + " out of range");
        selected = head_override;
    }

    int c_eval = snap.train.c;
    for (int t : truth) c_eval = std::max(c_eval, t + 1);
    std::cout << "head,acc,nmi,ari,selected\n" << std::setprecision(6);
    for (size_t h = 0; h < labels.size(); ++h) {
        ClusterMetrics m = evaluate(labels[h], truth, c_eval, static_cast<int>(h) + 1);
        std::cout << h + 1 << ',' << m.accuracy << ',' << m.nmi << ',' << m.ari << ','
                  << (static_cast<int>(h) + 1 == selected ? 1 : 0) << '\n';
    }
    std::cout << "selected head " << selected << '\n';
    return 0;
}

int cmd_rerun(const std::string& manifest_path, const std::string& out_override, int threads) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open " + manifest_path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(std::string("corrupt manifest: ") + e.what());
    }

    CommonFlags f;
    ConfigSnapshot snap = parse_config_json(j.at("config").dump());
    f.alpha = snap.train.alpha;
    f.heads = snap.train.k;
    f.classes = snap.train.c;
    f.epochs = snap.train.epochs;
    f.batch_size = snap.train.batch_size;
    f.repeats = snap.train.repeats;
    f.lr = snap.train.initial_lr;
    f.seed = snap.train.seed;
    f.align = snap.train.align_enabled;
    f.overcluster = snap.train.overcluster_c;
    f.eval_every = snap.train.eval_every;
    f.checkpoint_every = snap.train.checkpoint_every;
    f.threads = threads;
    f.out = out_override.empty()
                ? (fs::path(manifest_path).parent_path() / "rerun").string()
                : out_override;

    RunRecord rec;
    rec.command = j.at("command").get<std::string>();
    rec.dataset = j.at("dataset").get<std::string>();
    rec.data_path = j.at("data_path").get<std::string>();
    rec.subset = j.at("subset").get<int>();
    rec.noise_std = j.at("noise_std").get<double>();
    rec.channels = j.at("channels").get<std::vector<int>>();
    rec.head_fc = j.at("head_fc").get<int>();
    rec.head_hidden = j.at("head_hidden").get<int>();

    if (rec.command == "toy") return cmd_toy(f, rec.noise_std);
    if (rec.command == "images") return cmd_images(f, rec, false, 3);
    throw ConfigError("manifest has unknown command '" + rec.command + "'");
}

int run(int argc, char** argv) {
    CLI::App app{"multi-head mutual-information clustering experiments"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // toy ------------------------------------------------------------------
    CommonFlags toy_flags;
    double noise_std = 0.15;
    CLI::App* toy = app.add_subcommand("toy", "four-Gaussians experiment (k=4, c=2 defaults)");
    add_common_flags(toy, toy_flags);
    toy->add_option("--noise-std", noise_std, "augmentation noise std for the point cloud");

    // images ---------------------------------------------------------------
    CommonFlags img_flags;
    img_flags.heads = 5;
    img_flags.classes = 10;
    img_flags.epochs = 60;
    img_flags.batch_size = 220;
    img_flags.repeats = 4;
    img_flags.eval_every = 5;
    RunRecord img_rec;
    img_rec.dataset = "cifar10";
    img_rec.channels = {32, 64, 128};
    bool kmeans_baseline = false;
    int kmeans_restarts = 3;
    CLI::App* images = app.add_subcommand("images", "CIFAR-format image experiment");
    add_common_flags(images, img_flags);
    images->add_option("--dataset", img_rec.dataset, "toy|cifar10|cifar100-20|svhn-like|custom")
        ->check(CLI::IsMember({"cifar10", "cifar100-20", "svhn-like", "custom"}));
    images->add_option("--data-path", img_rec.data_path,
                       "dataset file or directory (default: $DHOG_DATA_DIR/<dataset>)");
    images->add_option("--subset", img_rec.subset, "use only the first N images (0 = all)");
    images->add_option("--channels", img_rec.channels, "trunk conv channels per stage");
    images->add_option("--head-fc", img_rec.head_fc,
                       "give each head a pooled fully-connected block of this width");
    images->add_option("--head-hidden", img_rec.head_hidden, "head hidden layer width");
    images->add_flag("--kmeans-baseline", kmeans_baseline,
                     "run k-means on raw pixels instead of training");
    images->add_option("--kmeans-restarts", kmeans_restarts, "k-means restarts");

    // eval -------------------------------------------------------------------
    std::string eval_checkpoint, eval_dataset = "toy", eval_data_path;
    int eval_subset = 0, eval_head = 0, eval_classes = 0, eval_threads = 0;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval->add_option("--dataset", eval_dataset, "toy|cifar10|cifar100-20|svhn-like|custom");
    eval->add_option("--data-path", eval_data_path, "dataset file or directory");
    eval->add_option("--subset", eval_subset, "use only the first N images (0 = all)");
    eval->add_option("--head", eval_head, "report this head instead of the selected one");
    eval->add_option("--classes", eval_classes, "expected label count (checked, not applied)");
    eval->add_option("--threads", eval_threads, "cap worker threads");

    // rerun ------------------------------------------------------------------
    std::string rerun_manifest, rerun_out;
    int rerun_threads = 0;
    CLI::App* rerun = app.add_subcommand("rerun", "repeat a run recorded in a manifest");
    rerun->add_option("manifest", rerun_manifest, "manifest.json from a previous run")
        ->required();
    rerun->add_option("--out", rerun_out, "output directory (default: <manifest dir>/rerun)");
    rerun->add_option("--threads", rerun_threads, "cap worker threads");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // flag/usage problems are config failures
    }

    if (toy->parsed()) return cmd_toy(toy_flags, noise_std);
    if (images->parsed()) return cmd_images(img_flags, img_rec, kmeans_baseline, kmeans_restarts);
    if (eval->parsed())
        return cmd_eval(eval_checkpoint, eval_dataset, eval_data_path, eval_subset, eval_head,
                        eval_classes, eval_threads);
    if (rerun->parsed()) return cmd_rerun(rerun_manifest, rerun_out, rerun_threads);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 1;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
