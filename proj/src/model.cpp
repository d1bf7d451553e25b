#include "dhog/model.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dhog/errors.hpp"
#include "dhog/ops.hpp"

namespace dhog {

namespace {

int trunk_depth(const TrunkConfig& t) {
    return static_cast<int>(t.kind == TrunkKind::mlp ? t.mlp_widths.size()
                                                     : t.conv_channels.size());
}

void validate_trunk(const TrunkConfig& t, int head_count) {
    if (t.kind == TrunkKind::mlp) {
        if (t.input_dim < 1) throw ConfigError("trunk input_dim must be positive");
        if (t.mlp_widths.empty()) throw ConfigError("mlp trunk needs at least one layer");
        for (int w : t.mlp_widths)
            if (w < 1) throw ConfigError("mlp trunk widths must be positive");
    } else {
        if (t.in_channels < 1 || t.in_h < 1 || t.in_w < 1)
            throw ConfigError("smallcnn trunk input dimensions must be positive");
        if (t.conv_channels.empty()) throw ConfigError("smallcnn trunk needs at least one stage");
        for (int c : t.conv_channels)
            if (c < 1) throw ConfigError("smallcnn trunk channel counts must be positive");
    }
    if (static_cast<int>(t.branch_points.size()) != head_count)
        throw ConfigError("need one branch point per head");
    const int depth = trunk_depth(t);
    int prev = 1;
    for (int bp : t.branch_points) {
        if (bp < 1 || bp > depth) throw ConfigError("branch point outside trunk depth");
        if (bp < prev) throw ConfigError("branch points must be nondecreasing");
        prev = bp;
    }
}

void validate_head(const HeadConfig& h, int position) {
    if (h.index != position + 1) throw ConfigError("head indices must run 1..k in order");
    for (int w : h.own_block_widths)
        if (w < 1) throw ConfigError("head block widths must be positive");
    if (h.mlp_hidden < 1) throw ConfigError("head mlp_hidden must be positive");
    if (h.c < 2) throw ConfigError("head label count must be at least 2");
    if (h.overcluster_c != 0 && h.overcluster_c < 2)
        throw ConfigError("overcluster label count must be at least 2");
}

}  // namespace

Tensor DhogModel::make_weight(const std::string& name, Shape shape, int fan_in) {
    const double s = std::sqrt(1.0 / fan_in);
    std::vector<double> vals(static_cast<size_t>(numel(shape)));
    for (double& v : vals) v = rng_.uniform(-s, s);
    Tensor t = Tensor::from_values(std::move(shape), std::move(vals), /*requires_grad=*/true);
    params_.emplace_back(name, t);
    return t;
}

Tensor DhogModel::make_bias(const std::string& name, int width) {
    Tensor t = Tensor::zeros({width}, /*requires_grad=*/true);
    params_.emplace_back(name, t);
    return t;
}

DhogModel::Linear DhogModel::make_linear(const std::string& name, int in, int out) {
    Linear l;
    l.w = make_weight(name + ".weight", {in, out}, in);
    l.b = make_bias(name + ".bias", out);
    return l;
}

DhogModel::Conv DhogModel::make_conv(const std::string& name, int ci, int co) {
    Conv c;
    c.k = make_weight(name + ".kernel", {co, ci, 3, 3}, ci * 9);
    c.b = make_bias(name + ".bias", co);
    return c;
}

DhogModel::HeadNet DhogModel::build_head(const HeadConfig& cfg, int branch, int c,
                                         bool overcluster, const std::string& name) {
    HeadNet net;
    net.head_index = cfg.index;
    net.overcluster = overcluster;
    net.branch = branch;
    net.pool_before_block = cfg.pool_before_block;

    const bool spatial = trunk_.kind == TrunkKind::smallcnn && !cfg.pool_before_block;
    const int branch_width = trunk_.kind == TrunkKind::mlp ? trunk_.mlp_widths[branch - 1]
                                                           : trunk_.conv_channels[branch - 1];
    std::vector<int> widths = cfg.own_block_widths;
    if (widths.empty()) widths.push_back(branch_width);

    int in = branch_width;
    for (size_t i = 0; i < widths.size(); ++i) {
        const std::string bname = name + ".block" + std::to_string(i);
        if (spatial)
            net.conv_blocks.push_back(make_conv(bname, in, widths[i]));
        else
            net.fc_blocks.push_back(make_linear(bname, in, widths[i]));
        in = widths[i];
    }
    net.fc1 = make_linear(name + ".fc1", in, cfg.mlp_hidden);
    net.fc2 = make_linear(name + ".fc2", cfg.mlp_hidden, c);
    return net;
}

DhogModel::DhogModel(TrunkConfig trunk, std::vector<HeadConfig> heads, uint64_t seed)
    : trunk_(std::move(trunk)), head_cfgs_(std::move(heads)), seed_(seed), rng_(seed) {
    if (head_cfgs_.empty()) throw ConfigError("model needs at least one head");
    validate_trunk(trunk_, static_cast<int>(head_cfgs_.size()));
    for (size_t i = 0; i < head_cfgs_.size(); ++i)
        validate_head(head_cfgs_[i], static_cast<int>(i));

    if (trunk_.kind == TrunkKind::mlp) {
        int in = trunk_.input_dim;
        for (size_t l = 0; l < trunk_.mlp_widths.size(); ++l) {
            trunk_fc_.push_back(make_linear("trunk." + std::to_string(l), in, trunk_.mlp_widths[l]));
            in = trunk_.mlp_widths[l];
        }
    } else {
        int ci = trunk_.in_channels;
        for (size_t l = 0; l < trunk_.conv_channels.size(); ++l) {
            trunk_conv_.push_back(make_conv("trunk." + std::to_string(l), ci, trunk_.conv_channels[l]));
            ci = trunk_.conv_channels[l];
        }
    }

    for (size_t i = 0; i < head_cfgs_.size(); ++i) {
        const HeadConfig& cfg = head_cfgs_[i];
        heads_.push_back(build_head(cfg, trunk_.branch_points[i], cfg.c, /*overcluster=*/false,
                                    "head" + std::to_string(cfg.index)));
    }
    for (size_t i = 0; i < head_cfgs_.size(); ++i) {
        const HeadConfig& cfg = head_cfgs_[i];
        if (cfg.overcluster_c > 0)
            heads_.push_back(build_head(cfg, trunk_.branch_points[i], cfg.overcluster_c,
                                        /*overcluster=*/true,
                                        "head" + std::to_string(cfg.index) + "_oc"));
    }
}

std::vector<Tensor> DhogModel::trunk_forward(const Tensor& batch) const {
    std::vector<Tensor> stages;
    if (trunk_.kind == TrunkKind::mlp) {
        if (!batch.defined() || batch.ndim() != 2 || batch.dim(1) != trunk_.input_dim)
            throw ShapeError("mlp trunk expects a [n x input_dim] batch");
        Tensor x = batch;
        for (const Linear& l : trunk_fc_) {
            x = relu(bias_rows(matmul(x, l.w), l.b));
            stages.push_back(x);
        }
    } else {
        if (!batch.defined() || batch.ndim() != 4 || batch.dim(1) != trunk_.in_channels ||
            batch.dim(2) != trunk_.in_h || batch.dim(3) != trunk_.in_w)
            throw ShapeError("smallcnn trunk expects a [n x c x h x w] batch");
        Tensor x = batch;
        for (const Conv& c : trunk_conv_) {
            x = relu(bias_channels(conv2d(x, c.k, /*stride=*/2, /*pad=*/1), c.b));
            stages.push_back(x);
        }
    }
    return stages;
}

LabelDistribution DhogModel::head_forward(const HeadNet& head, const Tensor& feature) const {
    Tensor f = feature;
    for (const Conv& c : head.conv_blocks)
        f = relu(bias_channels(conv2d(f, c.k, /*stride=*/1, /*pad=*/1), c.b));
    if (f.ndim() == 4) f = global_avg_pool(f);
    for (const Linear& l : head.fc_blocks) f = relu(bias_rows(matmul(f, l.w), l.b));
    Tensor h = relu(bias_rows(matmul(f, head.fc1.w), head.fc1.b));
    Tensor probs = softmax_rows(bias_rows(matmul(h, head.fc2.w), head.fc2.b));
    LabelDistribution out;
    out.probs = probs;
    out.head_index = head.head_index;
    out.overcluster = head.overcluster;
    return out;
}

ForwardResult DhogModel::forward(const Tensor& batch, Mode mode, bool with_push) {
    std::optional<NoGradGuard> guard;
    if (mode == Mode::eval) {
        guard.emplace();
        with_push = false;
    }

    ForwardResult out;
    const std::vector<Tensor> stages = trunk_forward(batch);
    out.pull.reserve(heads_.size());
    for (const HeadNet& h : heads_) out.pull.push_back(head_forward(h, stages[h.branch - 1]));

    if (with_push) {
        std::vector<Tensor> stopped(stages.size());
        for (const HeadNet& h : heads_) {
            if (h.overcluster) continue;
            Tensor& f = stopped[h.branch - 1];
            if (!f.defined()) f = stop_gradient(stages[h.branch - 1]);
            out.push.push_back(head_forward(h, f));
        }
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> DhogModel::parameters_with_prefix(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : params_)
        if (name.starts_with(prefix)) out.emplace_back(name, t);
    return out;
}

int64_t DhogModel::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.second.size();
    return n;
}

std::vector<int> hard_labels(const LabelDistribution& dist) {
    if (!dist.probs.defined() || dist.probs.ndim() != 2)
        throw ShapeError("hard_labels expects a [n x c] distribution");
    const int n = dist.probs.dim(0);
    const int c = dist.probs.dim(1);
    std::span<const double> p = dist.probs.values();
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_p = p[static_cast<size_t>(i) * c];
        for (int j = 1; j < c; ++j) {
            const double v = p[static_cast<size_t>(i) * c + j];
            if (v > best_p) {
                best = j;
                best_p = v;
            }
        }
        labels[static_cast<size_t>(i)] = best;
    }
    return labels;
}

}  // namespace dhog
