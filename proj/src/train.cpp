#include "dhog/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dhog/assignment.hpp"
#include "dhog/errors.hpp"
#include "dhog/mi.hpp"
#include "dhog/ops.hpp"

namespace dhog {

namespace {

using nlohmann::json;

constexpr uint32_t kCheckpointVersion = 1;
constexpr uint64_t kEvalStream = 0x6576616cULL;  // distinct from batch streams

}  // namespace

void validate(const TrainConfig& cfg) {
    if (cfg.k < 1) throw ConfigError("k must be at least 1");
    if (cfg.c < 2) throw ConfigError("c must be at least 2");
    if (cfg.alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (cfg.repeats < 2) throw ConfigError("repeats must be at least 2");
    if (!(cfg.initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    if (cfg.beta1 <= 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 <= 0.0 || cfg.beta2 >= 1.0)
        throw ConfigError("adam betas must be in (0,1)");
    if (!(cfg.eps > 0.0)) throw ConfigError("adam eps must be positive");
    if (cfg.eval_every < 0) throw ConfigError("eval_every must be >= 0");
    if (cfg.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

uint64_t eval_stream_seed(uint64_t seed, int epoch) {
    return Rng::mix(Rng::mix(seed, kEvalStream), static_cast<uint64_t>(epoch));
}

double lr_at(int64_t step, int64_t total_steps, double initial_lr) {
    if (total_steps < 1) throw ConfigError("total_steps must be positive");
    if (step < 0 || step > total_steps) throw ConfigError("step outside [0, total_steps]");
    return initial_lr * 0.5 *
           (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps)));
}

Optimizer::Optimizer(const TrainConfig& cfg, std::vector<std::pair<std::string, Tensor>> params)
    : kind_(cfg.optimizer),
      momentum_(cfg.momentum),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.eps),
      params_(std::move(params)) {
    m_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i)
        m_[i].assign(static_cast<size_t>(params_[i].second.size()), 0.0);
    if (kind_ == OptimizerKind::adam) {
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i)
            v_[i].assign(static_cast<size_t>(params_[i].second.size()), 0.0);
    }
}

void Optimizer::step(double lr) {
    ++t_;
    for (size_t i = 0; i < params_.size(); ++i) {
        std::span<const double> g = params_[i].second.grad();
        std::span<double> x = params_[i].second.values_mut();
        if (kind_ == OptimizerKind::adam) {
            const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
            for (size_t j = 0; j < x.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
                x[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
            }
        } else {
            for (size_t j = 0; j < x.size(); ++j) {
                m_[i][j] = momentum_ * m_[i][j] + g[j];
                x[j] -= lr * m_[i][j];
            }
        }
    }
}

std::vector<std::pair<std::string, std::vector<double>>> Optimizer::named_state() const {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    out.emplace_back("t", std::vector<double>{static_cast<double>(t_)});
    for (size_t i = 0; i < params_.size(); ++i) out.emplace_back("m." + params_[i].first, m_[i]);
    if (kind_ == OptimizerKind::adam)
        for (size_t i = 0; i < params_.size(); ++i)
            out.emplace_back("v." + params_[i].first, v_[i]);
    return out;
}

void Optimizer::load_state(const std::vector<std::pair<std::string, std::vector<double>>>& state) {
    std::map<std::string, const std::vector<double>*> by_name;
    for (const auto& [name, vals] : state) by_name[name] = &vals;

    const auto fetch = [&](const std::string& name, std::vector<double>& dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("optimizer state missing entry " + name);
        if (it->second->size() != dst.size())
            throw ConfigError("optimizer state size mismatch for " + name);
        dst = *it->second;
    };
    auto t_it = by_name.find("t");
    if (t_it == by_name.end() || t_it->second->size() != 1)
        throw ConfigError("optimizer state missing step count");
    t_ = static_cast<int64_t>((*t_it->second)[0]);
    for (size_t i = 0; i < params_.size(); ++i) fetch("m." + params_[i].first, m_[i]);
    if (kind_ == OptimizerKind::adam)
        for (size_t i = 0; i < params_.size(); ++i) fetch("v." + params_[i].first, v_[i]);
}

namespace {

// Rows of every view stacked into one distribution, for pooled alignment.
LabelDistribution pool_views(const std::vector<LabelDistribution>& views) {
    const int c = views.front().probs.dim(1);
    std::vector<double> vals;
    int rows = 0;
    for (const LabelDistribution& v : views) {
        vals.insert(vals.end(), v.probs.values().begin(), v.probs.values().end());
        rows += v.probs.dim(0);
    }
    LabelDistribution out;
    out.probs = Tensor::from_values({rows, c}, std::move(vals));
    out.head_index = views.front().head_index;
    out.overcluster = views.front().overcluster;
    return out;
}

// Per-head rank-weighted push contributions, measured from values only (no
// graph). contrib[0] is always 0; contrib[i] = mean-over-views sum of MI
// against every earlier head, divided by the 1-based rank.
std::vector<double> push_contrib_values(const std::vector<std::vector<LabelDistribution>>& regular,
                                        const PushAlignments* aligns) {
    NoGradGuard guard;
    const size_t k = regular.size();
    std::vector<double> contrib(k, 0.0);
    for (size_t i = 1; i < k; ++i) {
        double total = 0.0;
        for (size_t j = 0; j < i; ++j) {
            const AlignmentMap* a = aligns ? &(*aligns)[i][j] : nullptr;
            double pair_sum = 0.0;
            for (size_t v = 0; v < regular[i].size(); ++v)
                pair_sum += mi_head_pair(regular[i][v], regular[j][v], a).item();
            // Reciprocal multiplies mirror the graph path bit for bit.
            total += pair_sum * (1.0 / static_cast<double>(regular[i].size()));
        }
        contrib[i] = total * (1.0 / static_cast<double>(i + 1));
    }
    return contrib;
}

std::string dump_joints(const std::vector<std::vector<LabelDistribution>>& regular) {
    NoGradGuard guard;
    std::ostringstream os;
    os << std::setprecision(6);
    for (size_t h = 0; h < regular.size(); ++h) {
        if (regular[h].size() < 2) continue;
        JointMatrix jm = joint(regular[h][0], regular[h][1], /*symmetrize=*/true);
        os << "\n  head " << regular[h][0].head_index << " view-pair joint:";
        const int c = jm.p.dim(1);
        for (int i = 0; i < jm.p.dim(0); ++i) {
            os << "\n    ";
            for (int j = 0; j < c; ++j) os << jm.p.at(i, j) << (j + 1 < c ? " " : "");
        }
    }
    return os.str();
}

}  // namespace

StepReport train_step(DhogModel& model, const Minibatch& batch, const TrainConfig& cfg,
                      Optimizer& opt, double lr) {
    validate(cfg);
    if (static_cast<int>(batch.views.size()) != cfg.repeats)
        throw ConfigError("batch carries " + std::to_string(batch.views.size()) +
                          " views but the config expects " + std::to_string(cfg.repeats));

    const bool push_graph_needed = cfg.alpha > 0.0;
    const int views = cfg.repeats;

    std::vector<ForwardResult> fwd;
    fwd.reserve(static_cast<size_t>(views));
    for (int v = 0; v < views; ++v)
        fwd.push_back(model.forward(batch.views[static_cast<size_t>(v)], Mode::train,
                                    push_graph_needed));

    const size_t total_heads = fwd.front().pull.size();
    std::vector<std::vector<LabelDistribution>> pull_heads(total_heads);
    for (size_t h = 0; h < total_heads; ++h)
        for (int v = 0; v < views; ++v)
            pull_heads[h].push_back(fwd[static_cast<size_t>(v)].pull[h]);

    // Regular heads in rank order; twins never join push or alignment.
    std::vector<std::vector<LabelDistribution>> regular;
    for (size_t h = 0; h < total_heads; ++h)
        if (!pull_heads[h].front().overcluster) regular.push_back(pull_heads[h]);

    PushAlignments aligns;
    if (cfg.align_enabled) {
        std::vector<LabelDistribution> pooled;
        pooled.reserve(regular.size());
        for (const auto& views_of : regular) pooled.push_back(pool_views(views_of));
        aligns.resize(regular.size());
        for (size_t i = 1; i < regular.size(); ++i)
            for (size_t j = 0; j < i; ++j)
                aligns[i].push_back(align_heads(pooled[i], pooled[j]));
    }
    const PushAlignments* aligns_ptr = cfg.align_enabled ? &aligns : nullptr;

    Tensor pull = mi_pull(pull_heads);
    const double pull_val = pull.item();

    StepReport report;
    report.head_push_contrib = push_contrib_values(regular, aligns_ptr);

    Tensor push_graph;
    double push_val = 0.0;
    if (push_graph_needed) {
        std::vector<std::vector<LabelDistribution>> push_heads(fwd.front().push.size());
        for (size_t r = 0; r < push_heads.size(); ++r)
            for (int v = 0; v < views; ++v)
                push_heads[r].push_back(fwd[static_cast<size_t>(v)].push[r]);
        push_graph = mi_push(push_heads, aligns_ptr);
        push_val = push_graph.item();
    } else {
        for (double c : report.head_push_contrib) push_val += c;
    }

    report.mi_pull = pull_val;
    report.mi_push = push_val;
    report.loss = -(pull_val - cfg.alpha * push_val);
    if (!std::isfinite(report.loss))
        throw NumericError("non-finite loss (pull=" + std::to_string(pull_val) +
                           ", push=" + std::to_string(push_val) + ");" + dump_joints(regular));

    {
        NoGradGuard guard;
        report.head_mi_aug.reserve(total_heads);
        for (size_t h = 0; h < total_heads; ++h)
            report.head_mi_aug.push_back(mi_aug(pull_heads[h]).item());
    }

    // Term-wise backward: the pull pass alone when alpha is 0, so the
    // ablation's gradients cannot pick up a push contribution even in the
    // last bit.
    for (const auto& p : model.parameters()) {
        Tensor t = p.second;  // shared handle
        t.zero_grad();
    }
    backward(mul_scalar(pull, -1.0));
    if (push_graph_needed) backward(mul_scalar(push_graph, cfg.alpha));
    opt.step(lr);
    return report;
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "epoch,head,mi_aug,mi_push_contrib,acc,nmi,ari,selected\n" << std::setprecision(17);
    for (const MetricRow& r : rows)
        out << r.epoch << ',' << r.head << ',' << r.mi_aug << ',' << r.mi_push_contrib << ','
            << r.acc << ',' << r.nmi << ',' << r.ari << ',' << r.selected << '\n';
    if (!out) throw IoError("failed writing " + path);
}

namespace {

template <class Dataset>
FitResult fit_impl(DhogModel& model, const Dataset& ds, int n, const AugmentationPolicy& policy,
                   const TrainConfig& cfg, const EvalCallback& on_eval, const Tensor& eval_in,
                   const std::vector<int>& truth) {
    validate(cfg);
    if (model.head_count() != cfg.k)
        throw ConfigError("config k=" + std::to_string(cfg.k) + " but the model has " +
                          std::to_string(model.head_count()) + " heads");
    for (const HeadConfig& h : model.head_configs())
        if (h.c != cfg.c) throw ConfigError("config c does not match head " + std::to_string(h.index));

    AugmentationPolicy pol = policy;
    pol.repeats = cfg.repeats;

    Optimizer opt(cfg, model.parameters());
    FitResult out;
    if (cfg.epochs == 0) return out;  // zero optimizer steps: parameters untouched

    const int64_t steps_per_epoch = n / cfg.batch_size;
    const int64_t total_steps = std::max<int64_t>(1, steps_per_epoch * cfg.epochs);
    int64_t gstep = 0;

    for (int e = 0; e < cfg.epochs; ++e) {
        BatchPlan plan(n, cfg.batch_size, cfg.seed, e);
        StepReport last;
        double sl = 0.0, spull = 0.0, spush = 0.0;
        for (int b = 0; b < plan.count(); ++b) {
            Minibatch mb = make_minibatch(ds, plan.indices(b), pol, Rng(plan.augment_seed(b)));
            last = train_step(model, mb, cfg, opt, lr_at(gstep, total_steps, cfg.initial_lr));
            ++gstep;
            sl += last.loss;
            spull += last.mi_pull;
            spush += last.mi_push;
        }
        const double inv = 1.0 / static_cast<double>(plan.count());
        out.epochs.push_back({e + 1, sl * inv, spull * inv, spush * inv});

        const bool last_epoch = e + 1 == cfg.epochs;
        if ((cfg.eval_every > 0 && (e + 1) % cfg.eval_every == 0) || last_epoch) {
            const bool has_truth =
                std::any_of(truth.begin(), truth.end(), [](int t) { return t >= 0; });
            if (!has_truth) throw ConfigError("evaluation needs ground-truth labels");
            int c_eval = cfg.c;
            for (int t : truth) c_eval = std::max(c_eval, t + 1);

            std::vector<std::vector<int>> labels = hard_labels_by_head(model, eval_in);
            const int sel = select_head(model, ds, pol, eval_stream_seed(cfg.seed, e + 1));
            std::vector<MetricRow> rows;
            for (int h = 0; h < cfg.k; ++h) {
                ClusterMetrics m = evaluate(labels[static_cast<size_t>(h)], truth, c_eval, h + 1);
                MetricRow row;
                row.epoch = e + 1;
                row.head = h + 1;
                row.mi_aug = last.head_mi_aug[static_cast<size_t>(h)];
                row.mi_push_contrib = last.head_push_contrib[static_cast<size_t>(h)];
                row.acc = m.accuracy;
                row.nmi = m.nmi;
                row.ari = m.ari;
                row.selected = (h + 1 == sel) ? 1 : 0;
                rows.push_back(row);
            }
            out.history.insert(out.history.end(), rows.begin(), rows.end());
            out.selected_head = sel;
            if (on_eval) on_eval(e + 1, rows);
        }

        if (!cfg.checkpoint_path.empty() &&
            ((cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0) || last_epoch))
            save_checkpoint(make_checkpoint(model, opt, cfg, e + 1, gstep), cfg.checkpoint_path);
    }
    return out;
}

}  // namespace

FitResult fit(DhogModel& model, const ToyDataset& ds, const AugmentationPolicy& policy,
              const TrainConfig& cfg, const EvalCallback& on_eval) {
    return fit_impl(model, ds, ds.points.dim(0), policy, cfg, on_eval, ds.points, ds.labels);
}

FitResult fit(DhogModel& model, const ImageDataset& ds, const AugmentationPolicy& policy,
              const TrainConfig& cfg, const EvalCallback& on_eval) {
    // Evaluation uses the deterministic counterpart of the policy's crop.
    Tensor eval_in;
    {
        std::vector<int> all(static_cast<size_t>(ds.n));
        for (int i = 0; i < ds.n; ++i) all[static_cast<size_t>(i)] = i;
        eval_in = images_to_tensor(ds, all);
        for (const AugmentOp& op : policy.ops)
            if (op.kind == AugmentOp::Kind::random_crop)
                eval_in = center_crop(eval_in, op.size, op.pad);
    }
    return fit_impl(model, ds, ds.n, policy, cfg, on_eval, eval_in, ds.labels);
}

// ---------------------------------------------------------------------------
// Checkpoint serialization.

namespace {

void put_u32(std::string& buf, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}

void put_u64(std::string& buf, uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    buf.append(b, 8);
}

struct Reader {
    const std::string& buf;
    size_t at = 0;

    void need(size_t n) const {
        if (at + n > buf.size()) throw IoError("corrupt checkpoint: truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, buf.data() + at, 4);
        at += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, buf.data() + at, 8);
        at += 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(at, n);
        at += n;
        return s;
    }
    std::vector<double> doubles(size_t n) {
        need(n * 8);
        std::vector<double> v(n);
        std::memcpy(v.data(), buf.data() + at, n * 8);
        at += n * 8;
        return v;
    }
};

void put_block(std::string& buf, const std::string& name, const Shape& shape,
               const std::vector<double>& vals) {
    put_u32(buf, static_cast<uint32_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<uint32_t>(shape.size()));
    for (int d : shape) put_u32(buf, static_cast<uint32_t>(d));
    put_u64(buf, static_cast<uint64_t>(vals.size()));
    buf.append(reinterpret_cast<const char*>(vals.data()), vals.size() * 8);
}

json trunk_to_json(const TrunkConfig& t) {
    return json{{"kind", t.kind == TrunkKind::mlp ? "mlp" : "smallcnn"},
                {"input_dim", t.input_dim},
                {"mlp_widths", t.mlp_widths},
                {"in_channels", t.in_channels},
                {"in_h", t.in_h},
                {"in_w", t.in_w},
                {"conv_channels", t.conv_channels},
                {"branch_points", t.branch_points}};
}

TrunkConfig trunk_from_json(const json& j) {
    TrunkConfig t;
    t.kind = j.at("kind").get<std::string>() == "mlp" ? TrunkKind::mlp : TrunkKind::smallcnn;
    t.input_dim = j.at("input_dim").get<int>();
    t.mlp_widths = j.at("mlp_widths").get<std::vector<int>>();
    t.in_channels = j.at("in_channels").get<int>();
    t.in_h = j.at("in_h").get<int>();
    t.in_w = j.at("in_w").get<int>();
    t.conv_channels = j.at("conv_channels").get<std::vector<int>>();
    t.branch_points = j.at("branch_points").get<std::vector<int>>();
    return t;
}

json head_to_json(const HeadConfig& h) {
    return json{{"index", h.index},
                {"own_block_widths", h.own_block_widths},
                {"mlp_hidden", h.mlp_hidden},
                {"c", h.c},
                {"overcluster_c", h.overcluster_c},
                {"pool_before_block", h.pool_before_block}};
}

HeadConfig head_from_json(const json& j) {
    HeadConfig h;
    h.index = j.at("index").get<int>();
    h.own_block_widths = j.at("own_block_widths").get<std::vector<int>>();
    h.mlp_hidden = j.at("mlp_hidden").get<int>();
    h.c = j.at("c").get<int>();
    h.overcluster_c = j.at("overcluster_c").get<int>();
    h.pool_before_block = j.at("pool_before_block").get<bool>();
    return h;
}

json train_to_json(const TrainConfig& c) {
    return json{{"k", c.k},
                {"c", c.c},
                {"alpha", c.alpha},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"repeats", c.repeats},
                {"initial_lr", c.initial_lr},
                {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd_momentum"},
                {"momentum", c.momentum},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"eps", c.eps},
                {"seed", c.seed},
                {"align_enabled", c.align_enabled},
                {"overcluster_c", c.overcluster_c},
                {"eval_every", c.eval_every},
                {"checkpoint_path", c.checkpoint_path},
                {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig c;
    c.k = j.at("k").get<int>();
    c.c = j.at("c").get<int>();
    c.alpha = j.at("alpha").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.repeats = j.at("repeats").get<int>();
    c.initial_lr = j.at("initial_lr").get<double>();
    c.optimizer = j.at("optimizer").get<std::string>() == "adam" ? OptimizerKind::adam
                                                                 : OptimizerKind::sgd_momentum;
    c.momentum = j.at("momentum").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.align_enabled = j.at("align_enabled").get<bool>();
    c.overcluster_c = j.at("overcluster_c").get<int>();
    c.eval_every = j.at("eval_every").get<int>();
    c.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    return c;
}

}  // namespace

std::string config_to_json(const TrainConfig& cfg, const TrunkConfig& trunk,
                           const std::vector<HeadConfig>& heads, uint64_t model_seed, int epoch,
                           int64_t global_step) {
    json j;
    j["train"] = train_to_json(cfg);
    j["model"]["trunk"] = trunk_to_json(trunk);
    j["model"]["heads"] = json::array();
    for (const HeadConfig& h : heads) j["model"]["heads"].push_back(head_to_json(h));
    j["model"]["seed"] = model_seed;
    j["epoch"] = epoch;
    j["global_step"] = global_step;
    return j.dump();
}

ConfigSnapshot parse_config_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("corrupt config snapshot: ") + e.what());
    }
    try {
        ConfigSnapshot s;
        s.train = train_from_json(j.at("train"));
        s.trunk = trunk_from_json(j.at("model").at("trunk"));
        for (const json& h : j.at("model").at("heads")) s.heads.push_back(head_from_json(h));
        s.model_seed = j.at("model").at("seed").get<uint64_t>();
        s.epoch = j.at("epoch").get<int>();
        s.global_step = j.at("global_step").get<int64_t>();
        return s;
    } catch (const json::exception& e) {
        throw IoError(std::string("corrupt config snapshot: ") + e.what());
    }
}

Checkpoint make_checkpoint(const DhogModel& model, const Optimizer& opt, const TrainConfig& cfg,
                           int epoch, int64_t global_step) {
    Checkpoint ck;
    ck.version = kCheckpointVersion;
    ck.config_json =
        config_to_json(cfg, model.trunk_config(), model.head_configs(), model.seed(), epoch,
                       global_step);
    for (const auto& [name, t] : model.parameters()) {
        ck.params.emplace_back(name,
                               std::vector<double>(t.values().begin(), t.values().end()));
        ck.param_shapes.push_back(t.shape());
    }
    for (auto& [name, vals] : opt.named_state())
        ck.opt_state.emplace_back("opt." + name, std::move(vals));
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::string buf;
    buf.append("DHOG", 4);
    put_u32(buf, ck.version);
    put_u64(buf, ck.config_json.size());
    buf.append(ck.config_json);
    put_u32(buf, static_cast<uint32_t>(ck.params.size() + ck.opt_state.size()));
    for (size_t i = 0; i < ck.params.size(); ++i)
        put_block(buf, ck.params[i].first, ck.param_shapes[i], ck.params[i].second);
    for (const auto& [name, vals] : ck.opt_state)
        put_block(buf, name, {static_cast<int>(vals.size())}, vals);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{buf};

    if (r.bytes(4) != "DHOG") throw IoError("not a checkpoint file (bad magic)");
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != kCheckpointVersion)
        throw ConfigError("checkpoint version " + std::to_string(ck.version) +
                          " does not match supported version " +
                          std::to_string(kCheckpointVersion));
    const uint64_t json_len = r.u64();
    ck.config_json = r.bytes(json_len);

    const uint32_t blocks = r.u32();
    for (uint32_t b = 0; b < blocks; ++b) {
        const uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const uint32_t ndim = r.u32();
        Shape shape(ndim);
        int64_t want = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<int>(r.u32());
            want *= shape[d];
        }
        const uint64_t count = r.u64();
        if (static_cast<int64_t>(count) != want)
            throw IoError("corrupt checkpoint: block " + name + " count/shape disagree");
        std::vector<double> vals = r.doubles(count);
        if (name.starts_with("opt.")) {
            ck.opt_state.emplace_back(name, std::move(vals));
        } else {
            ck.params.emplace_back(name, std::move(vals));
            ck.param_shapes.push_back(std::move(shape));
        }
    }
    if (r.at != buf.size()) throw IoError("corrupt checkpoint: trailing bytes");
    return ck;
}

void restore_checkpoint(const Checkpoint& ck, DhogModel& model, Optimizer* opt) {
    std::map<std::string, size_t> by_name;
    for (size_t i = 0; i < ck.params.size(); ++i) by_name[ck.params[i].first] = i;

    if (ck.params.size() != model.parameters().size())
        throw ConfigError("checkpoint holds " + std::to_string(ck.params.size()) +
                          " parameters, the model has " +
                          std::to_string(model.parameters().size()));
    for (const auto& [name, t] : model.parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("checkpoint is missing parameter " + name);
        const std::vector<double>& vals = ck.params[it->second].second;
        const Shape& shape = ck.param_shapes[it->second];
        if (shape != t.shape())
            throw ShapeError("parameter " + name + ": checkpoint shape " + shape_str(shape) +
                             " does not match model shape " + shape_str(t.shape()));
        Tensor handle = t;  // tensors share storage through the handle
        std::copy(vals.begin(), vals.end(), handle.values_mut().begin());
    }
    if (opt) {
        std::vector<std::pair<std::string, std::vector<double>>> state;
        for (const auto& [name, vals] : ck.opt_state)
            state.emplace_back(name.substr(4), vals);  // strip "opt."
        opt->load_state(state);
    }
}

DhogModel model_from_checkpoint(const Checkpoint& ck) {
    ConfigSnapshot snap = parse_config_json(ck.config_json);
    DhogModel model(snap.trunk, snap.heads, snap.model_seed);
    restore_checkpoint(ck, model, nullptr);
    return model;
}

}  // namespace dhog
