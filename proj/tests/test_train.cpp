#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dhog/errors.hpp"
#include "dhog/mi.hpp"
#include "dhog/ops.hpp"
#include "dhog/train.hpp"

using namespace dhog;

namespace {

TrunkConfig toy_trunk(std::vector<int> branch_points) {
    TrunkConfig t;
    t.kind = TrunkKind::mlp;
    t.input_dim = 2;
    t.mlp_widths = {16, 16};
    t.branch_points = std::move(branch_points);
    return t;
}

std::vector<HeadConfig> toy_heads(int k, int c) {
    std::vector<HeadConfig> heads;
    for (int i = 1; i <= k; ++i) {
        HeadConfig h;
        h.index = i;
        h.mlp_hidden = 12;
        h.c = c;
        heads.push_back(h);
    }
    return heads;
}

TrainConfig small_cfg(int k, int c, double alpha) {
    TrainConfig cfg;
    cfg.k = k;
    cfg.c = c;
    cfg.alpha = alpha;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.repeats = 2;
    cfg.initial_lr = 1e-2;
    cfg.seed = 7;
    return cfg;
}

ToyDataset tiny_toy(uint64_t seed) {
    ToySpec spec;
    spec.n_per_cluster = 12;  // 48 points
    spec.seed = seed;
    return gen_toy(spec);
}

Minibatch toy_batch(const ToyDataset& ds, int batch_size, int repeats, uint64_t seed) {
    std::vector<int> idx(static_cast<size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) idx[static_cast<size_t>(i)] = i;
    AugmentationPolicy pol = default_toy_policy(0.15, repeats);
    return make_minibatch(ds, idx, pol, Rng(seed));
}

std::vector<std::vector<double>> snapshot(const DhogModel& m) {
    std::vector<std::vector<double>> out;
    for (const auto& [name, t] : m.parameters())
        out.emplace_back(t.values().begin(), t.values().end());
    return out;
}

bool bitwise_equal(const std::vector<std::vector<double>>& a,
                   const std::vector<std::vector<double>>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size()) return false;
        for (size_t j = 0; j < a[i].size(); ++j)
            if (std::memcmp(&a[i][j], &b[i][j], sizeof(double)) != 0) return false;
    }
    return true;
}

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("validate rejects out-of-range config values") {
    TrainConfig ok = small_cfg(2, 3, 0.05);
    CHECK_NOTHROW(validate(ok));

    auto reject = [&](auto mutate) {
        TrainConfig bad = ok;
        mutate(bad);
        CHECK_THROWS_AS(validate(bad), ConfigError);
    };
    reject([](TrainConfig& c) { c.k = 0; });
    reject([](TrainConfig& c) { c.c = 1; });
    reject([](TrainConfig& c) { c.alpha = -0.01; });
    reject([](TrainConfig& c) { c.epochs = -1; });
    reject([](TrainConfig& c) { c.batch_size = 0; });
    reject([](TrainConfig& c) { c.repeats = 1; });
    reject([](TrainConfig& c) { c.initial_lr = 0.0; });
    reject([](TrainConfig& c) { c.momentum = 1.0; });
    reject([](TrainConfig& c) { c.beta1 = 1.0; });
    reject([](TrainConfig& c) { c.eps = 0.0; });
    reject([](TrainConfig& c) { c.eval_every = -1; });
    reject([](TrainConfig& c) { c.checkpoint_every = -2; });

    TrainConfig zero_epochs = ok;
    zero_epochs.epochs = 0;  // documented no-op
    CHECK_NOTHROW(validate(zero_epochs));
}

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
    CHECK(lr_at(0, 100, 0.3) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(lr_at(100, 100, 0.3) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(lr_at(50, 100, 0.3) == doctest::Approx(0.15).epsilon(1e-12));
    // Monotone decrease across a fine grid.
    double prev = lr_at(0, 1000, 1.0);
    for (int s = 1; s <= 1000; ++s) {
        double cur = lr_at(s, 1000, 1.0);
        CHECK(cur <= prev);
        prev = cur;
    }
    CHECK_THROWS_AS(lr_at(-1, 10, 0.1), ConfigError);
    CHECK_THROWS_AS(lr_at(11, 10, 0.1), ConfigError);
    CHECK_THROWS_AS(lr_at(0, 0, 0.1), ConfigError);
}

TEST_CASE("adam and sgd steps match hand-rolled updates") {
    TrainConfig cfg = small_cfg(1, 2, 0.0);

    SUBCASE("adam, two steps") {
        Tensor w = Tensor::from_values({2}, {1.0, -2.0}, true);
        Optimizer opt(cfg, {{"w", w}});
        double m0 = 0, m1 = 0, v0 = 0, v1 = 0, x0 = 1.0, x1 = -2.0;
        for (int t = 1; t <= 2; ++t) {
            const double g0 = 0.5 * t, g1 = -1.25;
            w.zero_grad();
            backward(sum(mul(Tensor::from_values({2}, {g0, g1}, false), w)));
            opt.step(0.1);
            const double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.999, t);
            m0 = 0.9 * m0 + 0.1 * g0;
            v0 = 0.999 * v0 + 0.001 * g0 * g0;
            x0 -= 0.1 * (m0 / bc1) / (std::sqrt(v0 / bc2) + 1e-8);
            m1 = 0.9 * m1 + 0.1 * g1;
            v1 = 0.999 * v1 + 0.001 * g1 * g1;
            x1 -= 0.1 * (m1 / bc1) / (std::sqrt(v1 / bc2) + 1e-8);
            CHECK(w.values()[0] == doctest::Approx(x0).epsilon(1e-14));
            CHECK(w.values()[1] == doctest::Approx(x1).epsilon(1e-14));
        }
        CHECK(opt.steps_taken() == 2);
    }

    SUBCASE("sgd with momentum") {
        cfg.optimizer = OptimizerKind::sgd_momentum;
        Tensor w = Tensor::from_values({1}, {0.0}, true);
        Optimizer opt(cfg, {{"w", w}});
        double buf = 0.0, x = 0.0;
        for (int t = 0; t < 3; ++t) {
            const double g = 1.0 + t;
            w.zero_grad();
            backward(mul_scalar(w, g));
            opt.step(0.5);
            buf = 0.9 * buf + g;
            x -= 0.5 * buf;
            CHECK(w.values()[0] == doctest::Approx(x).epsilon(1e-14));
        }
    }
}

TEST_CASE("alpha=0 step is bitwise identical to a manual pull-only update") {
    ToyDataset ds = tiny_toy(3);
    TrainConfig cfg = small_cfg(2, 2, 0.0);
    Minibatch batch = toy_batch(ds, cfg.batch_size, cfg.repeats, 99);

    DhogModel a(toy_trunk({1, 2}), toy_heads(2, 2), 5);
    DhogModel b(toy_trunk({1, 2}), toy_heads(2, 2), 5);
    Optimizer oa(cfg, a.parameters());
    Optimizer ob(cfg, b.parameters());

    StepReport rep = train_step(a, batch, cfg, oa, 1e-2);

    // Manual pull-only pass on the clone: no push graph anywhere.
    std::vector<ForwardResult> fwd;
    for (const Tensor& v : batch.views) fwd.push_back(b.forward(v, Mode::train, false));
    std::vector<std::vector<LabelDistribution>> heads(fwd.front().pull.size());
    for (size_t h = 0; h < heads.size(); ++h)
        for (const ForwardResult& f : fwd) heads[h].push_back(f.pull[h]);
    Tensor pull = mi_pull(heads);
    for (const auto& p : b.parameters()) {
        Tensor t = p.second;
        t.zero_grad();
    }
    backward(mul_scalar(pull, -1.0));
    ob.step(1e-2);

    CHECK(bitwise_equal(snapshot(a), snapshot(b)));
    CHECK(rep.mi_pull == pull.item());
    CHECK(rep.loss == -pull.item());
    // mi_push is still measured even though no push gradient flowed.
    CHECK(rep.mi_push > 0.0);
    CHECK(rep.head_push_contrib.size() == 2);
    CHECK(rep.head_push_contrib[0] == 0.0);
}

TEST_CASE("measured mi_push at alpha=0 equals the graph value at alpha>0") {
    ToyDataset ds = tiny_toy(11);
    Minibatch batch = toy_batch(ds, 16, 2, 4242);

    DhogModel a(toy_trunk({1, 2}), toy_heads(2, 2), 21);
    DhogModel b(toy_trunk({1, 2}), toy_heads(2, 2), 21);
    TrainConfig cfg0 = small_cfg(2, 2, 0.0);
    TrainConfig cfg5 = small_cfg(2, 2, 0.05);
    Optimizer oa(cfg0, a.parameters());
    Optimizer ob(cfg5, b.parameters());

    StepReport r0 = train_step(a, batch, cfg0, oa, 1e-3);
    StepReport r5 = train_step(b, batch, cfg5, ob, 1e-3);

    // Same pre-step state, same batch: the values-only measurement must
    // reproduce the graph's number exactly.
    CHECK(r0.mi_push == r5.mi_push);
    CHECK(r0.mi_pull == r5.mi_pull);
    CHECK(r5.loss == -(r5.mi_pull - 0.05 * r5.mi_push));
    // And the two parameter sets must now differ: alpha=0 skipped a term.
    CHECK_FALSE(bitwise_equal(snapshot(a), snapshot(b)));
}

TEST_CASE("single-head loss is the negated agreement objective") {
    ToyDataset ds = tiny_toy(5);
    TrainConfig cfg = small_cfg(1, 2, 0.05);
    Minibatch batch = toy_batch(ds, cfg.batch_size, cfg.repeats, 17);

    DhogModel m(toy_trunk({1}), toy_heads(1, 2), 9);
    DhogModel probe(toy_trunk({1}), toy_heads(1, 2), 9);
    Optimizer opt(cfg, m.parameters());

    StepReport rep = train_step(m, batch, cfg, opt, 1e-3);

    NoGradGuard guard;
    std::vector<LabelDistribution> views;
    for (const Tensor& v : batch.views) views.push_back(probe.forward(v, Mode::train).pull[0]);
    const double expected = mi_aug(views).item();
    CHECK(rep.mi_pull == expected);
    CHECK(rep.mi_push == 0.0);  // no pairs below rank 2
    CHECK(rep.loss == -expected);
    CHECK(rep.head_mi_aug.size() == 1);
    CHECK(rep.head_mi_aug[0] == expected);
}

TEST_CASE("identically initialised heads stay identical under pull-only steps") {
    // All heads branch at the same trunk stage and share parameter values, so
    // the mean-over-heads pull objective gives each the same gradient.
    ToyDataset ds = tiny_toy(23);
    TrainConfig cfg = small_cfg(3, 2, 0.0);
    DhogModel m(toy_trunk({2, 2, 2}), toy_heads(3, 2), 31);

    // Copy head1.* values into head2.*/head3.*.
    for (const auto& [name, t] : m.parameters()) {
        if (name.rfind("head1.", 0) != 0) continue;
        for (int other = 2; other <= 3; ++other) {
            const std::string target = "head" + std::to_string(other) + name.substr(5);
            for (const auto& [n2, t2] : m.parameters()) {
                if (n2 != target) continue;
                Tensor dst = t2;
                std::copy(t.values().begin(), t.values().end(), dst.values_mut().begin());
            }
        }
    }

    Optimizer opt(cfg, m.parameters());
    for (int step = 0; step < 5; ++step) {
        Minibatch batch = toy_batch(ds, cfg.batch_size, cfg.repeats, 1000 + step);
        train_step(m, batch, cfg, opt, 1e-2);
    }

    std::map<std::string, std::vector<double>> by_name;
    for (const auto& [name, t] : m.parameters())
        by_name[name] = {t.values().begin(), t.values().end()};
    int compared = 0;
    for (const auto& [name, vals] : by_name) {
        if (name.rfind("head1.", 0) != 0) continue;
        for (int other = 2; other <= 3; ++other) {
            const auto& twin = by_name.at("head" + std::to_string(other) + name.substr(5));
            REQUIRE(twin.size() == vals.size());
            for (size_t i = 0; i < vals.size(); ++i) CHECK(twin[i] == vals[i]);
            ++compared;
        }
    }
    CHECK(compared >= 12);  // 2 twins x (block + fc1 + fc2) x (weight + bias)
}

TEST_CASE("fit is deterministic and epochs=0 is a no-op") {
    ToyDataset ds = tiny_toy(2);
    AugmentationPolicy pol = default_toy_policy(0.15, 2);

    SUBCASE("same seed, same history") {
        TrainConfig cfg = small_cfg(2, 2, 0.05);
        DhogModel m1(toy_trunk({1, 2}), toy_heads(2, 2), 77);
        DhogModel m2(toy_trunk({1, 2}), toy_heads(2, 2), 77);
        FitResult r1 = fit(m1, ds, pol, cfg);
        FitResult r2 = fit(m2, ds, pol, cfg);
        REQUIRE(r1.history.size() == r2.history.size());
        REQUIRE(!r1.history.empty());
        for (size_t i = 0; i < r1.history.size(); ++i) {
            CHECK(r1.history[i].mi_aug == r2.history[i].mi_aug);
            CHECK(r1.history[i].acc == r2.history[i].acc);
            CHECK(r1.history[i].nmi == r2.history[i].nmi);
            CHECK(r1.history[i].ari == r2.history[i].ari);
            CHECK(r1.history[i].selected == r2.history[i].selected);
        }
        REQUIRE(r1.epochs.size() == r2.epochs.size());
        for (size_t e = 0; e < r1.epochs.size(); ++e) {
            CHECK(r1.epochs[e].loss == r2.epochs[e].loss);
            CHECK(r1.epochs[e].mi_pull == r2.epochs[e].mi_pull);
            CHECK(r1.epochs[e].mi_push == r2.epochs[e].mi_push);
        }
        CHECK(bitwise_equal(snapshot(m1), snapshot(m2)));
        CHECK(r1.selected_head == r2.selected_head);
    }

    SUBCASE("zero epochs leave parameters untouched") {
        TrainConfig cfg = small_cfg(2, 2, 0.05);
        cfg.epochs = 0;
        DhogModel m(toy_trunk({1, 2}), toy_heads(2, 2), 77);
        auto before = snapshot(m);
        FitResult r = fit(m, ds, pol, cfg);
        CHECK(bitwise_equal(before, snapshot(m)));
        CHECK(r.history.empty());
        CHECK(r.epochs.empty());
    }

    SUBCASE("eval cadence") {
        TrainConfig cfg = small_cfg(2, 2, 0.0);
        cfg.epochs = 3;
        cfg.eval_every = 2;
        DhogModel m(toy_trunk({1, 2}), toy_heads(2, 2), 8);
        std::vector<int> eval_epochs;
        fit(m, ds, pol, cfg,
            [&](int epoch, const std::vector<MetricRow>& rows) {
                eval_epochs.push_back(epoch);
                CHECK(rows.size() == 2);
                int selected = 0;
                for (const MetricRow& r : rows) {
                    CHECK(r.epoch == epoch);
                    selected += r.selected;
                }
                CHECK(selected == 1);
            });
        CHECK(eval_epochs == std::vector<int>{2, 3});

        cfg.eval_every = 0;  // final evaluation only
        DhogModel m2(toy_trunk({1, 2}), toy_heads(2, 2), 8);
        eval_epochs.clear();
        fit(m2, ds, pol, cfg,
            [&](int epoch, const std::vector<MetricRow>&) { eval_epochs.push_back(epoch); });
        CHECK(eval_epochs == std::vector<int>{3});
    }

    SUBCASE("head-count and class-count mismatches are rejected") {
        TrainConfig cfg = small_cfg(3, 2, 0.0);
        DhogModel m(toy_trunk({1, 2}), toy_heads(2, 2), 1);
        CHECK_THROWS_AS(fit(m, ds, pol, cfg), ConfigError);
        TrainConfig cfg2 = small_cfg(2, 4, 0.0);
        CHECK_THROWS_AS(fit(m, ds, pol, cfg2), ConfigError);
    }
}

TEST_CASE("metrics csv layout") {
    std::vector<MetricRow> rows(2);
    rows[0] = {1, 1, 0.5, 0.0, 0.75, 0.5, 0.25, 0};
    rows[1] = {1, 2, 0.625, 0.125, 0.5, 0.0, 0.0, 1};
    const std::string path = temp_path("dhog_metrics_test.csv");
    write_metrics_csv(rows, path);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,head,mi_aug,mi_push_contrib,acc,nmi,ari,selected");
    std::getline(in, line);
    CHECK(line == "1,1,0.5,0,0.75,0.5,0.25,0");
    std::getline(in, line);
    CHECK(line == "1,2,0.625,0.125,0.5,0,0,1");
    CHECK_FALSE(std::getline(in, line));
    std::remove(path.c_str());

    CHECK_THROWS_AS(write_metrics_csv(rows, "/nonexistent-dir/x.csv"), IoError);
}

TEST_CASE("checkpoint round-trip restores the exact model") {
    ToyDataset ds = tiny_toy(31);
    TrainConfig cfg = small_cfg(2, 2, 0.05);
    DhogModel m(toy_trunk({1, 2}), toy_heads(2, 2), 13);
    Optimizer opt(cfg, m.parameters());
    Minibatch batch = toy_batch(ds, cfg.batch_size, cfg.repeats, 555);
    train_step(m, batch, cfg, opt, 1e-3);

    const std::string path = temp_path("dhog_ck_roundtrip.dhog");
    save_checkpoint(make_checkpoint(m, opt, cfg, 1, 3), path);
    Checkpoint ck = load_checkpoint(path);
    std::remove(path.c_str());

    CHECK(ck.version == 1);
    ConfigSnapshot snap = parse_config_json(ck.config_json);
    CHECK(snap.train.alpha == cfg.alpha);
    CHECK(snap.train.seed == cfg.seed);
    CHECK(snap.epoch == 1);
    CHECK(snap.global_step == 3);
    CHECK(snap.trunk.kind == TrunkKind::mlp);
    CHECK(snap.heads.size() == 2);
    CHECK(snap.model_seed == 13);

    DhogModel rebuilt = model_from_checkpoint(ck);
    CHECK(bitwise_equal(snapshot(m), snapshot(rebuilt)));

    // Forward agreement on 100 fresh random inputs, bit for bit.
    Rng rng(404);
    std::vector<double> vals(200);
    for (double& v : vals) v = rng.uniform(-3.0, 3.0);
    Tensor x = Tensor::from_values({100, 2}, vals);
    ForwardResult fa = m.forward(x, Mode::eval);
    ForwardResult fb = rebuilt.forward(x, Mode::eval);
    REQUIRE(fa.pull.size() == fb.pull.size());
    for (size_t h = 0; h < fa.pull.size(); ++h) {
        auto va = fa.pull[h].probs.values();
        auto vb = fb.pull[h].probs.values();
        REQUIRE(va.size() == vb.size());
        for (size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
    }
}

TEST_CASE("checkpoint resume continues training bit-identically") {
    ToyDataset ds = tiny_toy(41);
    TrainConfig cfg = small_cfg(2, 2, 0.05);
    DhogModel m(toy_trunk({1, 2}), toy_heads(2, 2), 19);
    Optimizer opt(cfg, m.parameters());

    for (int s = 0; s < 3; ++s)
        train_step(m, toy_batch(ds, 16, 2, 100 + s), cfg, opt, lr_at(s, 5, cfg.initial_lr));
    const std::string path = temp_path("dhog_ck_resume.dhog");
    save_checkpoint(make_checkpoint(m, opt, cfg, 1, 3), path);

    for (int s = 3; s < 5; ++s)
        train_step(m, toy_batch(ds, 16, 2, 100 + s), cfg, opt, lr_at(s, 5, cfg.initial_lr));
    auto reference = snapshot(m);

    Checkpoint ck = load_checkpoint(path);
    std::remove(path.c_str());
    DhogModel resumed = model_from_checkpoint(ck);
    Optimizer opt2(cfg, resumed.parameters());
    restore_checkpoint(ck, resumed, &opt2);
    CHECK(opt2.steps_taken() == 3);

    for (int s = 3; s < 5; ++s)
        train_step(resumed, toy_batch(ds, 16, 2, 100 + s), cfg, opt2, lr_at(s, 5, cfg.initial_lr));
    CHECK(bitwise_equal(reference, snapshot(resumed)));
}

TEST_CASE("checkpoint files reject corruption and mismatches") {
    TrainConfig cfg = small_cfg(1, 2, 0.0);
    DhogModel m(toy_trunk({1}), toy_heads(1, 2), 3);
    Optimizer opt(cfg, m.parameters());
    const std::string path = temp_path("dhog_ck_corrupt.dhog");
    save_checkpoint(make_checkpoint(m, opt, cfg, 0, 0), path);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    auto rewrite = [&](const std::string& content) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
    };

    SUBCASE("truncation") {
        rewrite(bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(load_checkpoint(path), IoError);
    }
    SUBCASE("bad magic") {
        std::string evil = bytes;
        evil[0] = 'X';
        rewrite(evil);
        CHECK_THROWS_AS(load_checkpoint(path), IoError);
    }
    SUBCASE("unsupported version") {
        std::string evil = bytes;
        evil[4] = 2;  // little-endian u32 version field
        rewrite(evil);
        CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(temp_path("dhog_ck_never_written.dhog")), IoError);
    }
    SUBCASE("architecture mismatch names the parameter") {
        Checkpoint ck = load_checkpoint(path);
        TrunkConfig other = toy_trunk({1});
        other.mlp_widths = {24, 24};  // different trunk width
        DhogModel wrong(other, toy_heads(1, 2), 3);
        try {
            restore_checkpoint(ck, wrong, nullptr);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("trunk.0.weight") != std::string::npos);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("fit writes checkpoints at the requested cadence") {
    ToyDataset ds = tiny_toy(51);
    TrainConfig cfg = small_cfg(2, 2, 0.0);
    cfg.epochs = 2;
    cfg.checkpoint_path = temp_path("dhog_fit_ck.dhog");
    DhogModel m(toy_trunk({1, 2}), toy_heads(2, 2), 4);
    fit(m, ds, default_toy_policy(0.15, 2), cfg);

    Checkpoint ck = load_checkpoint(cfg.checkpoint_path);
    std::remove(cfg.checkpoint_path.c_str());
    ConfigSnapshot snap = parse_config_json(ck.config_json);
    CHECK(snap.epoch == 2);
    CHECK(snap.global_step == 2 * (48 / 16));
    DhogModel rebuilt = model_from_checkpoint(ck);
    CHECK(bitwise_equal(snapshot(m), snapshot(rebuilt)));
}
