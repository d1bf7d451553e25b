#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "dhog/errors.hpp"
#include "dhog/model.hpp"
#include "dhog/ops.hpp"
#include "dhog/rng.hpp"
#include "dhog/tensor.hpp"

using namespace dhog;

namespace {

TrunkConfig toy_trunk(int heads) {
    TrunkConfig t;
    t.kind = TrunkKind::mlp;
    t.input_dim = 2;
    t.mlp_widths = {8, 8};
    t.branch_points.assign(static_cast<size_t>(heads), 1);
    for (int i = 1; i < heads; ++i) t.branch_points[static_cast<size_t>(i)] = 2;
    return t;
}

std::vector<HeadConfig> toy_heads(int k, int c) {
    std::vector<HeadConfig> out;
    for (int i = 1; i <= k; ++i) {
        HeadConfig h;
        h.index = i;
        h.own_block_widths = {8};
        h.mlp_hidden = 16;
        h.c = c;
        out.push_back(h);
    }
    return out;
}

Tensor random_batch(int n, int d, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n) * d);
    for (double& x : v) x = rng.uniform(-1.5, 1.5);
    return Tensor::from_values({n, d}, std::move(v));
}

Tensor random_images(int n, int c, int h, int w, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n) * c * h * w);
    for (double& x : v) x = rng.uniform();
    return Tensor::from_values({n, c, h, w}, std::move(v));
}

// Generic cotangent: weighted sum of all entries with distinct weights, so
// backward sees a non-degenerate adjoint (a plain sum of softmax rows is
// constant and would make every gradient vanish).
Tensor weighted_sum(const Tensor& t) {
    std::vector<double> w(static_cast<size_t>(t.size()));
    for (size_t i = 0; i < w.size(); ++i) w[i] = 0.25 + 0.37 * static_cast<double>(i % 7);
    Shape s = t.shape();
    Tensor weights = Tensor::from_values(std::move(s), std::move(w));
    Tensor flat = reshape(mul(t, weights), {1, static_cast<int>(t.size())});
    return sum(flat);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.values().data(), b.values().data(),
                       static_cast<size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("init is deterministic per seed and differs across seeds") {
    DhogModel a(toy_trunk(3), toy_heads(3, 4), 17);
    DhogModel b(toy_trunk(3), toy_heads(3, 4), 17);
    DhogModel c(toy_trunk(3), toy_heads(3, 4), 18);

    REQUIRE(a.parameters().size() == b.parameters().size());
    for (size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(a.parameters()[i].first == b.parameters()[i].first);
        CHECK(bitwise_equal(a.parameters()[i].second, b.parameters()[i].second));
    }
    bool any_diff = false;
    for (size_t i = 0; i < a.parameters().size(); ++i)
        if (!bitwise_equal(a.parameters()[i].second, c.parameters()[i].second)) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("weights stay inside the fan-in bound and biases start at zero") {
    DhogModel m(toy_trunk(2), toy_heads(2, 3), 5);
    for (const auto& [name, t] : m.parameters()) {
        if (name.ends_with(".bias")) {
            for (double v : t.values()) CHECK(v == 0.0);
        } else {
            int fan_in = t.ndim() == 2 ? t.dim(0) : t.dim(1) * t.dim(2) * t.dim(3);
            const double s = std::sqrt(1.0 / fan_in);
            for (double v : t.values()) {
                CHECK(v >= -s);
                CHECK(v < s);
            }
        }
    }
}

TEST_CASE("smallcnn parameter count matches the closed form") {
    TrunkConfig t;
    t.kind = TrunkKind::smallcnn;
    t.in_channels = 3;
    t.in_h = 32;
    t.in_w = 32;
    t.conv_channels = {32, 64, 128};
    t.branch_points = {1, 2, 3, 3, 3, 3, 3, 3};

    std::vector<HeadConfig> heads;
    for (int i = 1; i <= 8; ++i) {
        HeadConfig h;
        h.index = i;
        h.mlp_hidden = 200;
        h.c = 10;
        heads.push_back(h);
    }
    DhogModel m(t, heads, 1);

    // Trunk: conv3x3 stages 3->32->64->128, each co*ci*9 + co.
    int64_t expect = 0;
    const int chans[4] = {3, 32, 64, 128};
    for (int s = 0; s < 3; ++s)
        expect += static_cast<int64_t>(chans[s + 1]) * chans[s] * 9 + chans[s + 1];
    // Heads: one conv block at the branch width, GAP, then w->200->10.
    for (int i = 0; i < 8; ++i) {
        const int w = chans[t.branch_points[static_cast<size_t>(i)]];
        expect += static_cast<int64_t>(w) * w * 9 + w;     // own block
        expect += static_cast<int64_t>(w) * 200 + 200;     // fc1
        expect += static_cast<int64_t>(200) * 10 + 10;     // fc2
    }
    CHECK(m.parameter_count() == expect);
    CHECK(m.parameters_with_prefix("trunk.").size() == 6);
    CHECK(m.parameters_with_prefix("head3.").size() == 6);
}

TEST_CASE("forward emits normalized rows for every head") {
    DhogModel m(toy_trunk(3), toy_heads(3, 4), 23);
    Tensor batch = random_batch(5, 2, 99);
    ForwardResult r = m.forward(batch, Mode::train);
    REQUIRE(r.pull.size() == 3);
    REQUIRE(r.push.size() == 3);
    for (const auto& group : {r.pull, r.push}) {
        for (const LabelDistribution& d : group) {
            REQUIRE(d.probs.shape() == Shape{5, 4});
            for (int i = 0; i < 5; ++i) {
                double row = 0.0;
                for (int j = 0; j < 4; ++j) {
                    CHECK(d.probs.at(i, j) >= 0.0);
                    row += d.probs.at(i, j);
                }
                CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
    for (size_t i = 0; i < r.pull.size(); ++i) {
        CHECK(r.pull[i].head_index == static_cast<int>(i) + 1);
        CHECK_FALSE(r.pull[i].overcluster);
        // Push and pull run the same weights on the same activations; only
        // the gradient wiring differs, so values agree bitwise.
        CHECK(bitwise_equal(r.pull[i].probs, r.push[i].probs));
    }
}

TEST_CASE("identical inputs produce identical output rows") {
    DhogModel m(toy_trunk(2), toy_heads(2, 3), 7);
    std::vector<double> v = {0.3, -0.8, 0.3, -0.8, 1.1, 0.2};
    Tensor batch = Tensor::from_values({3, 2}, std::move(v));
    ForwardResult r = m.forward(batch, Mode::eval);
    for (const LabelDistribution& d : r.pull)
        for (int j = 0; j < 3; ++j) CHECK(d.probs.at(0, j) == d.probs.at(1, j));
}

TEST_CASE("eval mode is bit-identical across calls and builds no graph") {
    DhogModel m(toy_trunk(2), toy_heads(2, 3), 11);
    Tensor batch = random_batch(6, 2, 3);
    ForwardResult a = m.forward(batch, Mode::eval);
    ForwardResult b = m.forward(batch, Mode::eval);
    ForwardResult t = m.forward(batch, Mode::train);
    REQUIRE(a.pull.size() == b.pull.size());
    CHECK(a.push.empty());
    for (size_t i = 0; i < a.pull.size(); ++i) {
        CHECK(bitwise_equal(a.pull[i].probs, b.pull[i].probs));
        // Train mode only adds gradient bookkeeping; values match eval.
        CHECK(bitwise_equal(a.pull[i].probs, t.pull[i].probs));
        CHECK_FALSE(a.pull[i].probs.requires_grad());
        CHECK(t.pull[i].probs.requires_grad());
    }
}

TEST_CASE("ablating a later head never changes an earlier head's outputs") {
    DhogModel m(toy_trunk(3), toy_heads(3, 4), 31);
    Tensor batch = random_batch(4, 2, 8);
    ForwardResult before = m.forward(batch, Mode::eval);

    for (auto& [name, t] : m.parameters_with_prefix("head3.")) {
        auto vals = t.values_mut();
        for (double& v : vals) v = 0.0;
    }
    ForwardResult after = m.forward(batch, Mode::eval);
    CHECK(bitwise_equal(before.pull[0].probs, after.pull[0].probs));
    CHECK(bitwise_equal(before.pull[1].probs, after.pull[1].probs));
    CHECK_FALSE(bitwise_equal(before.pull[2].probs, after.pull[2].probs));
}

TEST_CASE("push outputs carry no gradient into the trunk; pull does") {
    DhogModel m(toy_trunk(2), toy_heads(2, 3), 13);
    Tensor batch = random_batch(4, 2, 21);

    SUBCASE("push path") {
        ForwardResult r = m.forward(batch, Mode::train);
        backward(weighted_sum(r.push[1].probs));
        for (const auto& [name, t] : m.parameters_with_prefix("trunk."))
            CHECK_FALSE(t.grad_allocated());
        bool head2_nonzero = false;
        for (const auto& [name, t] : m.parameters_with_prefix("head2."))
            for (double g : t.grad())
                if (g != 0.0) head2_nonzero = true;
        CHECK(head2_nonzero);
        for (const auto& [name, t] : m.parameters_with_prefix("head1."))
            CHECK_FALSE(t.grad_allocated());
    }

    SUBCASE("pull path") {
        ForwardResult r = m.forward(batch, Mode::train, /*with_push=*/false);
        CHECK(r.push.empty());
        backward(weighted_sum(r.pull[1].probs));
        bool trunk_nonzero = false;
        for (const auto& [name, t] : m.parameters_with_prefix("trunk."))
            for (double g : t.grad())
                if (g != 0.0) trunk_nonzero = true;
        CHECK(trunk_nonzero);
    }
}

TEST_CASE("overclustering twins join pull outputs but never push") {
    auto heads = toy_heads(2, 3);
    heads[1].overcluster_c = 7;
    DhogModel m(toy_trunk(2), heads, 41);
    Tensor batch = random_batch(4, 2, 2);
    ForwardResult r = m.forward(batch, Mode::train);

    REQUIRE(r.pull.size() == 3);
    REQUIRE(r.push.size() == 2);
    CHECK(r.pull[2].overcluster);
    CHECK(r.pull[2].head_index == 2);
    CHECK(r.pull[2].probs.shape() == Shape{4, 7});
    CHECK_FALSE(r.push[0].overcluster);
    CHECK_FALSE(r.push[1].overcluster);
    CHECK(m.parameters_with_prefix("head2_oc.").size() == 6);
}

TEST_CASE("smallcnn forward, spatial own blocks and pooled blocks") {
    TrunkConfig t;
    t.kind = TrunkKind::smallcnn;
    t.in_channels = 2;
    t.in_h = 8;
    t.in_w = 8;
    t.conv_channels = {3, 4};
    t.branch_points = {1, 2};

    std::vector<HeadConfig> heads = toy_heads(2, 3);
    heads[0].own_block_widths = {5};
    heads[1].own_block_widths = {6};
    heads[1].pool_before_block = true;  // fully-connected own block after pooling

    DhogModel m(t, heads, 3);
    Tensor batch = random_images(2, 2, 8, 8, 12);
    ForwardResult r = m.forward(batch, Mode::train);
    REQUIRE(r.pull.size() == 2);
    for (const LabelDistribution& d : r.pull) {
        REQUIRE(d.probs.shape() == Shape{2, 3});
        for (int i = 0; i < 2; ++i) {
            double row = 0.0;
            for (int j = 0; j < 3; ++j) row += d.probs.at(i, j);
            CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    // Spatial block keeps a conv kernel; pooled block is a linear layer.
    CHECK(m.parameters_with_prefix("head1.block0.kernel").size() == 1);
    CHECK(m.parameters_with_prefix("head2.block0.weight").size() == 1);

    backward(weighted_sum(r.pull[1].probs));
    bool trunk_nonzero = false;
    for (const auto& [name, tn] : m.parameters_with_prefix("trunk."))
        for (double g : tn.grad())
            if (g != 0.0) trunk_nonzero = true;
    CHECK(trunk_nonzero);
}

TEST_CASE("hard labels take the argmax and break ties toward smaller indices") {
    LabelDistribution d;
    d.probs = Tensor::from_values({4, 3}, {0.2, 0.5, 0.3,   //
                                           0.5, 0.5, 0.0,   //
                                           0.1, 0.1, 0.8,   //
                                           1.0 / 3, 1.0 / 3, 1.0 / 3});
    std::vector<int> want = {1, 0, 2, 0};
    CHECK(hard_labels(d) == want);

    LabelDistribution bad;
    bad.probs = Tensor::from_values({3}, {0.1, 0.2, 0.7});
    CHECK_THROWS_AS(hard_labels(bad), ShapeError);
}

TEST_CASE("configuration and batch-shape validation") {
    SUBCASE("branch points must be nondecreasing") {
        TrunkConfig t = toy_trunk(2);
        t.branch_points = {2, 1};
        CHECK_THROWS_AS(DhogModel(t, toy_heads(2, 3), 1), ConfigError);
    }
    SUBCASE("branch points must lie inside the trunk") {
        TrunkConfig t = toy_trunk(2);
        t.branch_points = {1, 3};
        CHECK_THROWS_AS(DhogModel(t, toy_heads(2, 3), 1), ConfigError);
    }
    SUBCASE("head indices run 1..k") {
        auto heads = toy_heads(2, 3);
        heads[1].index = 3;
        CHECK_THROWS_AS(DhogModel(toy_trunk(2), heads, 1), ConfigError);
    }
    SUBCASE("at least two labels per head") {
        auto heads = toy_heads(1, 2);
        heads[0].c = 1;
        CHECK_THROWS_AS(DhogModel(toy_trunk(1), heads, 1), ConfigError);
    }
    SUBCASE("overcluster width of one is rejected") {
        auto heads = toy_heads(1, 2);
        heads[0].overcluster_c = 1;
        CHECK_THROWS_AS(DhogModel(toy_trunk(1), heads, 1), ConfigError);
    }
    SUBCASE("mlp batch must match input_dim") {
        DhogModel m(toy_trunk(1), toy_heads(1, 2), 1);
        CHECK_THROWS_AS(m.forward(random_batch(3, 5, 1), Mode::eval), ShapeError);
    }
    SUBCASE("smallcnn batch must match the configured image shape") {
        TrunkConfig t;
        t.kind = TrunkKind::smallcnn;
        t.in_channels = 3;
        t.in_h = 8;
        t.in_w = 8;
        t.conv_channels = {4};
        t.branch_points = {1};
        DhogModel m(t, toy_heads(1, 2), 1);
        CHECK_THROWS_AS(m.forward(random_images(2, 3, 8, 4, 1), Mode::eval), ShapeError);
        CHECK_THROWS_AS(m.forward(random_batch(2, 3, 1), Mode::eval), ShapeError);
    }
}
