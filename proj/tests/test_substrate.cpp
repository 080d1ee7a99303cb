#include "doctest.h"

#include "latsched/substrate/adam.hpp"
#include "latsched/substrate/checkpoint.hpp"
#include "latsched/substrate/gradcheck.hpp"
#include "latsched/substrate/graph.hpp"
#include "latsched/substrate/nn.hpp"
#include "latsched/substrate/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

using namespace latsched::substrate;

namespace {

Tensor random_tensor(int r, int c, RngStream& rng, double scale = 1.0) {
    Tensor t(r, c);
    for (double& v : t.v) v = rng.normal() * scale;
    return t;
}

} // namespace

TEST_CASE("stop_gradient is a forward identity and a backward annihilator") {
    RngStream rng(11, 1);
    Tensor x = random_tensor(3, 4, rng);
    Graph g;
    Value xv = g.input_grad(x);
    Value sg = g.stop_gradient(xv);
    for (size_t i = 0; i < x.v.size(); ++i) CHECK(sg.data()[i] == x.v[i]);

    // d/dx [ sg(x) * x ] at x = 3 equals 3: only the unblocked factor contributes.
    Tensor s(1, 1);
    s.v[0] = 3.0;
    Graph g2;
    Value a = g2.input_grad(s);
    Value prod = g2.mul(g2.stop_gradient(a), a);
    g2.backward(prod);
    CHECK(g2.grad_of(a)[0] == doctest::Approx(3.0).epsilon(1e-12));

    // d/dx sg(x) = 0 everywhere.
    Graph g3;
    Value b = g3.input_grad(s);
    Value out = g3.sum_all(g3.stop_gradient(b));
    g3.backward(out);
    CHECK(g3.grad_of(b).empty()); // gradient never propagated
}

TEST_CASE("straight-through sample: dominant logit and one-hot outputs") {
    RngStream rng(5, 2);
    Tensor logits(1, 3);
    logits.v = {1000.0, 0.0, 0.0};
    Graph g;
    Value lv = g.constant(logits);
    Value sample = g.straight_through_sample(lv, 1, 3, rng);
    CHECK(sample.data()[0] == 1.0);
    CHECK(sample.data()[1] == 0.0);
    CHECK(sample.data()[2] == 0.0);

    // one-hot per group on random logits
    Tensor many = random_tensor(7, 4 * 6, rng);
    Graph g2;
    Value mv = g2.constant(many);
    Value sm = g2.straight_through_sample(mv, 4, 6, rng);
    for (int r = 0; r < 7; ++r)
        for (int grp = 0; grp < 4; ++grp) {
            double sum = 0, mx = 0;
            for (int k = 0; k < 6; ++k) {
                double v = sm.data()[r * 24 + grp * 6 + k];
                sum += v;
                mx = std::max(mx, v);
            }
            CHECK(sum == 1.0);
            CHECK(mx == 1.0);
        }
}

TEST_CASE("straight-through sample: empirical frequencies within 3 sigma of uniform") {
    RngStream rng(123, 7);
    const int classes = 32, n = 100000;
    Tensor logits(1, classes); // all zero -> uniform
    std::vector<int> counts(classes, 0);
    Graph g;
    Value lv = g.constant(logits);
    for (int i = 0; i < n; ++i) {
        Value s = g.straight_through_sample(lv, 1, classes, rng);
        for (int k = 0; k < classes; ++k)
            if (s.data()[k] == 1.0) counts[k]++;
    }
    double p = 1.0 / classes;
    double sigma = std::sqrt(n * p * (1 - p));
    for (int k = 0; k < classes; ++k) CHECK(std::fabs(counts[k] - n * p) <= 3.0 * sigma);
}

TEST_CASE("straight-through gradient equals softmax-path gradient for linear readout") {
    RngStream rng(42, 3);
    Tensor logits = random_tensor(2, 10, rng);
    Tensor w = random_tensor(2, 10, rng);

    Graph g1;
    Value l1 = g1.input_grad(logits);
    RngStream s1(9, 9);
    Value st = g1.straight_through_sample(l1, 2, 5, s1);
    g1.backward(g1.sum_all(g1.mul(st, g1.constant(w))));

    Graph g2;
    Value l2 = g2.input_grad(logits);
    Value sm = g2.softmax_groups(l2, 2, 5);
    g2.backward(g2.sum_all(g2.mul(sm, g2.constant(w))));

    for (size_t i = 0; i < logits.v.size(); ++i)
        CHECK(g1.grad_of(l1)[i] == doctest::Approx(g2.grad_of(l2)[i]).epsilon(1e-12));
}

TEST_CASE("kl_categorical identities") {
    RngStream rng(3, 1);
    Tensor q = random_tensor(4, 8, rng);
    Graph g;
    Value qv = g.constant(q);
    Value kl = g.kl_groups(qv, qv, 2, 4);
    for (int r = 0; r < 4; ++r) CHECK(kl.data()[r] == doctest::Approx(0.0).epsilon(1e-12));

    // hand case: q = (0.5, 0.5), p = (0.25, 0.75)
    Tensor ql(1, 2), pl(1, 2);
    ql.v = {std::log(0.5), std::log(0.5)};
    pl.v = {std::log(0.25), std::log(0.75)};
    Graph g2;
    Value d = g2.kl_groups(g2.constant(ql), g2.constant(pl), 1, 2);
    CHECK(d.data()[0] == doctest::Approx(0.5 * std::log(4.0 / 3.0)).epsilon(1e-12));
    CHECK(d.data()[0] == doctest::Approx(0.1438410362258904).epsilon(1e-10));

    // Gibbs inequality on 1000 random pairs
    for (int i = 0; i < 1000; ++i) {
        Tensor a = random_tensor(1, 6, rng, 2.0), b = random_tensor(1, 6, rng, 2.0);
        Graph gg;
        Value v = gg.kl_groups(gg.constant(a), gg.constant(b), 1, 6);
        CHECK(v.data()[0] >= -1e-12);
    }

    Tensor bad(1, 4);
    Graph g3;
    CHECK_THROWS(g3.kl_groups(g3.constant(bad), g3.constant(ql), 1, 2));
}

TEST_CASE("ema_update arithmetic and degenerate decays") {
    auto build = [](double v) {
        auto ps = std::make_unique<ParameterSet>();
        Parameter& p = ps->add("layer.w", 2, 2);
        for (double& x : p.v) x = v;
        return ps;
    };
    auto target = build(1.0);
    auto online = build(0.0);

    ema_update(*target, *online, 1.0);
    CHECK((*target)[0].v[0] == 1.0);

    ema_update(*target, *online, 0.99);
    CHECK((*target)[0].v[0] == doctest::Approx(0.99).epsilon(1e-12));

    ema_update(*target, *online, 0.0);
    CHECK((*target)[0].v[0] == 0.0);

    // convex combination property
    RngStream rng(8, 8);
    auto t2 = build(0.0);
    auto o2 = build(0.0);
    for (double& x : (*t2)[0].v) x = rng.normal();
    for (double& x : (*o2)[0].v) x = rng.normal();
    std::vector<double> before = (*t2)[0].v;
    ema_update(*t2, *o2, 0.7);
    for (size_t i = 0; i < before.size(); ++i) {
        double lo = std::min(before[i], (*o2)[0].v[i]);
        double hi = std::max(before[i], (*o2)[0].v[i]);
        CHECK((*t2)[0].v[i] >= lo - 1e-12);
        CHECK((*t2)[0].v[i] <= hi + 1e-12);
    }

    auto mism = std::make_unique<ParameterSet>();
    mism->add("layer.w", 2, 3);
    CHECK_THROWS(ema_update(*target, *mism, 0.5));
}

TEST_CASE("grad_check: quadratic analytic case") {
    ParameterSet ps;
    Parameter& x = ps.add("x", 1, 2);
    x.v = {1.0, 2.0};
    auto loss = [&](Graph& g) { return g.sum_all(g.square(g.param(x))); };
    GradCheckReport rep = grad_check(loss, ps, 1e-5, 1e-6);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-6);

    // analytic gradient is (2, 4)
    ps.zero_grads();
    Graph g;
    g.backward(loss(g));
    CHECK(x.g[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x.g[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("grad_check rejects non-deterministic losses") {
    ParameterSet ps;
    Parameter& x = ps.add("x", 1, 1);
    x.v = {1.0};
    int counter = 0;
    auto loss = [&](Graph& g) {
        ++counter;
        return g.affine(g.sum_all(g.param(x)), 1.0, static_cast<double>(counter));
    };
    CHECK_THROWS_AS(grad_check(loss, ps), std::runtime_error);
}

TEST_CASE("finite differences agree with reverse mode for every op") {
    RngStream rng(77, 1);
    ParameterSet ps;
    Parameter& a = ps.add("a", 3, 4);
    Parameter& b = ps.add("b", 4, 5);
    Parameter& gain = ps.add("gain", 1, 5);
    Parameter& bias = ps.add("bias", 1, 5);
    for (double& v : a.v) v = rng.normal();
    for (double& v : b.v) v = rng.normal();
    for (double& v : gain.v) v = 1.0 + 0.1 * rng.normal();
    for (double& v : bias.v) v = 0.1 * rng.normal();

    SUBCASE("matmul + elu + layer_norm") {
        auto loss = [&](Graph& g) {
            Value h = g.matmul(g.param(a), g.param(b));
            h = g.elu(h);
            h = g.layer_norm(h, g.param(gain), g.param(bias));
            return g.mean_all(g.square(h));
        };
        CHECK(grad_check(loss, ps, 1e-5, 1e-3).pass);
    }
    SUBCASE("sigmoid/tanh/softplus/exp chain") {
        auto loss = [&](Graph& g) {
            Value h = g.matmul(g.param(a), g.param(b));
            Value s = g.sigmoid(h);
            Value t = g.tanh_fn(h);
            Value p = g.softplus(h);
            return g.mean_all(g.add(g.mul(s, t), g.mul(p, g.exp_fn(g.affine(h, 0.1, 0.0)))));
        };
        CHECK(grad_check(loss, ps, 1e-5, 1e-3).pass);
    }
    SUBCASE("batch_norm in training mode") {
        Tensor rm(1, 5), rv(1, 5);
        for (double& v : rv.v) v = 1.0;
        auto loss = [&](Graph& g) {
            Value h = g.matmul(g.param(a), g.param(b));
            h = g.batch_norm(h, g.param(gain), g.param(bias), rm, rv, true);
            return g.mean_all(g.square(h));
        };
        CHECK(grad_check(loss, ps, 1e-5, 1e-3).pass);
    }
    SUBCASE("grouped softmax, log-softmax and KL") {
        ParameterSet ps2;
        Parameter& q = ps2.add("q", 3, 8);
        Parameter& p = ps2.add("p", 3, 8);
        RngStream r2(5, 5);
        for (double& v : q.v) v = r2.normal();
        for (double& v : p.v) v = r2.normal();
        Tensor w = random_tensor(3, 8, r2);
        Tensor w2 = random_tensor(3, 1, r2);
        auto loss = [&](Graph& g) {
            Value sm = g.softmax_groups(g.param(q), 2, 4);
            Value ls = g.log_softmax_groups(g.param(p), 2, 4);
            Value kl = g.kl_groups(g.param(q), g.param(p), 2, 4);
            Value mixed = g.add(g.sum_all(g.mul(sm, g.constant(w))), g.sum_all(g.mul(ls, g.constant(w))));
            return g.add(mixed, g.sum_all(g.mul(kl, g.constant(w2))));
        };
        CHECK(grad_check(loss, ps2, 1e-5, 1e-3).pass);
    }
    SUBCASE("conv2d") {
        ParameterSet ps3;
        RngStream r3(6, 6);
        Parameter& img = ps3.add("img", 2, 2 * 8 * 8);
        for (double& v : img.v) v = r3.normal();
        ConvMeta meta{2, 8, 8, 3, 4, 2};
        Parameter& cw = ps3.add("cw", 3, 2 * 4 * 4);
        Parameter& cb = ps3.add("cb", 1, 3);
        init_conv(cw, 32, r3);
        auto loss = [&](Graph& g) {
            Value y = g.conv2d(g.param(img), g.param(cw), g.param(cb), meta);
            return g.mean_all(g.square(g.elu(y)));
        };
        CHECK(grad_check(loss, ps3, 1e-5, 1e-3).pass);
    }
    SUBCASE("gru cell composite") {
        ParameterSet ps4;
        RngStream r4(7, 7);
        GruCell cell(ps4, "gru", 6, 5, r4);
        Parameter& x = ps4.add("x", 3, 6);
        Parameter& h0 = ps4.add("h0", 3, 5);
        for (double& v : x.v) v = r4.normal();
        for (double& v : h0.v) v = r4.normal();
        auto loss = [&](Graph& g) {
            Value h = cell.step(g, g.param(x), g.param(h0));
            h = cell.step(g, g.param(x), h); // two steps share weights
            return g.mean_all(g.square(h));
        };
        CHECK(grad_check(loss, ps4, 1e-5, 1e-3).pass);
    }
    SUBCASE("concat/slice/sum_cols plumbing") {
        auto loss = [&](Graph& g) {
            Value m = g.matmul(g.param(a), g.param(b));
            Value cat = g.concat_cols(m, g.square(m));
            Value sl = g.slice_cols(cat, 2, 6);
            return g.mean_all(g.sum_cols(sl));
        };
        CHECK(grad_check(loss, ps, 1e-5, 1e-3).pass);
    }
}

TEST_CASE("checkpoint round trip, atomicity products and shape rejection") {
    RngStream rng(21, 4);
    ParameterSet ps;
    BufferSet bufs;
    Dense d(ps, "enc.fc1", 6, 4, rng);
    BatchNorm bn(ps, bufs, "enc.fc1", 4);
    for (double& v : bn.run_mean->v) v = rng.normal();

    std::string path = "ckpt_test_substrate.ckpt";
    save_checkpoint(path, ps, bufs, Precision::f64);

    ParameterSet ps2;
    BufferSet bufs2;
    RngStream rng2(99, 5);
    Dense d2(ps2, "enc.fc1", 6, 4, rng2);
    BatchNorm bn2(ps2, bufs2, "enc.fc1", 4);
    load_checkpoint(path, ps2, bufs2);
    for (size_t i = 0; i < ps.size(); ++i)
        for (size_t k = 0; k < ps[i].v.size(); ++k) CHECK(ps2[i].v[k] == ps[i].v[k]);
    for (size_t k = 0; k < bn.run_mean->v.size(); ++k)
        CHECK(bn2.run_mean->v[k] == bn.run_mean->v[k]);

    // loader rejects manifests whose shapes disagree with the configured net
    ParameterSet bad;
    BufferSet badb;
    RngStream rng3(1, 1);
    Dense d3(bad, "enc.fc1", 6, 5, rng3);
    BatchNorm bn3(bad, badb, "enc.fc1", 5);
    CHECK_THROWS(load_checkpoint(path, bad, badb));

    std::remove(path.c_str());
    std::remove((path + ".bin").c_str());
}

TEST_CASE("f32 mode rounds values through float; f64 mode does not") {
    Tensor t(1, 1);
    t.v[0] = 0.1; // not representable in binary32
    Graph g32(Precision::f32);
    double v32 = g32.constant(t).data()[0];
    CHECK(v32 == static_cast<double>(static_cast<float>(0.1)));
    Graph g64(Precision::f64);
    CHECK(g64.constant(t).data()[0] == 0.1);
}

TEST_CASE("adam minimizes a quadratic and clips by global norm") {
    ParameterSet ps;
    Parameter& x = ps.add("x", 1, 3);
    x.v = {5.0, -4.0, 3.0};
    Adam opt(0.1);
    for (int i = 0; i < 400; ++i) {
        ps.zero_grads();
        Graph g;
        g.backward(g.sum_all(g.square(g.param(x))));
        opt.step(ps);
    }
    for (double v : x.v) CHECK(std::fabs(v) < 1e-2);
    CHECK(ps.version() == 400);

    // clip: huge gradient scaled down to norm 1
    ParameterSet ps2;
    Parameter& y = ps2.add("y", 1, 1);
    y.v = {0.0};
    Adam clipped(1.0, /*clip_norm=*/1.0);
    ps2.zero_grads();
    Graph g;
    g.backward(g.affine(g.sum_all(g.param(y)), 1e6, 0.0));
    CHECK(y.g[0] == doctest::Approx(1e6));
    clipped.step(ps2);
    CHECK(std::fabs(y.v[0] + 1.0) < 1e-3); // one Adam step of a clipped gradient
}

TEST_CASE("per-op results are reproducible for a fixed seed") {
    auto run = [] {
        RngStream rng(2024, 1);
        ParameterSet ps;
        Dense d(ps, "d", 8, 8, rng);
        Tensor x = random_tensor(4, 8, rng);
        Graph g;
        Value y = g.mean_all(g.square(d(g, g.constant(x))));
        return y.scalar();
    };
    CHECK(run() == run());
}
