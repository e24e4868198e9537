#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "irestore/checkpoint.hpp"
#include "irestore/net.hpp"
#include "irestore/nn_ops.hpp"
#include "irestore/optim.hpp"
#include "irestore/rng.hpp"

using namespace irestore;

namespace {

Checkpoint sample_checkpoint(std::uint64_t seed) {
    Rng rng(seed);
    Checkpoint ck;
    ck.seed = seed;
    ck.iteration = 123;
    ck.config.gamma_e = 3e-4;
    ck.config.gamma_g = 7e-4;
    ck.config.warm_epochs = -1;  // the sentinel must survive as-is
    ck.config.total_epochs = 17;
    ck.config.batch_size = 5;
    ck.config.seed = seed;
    ck.config.ascent_every = 3;
    ck.config.generator_mode = "random";
    ck.config.loss_weights.alpha = 0.6;
    ck.config.loss_weights.beta = 1.4;
    ck.config.lambda_reg = 0.05;
    ck.config.steps = 2;

    ParamBlob w;
    w.name = "w";
    w.shape = {2, 3};
    for (int i = 0; i < 6; ++i) w.values.push_back(static_cast<float>(rng.normal()));
    ParamBlob b;
    b.name = "b";
    b.shape = {3};
    for (int i = 0; i < 3; ++i) b.values.push_back(static_cast<float>(rng.normal()));
    ck.params = {w, b};

    OptimSnapshot adam;
    adam.kind = 1;
    adam.lr = 1e-3;
    adam.beta1 = 0.85;
    adam.beta2 = 0.995;
    adam.eps = 1e-7;
    adam.step_count = 42;
    adam.m = {{0.1f, -0.2f, 0.3f, 0.0f, 1.5f, -2.5f}, {0.5f, 0.0f, -0.5f}};
    adam.v = {{0.01f, 0.02f, 0.03f, 0.0f, 2.25f, 6.25f}, {0.25f, 0.0f, 0.25f}};
    OptimSnapshot sgd;
    sgd.kind = 0;
    sgd.lr = 2e-4;
    ck.optimizers = {adam, sgd};
    return ck;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint round-trip is bitwise") {
    Checkpoint ck = sample_checkpoint(11);
    // plant awkward float bit patterns: negative zero and a denormal
    ck.params[0].values[0] = -0.0f;
    ck.params[0].values[1] = 1e-42f;

    save_checkpoint(ck, "t_ck_rt.bin");
    Checkpoint back = load_checkpoint("t_ck_rt.bin");

    CHECK(back.seed == ck.seed);
    CHECK(back.iteration == ck.iteration);
    CHECK(back.config.gamma_e == ck.config.gamma_e);
    CHECK(back.config.gamma_g == ck.config.gamma_g);
    CHECK(back.config.warm_epochs == -1);
    CHECK(back.config.total_epochs == 17);
    CHECK(back.config.batch_size == 5);
    CHECK(back.config.ascent_every == 3);
    CHECK(back.config.generator_mode == "random");
    CHECK(back.config.loss_weights.alpha == ck.config.loss_weights.alpha);
    CHECK(back.config.loss_weights.beta == ck.config.loss_weights.beta);
    CHECK(back.config.lambda_reg == ck.config.lambda_reg);
    CHECK(back.config.steps == 2);

    REQUIRE(back.params.size() == 2);
    CHECK(back.params[0].name == "w");
    CHECK(back.params[0].shape == std::vector<int>{2, 3});
    REQUIRE(back.params[0].values.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        std::uint32_t a, b;
        std::memcpy(&a, &ck.params[0].values[i], 4);
        std::memcpy(&b, &back.params[0].values[i], 4);
        CHECK(a == b);
    }
    CHECK(back.params[1].name == "b");

    REQUIRE(back.optimizers.size() == 2);
    CHECK(back.optimizers[0].kind == 1);
    CHECK(back.optimizers[0].lr == 1e-3);
    CHECK(back.optimizers[0].beta1 == 0.85);
    CHECK(back.optimizers[0].beta2 == 0.995);
    CHECK(back.optimizers[0].eps == 1e-7);
    CHECK(back.optimizers[0].step_count == 42);
    CHECK(back.optimizers[0].m == ck.optimizers[0].m);
    CHECK(back.optimizers[0].v == ck.optimizers[0].v);
    CHECK(back.optimizers[1].kind == 0);
    CHECK(back.optimizers[1].lr == 2e-4);
    CHECK(back.optimizers[1].m.empty());

    // a second save of the loaded state reproduces the file byte for byte
    save_checkpoint(back, "t_ck_rt2.bin");
    CHECK(slurp("t_ck_rt.bin") == slurp("t_ck_rt2.bin"));
}

TEST_CASE("checkpoint loader rejects damaged files") {
    Checkpoint ck = sample_checkpoint(5);
    save_checkpoint(ck, "t_ck_dmg.bin");
    const std::string good = slurp("t_ck_dmg.bin");

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    spit("t_ck_badmagic.bin", bad_magic);
    CHECK_THROWS_WITH_AS(load_checkpoint("t_ck_badmagic.bin"),
                         "t_ck_badmagic.bin: not a checkpoint (bad magic)", std::runtime_error);

    std::string bad_version = good;
    bad_version[8] = 9;  // little-endian u16 version right after the magic
    spit("t_ck_badver.bin", bad_version);
    CHECK_THROWS_WITH_AS(load_checkpoint("t_ck_badver.bin"),
                         "t_ck_badver.bin: checkpoint version 9 unsupported (expected 1)", std::runtime_error);

    spit("t_ck_trunc.bin", good.substr(0, good.size() / 2));
    CHECK_THROWS_AS(load_checkpoint("t_ck_trunc.bin"), std::runtime_error);

    spit("t_ck_trail.bin", good + "junk");
    CHECK_THROWS_AS(load_checkpoint("t_ck_trail.bin"), std::runtime_error);

    CHECK_THROWS_AS(load_checkpoint("no_such_checkpoint.bin"), std::runtime_error);
}

TEST_CASE("parameter blobs restore by name and shape") {
    ParamSet<float> ps;
    Tensor w = ps.track("w", Tensor::from_vector({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}));
    Tensor b = ps.track("b", Tensor::from_vector({2}, {5.0f, 6.0f}));

    std::vector<ParamBlob> blobs;
    append_params(blobs, ps);
    REQUIRE(blobs.size() == 2);
    CHECK(blobs[0].name == "w");
    CHECK(blobs[0].values == std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});

    // perturb, then restore; the handles shared with the caller move too
    w.data()[0] = -9.0f;
    b.data()[1] = -9.0f;
    restore_params(ps, blobs);
    CHECK(w.data()[0] == 1.0f);
    CHECK(b.data()[1] == 6.0f);

    // extra blobs are tolerated so one file can feed a partial network
    ParamSet<float> partial;
    Tensor b2 = partial.track("b", Tensor::from_vector({2}, {0.0f, 0.0f}));
    restore_params(partial, blobs);
    CHECK(b2.data()[0] == 5.0f);

    ParamSet<float> missing;
    missing.track("q", Tensor::from_vector({2}, {0.0f, 0.0f}));
    CHECK_THROWS_AS(restore_params(missing, blobs), std::runtime_error);

    ParamSet<float> wrong;
    wrong.track("w", Tensor::from_vector({4}, {0.0f, 0.0f, 0.0f, 0.0f}));
    CHECK_THROWS_AS(restore_params(wrong, blobs), std::runtime_error);
}

TEST_CASE("optimizer state survives a snapshot mid-run") {
    ParamSet<float> ps;
    Tensor w = ps.track("w", Tensor::from_vector({3}, {0.5f, -0.25f, 1.0f}));

    Optimizer<float> opt = Optimizer<float>::adam(1e-2);
    for (int it = 0; it < 4; ++it) {
        Graph<float> g;
        GraphScope<float> scope(g);
        Tensor loss = reduce_mean(mul(w, w));
        g.backward(loss);
        opt.step(ps, OptDirection::descent);
    }
    REQUIRE(opt.step_count() == 4);

    OptimSnapshot snap = snapshot_optimizer(opt);
    Optimizer<float> back = restore_optimizer(snap);
    CHECK(back.kind() == Optimizer<float>::Kind::adam);
    CHECK(back.lr() == opt.lr());
    CHECK(back.step_count() == 4);
    REQUIRE(back.moments_m().size() == 1);
    CHECK(back.moments_m()[0] == opt.moments_m()[0]);
    CHECK(back.moments_v()[0] == opt.moments_v()[0]);

    // both copies take the same next step
    ParamSet<float> ps2;
    Tensor w2 = ps2.track("w", Tensor::from_vector({3}, {w.data()[0], w.data()[1], w.data()[2]}));
    auto step_once = [](ParamSet<float>& p, Tensor& t, Optimizer<float>& o) {
        Graph<float> g;
        GraphScope<float> scope(g);
        Tensor loss = reduce_mean(mul(t, t));
        g.backward(loss);
        o.step(p, OptDirection::descent);
    };
    step_once(ps, w, opt);
    step_once(ps2, w2, back);
    CHECK(w.data() == w2.data());

    OptimSnapshot sgd_snap = snapshot_optimizer(Optimizer<float>::sgd(0.5));
    CHECK(sgd_snap.kind == 0);
    CHECK(restore_optimizer(sgd_snap).lr() == 0.5);

    OptimSnapshot bad;
    bad.kind = 7;
    CHECK_THROWS_AS(restore_optimizer(bad), std::runtime_error);
}
