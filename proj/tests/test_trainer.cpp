#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "irestore/checkpoint.hpp"
#include "irestore/rng.hpp"
#include "irestore/trainer.hpp"

using namespace irestore;

namespace {

Image pattern_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0);
    const double phase = rng.uniform(0.0, 6.28);
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.at(y, x) = 0.5 + 0.35 * std::sin(fx * x * 0.4 + phase) * std::cos(fy * y * 0.4);
    return img;
}

Image flat_image(int h, int w, double v) {
    Image img(h, w);
    for (auto& p : img.pixels) p = v;
    return img;
}

std::vector<Image> pattern_set(int n, int h, int w, std::uint64_t seed) {
    std::vector<Image> out;
    for (int i = 0; i < n; ++i) out.push_back(pattern_image(h, w, mix_seed(seed, i)));
    return out;
}

// crushed-contrast copies make a fixed supervised restoration problem
Image crush(const Image& y) {
    Image x = y;
    for (auto& p : x.pixels) p = 0.35 + 0.3 * p;
    return x;
}

std::vector<float> snapshot(const ParamSet<float>& ps) {
    std::vector<float> all;
    for (const auto& [name, t] : ps.items) all.insert(all.end(), t.data().begin(), t.data().end());
    return all;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

TrainConfig tiny_cfg() {
    TrainConfig cfg;
    cfg.total_epochs = 2;
    cfg.warm_epochs = 0;
    cfg.batch_size = 2;
    cfg.seed = 31;
    return cfg;
}

}  // namespace

TEST_CASE("trainer rejects unusable datasets") {
    CHECK_THROWS_AS(Trainer(tiny_cfg(), {}), std::invalid_argument);

    std::vector<Image> uneven = {flat_image(16, 16, 0.5), flat_image(16, 20, 0.5)};
    CHECK_THROWS_AS(Trainer(tiny_cfg(), uneven), std::invalid_argument);

    std::vector<Image> odd = {flat_image(18, 16, 0.5)};
    CHECK_THROWS_AS(Trainer(tiny_cfg(), odd), std::invalid_argument);

    std::vector<Image> two = {flat_image(16, 16, 0.5), flat_image(16, 16, 0.6)};
    std::vector<Image> one = {flat_image(16, 16, 0.4)};
    CHECK_THROWS_AS(Trainer(tiny_cfg(), two, one), std::invalid_argument);

    std::vector<Image> wrong_pair = {flat_image(16, 16, 0.4), flat_image(20, 20, 0.4)};
    CHECK_THROWS_AS(Trainer(tiny_cfg(), two, wrong_pair), std::invalid_argument);

    // batch larger than the dataset is caught when the run starts
    TrainConfig cfg = tiny_cfg();
    cfg.batch_size = 8;
    Trainer t(cfg, two);
    CHECK_THROWS_AS(t.train(), std::invalid_argument);
}

TEST_CASE("disabled warm start leaves everything untouched") {
    TrainConfig cfg = tiny_cfg();
    cfg.warm_epochs = 0;
    Trainer t(cfg, pattern_set(3, 16, 16, 1));
    const std::vector<float> before = snapshot(t.enhancer().params);
    t.warm_start();
    CHECK(t.iteration() == 0);
    CHECK(max_abs_diff(before, snapshot(t.enhancer().params)) == 0.0);
}

TEST_CASE("a perfect training pair moves nothing") {
    // identical input and target, identity-initialized net: the loss is 0 by
    // construction and every gradient cancels exactly, so even many steps
    // leave the parameters bit-identical
    std::vector<Image> y = {flat_image(16, 16, 0.5)};
    TrainConfig cfg;
    cfg.total_epochs = 4;
    cfg.warm_epochs = 4;
    cfg.batch_size = 1;
    cfg.seed = 9;
    Trainer t(cfg, y, y);
    CHECK(t.batch_loss({0}, t.batch_seed(0)) == 0.0);

    const std::vector<float> before = snapshot(t.enhancer().params);
    t.warm_start();
    CHECK(t.iteration() == 4);
    const std::vector<float> after = snapshot(t.enhancer().params);
    CHECK(max_abs_diff(before, after) == 0.0);
}

TEST_CASE("warm descent learns a paired restoration") {
    std::vector<Image> clean = pattern_set(4, 16, 16, 3);
    std::vector<Image> degraded;
    for (const auto& y : clean) degraded.push_back(crush(y));

    TrainConfig cfg;
    cfg.total_epochs = 15;
    cfg.warm_epochs = 15;
    cfg.batch_size = 4;
    cfg.gamma_e = 2e-3;
    cfg.seed = 17;
    Trainer t(cfg, clean, degraded);

    const std::vector<int> all = {0, 1, 2, 3};
    const double first = t.batch_loss(all, 0);
    t.warm_start();
    const double last = t.batch_loss(all, 0);
    CHECK(first > 0.05);
    CHECK(last < 0.6 * first);
}

TEST_CASE("zero-rate probes run forward only") {
    std::vector<Image> clean = pattern_set(4, 16, 16, 21);

    TrainConfig cfg = tiny_cfg();
    cfg.gamma_e = 0.0;
    cfg.gamma_g = 0.0;
    Trainer t(cfg, clean);
    const std::vector<int> idx = {0, 1};
    const std::vector<float> enh0 = snapshot(t.enhancer().params);
    const std::vector<float> cls0 = snapshot(t.classifier().params);

    const double dl = t.descent_step(idx, t.batch_seed(0));
    const double al = t.ascent_step(idx, t.batch_seed(0));
    CHECK(dl > 0.0);
    CHECK(al == dl);  // same pinned corruption, untouched nets
    CHECK(max_abs_diff(enh0, snapshot(t.enhancer().params)) == 0.0);
    CHECK(max_abs_diff(cls0, snapshot(t.classifier().params)) == 0.0);

    // non-learned generators have nothing to ascend either
    TrainConfig ucfg = tiny_cfg();
    ucfg.generator_mode = "uniform";
    Trainer u(ucfg, clean);
    const std::vector<float> ucls = snapshot(u.classifier().params);
    u.ascent_step(idx, u.batch_seed(0));
    CHECK(max_abs_diff(ucls, snapshot(u.classifier().params)) == 0.0);
}

TEST_CASE("generator weight modes produce proper mixtures") {
    std::vector<Image> clean = pattern_set(2, 16, 16, 40);
    const std::vector<int> idx = {0, 1};

    TrainConfig cfg = tiny_cfg();
    cfg.generator_mode = "uniform";
    Trainer t(cfg, clean);
    Tensor y = t.batch_of(idx);
    Tensor u = t.generator_weights(y, 0);
    REQUIRE(u.shape() == std::vector<int>{2, 2, 9});
    for (float v : u.data()) CHECK(v == doctest::Approx(1.0f / 9.0f));

    TrainConfig rcfg = tiny_cfg();
    rcfg.generator_mode = "random";
    Trainer r(rcfg, clean);
    Tensor a0 = r.generator_weights(y, 0);
    Tensor a0b = r.generator_weights(y, 0);
    Tensor a1 = r.generator_weights(y, 1);
    CHECK(a0.data() == a0b.data());  // same iteration, same draw
    CHECK(a0.data() != a1.data());
    for (int row = 0; row < 4; ++row) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) s += a0.data()[static_cast<std::size_t>(row) * 9 + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }

    // the learned generator starts from its uniform head
    TrainConfig lcfg = tiny_cfg();
    Trainer l(lcfg, clean);
    Tensor al = l.generator_weights(y, 0);
    for (float v : al.data()) CHECK(v == doctest::Approx(1.0f / 9.0f));
}

TEST_CASE("one ascent step cannot lower the pinned-batch loss") {
    std::vector<Image> clean = pattern_set(6, 16, 16, 55);
    TrainConfig cfg;
    cfg.warm_epochs = 0;
    cfg.gamma_g = 1e-6;
    cfg.seed = 71;
    Trainer t(cfg, clean);

    for (std::uint64_t trial = 0; trial < 3; ++trial) {
        const std::vector<int> idx = {static_cast<int>(trial), static_cast<int>(trial + 1),
                                      static_cast<int>(trial + 2)};
        const std::uint64_t sb = t.batch_seed(trial);
        const double before = t.batch_loss(idx, sb);
        const double stepped = t.ascent_step(idx, sb);
        const double after = t.batch_loss(idx, sb);
        CHECK(stepped == doctest::Approx(before));  // ascent reports the pre-step loss
        CHECK(after >= before - 1e-6);
    }
}

TEST_CASE("one descent step lowers the pinned-batch loss") {
    std::vector<Image> clean = pattern_set(4, 16, 16, 77);
    TrainConfig cfg;
    cfg.warm_epochs = 0;
    cfg.gamma_e = 1e-3;
    cfg.seed = 5;
    Trainer t(cfg, clean);

    const std::vector<int> idx = {0, 1, 2, 3};
    const std::uint64_t sb = t.batch_seed(0);
    const double before = t.batch_loss(idx, sb);
    t.descent_step(idx, sb);
    const double after = t.batch_loss(idx, sb);
    CHECK(after < before);
}

TEST_CASE("same-seed runs are bitwise identical") {
    TrainConfig cfg;
    cfg.total_epochs = 3;
    cfg.warm_epochs = 1;
    cfg.batch_size = 3;
    cfg.seed = 2024;
    cfg.gamma_e = 5e-4;

    std::vector<Image> clean = pattern_set(6, 16, 16, 88);
    Trainer a(cfg, clean);
    TrainResult ra = a.train("t_run_a.ckpt", "t_run_a.log");
    Trainer b(cfg, clean);
    TrainResult rb = b.train("t_run_b.ckpt", "t_run_b.log");

    CHECK_FALSE(ra.diverged);
    CHECK(ra.iterations == 6);  // ceil(6/3) = 2 batches over 3 epochs
    CHECK(ra.log == rb.log);
    CHECK(slurp("t_run_a.ckpt") == slurp("t_run_b.ckpt"));
    CHECK(slurp("t_run_a.log") == slurp("t_run_b.log"));
    CHECK(max_abs_diff(snapshot(a.enhancer().params), snapshot(b.enhancer().params)) == 0.0);
    CHECK(max_abs_diff(snapshot(a.classifier().params), snapshot(b.classifier().params)) == 0.0);

    TrainConfig other = cfg;
    other.seed = 2025;
    Trainer c(other, clean);
    TrainResult rc = c.train("", "");
    CHECK(ra.log != rc.log);
}

TEST_CASE("a checkpoint resumes the run exactly") {
    TrainConfig cfg;
    cfg.warm_epochs = 0;
    cfg.gamma_e = 1e-3;
    cfg.seed = 404;
    std::vector<Image> clean = pattern_set(4, 16, 16, 99);

    Trainer a(cfg, clean);
    const std::vector<int> idx = {0, 1, 2, 3};
    for (std::uint64_t it = 0; it < 3; ++it) a.descent_step(idx, a.batch_seed(it));

    save_checkpoint(a.make_checkpoint(), "t_resume.ckpt");
    Checkpoint ck = load_checkpoint("t_resume.ckpt");
    CHECK(ck.config.seed == 404);

    Trainer b(cfg, clean);
    b.restore(ck);
    CHECK(b.iteration() == a.iteration());
    CHECK(b.batch_loss(idx, 12345) == a.batch_loss(idx, 12345));

    // both copies carry the same Adam state, so the next step matches too
    const double la = a.descent_step(idx, a.batch_seed(3));
    const double lb = b.descent_step(idx, b.batch_seed(3));
    CHECK(la == lb);
    CHECK(max_abs_diff(snapshot(a.enhancer().params), snapshot(b.enhancer().params)) == 0.0);
}

TEST_CASE("batch-norm running stats ride along in checkpoints") {
    TrainConfig cfg;
    cfg.warm_epochs = 0;
    cfg.gamma_e = 1e-3;
    cfg.seed = 550;
    std::vector<Image> clean = pattern_set(4, 16, 16, 55);

    Trainer a(cfg, clean);
    const std::vector<int> idx = {0, 1, 2, 3};
    for (std::uint64_t it = 0; it < 3; ++it) a.descent_step(idx, a.batch_seed(it));

    // training moved the running averages off their fresh defaults
    const auto& stats = *a.enhancer().ssm1.stats;
    double drift = 0.0;
    for (float m : stats.mean) drift = std::max(drift, std::abs(static_cast<double>(m)));
    CHECK(drift > 0.0);

    const Checkpoint ck = a.make_checkpoint();
    Enhancer<float> reloaded = enhancer_from_checkpoint(ck);
    CHECK(reloaded.ssm1.stats->mean == stats.mean);
    CHECK(reloaded.ssm1.stats->var == stats.var);
    CHECK(reloaded.ssm2.stats->mean == a.enhancer().ssm2.stats->mean);

    // eval-mode forwards agree bitwise, so offline enhancement matches training
    const Tensor x = image_to_tensor<float>(clean[0]);
    const Tensor ya = enhancer_forward(x, a.enhancer(), false);
    const Tensor yb = enhancer_forward(x, reloaded, false);
    const auto& da = *ya.data_ptr();
    const auto& db = *yb.data_ptr();
    REQUIRE(da.size() == db.size());
    for (std::size_t i = 0; i < da.size(); ++i) REQUIRE(da[i] == db[i]);

    // a trainer restore also carries the stats, not just the weights
    Trainer b(cfg, clean);
    b.restore(ck);
    CHECK(b.enhancer().ssm1.stats->mean == stats.mean);
    CHECK(b.enhancer().ssm2.stats->var == a.enhancer().ssm2.stats->var);
}

TEST_CASE("an absurd learning rate trips the divergence guard") {
    std::vector<Image> clean = pattern_set(4, 16, 16, 13);
    std::vector<Image> degraded;
    for (const auto& y : clean) {
        Image x = y;
        Rng rng(7);
        for (auto& p : x.pixels) p = std::min(1.0, std::max(0.0, p + rng.uniform(-0.02, 0.02)));
        degraded.push_back(x);
    }

    TrainConfig cfg;
    cfg.total_epochs = 12;
    cfg.warm_epochs = 0;
    cfg.batch_size = 4;
    cfg.gamma_e = 2.0;  // each Adam step moves every weight by about this much
    cfg.seed = 3;
    Trainer t(cfg, clean, degraded);
    TrainResult res = t.train();
    CHECK(res.diverged);
    CHECK(res.iterations < 12);
    CHECK(res.log.back().find("diverged") != std::string::npos);
}

TEST_CASE("pure supervised schedule never touches the generator") {
    TrainConfig cfg;
    cfg.total_epochs = 2;
    cfg.warm_epochs = 2;  // warm the whole run
    cfg.batch_size = 2;
    cfg.seed = 66;
    cfg.gamma_e = 5e-4;
    std::vector<Image> clean = pattern_set(4, 16, 16, 31);

    Trainer t(cfg, clean);
    const std::vector<float> cls0 = snapshot(t.classifier().params);
    TrainResult res = t.train();
    CHECK_FALSE(res.diverged);
    CHECK(res.iterations == 4);
    CHECK(max_abs_diff(cls0, snapshot(t.classifier().params)) == 0.0);
    for (const auto& line : res.log)
        if (line.rfind("iter=", 0) == 0) CHECK(line.find("gnorm_g=0 ") != std::string::npos);
}

TEST_CASE("evaluation reports per-image quality") {
    Enhancer<float> enh = make_enhancer<float>(1);
    std::vector<Image> clean = pattern_set(2, 48, 48, 123);
    const std::vector<std::string> ids = {"alpha", "beta"};
    const SeverityBank bank = SeverityBank::standard();

    DegradationSpec id = parse_degradation_spec("identity", bank);
    MetricReport clean_rep = evaluate_enhancer(enh, clean, ids, id, 7);
    REQUIRE(clean_rep.rows.size() == 2);
    CHECK(clean_rep.rows[0].id == "alpha");
    // identity corruption through an identity-initialized net is lossless
    for (const auto& r : clean_rep.rows) {
        CHECK(std::isinf(r.psnr));
        CHECK(r.ssim == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(r.vif == doctest::Approx(1.0).epsilon(1e-6));
    }

    DegradationSpec harsh = parse_degradation_spec("stripe:2", bank);
    MetricReport noisy = evaluate_enhancer(enh, clean, {}, harsh, 7);
    REQUIRE(noisy.rows.size() == 2);
    CHECK(noisy.rows[0].id == "0");
    for (const auto& r : noisy.rows) {
        CHECK(std::isfinite(r.psnr));
        CHECK(r.ssim < 0.999);
    }

    // same seed, same corruption, same numbers
    MetricReport again = evaluate_enhancer(enh, clean, {}, harsh, 7);
    CHECK(again.rows[0].psnr == noisy.rows[0].psnr);
    MetricReport moved = evaluate_enhancer(enh, clean, {}, harsh, 8);
    CHECK(moved.rows[0].psnr != noisy.rows[0].psnr);

    CHECK_THROWS_AS(evaluate_enhancer(enh, {}, {}, id, 7), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_enhancer(enh, clean, {"only-one"}, id, 7), std::invalid_argument);
}
