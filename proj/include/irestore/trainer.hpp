#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "irestore/checkpoint.hpp"
#include "irestore/config.hpp"
#include "irestore/image.hpp"
#include "irestore/metrics.hpp"
#include "irestore/net.hpp"
#include "irestore/optim.hpp"

namespace irestore {

struct TrainResult {
    bool diverged = false;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::uint64_t iterations = 0;
    std::vector<std::string> log;
};

// The alternating min-max loop: warm-start the enhancer against the frozen
// generator, then interleave Adam descent on the enhancer with SGD ascent on
// the degradation classifier. Everything is driven off cfg.seed, so two runs
// with the same config produce bitwise-identical logs and checkpoints.
//
// Datasets are synthetic by default (targets double as inputs and the
// generator supplies all corruption). When paired degraded images are given,
// corruption comes from disk instead and the adversarial phase is skipped.
class Trainer {
public:
    Trainer(TrainConfig cfg, std::vector<Image> clean, std::vector<Image> degraded = {});

    // deterministic stripe-seed base for one iteration
    std::uint64_t batch_seed(std::uint64_t iteration) const;

    Tensor batch_of(const std::vector<int>& idx) const;

    // mixture rows for a batch under the configured generator mode; tracked
    // through the classifier only in learned mode inside an active graph
    Tensor generator_weights(const Tensor& y, std::uint64_t iteration);

    // forward-only loss of the current networks on one batch, mirroring a
    // training forward (batch statistics, not running ones)
    double batch_loss(const std::vector<int>& idx, std::uint64_t seed_base);

    double descent_step(const std::vector<int>& idx, std::uint64_t seed_base);
    double ascent_step(const std::vector<int>& idx, std::uint64_t seed_base);

    void warm_start();
    TrainResult train(const std::string& ckpt_path = "", const std::string& log_path = "");

    Enhancer<float>& enhancer() { return enh_; }
    Classifier<float>& classifier() { return cls_; }
    const TrainConfig& config() const { return cfg_; }
    std::uint64_t iteration() const { return iter_; }
    int dataset_size() const { return static_cast<int>(clean_.size()); }

    Checkpoint make_checkpoint() const;
    void restore(const Checkpoint& ck);

private:
    struct StepInfo {
        double loss = 0.0;
        double gen_obj = 0.0;
        double gnorm_e = 0.0;
        double gnorm_g = 0.0;
        double wmax = 0.0;
        double wentropy = 0.0;
    };

    Tensor corrupt(const Tensor& y, const Tensor& a, std::uint64_t seed_base) const;
    Tensor paired_batch_of(const std::vector<int>& idx) const;
    StepInfo do_descent(const std::vector<int>& idx, std::uint64_t seed_base);
    StepInfo do_ascent(const std::vector<int>& idx, std::uint64_t seed_base);
    void epoch_snapshot(int epoch, double mean_loss, std::vector<std::string>& log);

    TrainConfig cfg_;
    std::vector<Tensor> clean_;
    std::vector<Tensor> degraded_;
    Enhancer<float> enh_;
    Classifier<float> cls_;
    std::optional<Optimizer<float>> opt_e_, opt_g_;
    std::uint64_t iter_ = 0;
};

// Load enhancer weights and batch-norm running stats out of a checkpoint.
void restore_enhancer_state(Enhancer<float>& e, const Checkpoint& ck);

// Rebuild a standalone enhancer from a saved run, ready for evaluation.
Enhancer<float> enhancer_from_checkpoint(const Checkpoint& ck);

// Deterministically corrupt each clean image as `spec` says, run the
// enhancer, and score every metric against the clean reference. Row ids come
// from `ids`; indices are used when it is empty.
MetricReport evaluate_enhancer(const Enhancer<float>& enh, const std::vector<Image>& clean,
                               const std::vector<std::string>& ids, const DegradationSpec& spec, std::uint64_t seed);

}  // namespace irestore
