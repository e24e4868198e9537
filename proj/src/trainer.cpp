#include "irestore/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "irestore/degrade.hpp"
#include "irestore/loss.hpp"
#include "irestore/rng.hpp"

namespace irestore {
namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

double grad_norm(const ParamSet<float>& ps) {
    double s = 0.0;
    for (const auto& [name, t] : ps.items)
        for (float g : t.grad()) s += static_cast<double>(g) * g;
    return std::sqrt(s);
}

void zero_grads(ParamSet<float>& ps) {
    for (auto& [name, t] : ps.items) t.zero_grad();
}

// batch max weight and mean row entropy of the mixture rows
void weight_summary(const Tensor& a, double& wmax, double& wentropy) {
    wmax = 0.0;
    double ent = 0.0;
    const int rows = a.dim(0) * a.dim(1), L = a.dim(2);
    for (int r = 0; r < rows; ++r) {
        double h = 0.0;
        for (int j = 0; j < L; ++j) {
            const double p = a.data()[static_cast<std::size_t>(r) * L + j];
            wmax = std::max(wmax, p);
            if (p > 0.0) h -= p * std::log(p);
        }
        ent += h;
    }
    wentropy = rows > 0 ? ent / rows : 0.0;
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& l : lines) out << l << '\n';
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<Image> clean, std::vector<Image> degraded)
    : cfg_(std::move(cfg)),
      enh_(make_enhancer<float>(mix_seed(cfg_.seed, 0x656e6cu))),
      cls_(make_classifier<float>(cfg_.steps, cfg_.bank.n_ops(), mix_seed(cfg_.seed, 0x636c73u))) {
    if (clean.empty()) throw std::invalid_argument("trainer: empty dataset");
    if (!degraded.empty() && degraded.size() != clean.size())
        throw std::invalid_argument("trainer: " + std::to_string(degraded.size()) + " degraded images for " +
                                    std::to_string(clean.size()) + " targets");
    const int H = clean[0].height, W = clean[0].width;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const Image& img = clean[i];
        if (img.height != H || img.width != W)
            throw std::invalid_argument("trainer: image " + std::to_string(i) + " is " + std::to_string(img.width) +
                                        "x" + std::to_string(img.height) + ", batch needs a uniform " +
                                        std::to_string(W) + "x" + std::to_string(H));
        if (!degraded.empty() && (degraded[i].height != H || degraded[i].width != W))
            throw std::invalid_argument("trainer: degraded image " + std::to_string(i) + " extent mismatch");
    }
    if (H % 4 != 0 || W % 4 != 0)
        throw std::invalid_argument("trainer: extents " + std::to_string(W) + "x" + std::to_string(H) +
                                    " not divisible by 4");
    for (const auto& img : clean) clean_.push_back(image_to_tensor<float>(img));
    for (const auto& img : degraded) degraded_.push_back(image_to_tensor<float>(img));

    // ascent and descent must own strictly disjoint parameters
    for (const auto& [name, t] : enh_.params.items)
        if (cls_.params.find(name) != nullptr)
            throw std::logic_error("trainer: parameter " + name + " appears in both networks");
}

std::uint64_t Trainer::batch_seed(std::uint64_t iteration) const {
    return mix_seed(cfg_.seed, 0x62617463u, iteration);
}

Tensor Trainer::batch_of(const std::vector<int>& idx) const {
    if (idx.empty()) throw std::invalid_argument("trainer: empty batch");
    const int H = clean_[0].dim(2), W = clean_[0].dim(3);
    Tensor b = Tensor::zeros({static_cast<int>(idx.size()), 1, H, W});
    const std::size_t per = static_cast<std::size_t>(H) * W;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const int i = idx[k];
        if (i < 0 || i >= static_cast<int>(clean_.size()))
            throw std::invalid_argument("trainer: batch index " + std::to_string(i) + " out of range");
        const auto& src = clean_[static_cast<std::size_t>(i)].data();
        std::copy(src.begin(), src.end(), b.data().begin() + static_cast<std::ptrdiff_t>(k * per));
    }
    return b;
}

Tensor Trainer::paired_batch_of(const std::vector<int>& idx) const {
    const int H = degraded_[0].dim(2), W = degraded_[0].dim(3);
    Tensor b = Tensor::zeros({static_cast<int>(idx.size()), 1, H, W});
    const std::size_t per = static_cast<std::size_t>(H) * W;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& src = degraded_[static_cast<std::size_t>(idx[k])].data();
        std::copy(src.begin(), src.end(), b.data().begin() + static_cast<std::ptrdiff_t>(k * per));
    }
    return b;
}

Tensor Trainer::generator_weights(const Tensor& y, std::uint64_t iteration) {
    const int N = y.dim(0), NS = cfg_.steps, NOPS = cfg_.bank.n_ops();
    if (cfg_.generator_mode == "learned") return classifier_forward(y, cls_);
    if (cfg_.generator_mode == "uniform")
        return Tensor::full({N, NS, NOPS}, 1.0f / static_cast<float>(NOPS));
    Rng rng(mix_seed(cfg_.seed, 0x726e6477u, iteration));
    Tensor logits = Tensor::zeros({N, NS, NOPS});
    for (auto& v : logits.data()) v = static_cast<float>(rng.normal());
    return softmax_lastdim(logits);
}

Tensor Trainer::corrupt(const Tensor& y, const Tensor& a, std::uint64_t seed_base) const {
    return compose(y, a, cfg_.bank, seed_base);
}

double Trainer::batch_loss(const std::vector<int>& idx, std::uint64_t seed_base) {
    Tensor y = batch_of(idx);
    Tensor xh = degraded_.empty() ? corrupt(y, generator_weights(y, iter_), seed_base) : paired_batch_of(idx);
    Tensor yh = enhancer_forward(xh, enh_, true);
    return static_cast<double>(loss_total(yh, y, cfg_.loss_weights).item());
}

Trainer::StepInfo Trainer::do_descent(const std::vector<int>& idx, std::uint64_t seed_base) {
    StepInfo info;
    Tensor y = batch_of(idx);
    // the generator is frozen from the enhancer's point of view, so its
    // forward runs outside the tape
    Tensor xh;
    if (degraded_.empty()) {
        Tensor a = generator_weights(y, iter_);
        weight_summary(a, info.wmax, info.wentropy);
        xh = corrupt(y, a, seed_base);
    } else {
        xh = paired_batch_of(idx);
    }

    if (cfg_.gamma_e == 0.0) {
        Tensor yh = enhancer_forward(xh, enh_, true);
        info.loss = static_cast<double>(loss_total(yh, y, cfg_.loss_weights).item());
        return info;
    }

    Graph<float> g;
    {
        GraphScope<float> scope(g);
        Tensor yh = enhancer_forward(xh, enh_, true);
        Tensor loss = loss_total(yh, y, cfg_.loss_weights);
        info.loss = static_cast<double>(loss.item());
        if (!std::isfinite(info.loss)) throw std::runtime_error("descent_step: non-finite loss");
        g.backward(loss);
    }
    info.gnorm_e = grad_norm(enh_.params);
    if (!opt_e_) opt_e_ = Optimizer<float>::adam(cfg_.gamma_e);
    opt_e_->step(enh_.params, OptDirection::descent);
    return info;
}

Trainer::StepInfo Trainer::do_ascent(const std::vector<int>& idx, std::uint64_t seed_base) {
    StepInfo info;
    if (!degraded_.empty()) throw std::logic_error("ascent_step: paired dataset has no generator to update");
    Tensor y = batch_of(idx);
    if (cfg_.gamma_g == 0.0 || cfg_.generator_mode != "learned") {
        info.loss = batch_loss(idx, seed_base);
        return info;
    }

    Graph<float> g;
    Tensor xh, yh;
    {
        GraphScope<float> scope(g);
        Tensor a = classifier_forward(y, cls_);
        weight_summary(a, info.wmax, info.wentropy);
        xh = corrupt(y, a, seed_base);
        yh = enhancer_forward(xh, enh_, true);
        Tensor loss = loss_total(yh, y, cfg_.loss_weights);
        info.loss = static_cast<double>(loss.item());
        if (!std::isfinite(info.loss)) throw std::runtime_error("ascent_step: non-finite loss");
        g.backward(loss);
    }
    info.gen_obj = static_cast<double>(
        loss_generator(yh.detach(), y, xh.detach(), y, cfg_.loss_weights, cfg_.lambda_reg).item());
    info.gnorm_g = grad_norm(cls_.params);
    // the enhancer took gradients on this tape too; it does not step here
    zero_grads(enh_.params);
    if (!opt_g_) opt_g_ = Optimizer<float>::sgd(cfg_.gamma_g);
    opt_g_->step(cls_.params, OptDirection::ascent);
    return info;
}

double Trainer::descent_step(const std::vector<int>& idx, std::uint64_t seed_base) {
    return do_descent(idx, seed_base).loss;
}

double Trainer::ascent_step(const std::vector<int>& idx, std::uint64_t seed_base) {
    return do_ascent(idx, seed_base).loss;
}

void Trainer::warm_start() {
    const int warm = cfg_.resolved_warm_epochs();
    const int n = static_cast<int>(clean_.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    Rng rng(mix_seed(cfg_.seed, 0x7761726du));
    for (int e = 0; e < warm; ++e) {
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        shuffle_indices(order, rng);
        for (int start = 0, b = 0; start < n; start += cfg_.batch_size, ++b) {
            const int end = std::min(n, start + cfg_.batch_size);
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            try {
                descent_step(idx, batch_seed(iter_));
            } catch (const std::exception& ex) {
                throw std::runtime_error("warm_start: batch " + std::to_string(b) + " of epoch " + std::to_string(e) +
                                         ": " + ex.what());
            }
            ++iter_;
        }
    }
}

void Trainer::epoch_snapshot(int epoch, double mean_loss, std::vector<std::string>& log) {
    // restoration quality of the first image under the current generator
    Tensor y = clean_[0];
    Tensor xh = degraded_.empty() ? corrupt(y, generator_weights(y, iter_), mix_seed(cfg_.seed, 0x736e6170u,
                                                                                     static_cast<std::uint64_t>(epoch)))
                                  : degraded_[0];
    Tensor yh = enhancer_forward(xh, enh_, false);
    const Image ref = tensor_to_image(y);
    const Image out = tensor_to_image(yh);
    log.push_back("epoch=" + std::to_string(epoch) + " mean_loss=" + num(mean_loss) +
                  " psnr=" + num(metric_psnr(out, ref)) + " ssim=" + num(ssim(out, ref)));
}

TrainResult Trainer::train(const std::string& ckpt_path, const std::string& log_path) {
    cfg_.validate();
    const int n = static_cast<int>(clean_.size());
    if (cfg_.batch_size > n)
        throw std::invalid_argument("trainer: batch_size " + std::to_string(cfg_.batch_size) + " exceeds dataset of " +
                                    std::to_string(n));
    const int warm = cfg_.resolved_warm_epochs();
    const bool adversarial = degraded_.empty() && cfg_.generator_mode == "learned";

    TrainResult res;
    std::vector<int> order(static_cast<std::size_t>(n));
    Rng rng(mix_seed(cfg_.seed, 0x6f726472u));
    double initial = 0.0;
    int over_count = 0;

    for (int epoch = 0; epoch < cfg_.total_epochs; ++epoch) {
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        shuffle_indices(order, rng);
        double sum = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg_.batch_size) {
            const int end = std::min(n, start + cfg_.batch_size);
            std::vector<int> idx(order.begin() + start, order.begin() + end);
            const std::uint64_t seed_base = batch_seed(iter_);
            StepInfo d = do_descent(idx, seed_base);
            StepInfo a;
            const bool do_asc = adversarial && epoch >= warm && iter_ % cfg_.ascent_every == 0;
            if (do_asc) a = do_ascent(idx, seed_base);
            res.log.push_back("iter=" + std::to_string(iter_) + " epoch=" + std::to_string(epoch) +
                              " loss=" + num(d.loss) + " gen_obj=" + num(a.gen_obj) + " gnorm_e=" + num(d.gnorm_e) +
                              " gnorm_g=" + num(a.gnorm_g) + " wmax=" + num(do_asc ? a.wmax : d.wmax) +
                              " went=" + num(do_asc ? a.wentropy : d.wentropy));
            sum += d.loss;
            ++batches;
            ++iter_;
        }
        const double mean_loss = sum / batches;
        if (epoch == 0) {
            initial = mean_loss;
            res.initial_loss = initial;
        }
        epoch_snapshot(epoch, mean_loss, res.log);
        res.final_loss = mean_loss;
        if (!ckpt_path.empty()) save_checkpoint(make_checkpoint(), ckpt_path);

        if (epoch > 0 && mean_loss > 10.0 * initial) {
            if (++over_count >= 3) {
                res.diverged = true;
                res.log.push_back("diverged epoch=" + std::to_string(epoch) + " mean_loss=" + num(mean_loss) +
                                  " initial=" + num(initial));
                break;
            }
        } else {
            over_count = 0;
        }
    }
    res.iterations = iter_;
    if (!res.diverged)
        res.log.push_back("done epochs=" + std::to_string(cfg_.total_epochs) + " iterations=" +
                          std::to_string(iter_) + " final_loss=" + num(res.final_loss));
    write_lines(log_path, res.log);
    return res;
}

namespace {

// batch-norm running stats are state, not parameters; they travel as extra
// named blobs so a reloaded net evaluates exactly like the trained one
void append_bn_stats(std::vector<ParamBlob>& blobs, const std::string& prefix, const BnStats<float>& s) {
    ParamBlob m;
    m.name = prefix + ".mean";
    m.shape = {static_cast<int>(s.mean.size())};
    m.values = s.mean;
    blobs.push_back(std::move(m));
    ParamBlob v;
    v.name = prefix + ".var";
    v.shape = {static_cast<int>(s.var.size())};
    v.values = s.var;
    blobs.push_back(std::move(v));
}

const ParamBlob& blob_named(const std::vector<ParamBlob>& blobs, const std::string& name) {
    for (const auto& b : blobs)
        if (b.name == name) return b;
    throw std::runtime_error("checkpoint has no entry " + name);
}

void restore_bn_stats(BnStats<float>& s, const std::vector<ParamBlob>& blobs, const std::string& prefix) {
    const ParamBlob& m = blob_named(blobs, prefix + ".mean");
    const ParamBlob& v = blob_named(blobs, prefix + ".var");
    if (m.values.size() != s.mean.size() || v.values.size() != s.var.size())
        throw std::runtime_error("checkpoint entry " + prefix + " has the wrong channel count");
    s.mean = m.values;
    s.var = v.values;
}

}  // namespace

void restore_enhancer_state(Enhancer<float>& e, const Checkpoint& ck) {
    restore_params(e.params, ck.params);
    restore_bn_stats(*e.ssm1.stats, ck.params, "enh.pair1.ssm.bn");
    restore_bn_stats(*e.ssm2.stats, ck.params, "enh.pair2.ssm.bn");
}

Enhancer<float> enhancer_from_checkpoint(const Checkpoint& ck) {
    Enhancer<float> e = make_enhancer<float>(mix_seed(ck.seed, 0x656e6cu));
    restore_enhancer_state(e, ck);
    return e;
}

Checkpoint Trainer::make_checkpoint() const {
    Checkpoint ck;
    ck.seed = cfg_.seed;
    ck.iteration = iter_;
    ck.config = cfg_;
    append_params(ck.params, enh_.params);
    append_params(ck.params, cls_.params);
    append_bn_stats(ck.params, "enh.pair1.ssm.bn", *enh_.ssm1.stats);
    append_bn_stats(ck.params, "enh.pair2.ssm.bn", *enh_.ssm2.stats);
    auto snap = [](const std::optional<Optimizer<float>>& o, std::uint8_t kind, double lr) {
        if (o) return snapshot_optimizer(*o);
        OptimSnapshot s;
        s.kind = kind;
        s.lr = lr;
        return s;
    };
    ck.optimizers.push_back(snap(opt_e_, 1, cfg_.gamma_e));
    ck.optimizers.push_back(snap(opt_g_, 0, cfg_.gamma_g));
    return ck;
}

void Trainer::restore(const Checkpoint& ck) {
    restore_enhancer_state(enh_, ck);
    restore_params(cls_.params, ck.params);
    if (ck.optimizers.size() != 2) throw std::runtime_error("restore: expected two optimizer states");
    // lr <= 0 marks an optimizer that never took a step; leave it unengaged
    auto rebuild = [](const OptimSnapshot& s) {
        return s.lr > 0.0 ? std::optional<Optimizer<float>>(restore_optimizer(s)) : std::nullopt;
    };
    opt_e_ = rebuild(ck.optimizers[0]);
    opt_g_ = rebuild(ck.optimizers[1]);
    iter_ = ck.iteration;
}

MetricReport evaluate_enhancer(const Enhancer<float>& enh, const std::vector<Image>& clean,
                               const std::vector<std::string>& ids, const DegradationSpec& spec,
                               std::uint64_t seed) {
    if (clean.empty()) throw std::invalid_argument("evaluate: empty dataset");
    if (!ids.empty() && ids.size() != clean.size())
        throw std::invalid_argument("evaluate: id list does not match dataset");
    MetricReport report;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        Tensor y = image_to_tensor<float>(clean[i]);
        Tensor xh = y;
        if (!spec.identity) {
            const std::vector<std::uint64_t> seeds = {mix_seed(seed, 0x6576616cu, i)};
            xh = apply_degrade(y, spec.level, seeds);
        }
        Tensor yh = enhancer_forward(xh, enh, false);
        const Image out = tensor_to_image(yh);
        const Image in = tensor_to_image(xh);
        // score against the reference in the network's working precision, so
        // a lossless pipeline really compares equal
        const Image ref = tensor_to_image(y);
        MetricRow row;
        row.id = ids.empty() ? std::to_string(i) : ids[i];
        row.en = metric_en(out);
        row.sd = metric_sd(out);
        row.mi = metric_mi(out, ref);
        row.vif = metric_vif(ref, out);
        row.qabf = metric_qabf(out, ref);
        row.scd = metric_scd(out, ref, in);
        row.psnr = metric_psnr(out, ref);
        row.ssim = ssim(out, ref);
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace irestore
