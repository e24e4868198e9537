#include "irestore/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "irestore/checkpoint.hpp"
#include "irestore/config.hpp"
#include "irestore/degrade.hpp"
#include "irestore/gradcheck.hpp"
#include "irestore/image.hpp"
#include "irestore/metrics.hpp"
#include "irestore/net.hpp"
#include "irestore/rng.hpp"
#include "irestore/trainer.hpp"

namespace irestore {
namespace {

namespace fs = std::filesystem;

// Sorted listing so per-image seeds and output order never depend on the
// directory's on-disk iteration order.
std::vector<std::string> list_images(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error(dir + ": not a directory");
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png" || ext == ".pgm") names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw std::runtime_error(dir + ": no .png or .pgm images");
    return names;
}

int cmd_degrade(const std::string& in_dir, const std::string& out_dir, const std::string& family,
                int level, std::uint64_t seed, std::ostream& out) {
    const SeverityBank bank = SeverityBank::standard();
    const DegradeLevel lv = find_level(bank, family, level);
    const std::vector<std::string> names = list_images(in_dir);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < names.size(); ++i) {
        int depth = 0;
        const Image img = load_image((fs::path(in_dir) / names[i]).string(), &depth);
        const Tensor x = image_to_tensor<float>(img);
        const Tensor y = apply_degrade(x, lv, {mix_seed(seed, 0x64656772u, i)});
        save_image(tensor_to_image(y), (fs::path(out_dir) / names[i]).string(), depth);
    }
    out << "degraded " << names.size() << " images with " << lv.name() << "\n";
    return 0;
}

int cmd_train(const std::string& data, const std::string& config, const std::string& ckpt,
              std::ostream& out) {
    const TrainConfig cfg = parse_config_file(config);
    const DatasetManifest man = load_manifest(data);
    const std::vector<Image> clean = load_images(man.clean);
    const std::vector<Image> degraded = man.degraded.empty() ? std::vector<Image>{} : load_images(man.degraded);

    Trainer trainer(cfg, clean, degraded);
    const TrainResult res = trainer.train(ckpt, ckpt + ".log");
    for (const auto& line : res.log) out << line << "\n";
    return res.diverged ? 2 : 0;
}

int cmd_enhance(const std::string& ckpt, const std::string& in_dir, const std::string& out_dir,
                std::ostream& out) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const Enhancer<float> enh = enhancer_from_checkpoint(ck);
    const std::vector<std::string> names = list_images(in_dir);
    fs::create_directories(out_dir);
    for (const auto& name : names) {
        int depth = 0;
        const Image img = load_image((fs::path(in_dir) / name).string(), &depth);
        const Tensor y = enhancer_forward(image_to_tensor<float>(img), enh, false);
        save_image(tensor_to_image(y), (fs::path(out_dir) / name).string(), depth);
    }
    out << "enhanced " << names.size() << " images\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& degradation,
             const std::string& report, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const Enhancer<float> enh = enhancer_from_checkpoint(ck);
    const DatasetManifest man = load_manifest(data);
    const std::vector<Image> clean = load_images(man.clean);
    std::vector<std::string> ids;
    ids.reserve(man.clean.size());
    for (const auto& path : man.clean) ids.push_back(fs::path(path).filename().string());

    const DegradationSpec spec = parse_degradation_spec(degradation, ck.config.bank);
    const MetricReport rep = evaluate_enhancer(enh, clean, ids, spec, ck.seed);
    rep.write_csv(report);
    rep.write_json(fs::path(report).replace_extension(".json").string());

    const MetricRow m = rep.mean();
    out << "evaluated " << rep.rows.size() << " images: mean psnr=" << m.psnr << " ssim=" << m.ssim
        << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out) {
    const std::vector<GradReport> reports = run_gradcheck_suite(seed);
    std::size_t passed = 0;
    for (const auto& r : reports) {
        out << (r.pass ? "ok   " : "FAIL ") << r.name << " max_rel=" << r.max_rel
            << " coords=" << r.coords << "\n";
        if (r.pass) ++passed;
    }
    out << "gradcheck: " << passed << "/" << reports.size() << " passed\n";
    return passed == reports.size() ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"adversarially trained thermal image enhancement"};
    app.require_subcommand(1);

    std::string in_dir, out_dir, family, data, config, ckpt, degradation, report;
    int level = 0;
    std::uint64_t seed = 1;

    CLI::App* deg = app.add_subcommand("degrade", "corrupt a directory of images with one banked operator");
    deg->add_option("--in", in_dir, "input image directory")->required();
    deg->add_option("--out", out_dir, "output image directory")->required();
    deg->add_option("--family", family, "operator family: identity, stripe, lowres, contrast")->required();
    deg->add_option("--level", level, "zero-based severity index within the family");
    deg->add_option("--seed", seed, "base seed for the per-image noise draws");

    CLI::App* trn = app.add_subcommand("train", "run the adversarial training loop");
    trn->add_option("--data", data, "dataset manifest")->required();
    trn->add_option("--config", config, "training config file")->required();
    trn->add_option("--out", ckpt, "checkpoint path, rewritten every epoch")->required();

    CLI::App* enh = app.add_subcommand("enhance", "restore a directory of images with a trained checkpoint");
    enh->add_option("--ckpt", ckpt, "checkpoint to load")->required();
    enh->add_option("--in", in_dir, "input image directory")->required();
    enh->add_option("--out", out_dir, "output image directory")->required();

    CLI::App* evl = app.add_subcommand("eval", "score a checkpoint against a corrupted dataset");
    evl->add_option("--ckpt", ckpt, "checkpoint to load")->required();
    evl->add_option("--data", data, "dataset manifest of clean references")->required();
    evl->add_option("--degradation", degradation, "spec such as identity or stripe:1")->required();
    evl->add_option("--report", report, "CSV output path; a .json summary lands next to it")->required();

    CLI::App* grd = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    grd->add_option("--seed", seed, "suite seed");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("irestore");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        err << app.help();
        return 1;
    }

    try {
        if (deg->parsed()) return cmd_degrade(in_dir, out_dir, family, level, seed, out);
        if (trn->parsed()) return cmd_train(data, config, ckpt, out);
        if (enh->parsed()) return cmd_enhance(ckpt, in_dir, out_dir, out);
        if (evl->parsed()) return cmd_eval(ckpt, data, degradation, report, out);
        if (grd->parsed()) return cmd_gradcheck(seed, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace irestore
