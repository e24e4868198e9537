#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irestore/degrade.hpp"
#include "irestore/image.hpp"
#include "irestore/loss.hpp"

namespace irestore {

// Everything a training run needs beyond the dataset. warm_epochs < 0 means
// "derive the default", 5% of total_epochs with a floor of one epoch.
struct TrainConfig {
    double gamma_e = 1e-4;  // enhancer rate, Adam descent
    double gamma_g = 2e-4;  // generator rate, SGD ascent
    int warm_epochs = -1;
    int total_epochs = 20;
    int batch_size = 4;
    std::uint64_t seed = 0;
    int ascent_every = 1;
    std::string generator_mode = "learned";  // learned | uniform | random
    LossWeights loss_weights;
    double lambda_reg = 0.1;
    int steps = 2;  // composition rounds per image
    SeverityBank bank = SeverityBank::standard();

    int resolved_warm_epochs() const {
        if (warm_epochs >= 0) return warm_epochs;
        const int five_percent = total_epochs / 20;
        return five_percent < 1 ? 1 : five_percent;
    }

    // Full-run invariants; per-step probes may relax the positive-rate rule.
    void validate() const;
};

// Flat `key = value` lines under [train], [loss], and [bank] headers. Unknown
// sections or keys fail with the offending line number.
TrainConfig parse_config_text(const std::string& text, const std::string& origin);
TrainConfig parse_config_file(const std::string& path);

// One image path per line, `#` starts a comment, `@split NAME` tags the set,
// `clean | degraded` pairs a target with a pre-degraded input. Relative paths
// resolve against the manifest's directory. Loading validates that every file
// is a readable grayscale image, that depths agree, and that extents divide
// by 4.
struct DatasetManifest {
    std::vector<std::string> clean;
    std::vector<std::string> degraded;  // empty, or parallel to clean
    std::string split;
    int bit_depth = 0;
};

DatasetManifest load_manifest(const std::string& path);

std::vector<Image> load_images(const std::vector<std::string>& paths);

// A named corruption for eval and the degrade subcommand: "identity", or
// "family:level" with a per-family severity index into the standard bank
// (mild to harsh, zero-based), e.g. "stripe:1".
struct DegradationSpec {
    bool identity = false;
    DegradeLevel level{};
};

DegradationSpec parse_degradation_spec(const std::string& text, const SeverityBank& bank);
DegradeLevel find_level(const SeverityBank& bank, const std::string& family, int index);

}  // namespace irestore
