#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irestore/config.hpp"
#include "irestore/net.hpp"
#include "irestore/optim.hpp"

namespace irestore {

inline constexpr char kCheckpointMagic[8] = {'D', 'E', 'A', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct ParamBlob {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

struct OptimSnapshot {
    std::uint8_t kind = 0;  // 0 sgd, 1 adam
    double lr = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t step_count = 0;
    std::vector<std::vector<float>> m, v;  // adam moments, parallel to the owning ParamSet
};

// On-disk training state. Floats travel as little-endian 32-bit words no
// matter the host, so a checkpoint round-trips bitwise everywhere. The
// severity bank is code-defined and not serialized.
struct Checkpoint {
    std::uint64_t seed = 0;
    std::uint64_t iteration = 0;
    TrainConfig config;
    std::vector<ParamBlob> params;
    std::vector<OptimSnapshot> optimizers;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// ParamSet and optimizer bridges. Restoring looks parameters up by name and
// rejects shape drift; blobs without a matching parameter are left alone so
// one checkpoint can feed networks that use a subset of it.
void append_params(std::vector<ParamBlob>& out, const ParamSet<float>& ps);
void restore_params(ParamSet<float>& ps, const std::vector<ParamBlob>& blobs);
OptimSnapshot snapshot_optimizer(const Optimizer<float>& opt);
Optimizer<float> restore_optimizer(const OptimSnapshot& s);

}  // namespace irestore
