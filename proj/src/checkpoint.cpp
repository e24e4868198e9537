#include "irestore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace irestore {
namespace {

void put_u8(std::string& b, std::uint8_t v) { b.push_back(static_cast<char>(v)); }

void put_u16(std::string& b, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& b, std::int32_t v) { put_u32(b, static_cast<std::uint32_t>(v)); }
void put_i64(std::string& b, std::int64_t v) { put_u64(b, static_cast<std::uint64_t>(v)); }
void put_f32(std::string& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::string& b, double v) { put_u64(b, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::string& b, const std::string& s) {
    put_u32(b, static_cast<std::uint32_t>(s.size()));
    b.append(s);
}

struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;
    std::string origin;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error(origin + ": checkpoint truncated");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void put_floats(std::string& b, const std::vector<float>& v) {
    put_u64(b, static_cast<std::uint64_t>(v.size()));
    for (float x : v) put_f32(b, x);
}

std::vector<float> get_floats(Cursor& c) {
    const std::uint64_t n = c.u64();
    c.need(n * 4);
    std::vector<float> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = c.f32();
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::string b;
    b.append(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u16(b, kCheckpointVersion);
    put_u64(b, ck.seed);
    put_u64(b, ck.iteration);

    const TrainConfig& c = ck.config;
    put_f64(b, c.gamma_e);
    put_f64(b, c.gamma_g);
    put_i32(b, c.warm_epochs);
    put_i32(b, c.total_epochs);
    put_i32(b, c.batch_size);
    put_u64(b, c.seed);
    put_i32(b, c.ascent_every);
    put_str(b, c.generator_mode);
    put_f64(b, c.loss_weights.alpha);
    put_f64(b, c.loss_weights.beta);
    put_f64(b, c.lambda_reg);
    put_i32(b, c.steps);

    put_u32(b, static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& p : ck.params) {
        put_str(b, p.name);
        put_u8(b, static_cast<std::uint8_t>(p.shape.size()));
        for (int d : p.shape) put_i32(b, d);
        put_floats(b, p.values);
    }

    put_u8(b, static_cast<std::uint8_t>(ck.optimizers.size()));
    for (const auto& o : ck.optimizers) {
        put_u8(b, o.kind);
        put_f64(b, o.lr);
        put_f64(b, o.beta1);
        put_f64(b, o.beta2);
        put_f64(b, o.eps);
        put_i64(b, o.step_count);
        if (o.m.size() != o.v.size()) throw std::logic_error("save_checkpoint: moment lists out of step");
        put_u32(b, static_cast<std::uint32_t>(o.m.size()));
        for (std::size_t i = 0; i < o.m.size(); ++i) {
            put_floats(b, o.m[i]);
            put_floats(b, o.v[i]);
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
    if (!out) throw std::runtime_error("cannot write " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Cursor c{b, 0, path};

    c.need(sizeof kCheckpointMagic);
    if (std::memcmp(b.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw std::runtime_error(path + ": not a checkpoint (bad magic)");
    c.pos = sizeof kCheckpointMagic;
    const std::uint16_t version = c.u16();
    if (version != kCheckpointVersion)
        throw std::runtime_error(path + ": checkpoint version " + std::to_string(version) + " unsupported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");

    Checkpoint ck;
    ck.seed = c.u64();
    ck.iteration = c.u64();

    TrainConfig& cfg = ck.config;
    cfg.gamma_e = c.f64();
    cfg.gamma_g = c.f64();
    cfg.warm_epochs = c.i32();
    cfg.total_epochs = c.i32();
    cfg.batch_size = c.i32();
    cfg.seed = c.u64();
    cfg.ascent_every = c.i32();
    cfg.generator_mode = c.str();
    cfg.loss_weights.alpha = c.f64();
    cfg.loss_weights.beta = c.f64();
    cfg.lambda_reg = c.f64();
    cfg.steps = c.i32();

    const std::uint32_t nparams = c.u32();
    ck.params.resize(nparams);
    for (auto& p : ck.params) {
        p.name = c.str();
        const int nd = c.u8();
        p.shape.resize(static_cast<std::size_t>(nd));
        for (auto& d : p.shape) d = c.i32();
        p.values = get_floats(c);
        std::int64_t expect = 1;
        for (int d : p.shape) expect *= d;
        if (nd == 0 || expect != static_cast<std::int64_t>(p.values.size()))
            throw std::runtime_error(path + ": parameter " + p.name + " has inconsistent shape");
    }

    const int nopt = c.u8();
    ck.optimizers.resize(static_cast<std::size_t>(nopt));
    for (auto& o : ck.optimizers) {
        o.kind = c.u8();
        if (o.kind > 1) throw std::runtime_error(path + ": unknown optimizer kind");
        o.lr = c.f64();
        o.beta1 = c.f64();
        o.beta2 = c.f64();
        o.eps = c.f64();
        o.step_count = c.i64();
        const std::uint32_t nm = c.u32();
        o.m.resize(nm);
        o.v.resize(nm);
        for (std::uint32_t i = 0; i < nm; ++i) {
            o.m[i] = get_floats(c);
            o.v[i] = get_floats(c);
        }
    }
    if (c.pos != b.size()) throw std::runtime_error(path + ": trailing bytes after checkpoint payload");
    return ck;
}

void append_params(std::vector<ParamBlob>& out, const ParamSet<float>& ps) {
    for (const auto& [name, t] : ps.items) {
        ParamBlob p;
        p.name = name;
        p.shape = t.shape();
        p.values = t.data();
        out.push_back(std::move(p));
    }
}

void restore_params(ParamSet<float>& ps, const std::vector<ParamBlob>& blobs) {
    for (auto& [name, t] : ps.items) {
        const ParamBlob* found = nullptr;
        for (const auto& b : blobs)
            if (b.name == name) {
                found = &b;
                break;
            }
        if (!found) throw std::runtime_error("checkpoint is missing parameter " + name);
        if (found->shape != t.shape())
            throw std::runtime_error("checkpoint parameter " + name + " has shape " + shape_str(found->shape) +
                                     ", expected " + shape_str(t.shape()));
        t.data() = found->values;
        t.zero_grad();
    }
}

OptimSnapshot snapshot_optimizer(const Optimizer<float>& opt) {
    OptimSnapshot s;
    s.kind = opt.kind() == Optimizer<float>::Kind::adam ? 1 : 0;
    s.lr = opt.lr();
    s.beta1 = opt.beta1();
    s.beta2 = opt.beta2();
    s.eps = opt.eps();
    s.step_count = opt.step_count();
    s.m = opt.moments_m();
    s.v = opt.moments_v();
    return s;
}

Optimizer<float> restore_optimizer(const OptimSnapshot& s) {
    if (s.kind > 1) throw std::runtime_error("optimizer kind " + std::to_string(s.kind) + " unknown");
    Optimizer<float> opt = s.kind == 1 ? Optimizer<float>::adam(s.lr, s.beta1, s.beta2, s.eps)
                                       : Optimizer<float>::sgd(s.lr);
    opt.set_step_count(s.step_count);
    opt.moments_m() = s.m;
    opt.moments_v() = s.v;
    return opt;
}

}  // namespace irestore
