#include "irestore/config.hpp"

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace irestore {
namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void fail_at(const std::string& origin, int line, const std::string& msg) {
    throw std::runtime_error(origin + ":" + std::to_string(line) + ": " + msg);
}

double to_real(const std::string& v, const std::string& origin, int line) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        fail_at(origin, line, "expected a number, got '" + v + "'");
    }
    if (used != v.size()) fail_at(origin, line, "trailing characters after number '" + v + "'");
    return d;
}

long long to_int(const std::string& v, const std::string& origin, int line) {
    std::size_t used = 0;
    long long n = 0;
    try {
        n = std::stoll(v, &used);
    } catch (const std::exception&) {
        fail_at(origin, line, "expected an integer, got '" + v + "'");
    }
    if (used != v.size()) fail_at(origin, line, "trailing characters after integer '" + v + "'");
    return n;
}

}  // namespace

void TrainConfig::validate() const {
    if (gamma_e <= 0.0) throw std::invalid_argument("train config: gamma_e must be positive");
    if (gamma_g <= 0.0) throw std::invalid_argument("train config: gamma_g must be positive");
    if (total_epochs < 1) throw std::invalid_argument("train config: total_epochs must be at least 1");
    if (resolved_warm_epochs() > total_epochs)
        throw std::invalid_argument("train config: warm_epochs exceeds total_epochs");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be at least 1");
    if (ascent_every < 1) throw std::invalid_argument("train config: ascent_every must be at least 1");
    if (steps < 1) throw std::invalid_argument("train config: steps must be at least 1");
    if (generator_mode != "learned" && generator_mode != "uniform" && generator_mode != "random")
        throw std::invalid_argument("train config: generator_mode '" + generator_mode +
                                    "' not one of learned, uniform, random");
    bank.validate();
}

TrainConfig parse_config_text(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string s = trim(raw);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') fail_at(origin, line, "unterminated section header '" + s + "'");
            section = s.substr(1, s.size() - 2);
            if (section != "train" && section != "loss" && section != "bank")
                fail_at(origin, line, "unknown section [" + section + "]");
            continue;
        }
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos) fail_at(origin, line, "expected 'key = value', got '" + s + "'");
        const std::string key = trim(s.substr(0, eq));
        const std::string val = trim(s.substr(eq + 1));
        if (key.empty() || val.empty()) fail_at(origin, line, "expected 'key = value', got '" + s + "'");
        if (section.empty()) fail_at(origin, line, "key '" + key + "' appears before any section header");
        if (section == "train") {
            if (key == "gamma_e") cfg.gamma_e = to_real(val, origin, line);
            else if (key == "gamma_g") cfg.gamma_g = to_real(val, origin, line);
            else if (key == "warm_epochs") cfg.warm_epochs = static_cast<int>(to_int(val, origin, line));
            else if (key == "total_epochs") cfg.total_epochs = static_cast<int>(to_int(val, origin, line));
            else if (key == "batch_size") cfg.batch_size = static_cast<int>(to_int(val, origin, line));
            else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(val, origin, line));
            else if (key == "ascent_every") cfg.ascent_every = static_cast<int>(to_int(val, origin, line));
            else if (key == "generator_mode") cfg.generator_mode = val;
            else fail_at(origin, line, "unknown key '" + key + "' in [train]");
        } else if (section == "loss") {
            if (key == "alpha") cfg.loss_weights.alpha = to_real(val, origin, line);
            else if (key == "beta") cfg.loss_weights.beta = to_real(val, origin, line);
            else if (key == "lambda_reg") cfg.lambda_reg = to_real(val, origin, line);
            else fail_at(origin, line, "unknown key '" + key + "' in [loss]");
        } else {
            if (key == "steps") cfg.steps = static_cast<int>(to_int(val, origin, line));
            else fail_at(origin, line, "unknown key '" + key + "' in [bank]");
        }
    }
    return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    DatasetManifest m;
    std::string raw;
    int line = 0;
    bool any_paired = false, any_unpaired = false;
    while (std::getline(in, raw)) {
        ++line;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string s = trim(raw);
        if (s.empty()) continue;
        if (s.rfind("@split", 0) == 0) {
            m.split = trim(s.substr(6));
            if (m.split.empty()) throw std::runtime_error(path + ":" + std::to_string(line) + ": empty split tag");
            continue;
        }
        const std::size_t bar = s.find('|');
        if (bar != std::string::npos) {
            const std::string a = trim(s.substr(0, bar));
            const std::string b = trim(s.substr(bar + 1));
            if (a.empty() || b.empty())
                throw std::runtime_error(path + ":" + std::to_string(line) + ": malformed pair '" + s + "'");
            m.clean.push_back(resolve(a));
            m.degraded.push_back(resolve(b));
            any_paired = true;
        } else {
            m.clean.push_back(resolve(s));
            any_unpaired = true;
        }
    }
    if (m.clean.empty()) throw std::runtime_error(path + ": empty manifest");
    if (any_paired && any_unpaired)
        throw std::runtime_error(path + ": mixes paired and unpaired entries");

    auto check = [&](const std::string& p) {
        int depth = 0;
        const Image img = load_image(p, &depth);
        if (img.height % 4 != 0 || img.width % 4 != 0)
            throw std::runtime_error(p + ": extents " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                     " not divisible by 4");
        if (m.bit_depth == 0) m.bit_depth = depth;
        else if (m.bit_depth != depth)
            throw std::runtime_error(p + ": bit depth " + std::to_string(depth) + " differs from manifest depth " +
                                     std::to_string(m.bit_depth));
    };
    for (const auto& p : m.clean) check(p);
    for (const auto& p : m.degraded) check(p);
    return m;
}

std::vector<Image> load_images(const std::vector<std::string>& paths) {
    std::vector<Image> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(load_image(p));
    return out;
}

DegradeLevel find_level(const SeverityBank& bank, const std::string& family, int index) {
    DegradeFamily fam;
    if (family == "stripe") fam = DegradeFamily::stripe;
    else if (family == "lowres") fam = DegradeFamily::lowres;
    else if (family == "contrast") fam = DegradeFamily::contrast;
    else if (family == "identity") return DegradeLevel{};
    else throw std::runtime_error("unknown degradation family '" + family + "'");
    int seen = 0;
    for (const auto& op : bank.ops)
        if (op.family == fam && seen++ == index) return op;
    throw std::runtime_error("degradation level " + std::to_string(index) + " out of range for family '" + family +
                             "' (" + std::to_string(seen) + " levels)");
}

DegradationSpec parse_degradation_spec(const std::string& text, const SeverityBank& bank) {
    DegradationSpec spec;
    const std::string s = trim(text);
    if (s == "identity" || s == "none") {
        spec.identity = true;
        return spec;
    }
    const std::size_t colon = s.find(':');
    if (colon == std::string::npos)
        throw std::runtime_error("degradation spec '" + s + "' is not 'identity' or 'family:level'");
    const std::string family = trim(s.substr(0, colon));
    const int index = static_cast<int>(to_int(trim(s.substr(colon + 1)), "degradation spec", 1));
    spec.level = find_level(bank, family, index);
    spec.identity = spec.level.family == DegradeFamily::identity;
    return spec;
}

}  // namespace irestore
