#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdit/analysis.hpp"
#include "repdit/error.hpp"
#include "repdit/model.hpp"

namespace repdit {

// Run configuration: nested JSON, every key optional with desk-scale
// defaults, unknown keys rejected. The parsed struct is the single source of
// truth; to_json() emits the fully resolved canonical form (this is what
// checkpoints embed).

struct ScheduleConfig {
    size_t steps = 50;
    // defaults scale the canonical [1e-4, 0.02] thousand-step range down to T
    std::optional<double> beta_start;
    std::optional<double> beta_end;

    double resolved_beta_end() const {
        if (beta_end) return *beta_end;
        return std::min(0.02 * 1000.0 / double(steps), 0.5);
    }
    double resolved_beta_start() const {
        if (beta_start) return *beta_start;
        return std::min(1e-4 * 1000.0 / double(steps), resolved_beta_end());
    }
};

struct TrainConfig {
    size_t steps = 2000;
    size_t batch = 8;
    double lr = 1e-3;
    uint64_t seed = 42;
    size_t checkpoint_every = 250;  // 0 disables periodic checkpoints
};

struct DataConfig {
    uint64_t seed = 1234;
    size_t clips = 64;
    std::string kinds = "both";  // both | square | bar
};

struct AnalysisConfig {
    std::vector<size_t> steps;   // empty: spread over 1..T automatically
    std::vector<size_t> layers;  // empty: all layers
    bool per_head = false;
    std::string similarity = "per_position";  // or pooled
};

struct RunConfig {
    ModelConfig model;
    ScheduleConfig schedule;
    TrainConfig train;
    DataConfig data;
    AnalysisConfig analysis;

    void validate() const {
        model.validate();
        const double bs = schedule.resolved_beta_start();
        const double be = schedule.resolved_beta_end();
        if (!(bs > 0.0) || !(bs <= be) || !(be < 1.0))
            fail("config_invalid", "schedule betas must satisfy 0 < start <= end < 1");
        if (train.batch < 1) fail("config_invalid", "train.batch must be at least 1");
        if (!(train.lr > 0.0)) fail("config_invalid", "train.lr must be positive");
        if (data.clips < 1) fail("config_invalid", "data.clips must be at least 1");
        if (data.kinds != "both" && data.kinds != "square" && data.kinds != "bar")
            fail("config_invalid", "data.kinds must be both, square, or bar");
        if (data.kinds == "bar" && model.vocab < 5)
            fail("config_invalid", "data.kinds=bar needs model.vocab >= 5");
        for (size_t t : analysis.steps)
            if (t < 1 || t > schedule.steps)
                fail("config_invalid", "analysis.steps entry " + std::to_string(t) +
                                           " outside 1.." + std::to_string(schedule.steps));
        for (size_t l : analysis.layers)
            if (l < 1 || l > model.L)
                fail("config_invalid", "analysis.layers entry " + std::to_string(l) +
                                           " outside 1.." + std::to_string(model.L));
        similarity_mode_from_string(analysis.similarity);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["model"] = {{"layers", model.L},
                      {"width", model.d},
                      {"heads", model.H},
                      {"frames", model.F},
                      {"grid", model.G},
                      {"patch", model.patch},
                      {"text_tokens", model.S},
                      {"group_size", model.m},
                      {"vocab", model.vocab},
                      {"repvideo", model.repvideo_enabled},
                      {"cache_policy", cache_policy_name(model.cache_policy)},
                      {"gamma_init", model.gamma_init}};
        if (model.forced_gate)
            j["model"]["forced_gate"] = *model.forced_gate;
        else
            j["model"]["forced_gate"] = nullptr;
        j["schedule"] = {{"steps", schedule.steps},
                         {"beta_start", schedule.resolved_beta_start()},
                         {"beta_end", schedule.resolved_beta_end()}};
        j["train"] = {{"steps", train.steps},
                      {"batch", train.batch},
                      {"lr", train.lr},
                      {"seed", train.seed},
                      {"checkpoint_every", train.checkpoint_every}};
        j["data"] = {{"seed", data.seed}, {"clips", data.clips}, {"kinds", data.kinds}};
        j["analysis"] = {{"steps", analysis.steps},
                         {"layers", analysis.layers},
                         {"per_head", analysis.per_head},
                         {"similarity", analysis.similarity}};
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::string& section,
                           std::initializer_list<const char*> known) {
    if (!obj.is_object())
        fail("config_invalid", "section '" + section + "' must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) fail("config_invalid", "unknown key '" + section + "." + key + "'");
    }
}

inline size_t get_count(const nlohmann::json& obj, const char* key, size_t fallback,
                        const std::string& section) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned())
        fail("config_invalid", section + "." + key + " must be an integer");
    if (v.is_number_integer() && v.get<int64_t>() < 0)
        fail("config_invalid", section + "." + key + " must be nonnegative");
    return v.get<size_t>();
}

inline uint64_t get_seed(const nlohmann::json& obj, const char* key, uint64_t fallback,
                         const std::string& section) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0))
        fail("config_invalid", section + "." + key + " must be a nonnegative integer");
    return v.get<uint64_t>();
}

inline double get_real(const nlohmann::json& obj, const char* key, double fallback,
                       const std::string& section) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) fail("config_invalid", section + "." + key + " must be a number");
    return v.get<double>();
}

inline bool get_bool(const nlohmann::json& obj, const char* key, bool fallback,
                     const std::string& section) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_boolean()) fail("config_invalid", section + "." + key + " must be a boolean");
    return v.get<bool>();
}

inline std::string get_string(const nlohmann::json& obj, const char* key, std::string fallback,
                              const std::string& section) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_string()) fail("config_invalid", section + "." + key + " must be a string");
    return v.get<std::string>();
}

inline std::vector<size_t> get_count_list(const nlohmann::json& obj, const char* key,
                                          const std::string& section) {
    std::vector<size_t> out;
    if (!obj.contains(key)) return out;
    const auto& v = obj.at(key);
    if (!v.is_array()) fail("config_invalid", section + "." + key + " must be an array");
    for (const auto& e : v) {
        if (!e.is_number_integer() && !e.is_number_unsigned())
            fail("config_invalid", section + "." + key + " entries must be integers");
        if (e.is_number_integer() && e.get<int64_t>() < 0)
            fail("config_invalid", section + "." + key + " entries must be nonnegative");
        out.push_back(e.get<size_t>());
    }
    return out;
}

} // namespace detail

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail("config_invalid", "config root must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (key != "model" && key != "schedule" && key != "train" && key != "data" &&
            key != "analysis")
            fail("config_invalid", "unknown section '" + key + "'");

    RunConfig cfg;
    const nlohmann::json empty = nlohmann::json::object();
    const auto& jm = j.contains("model") ? j.at("model") : empty;
    detail::reject_unknown(jm, "model",
                           {"layers", "width", "heads", "frames", "grid", "patch", "text_tokens",
                            "group_size", "vocab", "repvideo", "cache_policy", "gamma_init",
                            "forced_gate"});
    cfg.model.L = detail::get_count(jm, "layers", cfg.model.L, "model");
    cfg.model.d = detail::get_count(jm, "width", cfg.model.d, "model");
    cfg.model.H = detail::get_count(jm, "heads", cfg.model.H, "model");
    cfg.model.F = detail::get_count(jm, "frames", cfg.model.F, "model");
    cfg.model.G = detail::get_count(jm, "grid", cfg.model.G, "model");
    cfg.model.patch = detail::get_count(jm, "patch", cfg.model.patch, "model");
    cfg.model.S = detail::get_count(jm, "text_tokens", cfg.model.S, "model");
    cfg.model.m = detail::get_count(jm, "group_size", cfg.model.m, "model");
    cfg.model.vocab = detail::get_count(jm, "vocab", cfg.model.vocab, "model");
    cfg.model.repvideo_enabled = detail::get_bool(jm, "repvideo", cfg.model.repvideo_enabled, "model");
    cfg.model.cache_policy =
        cache_policy_from_string(detail::get_string(jm, "cache_policy", "group_reset", "model"));
    cfg.model.gamma_init = detail::get_real(jm, "gamma_init", cfg.model.gamma_init, "model");
    if (jm.contains("forced_gate") && !jm.at("forced_gate").is_null())
        cfg.model.forced_gate = detail::get_real(jm, "forced_gate", 0.0, "model");

    const auto& js = j.contains("schedule") ? j.at("schedule") : empty;
    detail::reject_unknown(js, "schedule", {"steps", "beta_start", "beta_end"});
    cfg.schedule.steps = detail::get_count(js, "steps", cfg.schedule.steps, "schedule");
    if (js.contains("beta_start"))
        cfg.schedule.beta_start = detail::get_real(js, "beta_start", 0.0, "schedule");
    if (js.contains("beta_end"))
        cfg.schedule.beta_end = detail::get_real(js, "beta_end", 0.0, "schedule");
    cfg.model.T = cfg.schedule.steps;

    const auto& jt = j.contains("train") ? j.at("train") : empty;
    detail::reject_unknown(jt, "train", {"steps", "batch", "lr", "seed", "checkpoint_every"});
    cfg.train.steps = detail::get_count(jt, "steps", cfg.train.steps, "train");
    cfg.train.batch = detail::get_count(jt, "batch", cfg.train.batch, "train");
    cfg.train.lr = detail::get_real(jt, "lr", cfg.train.lr, "train");
    cfg.train.seed = detail::get_seed(jt, "seed", cfg.train.seed, "train");
    cfg.train.checkpoint_every =
        detail::get_count(jt, "checkpoint_every", cfg.train.checkpoint_every, "train");

    const auto& jd = j.contains("data") ? j.at("data") : empty;
    detail::reject_unknown(jd, "data", {"seed", "clips", "kinds"});
    cfg.data.seed = detail::get_seed(jd, "seed", cfg.data.seed, "data");
    cfg.data.clips = detail::get_count(jd, "clips", cfg.data.clips, "data");
    cfg.data.kinds = detail::get_string(jd, "kinds", cfg.data.kinds, "data");

    const auto& ja = j.contains("analysis") ? j.at("analysis") : empty;
    detail::reject_unknown(ja, "analysis", {"steps", "layers", "per_head", "similarity"});
    cfg.analysis.steps = detail::get_count_list(ja, "steps", "analysis");
    cfg.analysis.layers = detail::get_count_list(ja, "layers", "analysis");
    cfg.analysis.per_head = detail::get_bool(ja, "per_head", cfg.analysis.per_head, "analysis");
    cfg.analysis.similarity =
        detail::get_string(ja, "similarity", cfg.analysis.similarity, "analysis");

    cfg.validate();
    return cfg;
}

inline RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("io_error", "cannot open config '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) fail("config_invalid", "config '" + path + "' is not valid JSON");
    return from_json(j);
}

} // namespace repdit
