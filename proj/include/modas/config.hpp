#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "modas/bilevel.hpp"
#include "modas/data.hpp"
#include "modas/errors.hpp"
#include "modas/supernet.hpp"

namespace modas {

using ordered_json = nlohmann::ordered_json;

// Run configuration. A config file is a single JSON object with sections
//   mode      "synthetic" | "image"   (selects the default attack/resource scale)
//   data      {kind, path, label_column, n, noise, seed, standardize}
//   space     {nodes, width, cells, ops}
//   search    {eta_theta, eta_alpha, batch_size, steps, seed, use_adv,
//              use_nop, use_mgda, second_order, momentum, weight_decay}
//   attack    {epsilon, xi, steps, random_start, pgd_step_scale}
//   resource  {lower_bound, unit}
// Parsing is strict: unknown keys anywhere are an error, so typos cannot
// silently fall back to defaults.

struct DataConfig {
    std::string kind = "moons";  // moons | spirals | blobs | csv
    std::string path;            // required when kind == "csv"
    std::string label_column = "label";
    int n = 400;
    double noise = 0.15;
    std::uint64_t seed = 7;
    bool standardize = false;

    void validate() const {
        if (kind != "moons" && kind != "spirals" && kind != "blobs" && kind != "csv") {
            throw ConfigError("data.kind must be one of moons, spirals, blobs, csv");
        }
        if (kind == "csv" && path.empty()) throw ConfigError("data.path required when data.kind is csv");
        if (kind != "csv") {
            if (n < 2) throw ConfigError("data.n must be >= 2");
            if (noise < 0) throw ConfigError("data.noise must be >= 0");
        }
    }
};

struct FullConfig {
    std::string mode = "synthetic";
    DataConfig data;
    SearchSpace space;
    SearchConfig search;  // owns the attack and resource sub-configs

    void validate() const {
        if (mode != "synthetic" && mode != "image") {
            throw ConfigError("mode must be \"synthetic\" or \"image\"");
        }
        data.validate();
        space.validate();
        search.validate();
    }
};

namespace detail {

inline void check_keys(const ordered_json& obj, const std::string& section,
                       std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("config: unknown key \"" + it.key() + "\" in " + section);
        }
    }
}

inline const ordered_json* find(const ordered_json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

inline double get_double(const ordered_json& obj, const std::string& section, const char* key,
                         double fallback) {
    const ordered_json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError("config: " + section + "." + key + " must be a number");
    return v->get<double>();
}

inline int get_int(const ordered_json& obj, const std::string& section, const char* key,
                   int fallback) {
    const ordered_json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number_integer() && !v->is_number_unsigned()) {
        throw ConfigError("config: " + section + "." + key + " must be an integer");
    }
    return v->get<int>();
}

inline std::uint64_t get_u64(const ordered_json& obj, const std::string& section, const char* key,
                             std::uint64_t fallback) {
    const ordered_json* v = find(obj, key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
        return static_cast<std::uint64_t>(v->get<std::int64_t>());
    }
    throw ConfigError("config: " + section + "." + key + " must be a non-negative integer");
}

inline bool get_bool(const ordered_json& obj, const std::string& section, const char* key,
                     bool fallback) {
    const ordered_json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError("config: " + section + "." + key + " must be a boolean");
    return v->get<bool>();
}

inline std::string get_string(const ordered_json& obj, const std::string& section, const char* key,
                              const std::string& fallback) {
    const ordered_json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError("config: " + section + "." + key + " must be a string");
    return v->get<std::string>();
}

inline ordered_json section_or_empty(const ordered_json& root, const char* key) {
    const ordered_json* v = find(root, key);
    if (!v) return ordered_json::object();
    if (!v->is_object()) throw ConfigError(std::string("config: ") + key + " must be an object");
    return *v;
}

}  // namespace detail

/// Applies the built-in defaults for a mode. "synthetic" (2-D point clouds):
/// epsilon 0.1, step 0.125, lower bound = parameters of one dense op at the
/// configured width, raw-count units. "image" (pixel-scaled features):
/// epsilon 2/255, step 1.25*epsilon, lower bound 1 in megabyte units.
inline void apply_mode_defaults(FullConfig& cfg) {
    if (cfg.mode == "image") {
        cfg.search.attack.epsilon = 2.0 / 255.0;
        cfg.search.attack.xi = 1.25 * (2.0 / 255.0);
        cfg.search.resource.lower_bound = 1.0;
        cfg.search.resource.unit = ResourceUnit::megabytes;
    } else {
        cfg.search.attack.epsilon = 0.1;
        cfg.search.attack.xi = 0.125;
        cfg.search.resource.lower_bound =
            static_cast<double>(cfg.space.width) * cfg.space.width + cfg.space.width;
        cfg.search.resource.unit = ResourceUnit::raw_count;
    }
}

inline FullConfig parse_config(const ordered_json& root) {
    if (!root.is_object()) throw ConfigError("config: top level must be a JSON object");
    detail::check_keys(root, "top level", {"mode", "data", "space", "search", "attack", "resource"});

    FullConfig cfg;
    cfg.mode = detail::get_string(root, "top level", "mode", "synthetic");
    if (cfg.mode != "synthetic" && cfg.mode != "image") {
        throw ConfigError("mode must be \"synthetic\" or \"image\"");
    }

    const ordered_json jdata = detail::section_or_empty(root, "data");
    detail::check_keys(jdata, "data",
                       {"kind", "path", "label_column", "n", "noise", "seed", "standardize"});
    cfg.data.kind = detail::get_string(jdata, "data", "kind", cfg.data.kind);
    cfg.data.path = detail::get_string(jdata, "data", "path", cfg.data.path);
    cfg.data.label_column = detail::get_string(jdata, "data", "label_column", cfg.data.label_column);
    cfg.data.n = detail::get_int(jdata, "data", "n", cfg.data.n);
    cfg.data.noise = detail::get_double(jdata, "data", "noise", cfg.data.noise);
    cfg.data.seed = detail::get_u64(jdata, "data", "seed", cfg.data.seed);
    cfg.data.standardize = detail::get_bool(jdata, "data", "standardize", cfg.data.standardize);

    const ordered_json jspace = detail::section_or_empty(root, "space");
    detail::check_keys(jspace, "space", {"nodes", "width", "cells", "ops"});
    cfg.space.num_nodes = detail::get_int(jspace, "space", "nodes", cfg.space.num_nodes);
    cfg.space.width = detail::get_int(jspace, "space", "width", cfg.space.width);
    cfg.space.cells = detail::get_int(jspace, "space", "cells", cfg.space.cells);
    if (const ordered_json* jops = detail::find(jspace, "ops")) {
        if (!jops->is_array()) throw ConfigError("config: space.ops must be an array of strings");
        std::vector<OpKind> ops;
        for (const auto& item : *jops) {
            if (!item.is_string()) throw ConfigError("config: space.ops must be an array of strings");
            ops.push_back(op_from_name(item.get<std::string>()));
        }
        cfg.space.ops = std::move(ops);
    }

    // Mode defaults are applied after the space is known (the synthetic
    // lower bound scales with the width) and before explicit attack/resource
    // keys so those always win.
    apply_mode_defaults(cfg);

    const ordered_json jsearch = detail::section_or_empty(root, "search");
    detail::check_keys(jsearch, "search",
                       {"eta_theta", "eta_alpha", "batch_size", "steps", "seed", "use_adv",
                        "use_nop", "use_mgda", "second_order", "momentum", "weight_decay"});
    SearchConfig& s = cfg.search;
    s.eta_theta = detail::get_double(jsearch, "search", "eta_theta", s.eta_theta);
    s.eta_alpha = detail::get_double(jsearch, "search", "eta_alpha", s.eta_alpha);
    s.batch_size = detail::get_int(jsearch, "search", "batch_size", s.batch_size);
    s.steps = detail::get_int(jsearch, "search", "steps", s.steps);
    s.seed = detail::get_u64(jsearch, "search", "seed", s.seed);
    s.use_adv = detail::get_bool(jsearch, "search", "use_adv", s.use_adv);
    s.use_nop = detail::get_bool(jsearch, "search", "use_nop", s.use_nop);
    s.use_mgda = detail::get_bool(jsearch, "search", "use_mgda", s.use_mgda);
    s.second_order = detail::get_bool(jsearch, "search", "second_order", s.second_order);
    s.momentum = detail::get_double(jsearch, "search", "momentum", s.momentum);
    s.weight_decay = detail::get_double(jsearch, "search", "weight_decay", s.weight_decay);

    const ordered_json jattack = detail::section_or_empty(root, "attack");
    detail::check_keys(jattack, "attack",
                       {"epsilon", "xi", "steps", "random_start", "pgd_step_scale"});
    AttackConfig& a = s.attack;
    a.epsilon = detail::get_double(jattack, "attack", "epsilon", a.epsilon);
    a.xi = detail::get_double(jattack, "attack", "xi", a.xi);
    a.steps = detail::get_int(jattack, "attack", "steps", a.steps);
    a.random_start = detail::get_bool(jattack, "attack", "random_start", a.random_start);
    a.pgd_step_scale = detail::get_double(jattack, "attack", "pgd_step_scale", a.pgd_step_scale);

    const ordered_json jresource = detail::section_or_empty(root, "resource");
    detail::check_keys(jresource, "resource", {"lower_bound", "unit"});
    ResourceConfig& r = s.resource;
    r.lower_bound = detail::get_double(jresource, "resource", "lower_bound", r.lower_bound);
    if (const ordered_json* junit = detail::find(jresource, "unit")) {
        if (!junit->is_string()) throw ConfigError("config: resource.unit must be a string");
        r.unit = resource_unit_from_name(junit->get<std::string>());
    }

    cfg.validate();
    return cfg;
}

inline FullConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    ordered_json root;
    try {
        root = ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_config(root);
}

/// Every key, with its resolved value. Feeding this back in reproduces the
/// run exactly, and it doubles as the place where the active defaults are
/// surfaced for inspection.
inline ordered_json resolved_config_json(const FullConfig& cfg) {
    ordered_json root = ordered_json::object();
    root["mode"] = cfg.mode;

    ordered_json d = ordered_json::object();
    d["kind"] = cfg.data.kind;
    d["path"] = cfg.data.path;
    d["label_column"] = cfg.data.label_column;
    d["n"] = cfg.data.n;
    d["noise"] = cfg.data.noise;
    d["seed"] = cfg.data.seed;
    d["standardize"] = cfg.data.standardize;
    root["data"] = std::move(d);

    ordered_json sp = ordered_json::object();
    sp["nodes"] = cfg.space.num_nodes;
    sp["width"] = cfg.space.width;
    sp["cells"] = cfg.space.cells;
    ordered_json ops = ordered_json::array();
    for (OpKind k : cfg.space.ops) ops.push_back(op_name(k));
    sp["ops"] = std::move(ops);
    root["space"] = std::move(sp);

    const SearchConfig& s = cfg.search;
    ordered_json se = ordered_json::object();
    se["eta_theta"] = s.eta_theta;
    se["eta_alpha"] = s.eta_alpha;
    se["batch_size"] = s.batch_size;
    se["steps"] = s.steps;
    se["seed"] = s.seed;
    se["use_adv"] = s.use_adv;
    se["use_nop"] = s.use_nop;
    se["use_mgda"] = s.use_mgda;
    se["second_order"] = s.second_order;
    se["momentum"] = s.momentum;
    se["weight_decay"] = s.weight_decay;
    root["search"] = std::move(se);

    ordered_json at = ordered_json::object();
    at["epsilon"] = s.attack.epsilon;
    at["xi"] = s.attack.xi;
    at["steps"] = s.attack.steps;
    at["random_start"] = s.attack.random_start;
    at["pgd_step_scale"] = s.attack.pgd_step_scale;
    root["attack"] = std::move(at);

    ordered_json re = ordered_json::object();
    re["lower_bound"] = s.resource.lower_bound;
    re["unit"] = resource_unit_name(s.resource.unit);
    root["resource"] = std::move(re);
    return root;
}

/// Materializes the configured dataset and splits it into equal train and
/// validation halves (train keeps the odd row). The split is driven by the
/// data seed, so weight-seed sweeps see identical data.
inline std::pair<Dataset, Dataset> make_datasets(const FullConfig& cfg) {
    Dataset full = cfg.data.kind == "csv"
                       ? load_csv(cfg.data.path, cfg.data.label_column)
                       : generate(cfg.data.kind, cfg.data.n, cfg.data.noise, cfg.data.seed);
    auto halves = split_half(full, derive_seed(cfg.data.seed, {seeds::split}));
    if (cfg.data.standardize) standardize(halves.first, halves.second);
    return halves;
}

}  // namespace modas
