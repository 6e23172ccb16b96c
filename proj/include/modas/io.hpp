#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "modas/bilevel.hpp"
#include "modas/errors.hpp"
#include "modas/supernet.hpp"
#include "modas/tensor.hpp"

namespace modas {

// File formats for run artifacts. All writers go through nlohmann's ordered
// json so key order is insertion order and two identical runs produce byte
// identical files.

inline nlohmann::ordered_json genotype_to_json(const Genotype& g) {
    nlohmann::ordered_json root = nlohmann::ordered_json::object();
    nlohmann::ordered_json space = nlohmann::ordered_json::object();
    space["nodes"] = g.num_nodes;
    space["width"] = g.width;
    nlohmann::ordered_json ops = nlohmann::ordered_json::array();
    for (const std::string& name : g.ops) ops.push_back(name);
    space["ops"] = std::move(ops);
    root["space"] = std::move(space);

    nlohmann::ordered_json edges = nlohmann::ordered_json::array();
    const std::vector<Edge> es = edge_list(g.num_nodes);
    for (std::size_t k = 0; k < es.size(); ++k) {
        nlohmann::ordered_json e = nlohmann::ordered_json::object();
        e["from"] = es[k].from;
        e["to"] = es[k].to;
        e["op"] = g.edge_ops.at(k);
        edges.push_back(std::move(e));
    }
    root["edges"] = std::move(edges);
    root["param_count"] = genotype_param_count(g);
    return root;
}

inline Genotype genotype_from_json(const nlohmann::ordered_json& root) {
    if (!root.is_object() || !root.contains("space") || !root.contains("edges") ||
        !root.contains("param_count")) {
        throw ConfigError("genotype: expected object with space, edges, param_count");
    }
    const auto& space = root.at("space");
    Genotype g;
    g.num_nodes = space.at("nodes").get<int>();
    g.width = space.at("width").get<int>();
    for (const auto& item : space.at("ops")) {
        const std::string name = item.get<std::string>();
        op_from_name(name);  // validates
        g.ops.push_back(name);
    }
    if (g.num_nodes < 4) throw ConfigError("genotype: nodes must be >= 4");
    if (g.width < 1) throw ConfigError("genotype: width must be >= 1");

    const std::vector<Edge> expect = edge_list(g.num_nodes);
    const auto& edges = root.at("edges");
    if (!edges.is_array() || edges.size() != expect.size()) {
        throw ConfigError("genotype: expected " + std::to_string(expect.size()) + " edges");
    }
    for (std::size_t k = 0; k < expect.size(); ++k) {
        const auto& e = edges.at(k);
        if (e.at("from").get<int>() != expect[k].from || e.at("to").get<int>() != expect[k].to) {
            throw ConfigError("genotype: edge " + std::to_string(k) + " out of canonical order");
        }
        const std::string op = e.at("op").get<std::string>();
        bool in_space = false;
        for (const std::string& name : g.ops) in_space = in_space || name == op;
        if (!in_space) throw ConfigError("genotype: edge op \"" + op + "\" not in space ops");
        g.edge_ops.push_back(op);
    }
    const long stored = root.at("param_count").get<long>();
    if (stored != genotype_param_count(g)) {
        throw ConfigError("genotype: stored param_count " + std::to_string(stored) +
                          " does not match edges (" + std::to_string(genotype_param_count(g)) + ")");
    }
    return g;
}

inline nlohmann::ordered_json alpha_to_json(const Tensor& alpha) {
    if (alpha.rank() != 2) throw ShapeError("alpha serialization expects a rank-2 tensor");
    nlohmann::ordered_json root = nlohmann::ordered_json::object();
    root["rows"] = alpha.rows();
    root["cols"] = alpha.cols();
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int r = 0; r < alpha.rows(); ++r) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (int c = 0; c < alpha.cols(); ++c) row.push_back(alpha.at(r, c));
        rows.push_back(std::move(row));
    }
    root["logits"] = std::move(rows);
    return root;
}

inline Tensor alpha_from_json(const nlohmann::ordered_json& root) {
    if (!root.is_object() || !root.contains("rows") || !root.contains("cols") ||
        !root.contains("logits")) {
        throw ConfigError("alpha: expected object with rows, cols, logits");
    }
    const int rows = root.at("rows").get<int>();
    const int cols = root.at("cols").get<int>();
    if (rows < 1 || cols < 1) throw ConfigError("alpha: rows and cols must be >= 1");
    const auto& data = root.at("logits");
    if (!data.is_array() || static_cast<int>(data.size()) != rows) {
        throw ConfigError("alpha: logits must have `rows` rows");
    }
    Tensor a = Tensor::zeros({rows, cols});
    for (int r = 0; r < rows; ++r) {
        const auto& row = data.at(r);
        if (!row.is_array() || static_cast<int>(row.size()) != cols) {
            throw ConfigError("alpha: row " + std::to_string(r) + " must have `cols` entries");
        }
        for (int c = 0; c < cols; ++c) a.at(r, c) = row.at(c).get<double>();
    }
    if (!a.all_finite()) throw ConfigError("alpha: logits must be finite");
    return a;
}

inline nlohmann::ordered_json runlog_record_json(const RunLogRecord& r) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    j["t"] = r.t;
    j["l_val"] = r.l_val;
    j["psi"] = r.psi;
    j["nhat"] = r.nhat;
    j["gamma"] = r.gamma;
    j["grad_theta_norm"] = r.grad_theta_norm;
    if (r.clean_acc) j["clean_acc"] = *r.clean_acc; else j["clean_acc"] = nullptr;
    if (r.robust_acc) j["robust_acc"] = *r.robust_acc; else j["robust_acc"] = nullptr;
    return j;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << content;
    if (!out) throw ConfigError("write failed: " + path);
}

inline nlohmann::ordered_json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("JSON parse error in " + path + ": " + e.what());
    }
}

}  // namespace modas
