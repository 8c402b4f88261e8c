#pragma once
// Artifact output formats: division JSON records, PGM heatmaps, loss and
// benchmark CSVs, metrics JSON. Schemas are documented in docs/formats.md.

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grm/relation.hpp"
#include "grm/tracker.hpp"

namespace grm {

// {layer, pi: [[s,a],...], D: [0|1,...]} with D_i = 1 meaning E_A.
inline nlohmann::json division_json(int layer, const Division& div) {
    nlohmann::json j;
    j["layer"] = layer;
    nlohmann::json pi = nlohmann::json::array();
    nlohmann::json d = nlohmann::json::array();
    for (int i = 0; i < div.pi.rows(); ++i) {
        pi.push_back({div.pi.at2(i, 0), div.pi.at2(i, 1)});
        d.push_back(div.hard.at2(i, 1) == 1.0 ? 1 : 0);
    }
    j["pi"] = pi;
    j["D"] = d;
    return j;
}

// 8-bit ASCII PGM (P2). Values must lie in [0, 255].
inline void write_pgm(const std::string& path, int rows, int cols, const std::vector<int>& values) {
    if (static_cast<int>(values.size()) != rows * cols)
        throw std::invalid_argument("write_pgm: value count does not match dimensions");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
    os << "P2\n" << cols << " " << rows << "\n255\n";
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c) os << " ";
            os << values[static_cast<std::size_t>(r) * cols + c];
        }
        os << "\n";
    }
}

// Division heatmap over the search grid: E_S cells 0, E_A cells 255.
inline void write_division_pgm(const std::string& path, const Division& div, int grid_rows,
                               int grid_cols) {
    std::vector<int> px(static_cast<std::size_t>(grid_rows) * grid_cols);
    for (int i = 0; i < div.hard.rows(); ++i)
        px[static_cast<std::size_t>(i)] = div.hard.at2(i, 1) == 1.0 ? 255 : 0;
    write_pgm(path, grid_rows, grid_cols, px);
}

inline nlohmann::json metrics_json(const Metrics& m) {
    nlohmann::json j;
    j["mean_iou"] = m.mean_iou;
    j["sr50"] = m.sr50;
    j["sr75"] = m.sr75;
    j["ea_fraction_per_layer"] = m.ea_fraction_per_layer;
    return j;
}

inline void write_loss_csv(const std::string& path, const std::vector<double>& epoch_loss) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "epoch,mean_loss\n";
    os << std::setprecision(17);
    for (std::size_t i = 0; i < epoch_loss.size(); ++i) os << i << "," << epoch_loss[i] << "\n";
}

}  // namespace grm
