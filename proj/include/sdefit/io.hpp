#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdefit/common.hpp"
#include "sdefit/eki.hpp"
#include "sdefit/params.hpp"
#include "sdefit/statistics.hpp"

namespace sdefit {

using Json = nlohmann::ordered_json;

namespace detail {

inline std::string format_cell(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", x);
    return buf;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataFileError("cannot open for writing: " + path);
    return out;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataFileError("cannot open: " + path);
    return in;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        // trim surrounding whitespace
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

inline double parse_cell(const std::string& cell, std::size_t line_no) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw ParseError(line_no, "not a number: '" + cell + "'");
    }
}

inline bool looks_numeric(const std::string& cell) {
    try {
        std::size_t pos = 0;
        std::stod(cell, &pos);
        return pos == cell.size();
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace detail

// Trajectory as CSV with a time column: t,x1,...,xn.
inline void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                                 long every = 1) {
    auto out = detail::open_out(path);
    out << "t";
    for (Eigen::Index c = 0; c < traj.dimension(); ++c) out << ",x" << (c + 1);
    out << "\n";
    for (Eigen::Index t = 0; t < traj.steps(); t += every) {
        out << detail::format_cell(traj.t0 + traj.dt * static_cast<double>(t));
        for (Eigen::Index c = 0; c < traj.dimension(); ++c) {
            out << "," << detail::format_cell(traj.samples(t, c));
        }
        out << "\n";
    }
}

inline Trajectory read_trajectory_csv(const std::string& path) {
    auto in = detail::open_in(path);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::vector<double>> rows;
    bool header_skipped = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = detail::split_csv_line(line);
        if (!header_skipped && !detail::looks_numeric(cells[0])) {
            header_skipped = true;
            continue;
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(detail::parse_cell(c, line_no));
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw ParseError(line_no, "inconsistent column count");
        }
        rows.push_back(std::move(row));
    }
    if (rows.size() < 2) throw DataFileError("trajectory file has fewer than two rows: " + path);
    const std::size_t n_cols = rows.front().size();
    if (n_cols < 2) throw DataFileError("trajectory file needs a time column and data: " + path);

    Trajectory traj;
    traj.t0 = rows.front()[0];
    traj.dt = rows[1][0] - rows[0][0];
    if (traj.dt <= 0.0) throw DataFileError("non-increasing time column: " + path);
    traj.samples.resize(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(n_cols - 1));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double expect = traj.t0 + traj.dt * static_cast<double>(r);
        if (std::abs(rows[r][0] - expect) > 1e-6 * std::max(1.0, std::abs(expect))) {
            throw DataFileError("time column is not uniformly spaced: " + path);
        }
        for (std::size_t c = 1; c < n_cols; ++c) {
            traj.samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) =
                rows[r][c];
        }
    }
    return traj;
}

// Read one column of a CSV (by header name, or 1-based index when the
// name is numeric) as a uniformly sampled scalar series. Rows are taken
// in file order; the sampling interval is supplied, not inferred.
inline Trajectory ingest_timeseries(const std::string& path, const std::string& column,
                                    double sampling_interval, bool mean_center) {
    if (sampling_interval <= 0.0) throw DataFileError("sampling interval must be positive");
    auto in = detail::open_in(path);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    std::vector<double> values;
    long col_index = -1;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = detail::split_csv_line(line);
        if (col_index < 0) {
            // Resolve the column on the first content line.
            const bool has_header = !detail::looks_numeric(cells[0]);
            if (has_header) {
                header = cells;
                for (std::size_t i = 0; i < header.size(); ++i) {
                    if (header[i] == column) col_index = static_cast<long>(i);
                }
            }
            if (col_index < 0) {
                if (detail::looks_numeric(column)) {
                    col_index = std::stol(column) - 1;
                } else if (cells.size() == 1 && column.empty()) {
                    col_index = 0;
                } else if (!has_header) {
                    throw DataFileError("file has no header; select the column by number: " +
                                        path);
                } else {
                    throw DataFileError("column '" + column + "' not found in " + path);
                }
            }
            if (has_header) continue;
        }
        if (col_index >= static_cast<long>(cells.size()) || col_index < 0) {
            throw ParseError(line_no, "row has no column " + std::to_string(col_index + 1));
        }
        values.push_back(detail::parse_cell(cells[static_cast<std::size_t>(col_index)], line_no));
    }
    if (values.size() < 2) throw DataFileError("series has fewer than two samples: " + path);

    Trajectory traj;
    traj.dt = sampling_interval;
    traj.samples.resize(static_cast<Eigen::Index>(values.size()), 1);
    for (std::size_t i = 0; i < values.size(); ++i) {
        traj.samples(static_cast<Eigen::Index>(i), 0) = values[i];
    }
    if (mean_center) traj.samples.col(0).array() -= traj.samples.col(0).mean();
    return traj;
}

inline Json data_vector_to_json(const DataVector& dv) {
    Json j;
    j["labels"] = dv.labels;
    j["values"] = std::vector<double>(dv.values.data(), dv.values.data() + dv.values.size());
    Json gamma = Json::array();
    for (Eigen::Index r = 0; r < dv.gamma.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < dv.gamma.cols(); ++c) row.push_back(dv.gamma(r, c));
        gamma.push_back(std::move(row));
    }
    j["gamma"] = std::move(gamma);
    return j;
}

inline void write_data_vector_json(const std::string& path, const DataVector& dv) {
    auto out = detail::open_out(path);
    out << data_vector_to_json(dv).dump(2) << "\n";
}

inline DataVector read_data_vector_json(const std::string& path) {
    auto in = detail::open_in(path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataFileError("bad JSON in " + path + ": " + e.what());
    }
    DataVector dv;
    const auto values = j.at("values").get<std::vector<double>>();
    dv.values = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    dv.labels = j.at("labels").get<std::vector<std::string>>();
    const auto& gamma = j.at("gamma");
    const auto rows = static_cast<Eigen::Index>(gamma.size());
    dv.gamma.resize(rows, rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto row = gamma.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != rows) {
            throw DataFileError("gamma is not square in " + path);
        }
        for (Eigen::Index c = 0; c < rows; ++c) dv.gamma(r, c) = row[static_cast<std::size_t>(c)];
    }
    if (dv.values.size() != rows || dv.labels.size() != static_cast<std::size_t>(rows)) {
        throw DataFileError("values, labels, and gamma disagree on the dimension in " + path);
    }
    return dv;
}

// One JSON object per generation; small enough to grep, stable ordering.
inline void write_history_jsonl(const std::string& path, const EkiResult& result,
                                bool include_particles) {
    auto out = detail::open_out(path);
    for (const auto& rec : result.generations) {
        Json j;
        j["gen"] = rec.generation;
        j["misfit_mean"] = rec.misfit_mean_g;
        j["misfit_member_avg"] = rec.misfit_member_avg;
        j["failed"] = rec.failed_members;
        j["noise_scale"] = rec.noise_scale;
        if (include_particles) {
            Json particles = Json::array();
            for (Eigen::Index r = 0; r < rec.particles.rows(); ++r) {
                Json row = Json::array();
                for (Eigen::Index c = 0; c < rec.particles.cols(); ++c) {
                    row.push_back(rec.particles(r, c));
                }
                particles.push_back(std::move(row));
            }
            j["particles"] = std::move(particles);
        }
        out << j.dump() << "\n";
    }
}

// Final ensemble in natural units, one member per row, named columns.
inline void write_ensemble_csv(const std::string& path, const Matrix& particles,
                               const ParameterLayout& layout) {
    if (particles.cols() != layout.total_size()) {
        throw LayoutMismatch("ensemble width does not match the parameter layout");
    }
    auto out = detail::open_out(path);
    bool first = true;
    for (const auto& e : layout.entries()) {
        for (Eigen::Index i = 0; i < e.size; ++i) {
            out << (first ? "" : ",") << e.name;
            if (e.size > 1) out << "[" << (i + 1) << "]";
            first = false;
        }
    }
    out << "\n";
    for (Eigen::Index r = 0; r < particles.rows(); ++r) {
        const Vector flat = particles.row(r).transpose();
        first = true;
        for (const auto& e : layout.entries()) {
            const Vector natural = layout.unpack(e.name, flat);
            for (Eigen::Index i = 0; i < e.size; ++i) {
                out << (first ? "" : ",") << detail::format_cell(natural[i]);
                first = false;
            }
        }
        out << "\n";
    }
}

// Unit-mass histogram over fixed edges; samples outside the range are
// folded into the boundary bins so comparisons conserve mass.
struct Histogram {
    Vector edges;  // bins + 1
    Vector mass;   // bins, sums to 1
};

inline Histogram make_histogram(const Eigen::Ref<const Vector>& samples, double lo, double hi,
                                int bins) {
    if (bins < 1) throw Error("histogram needs at least one bin");
    if (!(hi > lo)) throw Error("histogram range is empty");
    Histogram h;
    h.edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b) {
        h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
    }
    h.mass = Vector::Zero(bins);
    const double scale = static_cast<double>(bins) / (hi - lo);
    for (Eigen::Index i = 0; i < samples.size(); ++i) {
        int b = static_cast<int>(std::floor((samples[i] - lo) * scale));
        b = std::max(0, std::min(bins - 1, b));
        h.mass[b] += 1.0;
    }
    h.mass /= static_cast<double>(samples.size());
    return h;
}

inline void write_histogram_csv(const std::string& path, const Histogram& h) {
    auto out = detail::open_out(path);
    out << "bin_lo,bin_hi,mass\n";
    for (Eigen::Index b = 0; b < h.mass.size(); ++b) {
        out << detail::format_cell(h.edges[b]) << "," << detail::format_cell(h.edges[b + 1])
            << "," << detail::format_cell(h.mass[b]) << "\n";
    }
}

// Total variation distance between two unit-mass histograms on the same
// bin grid.
inline double tv_distance(const Histogram& a, const Histogram& b) {
    if (a.mass.size() != b.mass.size() || a.edges.size() != b.edges.size()) {
        throw BinMismatch("histograms have different bin counts");
    }
    if ((a.edges - b.edges).cwiseAbs().maxCoeff() >
        1e-9 * std::max(1.0, a.edges.cwiseAbs().maxCoeff())) {
        throw BinMismatch("histograms have different bin edges");
    }
    return 0.5 * (a.mass - b.mass).cwiseAbs().sum();
}

inline double tv_distance(const Vector& p, const Vector& q) {
    if (p.size() != q.size()) throw BinMismatch("mass vectors have different lengths");
    return 0.5 * (p - q).cwiseAbs().sum();
}

inline void write_json_file(const std::string& path, const Json& j) {
    auto out = detail::open_out(path);
    out << j.dump(2) << "\n";
}

inline Json read_json_file(const std::string& path) {
    auto in = detail::open_in(path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataFileError("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

}  // namespace sdefit
