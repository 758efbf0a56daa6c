#include "dido/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace dido::io {

namespace fs = std::filesystem;

namespace {

json vector_to_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        arr.push_back(v[i]);
    }
    return arr;
}

Vector vector_from_json(const json& arr) {
    Vector v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    }
    return v;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') {
            cell.pop_back();
        }
        cells.push_back(cell);
    }
    return cells;
}

double parse_double(const std::string& text, const fs::path& path, std::size_t line) {
    double v = 0.0;
    const char* begin = text.data();
    const char* end = text.data() + text.size();
    while (begin < end && *begin == ' ') {
        ++begin;
    }
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) {
        std::ostringstream msg;
        msg << path.string() << ":" << line << ": cannot parse number '" << text << "'";
        throw Error(msg.str());
    }
    return v;
}

}  // namespace

json model_to_json(const nn::MlpModel& model) {
    model.validate();
    json doc;
    doc["format"] = "dido-mlp";
    doc["version"] = 1;
    doc["layer_sizes"] = model.layer_sizes;
    doc["activation"] = std::string(nn::to_string(model.activation));
    doc["output_head"] = std::string(nn::to_string(model.output_head));
    json weights = json::array();
    json biases = json::array();
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        const Matrix& w = model.weights[l];
        json flat = json::array();
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                flat.push_back(w(i, j));
            }
        }
        weights.push_back(std::move(flat));
        biases.push_back(vector_to_json(model.biases[l]));
    }
    doc["weights"] = std::move(weights);
    doc["biases"] = std::move(biases);
    return doc;
}

nn::MlpModel model_from_json(const json& doc) {
    try {
        auto sizes = doc.at("layer_sizes").get<std::vector<int>>();
        nn::MlpModel m = nn::MlpModel::zeros(
            sizes, nn::parse_output_head(doc.at("output_head").get<std::string>()));
        m.activation = nn::parse_activation(doc.at("activation").get<std::string>());
        const json& weights = doc.at("weights");
        const json& biases = doc.at("biases");
        if (weights.size() != m.weights.size() || biases.size() != m.biases.size()) {
            throw ShapeError("checkpoint layer count does not match layer_sizes");
        }
        for (std::size_t l = 0; l < m.weights.size(); ++l) {
            Matrix& w = m.weights[l];
            const json& flat = weights[l];
            if (flat.size() != static_cast<std::size_t>(w.size())) {
                throw ShapeError("checkpoint weight array has the wrong length");
            }
            std::size_t k = 0;
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                for (Eigen::Index j = 0; j < w.cols(); ++j) {
                    w(i, j) = flat[k++].get<double>();
                }
            }
            m.biases[l] = vector_from_json(biases[l]);
        }
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed model checkpoint: ") + e.what());
    }
}

json standardizer_to_json(const Standardizer& s) {
    return json{{"mean", vector_to_json(s.mean)}, {"scale", vector_to_json(s.scale)}};
}

Standardizer standardizer_from_json(const json& doc) {
    Standardizer s{vector_from_json(doc.at("mean")), vector_from_json(doc.at("scale"))};
    if (s.mean.size() != s.scale.size()) {
        throw ShapeError("standardizer mean/scale length mismatch");
    }
    return s;
}

json target_stats_to_json(const TargetStandardizer& s) {
    return json{{"mean", s.mean}, {"scale", s.scale}, {"degenerate", s.degenerate}};
}

TargetStandardizer target_stats_from_json(const json& doc) {
    TargetStandardizer s;
    s.mean = doc.at("mean").get<double>();
    s.scale = doc.at("scale").get<double>();
    s.degenerate = doc.value("degenerate", false);
    return s;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    json doc = model_to_json(ckpt.model);
    doc["input_standardization"] = standardizer_to_json(ckpt.input_stats);
    if (ckpt.target_stats) {
        doc["target_standardization"] = target_stats_to_json(*ckpt.target_stats);
    }
    write_json_atomic(path, doc);
}

Checkpoint load_checkpoint(const fs::path& path) {
    const json doc = read_json(path);
    Checkpoint c;
    c.model = model_from_json(doc);
    if (doc.contains("input_standardization")) {
        c.input_stats = standardizer_from_json(doc.at("input_standardization"));
    } else {
        c.input_stats = Standardizer::identity(c.model.input_dim());
    }
    if (c.input_stats.dim() != c.model.input_dim()) {
        throw ShapeError("checkpoint standardization does not match the model input size");
    }
    if (doc.contains("target_standardization")) {
        c.target_stats = target_stats_from_json(doc.at("target_standardization"));
    }
    return c;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open '" + path.string() + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("cannot parse '" + path.string() + "': " + e.what());
    }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write '" + tmp.string() + "'");
        }
        out << text;
        if (!out) {
            throw Error("write failed for '" + tmp.string() + "'");
        }
    }
    fs::rename(tmp, path);
}

void write_json_atomic(const fs::path& path, const json& doc) {
    write_text_atomic(path, doc.dump(2) + "\n");
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        throw Error("cannot format number");
    }
    return std::string(buf, ptr);
}

std::vector<std::string> coordinate_header(int dim) {
    std::vector<std::string> h;
    for (int j = 0; j < dim; ++j) {
        h.push_back("x_" + std::to_string(j));
    }
    return h;
}

void write_csv(const fs::path& path, const CsvTable& table) {
    std::string text;
    for (std::size_t j = 0; j < table.header.size(); ++j) {
        text += (j ? "," : "") + table.header[j];
    }
    text += "\n";
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) {
            throw ShapeError("csv row width does not match header");
        }
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) {
                text += ",";
            }
            text += format_double(row[j]);
        }
        text += "\n";
    }
    write_text_atomic(path, text);
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open '" + path.string() + "'");
    }
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) {
        throw Error("'" + path.string() + "' is empty");
    }
    table.header = split_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto cells = split_line(line);
        if (cells.size() != table.header.size()) {
            std::ostringstream msg;
            msg << path.string() << ":" << lineno << ": expected " << table.header.size()
                << " columns, got " << cells.size();
            throw Error(msg.str());
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            row.push_back(parse_double(c, path, lineno));
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_points_csv(const fs::path& path, const Matrix& points,
                      const std::vector<std::pair<std::string, Vector>>& extra) {
    CsvTable t;
    t.header = coordinate_header(static_cast<int>(points.cols()));
    for (const auto& [name, col] : extra) {
        if (col.size() != points.rows()) {
            throw ShapeError("csv column '" + name + "' length does not match point count");
        }
        t.header.push_back(name);
    }
    t.rows.reserve(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        std::vector<double> row;
        row.reserve(static_cast<std::size_t>(points.cols()) + extra.size());
        for (Eigen::Index j = 0; j < points.cols(); ++j) {
            row.push_back(points(i, j));
        }
        for (const auto& [name, col] : extra) {
            row.push_back(col[i]);
        }
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

Vector csv_column(const CsvTable& table, const std::string& name) {
    for (std::size_t j = 0; j < table.header.size(); ++j) {
        if (table.header[j] == name) {
            Vector v(static_cast<Eigen::Index>(table.rows.size()));
            for (std::size_t i = 0; i < table.rows.size(); ++i) {
                v[static_cast<Eigen::Index>(i)] = table.rows[i][j];
            }
            return v;
        }
    }
    throw Error("csv has no column '" + name + "'");
}

Matrix read_points_csv(const fs::path& path) {
    const CsvTable t = read_csv(path);
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (t.header[j].rfind("x_", 0) == 0) {
            cols.push_back(j);
        }
    }
    if (cols.empty()) {
        throw Error("'" + path.string() + "' has no x_* columns");
    }
    Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = t.rows[i][cols[k]];
        }
    }
    return m;
}

}  // namespace dido::io
