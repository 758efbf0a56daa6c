#pragma once

#include "dido/nn.hpp"
#include "dido/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dido::io {

using json = nlohmann::json;

json model_to_json(const nn::MlpModel& model);
nn::MlpModel model_from_json(const json& doc);

json standardizer_to_json(const Standardizer& s);
Standardizer standardizer_from_json(const json& doc);
json target_stats_to_json(const TargetStandardizer& s);
TargetStandardizer target_stats_from_json(const json& doc);

/// A model plus the coordinate maps it was trained under.
struct Checkpoint {
    nn::MlpModel model;
    Standardizer input_stats;
    std::optional<TargetStandardizer> target_stats;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

json read_json(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it into place.
void write_json_atomic(const std::filesystem::path& path, const json& doc);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

/// Minimal CSV table of doubles with a header row.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

std::vector<std::string> coordinate_header(int dim);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

/// Points (one per row) with header x_0..x_{d-1} followed by `extra` columns.
void write_points_csv(const std::filesystem::path& path, const Matrix& points,
                      const std::vector<std::pair<std::string, Vector>>& extra = {});
/// Reads the x_* columns of a CSV back into a matrix.
Matrix read_points_csv(const std::filesystem::path& path);
/// Column by name; throws if absent.
Vector csv_column(const CsvTable& table, const std::string& name);

}  // namespace dido::io
