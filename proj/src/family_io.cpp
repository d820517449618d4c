#include <fstream>

#include <json.hpp>

#include "calderon/family.hpp"
#include "calderon/space.hpp"

namespace calderon {

namespace {

std::vector<double> row_major(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  std::size_t t = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[t++] = m(i, j);
  }
  return out;
}

Matrix from_row_major(const std::vector<double>& v, std::size_t n) {
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::size_t t = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = v[t++];
  }
  return m;
}

}  // namespace

void save_family(const OperatorFamily& family, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["version"] = kFamilyFormatVersion;
  manifest["mode"] = to_string(family.mode);
  manifest["provenance"] = to_string(family.provenance);
  manifest["n"] = family.n();
  manifest["delta"] = family.delta;
  manifest["levels"] = family.levels;
  manifest["p_k_min"] = family.p_k_min;
  manifest["p_count"] = family.p.size();
  manifest["params"] = {{"nu", family.params.nu}, {"a", family.params.a}, {"gamma_norm", family.params.gamma_norm}};
  manifest["warnings"] = family.warnings;
  for (std::size_t i = 0; i < family.q.size(); ++i) {
    const auto data = row_major(family.q[i]);
    write_f64_file(dir / ("q_" + std::to_string(i) + ".f64"), data.data(), data.size());
  }
  for (std::size_t i = 0; i < family.p.size(); ++i) {
    const auto data = row_major(family.p[i]);
    write_f64_file(dir / ("p_" + std::to_string(i) + ".f64"), data.data(), data.size());
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw SpaceError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

OperatorFamily load_family(const std::filesystem::path& dir, const Vector& weights) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw SpaceError("missing " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SpaceError(std::string("malformed family manifest: ") + e.what());
  }
  try {
    if (manifest.at("version").get<int>() != kFamilyFormatVersion) {
      throw SpaceError("unsupported family format version " + manifest.at("version").dump());
    }
    OperatorFamily family;
    family.mode = mode_from_string(manifest.at("mode").get<std::string>());
    family.provenance = Provenance::Loaded;
    family.delta = manifest.at("delta").get<double>();
    family.weights = weights;
    const auto n = manifest.at("n").get<std::size_t>();
    if (n != static_cast<std::size_t>(weights.size())) {
      throw SpaceError("family has n = " + std::to_string(n) + " but the space has " +
                       std::to_string(weights.size()) + " points");
    }
    family.levels = manifest.at("levels").get<std::vector<int>>();
    family.p_k_min = manifest.value("p_k_min", 0);
    if (manifest.contains("params")) {
      const auto& p = manifest["params"];
      family.params.nu = p.value("nu", 1.0);
      family.params.a = p.value("a", 1.0);
      family.params.gamma_norm = p.value("gamma_norm", 1.0);
    }
    for (std::size_t i = 0; i < family.levels.size(); ++i) {
      const auto path = dir / ("q_" + std::to_string(i) + ".f64");
      if (!std::filesystem::exists(path)) throw SpaceError("missing level file " + path.string());
      family.q.push_back(from_row_major(read_f64_file(path, n * n), n));
    }
    const auto p_count = manifest.value("p_count", std::size_t{0});
    for (std::size_t i = 0; i < p_count; ++i) {
      const auto path = dir / ("p_" + std::to_string(i) + ".f64");
      if (!std::filesystem::exists(path)) throw SpaceError("missing ladder file " + path.string());
      family.p.push_back(from_row_major(read_f64_file(path, n * n), n));
    }
    // Stray level files mean the manifest and payload disagree.
    std::size_t q_files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("q_", 0) == 0 && entry.path().extension() == ".f64") ++q_files;
    }
    if (q_files != family.levels.size()) {
      throw SpaceError("manifest lists " + std::to_string(family.levels.size()) + " levels but " +
                       std::to_string(q_files) + " level files exist");
    }
    return family;
  } catch (const nlohmann::json::exception& e) {
    throw SpaceError(std::string("malformed family manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SpaceError(e.what());
  }
}

}  // namespace calderon
