#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rkmpc/csv.hpp"
#include "rkmpc/errors.hpp"
#include "rkmpc/koopman.hpp"

namespace rkmpc {

inline constexpr const char* kDriveLogHeader = "t,x,y,theta,v_cmd,delta_cmd";
inline constexpr const char* kDatasetHeader =
    "x,y,theta,x_next,y_next,theta_next,in_v,in_delta";

inline void write_drive_log(std::ostream& out, const DriveLog& log) {
  out << kDriveLogHeader << "\n";
  for (const auto& r : log.records) {
    out << csv::format_double(r.t) << ',' << csv::format_double(r.x) << ','
        << csv::format_double(r.y) << ',' << csv::format_double(r.theta) << ','
        << csv::format_double(r.v_cmd) << ',' << csv::format_double(r.delta_cmd)
        << "\n";
  }
}

inline void write_drive_log_file(const std::string& path, const DriveLog& log) {
  std::ofstream out(path);
  if (!out) throw ParseError("write_drive_log: cannot open '" + path + "'");
  write_drive_log(out, log);
}

inline DriveLog read_drive_log(std::istream& in) {
  DriveLog log;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kDriveLogHeader) {
        throw ParseError("read_drive_log: expected header '" +
                         std::string(kDriveLogHeader) + "' at line " +
                         std::to_string(line_no));
      }
      header_seen = true;
      continue;
    }
    const auto fields = csv::split(line);
    if (fields.size() != 6) {
      throw ParseError("read_drive_log: expected 6 fields at line " +
                       std::to_string(line_no));
    }
    DriveRecord r;
    r.t = csv::to_double(fields[0], "read_drive_log", line_no);
    r.x = csv::to_double(fields[1], "read_drive_log", line_no);
    r.y = csv::to_double(fields[2], "read_drive_log", line_no);
    r.theta = csv::to_double(fields[3], "read_drive_log", line_no);
    r.v_cmd = csv::to_double(fields[4], "read_drive_log", line_no);
    r.delta_cmd = csv::to_double(fields[5], "read_drive_log", line_no);
    log.records.push_back(r);
  }
  if (log.records.size() >= 2) {
    log.period = log.records[1].t - log.records[0].t;
  }
  log.validate();
  return log;
}

inline DriveLog read_drive_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_drive_log: cannot open '" + path + "'");
  return read_drive_log(in);
}

inline void write_dataset(std::ostream& out,
                          const std::vector<ResidualSample>& samples,
                          const std::string& mode) {
  out << "# rkmpc-dataset v1 mode=" << mode << "\n" << kDatasetHeader << "\n";
  for (const auto& s : samples) {
    out << csv::format_double(s.state.x) << ',' << csv::format_double(s.state.y)
        << ',' << csv::format_double(s.state.theta) << ','
        << csv::format_double(s.next.x) << ',' << csv::format_double(s.next.y)
        << ',' << csv::format_double(s.next.theta) << ','
        << csv::format_double(s.du.x()) << ',' << csv::format_double(s.du.y())
        << "\n";
  }
}

inline void write_dataset_file(const std::string& path,
                               const std::vector<ResidualSample>& samples,
                               const std::string& mode) {
  std::ofstream out(path);
  if (!out) throw ParseError("write_dataset: cannot open '" + path + "'");
  write_dataset(out, samples, mode);
}

struct LoadedDataset {
  std::vector<ResidualSample> samples;
  std::string mode = "residual";
};

inline LoadedDataset read_dataset(std::istream& in) {
  LoadedDataset data;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string tag = "mode=";
      const std::size_t pos = line.find(tag);
      if (pos != std::string::npos) data.mode = line.substr(pos + tag.size());
      continue;
    }
    if (!header_seen) {
      if (line != kDatasetHeader) {
        throw ParseError("read_dataset: expected header '" +
                         std::string(kDatasetHeader) + "' at line " +
                         std::to_string(line_no));
      }
      header_seen = true;
      continue;
    }
    const auto fields = csv::split(line);
    if (fields.size() != 8) {
      throw ParseError("read_dataset: expected 8 fields at line " +
                       std::to_string(line_no));
    }
    ResidualSample s;
    s.state.x = csv::to_double(fields[0], "read_dataset", line_no);
    s.state.y = csv::to_double(fields[1], "read_dataset", line_no);
    s.state.theta = csv::to_double(fields[2], "read_dataset", line_no);
    s.next.x = csv::to_double(fields[3], "read_dataset", line_no);
    s.next.y = csv::to_double(fields[4], "read_dataset", line_no);
    s.next.theta = csv::to_double(fields[5], "read_dataset", line_no);
    s.du.x() = csv::to_double(fields[6], "read_dataset", line_no);
    s.du.y() = csv::to_double(fields[7], "read_dataset", line_no);
    data.samples.push_back(s);
  }
  return data;
}

inline LoadedDataset read_dataset_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_dataset: cannot open '" + path + "'");
  return read_dataset(in);
}

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j,
                                        const std::string& name) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw ParseError("load_model: '" + name + "' is not a matrix");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) {
      throw ParseError("load_model: ragged matrix '" + name + "'");
    }
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j,
                                        const std::string& name) {
  if (!j.is_array()) throw ParseError("load_model: '" + name + "' not array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

}  // namespace detail

inline void save_model(std::ostream& out, const KoopmanResidualModel& model) {
  nlohmann::json j;
  j["schema"] = "rkmpc-model";
  j["schema_version"] = 1;
  j["n_lift"] = model.lift_dim();
  j["hidden"] = model.net.hidden();
  j["A"] = detail::matrix_to_json(model.A);
  j["B"] = detail::matrix_to_json(model.B);
  j["C"] = detail::matrix_to_json(model.C);
  j["W1"] = detail::matrix_to_json(model.net.W1);
  j["b1"] = std::vector<double>(model.net.b1.data(),
                                model.net.b1.data() + model.net.b1.size());
  j["W2"] = detail::matrix_to_json(model.net.W2);
  j["b2"] = std::vector<double>(model.net.b2.data(),
                                model.net.b2.data() + model.net.b2.size());
  nlohmann::json meta;
  meta["initial_loss"] = model.meta.initial_loss;
  meta["final_loss"] = model.meta.final_loss;
  meta["best_epoch"] = model.meta.best_epoch;
  meta["epochs_run"] = model.meta.epochs_run;
  meta["sample_count"] = model.meta.sample_count;
  meta["diverged"] = model.meta.diverged;
  meta["output_map_residual"] = model.meta.output_map_residual;
  meta["edmd_objective"] = model.meta.edmd_objective;
  meta["input_mode"] = model.meta.input_mode;
  meta["loss_history"] = model.meta.loss_history;
  j["meta"] = std::move(meta);
  out << j.dump(2) << "\n";
}

inline void save_model_file(const std::string& path,
                            const KoopmanResidualModel& model) {
  std::ofstream out(path);
  if (!out) throw ParseError("save_model: cannot open '" + path + "'");
  save_model(out, model);
}

inline KoopmanResidualModel load_model(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_model: invalid JSON: ") + e.what());
  }
  try {
    if (j.at("schema").get<std::string>() != "rkmpc-model" ||
        j.at("schema_version").get<int>() != 1) {
      throw ParseError("load_model: unknown schema/version");
    }
    KoopmanResidualModel model;
    model.A = detail::matrix_from_json(j.at("A"), "A");
    model.B = detail::matrix_from_json(j.at("B"), "B");
    model.C = detail::matrix_from_json(j.at("C"), "C");
    model.net.W1 = detail::matrix_from_json(j.at("W1"), "W1");
    model.net.b1 = detail::vector_from_json(j.at("b1"), "b1");
    model.net.W2 = detail::matrix_from_json(j.at("W2"), "W2");
    model.net.b2 = detail::vector_from_json(j.at("b2"), "b2");
    const int n_lift = j.at("n_lift").get<int>();
    const int d = 3 + n_lift;
    if (model.net.out() != n_lift || model.A.rows() != d ||
        model.A.cols() != d || model.B.rows() != d || model.B.cols() != 2 ||
        model.C.rows() != 3 || model.C.cols() != d || !model.net.valid()) {
      throw ParseError("load_model: inconsistent dimensions");
    }
    const auto& meta = j.at("meta");
    model.meta.initial_loss = meta.at("initial_loss").get<double>();
    model.meta.final_loss = meta.at("final_loss").get<double>();
    model.meta.best_epoch = meta.at("best_epoch").get<int>();
    model.meta.epochs_run = meta.at("epochs_run").get<int>();
    model.meta.sample_count = meta.at("sample_count").get<std::size_t>();
    model.meta.diverged = meta.at("diverged").get<bool>();
    model.meta.output_map_residual =
        meta.at("output_map_residual").get<double>();
    model.meta.edmd_objective = meta.at("edmd_objective").get<double>();
    model.meta.input_mode = meta.at("input_mode").get<std::string>();
    model.meta.loss_history =
        meta.at("loss_history").get<std::vector<double>>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load_model: missing or mistyped field: ") +
                     e.what());
  }
}

inline KoopmanResidualModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_model: cannot open '" + path + "'");
  return load_model(in);
}

}  // namespace rkmpc
