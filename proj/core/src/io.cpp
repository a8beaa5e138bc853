#include "attnflow/io.hpp"

#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace attnflow {

using nlohmann::json;

std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& s) {
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error("csv: bad number '" + s + "'");
  return x;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string idx(int i) { return std::to_string(i + 1); }

json matrix_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw std::runtime_error("params json: matrix has wrong row count");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw std::runtime_error("params json: matrix has wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

std::vector<std::string> trajectory_csv_columns(const Trajectory& traj) {
  std::vector<std::string> cols{"t", "loss"};
  const bool merged = traj.kind == ModelKind::merged;
  for (int i = 0; i < traj.heads; ++i) {
    cols.push_back("v_" + idx(i));
    cols.push_back((merged ? "u_" : "k_") + idx(i));
    if (!merged) cols.push_back("q_" + idx(i));
  }
  cols.emplace_back("conservation_drift");
  for (int i = 0; i < traj.heads; ++i)
    for (int d = 0; d < traj.dim; ++d) cols.push_back("align_" + idx(i) + "_" + idx(d));
  for (int r = 0; r < traj.dim; ++r)
    for (int c = 0; c < traj.dim; ++c) cols.push_back("m_" + idx(r) + "_" + idx(c));
  return cols;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  const bool merged = traj.kind == ModelKind::merged;
  out << "# attnflow-trajectory schema=" << kSchemaVersion << " kind=" << (merged ? "merged" : "separate")
      << " D=" << traj.dim << " H=" << traj.heads << " R=" << traj.rank << " tau=" << format_double(traj.tau)
      << " lambda_max=" << format_double(traj.lambda_max) << " steps=" << traj.steps
      << " max_loss_increase=" << format_double(traj.max_loss_increase) << '\n';
  const auto cols = trajectory_csv_columns(traj);
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out << format_double(traj.times[k] / traj.tau) << ',' << format_double(traj.losses[k]);
    for (const auto& hn : traj.head_norms[k]) {
      out << ',' << format_double(hn.value) << ',' << format_double(hn.key);
      if (!merged) out << ',' << format_double(hn.query);
    }
    out << ',' << format_double(traj.conservation_drift[k]);
    const Mat& a = traj.alignments[k];
    for (int i = 0; i < traj.heads; ++i)
      for (int d = 0; d < traj.dim; ++d) out << ',' << format_double(a(i, d));
    const Mat& m = traj.effective_matrices[k];
    for (int r = 0; r < traj.dim; ++r)
      for (int c = 0; c < traj.dim; ++c) out << ',' << format_double(m(r, c));
    out << '\n';
  }
}

Trajectory read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# attnflow-trajectory", 0) != 0)
    throw std::runtime_error("csv: missing attnflow-trajectory metadata line");
  std::map<std::string, std::string> meta;
  for (const auto& tok : split(line.substr(2), ' ')) {
    const auto eq = tok.find('=');
    if (eq != std::string::npos) meta[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    const auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error(std::string("csv: metadata lacks ") + key);
    return it->second;
  };
  if (std::stoi(need("schema")) != kSchemaVersion) throw std::runtime_error("csv: unsupported schema");

  Trajectory traj;
  traj.kind = need("kind") == "merged" ? ModelKind::merged : ModelKind::separate;
  traj.dim = std::stoi(need("D"));
  traj.heads = std::stoi(need("H"));
  traj.rank = std::stoi(need("R"));
  traj.tau = parse_double(need("tau"));
  traj.lambda_max = parse_double(need("lambda_max"));
  traj.steps = std::stol(need("steps"));
  traj.max_loss_increase = parse_double(need("max_loss_increase"));

  if (!std::getline(in, line)) throw std::runtime_error("csv: missing header");
  const auto expected = trajectory_csv_columns(traj);
  if (split(line, ',') != expected) throw std::runtime_error("csv: header does not match metadata");

  const bool merged = traj.kind == ModelKind::merged;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != expected.size()) throw std::runtime_error("csv: row has wrong field count");
    std::size_t c = 0;
    traj.times.push_back(parse_double(f[c++]) * traj.tau);
    traj.losses.push_back(parse_double(f[c++]));
    std::vector<HeadNorms> norms(static_cast<std::size_t>(traj.heads));
    for (auto& hn : norms) {
      hn.value = parse_double(f[c++]);
      hn.key = parse_double(f[c++]);
      if (!merged) hn.query = parse_double(f[c++]);
    }
    traj.head_norms.push_back(std::move(norms));
    traj.conservation_drift.push_back(parse_double(f[c++]));
    Mat a(traj.heads, traj.dim);
    for (int i = 0; i < traj.heads; ++i)
      for (int d = 0; d < traj.dim; ++d) a(i, d) = parse_double(f[c++]);
    traj.alignments.push_back(std::move(a));
    Mat m(traj.dim, traj.dim);
    for (int r = 0; r < traj.dim; ++r)
      for (int col = 0; col < traj.dim; ++col) m(r, col) = parse_double(f[c++]);
    traj.effective_matrices.push_back(std::move(m));
  }
  return traj;
}

std::string params_to_json(const Params& p, int indent) {
  json j;
  j["D"] = dim_of(p);
  j["H"] = heads_of(p);
  j["R"] = rank_of(p);
  if (const auto* m = std::get_if<MergedParams>(&p)) {
    j["model_kind"] = "merged";
    j["values"] = std::vector<double>(m->values().begin(), m->values().end());
    json kq = json::array();
    for (int i = 0; i < m->heads(); ++i) kq.push_back(matrix_json(m->kq(i)));
    j["kq"] = std::move(kq);
  } else {
    const auto& s = std::get<SeparateParams>(p);
    j["model_kind"] = "separate";
    j["values"] = std::vector<double>(s.values().begin(), s.values().end());
    json keys = json::array();
    json queries = json::array();
    for (int i = 0; i < s.heads(); ++i) {
      keys.push_back(matrix_json(s.keys(i)));
      queries.push_back(matrix_json(s.queries(i)));
    }
    j["keys"] = std::move(keys);
    j["queries"] = std::move(queries);
  }
  return j.dump(indent);
}

Params params_from_json(const std::string& text) {
  const json j = json::parse(text);
  const int d = j.at("D").get<int>();
  const int h = j.at("H").get<int>();
  const auto values = j.at("values").get<std::vector<double>>();
  if (static_cast<int>(values.size()) != h) throw std::runtime_error("params json: values length != H");
  const std::string kind = j.at("model_kind").get<std::string>();
  if (kind == "merged") {
    MergedParams p(d, h);
    for (int i = 0; i < h; ++i) {
      p.value(i) = values[static_cast<std::size_t>(i)];
      p.kq(i) = matrix_from_json(j.at("kq").at(static_cast<std::size_t>(i)), d, d);
    }
    return p;
  }
  if (kind != "separate") throw std::runtime_error("params json: unknown model_kind '" + kind + "'");
  const int r = j.at("R").get<int>();
  SeparateParams p(d, h, r);
  for (int i = 0; i < h; ++i) {
    p.value(i) = values[static_cast<std::size_t>(i)];
    p.keys(i) = matrix_from_json(j.at("keys").at(static_cast<std::size_t>(i)), d, r);
    p.queries(i) = matrix_from_json(j.at("queries").at(static_cast<std::size_t>(i)), d, r);
  }
  return p;
}

std::string catalog_to_json(const std::vector<FixedPoint>& catalog, int indent) {
  json out = json::array();
  for (const auto& fp : catalog) {
    std::vector<int> one_based;
    for (int d : fp.index_set) one_based.push_back(d + 1);
    out.push_back({{"indices", one_based}, {"loss", fp.loss}, {"target_matrix", matrix_json(fp.target_matrix)}});
  }
  return out.dump(indent);
}

}  // namespace attnflow
