#include <openssl/evp.h>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include "internal.hpp"

namespace anholo::app {

fs::path output_root() {
  const char* env = std::getenv("ANHOLOFLOW_OUT_ROOT");
  if (env && *env) return fs::path(env);
  return fs::current_path();
}

// ---- checksums ---------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& file) { return sha256_hex(read_file(file)); }

// ---- files -------------------------------------------------------------------

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path& file, const std::string& content) {
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, file);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void RunDir::write(const std::string& name, const std::string& content) {
  write_atomic(dir_ / name, content);
  files_.push_back(name);
}

void RunDir::write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

void RunDir::write_csv(const std::string& name, const Table& t) { write(name, t.csv()); }

// ---- tables ------------------------------------------------------------------

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void Table::add(std::string name, Field values) {
  if (!columns.empty() && values.size() != columns.front().size())
    throw std::logic_error("table column " + name + " has the wrong length");
  header.push_back(std::move(name));
  columns.push_back(std::move(values));
}

namespace {

std::string join_rows(const Table& t, const std::string& head_prefix, char sep) {
  std::string s = head_prefix;
  for (std::size_t c = 0; c < t.header.size(); ++c) s += (c ? std::string(1, sep) : "") + t.header[c];
  s += '\n';
  const std::size_t rows = t.columns.empty() ? 0 : t.columns.front().size();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (c) s += sep;
      s += format_number(t.columns[c][r]);
    }
    s += '\n';
  }
  return s;
}

}  // namespace

std::string Table::csv() const { return join_rows(*this, "", ','); }

std::string Table::gnuplot() const { return join_rows(*this, "# ", ' '); }

Table read_csv(const fs::path& file) {
  std::istringstream in(read_file(file));
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw IntegrityError(file.string() + ": empty CSV");
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.header.push_back(cell);
  }
  t.columns.assign(t.header.size(), {});
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    std::size_t col = 0, start = 0;
    while (true) {
      const std::size_t end = line.find(',', start);
      const std::string cell = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      if (col >= t.header.size()) throw IntegrityError(file.string() + ": too many cells in row " + std::to_string(row));
      double v = 0.0;
      const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (r.ec != std::errc() || r.ptr != cell.data() + cell.size())
        throw IntegrityError(file.string() + ": bad number '" + cell + "' in row " + std::to_string(row));
      t.columns[col++].push_back(v);
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (col != t.header.size()) throw IntegrityError(file.string() + ": short row " + std::to_string(row));
  }
  return t;
}

Table node_table(const GridChart& c) {
  Table t;
  for (int a = 0; a < 4; ++a) {
    Field x(c.size());
    for (std::size_t p = 0; p < c.size(); ++p) x[p] = c.axis(a).coord(c.index_along(p, a));
    t.add(c.axis(a).name, std::move(x));
  }
  return t;
}

namespace {
const char* kMetricColumns[10] = {"g11", "g12", "g22", "h33", "h34", "h44", "N3_1", "N3_2", "N4_1", "N4_2"};
}

Table metric_table(const DMetric& m) {
  Table t = node_table(m.chart);
  for (std::size_t k = 0; k < 3; ++k) t.add(kMetricColumns[k], m.g[k]);
  for (std::size_t k = 0; k < 3; ++k) t.add(kMetricColumns[3 + k], m.h[k]);
  for (std::size_t k = 0; k < 4; ++k) t.add(kMetricColumns[6 + k], m.n[k]);
  return t;
}

DMetric metric_from_table(const Table& t, const GridChart& c, Signature sig) {
  if (t.header.size() != 14) throw IntegrityError("metric table: expected 14 columns");
  for (std::size_t k = 0; k < 10; ++k)
    if (t.header[4 + k] != kMetricColumns[k]) throw IntegrityError("metric table: unexpected column " + t.header[4 + k]);
  if (t.columns[0].size() != c.size()) throw IntegrityError("metric table: row count does not match the chart");
  const Table nodes = node_table(c);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t p = 0; p < c.size(); ++p)
      if (std::abs(nodes.columns[a][p] - t.columns[a][p]) > 1e-12 * (1.0 + std::abs(nodes.columns[a][p])))
        throw IntegrityError("metric table: node coordinates do not match the chart");
  DMetric m = DMetric::zeros(c);
  m.signature = sig;
  for (std::size_t k = 0; k < 3; ++k) {
    m.g[k] = t.columns[4 + k];
    m.h[k] = t.columns[7 + k];
  }
  for (std::size_t k = 0; k < 4; ++k) m.n[k] = t.columns[10 + k];
  m.validate();
  return m;
}

// ---- manifests ---------------------------------------------------------------

ManifestCheck verify_run(const fs::path& dir) {
  ManifestCheck mc;
  json man;
  try {
    man = json::parse(read_file(dir / "manifest.json"));
    mc.command = man.at("command").get<std::string>();
    mc.status = man.at("status").get<std::string>();
    mc.config_sha256 = man.at("config_sha256").get<std::string>();
    mc.seed = man.at("seed").get<std::uint64_t>();
    for (const auto& f : man.at("files")) mc.files.push_back(f.at("name").get<std::string>());
  } catch (const std::exception& e) {
    mc.failures.push_back("manifest.json: " + std::string(e.what()));
    return mc;
  }
  mc.readable = true;
  mc.complete = mc.status == "complete";
  for (const auto& f : man.at("files")) {
    const std::string name = f.at("name").get<std::string>();
    const fs::path p = dir / name;
    if (name.find('/') != std::string::npos || !fs::is_regular_file(p)) {
      mc.failures.push_back(name + ": missing");
      continue;
    }
    if (sha256_file(p) != f.at("sha256").get<std::string>()) mc.failures.push_back(name + ": checksum mismatch");
  }
  return mc;
}

}  // namespace anholo::app
