#include "subkal/io.hpp"

#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "subkal/errors.hpp"

namespace subkal {

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string hash_vector(const Vec& v) {
  return hash_hex(fnv1a64(v.data(), sizeof(double) * v.size()));
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(contents.data(), std::streamsize(contents.size()));
    if (!out) throw IoError("short write: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path + " (" + ec.message() + ")");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

void save_snapshots(const std::string& path, const SnapshotSet& snaps) {
  std::ostringstream out;
  out << "dim=" << snaps.dim() << ", n=" << snaps.count() << ", mesh=ring\n";
  for (int c = 0; c < snaps.count(); ++c) {
    for (int i = 0; i < snaps.dim(); ++i) {
      if (i) out << ',';
      out << format_double(snaps.snapshots(i, c));
    }
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

SnapshotSet load_snapshots(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string header;
  if (!std::getline(in, header)) throw IoError("empty snapshot file: " + path);
  int d = 0, n = 0;
  char mesh[16] = {0};
  if (std::sscanf(header.c_str(), "dim=%d, n=%d, mesh=%15s", &d, &n, mesh) != 3)
    throw IoError("bad snapshot header: " + header);
  if (std::string(mesh) != "ring") throw IoError("unsupported mesh tag: " + std::string(mesh));
  SnapshotSet snaps;
  snaps.snapshots = Mat(d, n);
  snaps.mesh = RingMesh{d, 1.0};
  std::string line;
  for (int c = 0; c < n; ++c) {
    if (!std::getline(in, line)) throw IoError("snapshot file truncated: " + path);
    const char* ptr = line.c_str();
    const char* end = ptr + line.size();
    for (int i = 0; i < d; ++i) {
      double value = 0.0;
      auto [next, ec] = std::from_chars(ptr, end, value);
      if (ec != std::errc()) throw IoError("bad snapshot value in: " + path);
      snaps.snapshots(i, c) = value;
      ptr = next;
      if (i + 1 < d) {
        if (ptr == end || *ptr != ',') throw IoError("missing comma in: " + path);
        ++ptr;
      }
    }
  }
  return snaps;
}

namespace {

nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vec vec_from_json(const nlohmann::json& arr) {
  Vec v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v(int(i)) = arr[i].get<double>();
  return v;
}

}  // namespace

void save_basis(const std::string& path, const SubspaceBasis& basis,
                const Vec& energy_curve, int k_smooth,
                const std::string& config_hash) {
  nlohmann::json j;
  j["format"] = "subkal-basis-v1";
  j["source"] = to_string(basis.source);
  j["dim"] = basis.dim();
  j["rank"] = basis.rank();
  j["k_smooth"] = k_smooth;
  j["config_hash"] = config_hash;
  j["eigenvalues"] = vec_to_json(basis.eigenvalues);
  j["offset"] = vec_to_json(basis.offset);
  j["zero_columns"] = basis.zero_columns;
  j["cumulative_energy"] = vec_to_json(energy_curve);
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < basis.dim(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < basis.rank(); ++c) row.push_back(basis.P(i, c));
    rows.push_back(std::move(row));
  }
  j["p"] = std::move(rows);
  write_file_atomic(path, j.dump());
}

SubspaceBasis load_basis(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path));
  if (j.value("format", "") != "subkal-basis-v1")
    throw IoError("not a basis file: " + path);
  SubspaceBasis basis;
  basis.source = basis_source_from_string(j["source"].get<std::string>());
  const int d = j["dim"].get<int>();
  const int r = j["rank"].get<int>();
  basis.eigenvalues = vec_from_json(j["eigenvalues"]);
  basis.offset = vec_from_json(j["offset"]);
  basis.zero_columns = j.value("zero_columns", 0);
  basis.P = Mat(d, r);
  const auto& rows = j["p"];
  if (int(rows.size()) != d) throw IoError("basis row count mismatch: " + path);
  for (int i = 0; i < d; ++i)
    for (int c = 0; c < r; ++c) basis.P(i, c) = rows[i][c].get<double>();
  return basis;
}

namespace {

constexpr char kTruthMagic[8] = {'S', 'K', 'T', 'R', 'U', 'T', 'H', '1'};

template <typename T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw IoError("truth file truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void save_truth(const std::string& path, const TruthData& data) {
  std::string buf;
  buf.append(kTruthMagic, sizeof(kTruthMagic));
  put<std::int32_t>(buf, std::int32_t(data.truth.rows()));
  put<std::int32_t>(buf, std::int32_t(data.truth.cols()));
  put<std::int32_t>(buf, std::int32_t(data.obs.rows()));
  put<std::int32_t>(buf, std::int32_t(data.obs_indices.size()));
  put<double>(buf, data.clim_std);
  for (int idx : data.obs_indices) put<std::int32_t>(buf, std::int32_t(idx));
  buf.append(reinterpret_cast<const char*>(data.truth.data()),
             sizeof(double) * data.truth.size());
  buf.append(reinterpret_cast<const char*>(data.obs.data()),
             sizeof(double) * data.obs.size());
  write_file_atomic(path, buf);
}

TruthData load_truth(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < sizeof(kTruthMagic) ||
      std::memcmp(buf.data(), kTruthMagic, sizeof(kTruthMagic)) != 0)
    throw IoError("not a truth file: " + path);
  std::size_t pos = sizeof(kTruthMagic);
  TruthData data;
  const int d = get<std::int32_t>(buf, pos);
  const int n = get<std::int32_t>(buf, pos);
  const int m = get<std::int32_t>(buf, pos);
  const int n_idx = get<std::int32_t>(buf, pos);
  data.clim_std = get<double>(buf, pos);
  data.obs_indices.resize(n_idx);
  for (int i = 0; i < n_idx; ++i) data.obs_indices[i] = get<std::int32_t>(buf, pos);
  data.truth = Mat(d, n);
  data.obs = Mat(m, n);
  if (pos + sizeof(double) * (std::size_t(d) * n + std::size_t(m) * n) > buf.size())
    throw IoError("truth file truncated: " + path);
  std::memcpy(data.truth.data(), buf.data() + pos, sizeof(double) * d * n);
  pos += sizeof(double) * d * n;
  std::memcpy(data.obs.data(), buf.data() + pos, sizeof(double) * m * n);
  return data;
}

}  // namespace subkal
