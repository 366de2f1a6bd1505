#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <vector>

#include "subkal/errors.hpp"
#include "subkal/harness.hpp"

namespace subkal {

namespace {

Json summary_to_json(const RunSummary& s) {
  Json j;
  j["name"] = s.name;
  j["config_hash"] = s.config_hash;
  j["filter"] = s.filter;
  j["basis"] = s.basis;
  j["parameterization"] = s.parameterization;
  j["r"] = s.r;
  j["n_ens"] = s.n_ens;
  j["beta"] = s.beta;
  j["localization_cutoff"] = s.localization_cutoff;
  j["k_smooth"] = s.k_smooth;
  j["mean_rmse"] = s.mean_rmse;
  j["diverged"] = s.diverged;
  j["wall_ms"] = s.wall_ms;
  j["model_applies"] = s.model_applies;
  j["obs_applies"] = s.obs_applies;
  j["steps_run"] = s.steps_run;
  j["clim_std"] = s.clim_std;
  return j;
}

RunSummary summary_from_json(const Json& j) {
  RunSummary s;
  s.name = j.value("name", "");
  s.config_hash = j.value("config_hash", "");
  s.filter = j.value("filter", "");
  s.basis = j.value("basis", "");
  s.parameterization = j.value("parameterization", "");
  s.r = j.value("r", 0);
  s.n_ens = j.value("n_ens", 0);
  s.beta = j.value("beta", 0.0);
  s.localization_cutoff = j.value("localization_cutoff", 0.0);
  s.k_smooth = j.value("k_smooth", 0);
  s.mean_rmse = j.contains("mean_rmse") && j["mean_rmse"].is_number()
                    ? j["mean_rmse"].get<double>()
                    : std::nan("");
  s.diverged = j.value("diverged", false);
  s.wall_ms = j.value("wall_ms", 0.0);
  s.model_applies = j.value("model_applies", std::uint64_t(0));
  s.obs_applies = j.value("obs_applies", std::uint64_t(0));
  s.steps_run = j.value("steps_run", 0);
  s.clim_std = j.value("clim_std", 0.0);
  return s;
}

}  // namespace

void save_run_record(const RunRecord& record, const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  const std::string stem = cfg.output_dir + "/run_" + record.summary.config_hash;

  std::ostringstream lines;
  for (const StepRecord& s : record.steps) {
    Json j;
    j["step"] = s.step;
    if (std::isfinite(s.rmse))
      j["rmse"] = s.rmse;
    else
      j["rmse"] = nullptr;
    j["mean_hash"] = s.mean_hash;
    j["ok"] = s.ok;
    if (s.mean.size() > 0) {
      Json arr = Json::array();
      for (int i = 0; i < s.mean.size(); ++i) arr.push_back(s.mean(i));
      j["mean"] = std::move(arr);
    }
    lines << j.dump() << '\n';
  }
  write_file_atomic(stem + ".jsonl", lines.str());
  write_file_atomic(stem + ".summary.json", summary_to_json(record.summary).dump(2));
}

std::string summary_csv_header() {
  return "filter,basis,r,n_ens,beta,mean_rmse,diverged,wall_ms,model_applies";
}

std::string summary_csv_line(const RunSummary& s) {
  std::ostringstream out;
  out << s.filter << ',' << s.basis << ',' << s.r << ',' << s.n_ens << ','
      << format_double(s.beta) << ',' << format_double(s.mean_rmse) << ','
      << (s.diverged ? "true" : "false") << ',' << format_double(s.wall_ms) << ','
      << s.model_applies;
  return out.str();
}

std::vector<std::string> write_reports(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir)) throw IoError("report: no such directory: " + dir);

  std::vector<RunSummary> summaries;
  std::vector<Json> bases;
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("run_", 0) == 0 && name.size() > 13 &&
        name.substr(name.size() - 13) == ".summary.json")
      summaries.push_back(summary_from_json(Json::parse(read_file(entry.path().string()))));
    else if (name.rfind("basis_", 0) == 0 && entry.path().extension() == ".json")
      bases.push_back(Json::parse(read_file(entry.path().string())));
  }
  std::sort(summaries.begin(), summaries.end(),
            [](const RunSummary& a, const RunSummary& b) {
              return a.config_hash < b.config_hash;
            });
  std::sort(bases.begin(), bases.end(), [](const Json& a, const Json& b) {
    return a.value("config_hash", "") < b.value("config_hash", "");
  });

  std::vector<std::string> written;

  {
    std::ostringstream csv;
    csv << summary_csv_header() << '\n';
    for (const RunSummary& s : summaries) csv << summary_csv_line(s) << '\n';
    const std::string path = dir + "/summary.csv";
    write_file_atomic(path, csv.str());
    written.push_back(path);
  }

  {
    std::ostringstream csv;
    csv << "k_smooth,source,r,cumulative_energy\n";
    for (const Json& b : bases) {
      const int k = b.value("k_smooth", 0);
      const std::string source = b.value("source", "");
      const auto& energy = b["cumulative_energy"];
      for (std::size_t i = 0; i < energy.size(); ++i)
        csv << k << ',' << source << ',' << (i + 1) << ','
            << format_double(energy[i].get<double>()) << '\n';
    }
    const std::string path = dir + "/fig2_energy.csv";
    write_file_atomic(path, csv.str());
    written.push_back(path);
  }

  {
    std::ostringstream csv;
    csv << "filter,basis,parameterization,k_smooth,r,mean_rmse,diverged\n";
    for (const RunSummary& s : summaries)
      if (s.filter == "ekf" || s.filter == "reduced_ekf")
        csv << s.filter << ',' << s.basis << ',' << s.parameterization << ','
            << s.k_smooth << ',' << s.r << ',' << format_double(s.mean_rmse) << ','
            << (s.diverged ? "true" : "false") << '\n';
    const std::string path = dir + "/fig5_rmse_vs_r.csv";
    write_file_atomic(path, csv.str());
    written.push_back(path);
  }

  {
    std::ostringstream csv;
    csv << "filter,r,n_ens,localization_cutoff,mean_rmse,diverged\n";
    for (const RunSummary& s : summaries)
      if (s.filter == "enkf" || s.filter == "reduced_enkf")
        csv << s.filter << ',' << s.r << ',' << s.n_ens << ','
            << format_double(s.localization_cutoff) << ','
            << format_double(s.mean_rmse) << ',' << (s.diverged ? "true" : "false")
            << '\n';
    const std::string path = dir + "/fig7_rmse_vs_nens.csv";
    write_file_atomic(path, csv.str());
    written.push_back(path);
  }

  return written;
}

}  // namespace subkal
