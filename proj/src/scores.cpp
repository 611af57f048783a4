#include "qnet/scores.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace qnet {

namespace fs = std::filesystem;

std::string format_scores_csv(const std::vector<ScoreRow>& rows) {
  std::string out = std::string(kScoreHeader) + "\n";
  char num[64];
  for (const auto& r : rows) {
    std::snprintf(num, sizeof num, "%.17g", r.p_hh);
    out += r.subject_id + "," + std::to_string(r.slice_index) + "," + to_string(r.label) + "," + num + "," + r.model +
           "," + r.mode + "\n";
  }
  return out;
}

void write_scores_csv(const std::vector<ScoreRow>& rows, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + file.string());
  out << format_scores_csv(rows);
  if (!out) throw FormatError("write failed for " + file.string());
}

std::vector<ScoreRow> read_scores_csv(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != kScoreHeader)
    throw FormatError(file.string() + ": expected header '" + kScoreHeader + "'");
  std::vector<ScoreRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    const std::string where = file.string() + ":" + std::to_string(lineno);
    if (f.size() != 6) throw FormatError(where + ": expected 6 fields");
    ScoreRow r;
    r.subject_id = f[0];
    const auto [p1, e1] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), r.slice_index);
    if (e1 != std::errc{} || p1 != f[1].data() + f[1].size()) throw FormatError(where + ": bad slice_index");
    r.label = label_from_string(f[2]);
    try {
      std::size_t used = 0;
      r.p_hh = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("tail");
    } catch (const std::exception&) {
      throw FormatError(where + ": bad p_hh");
    }
    if (!(r.p_hh >= 0.0 && r.p_hh <= 1.0)) throw ValidationError(where + ": p_hh outside [0,1]");
    r.model = f[4];
    r.mode = f[5];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ScoreRow> select_rows(const std::vector<ScoreRow>& rows, const std::string& model, const std::string& mode) {
  std::vector<ScoreRow> out;
  for (const auto& r : rows)
    if (r.model == model && (mode.empty() || r.mode == mode)) out.push_back(r);
  return out;
}

}  // namespace qnet
