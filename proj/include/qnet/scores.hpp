#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qnet/phantom.hpp"

namespace qnet {

/// One row of a score table. Scan-level rows use slice_index = -1.
struct ScoreRow {
  std::string subject_id;
  int slice_index = -1;
  Label label = Label::HC;
  double p_hh = 0.0;
  std::string model;
  std::string mode;  // "full" or "cropped"

  bool operator==(const ScoreRow&) const = default;
};

inline constexpr const char* kScoreHeader = "subject_id,slice_index,label,p_hh,model,mode";

/// Probabilities are written with 17 significant digits so a re-read is exact.
void write_scores_csv(const std::vector<ScoreRow>& rows, const std::filesystem::path& file);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& file);
std::string format_scores_csv(const std::vector<ScoreRow>& rows);

/// Rows matching one model (and optionally one mode), in table order.
std::vector<ScoreRow> select_rows(const std::vector<ScoreRow>& rows, const std::string& model,
                                  const std::string& mode = "");

}  // namespace qnet
