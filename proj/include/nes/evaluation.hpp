#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace nes {

enum class Condition { Pre, Post };

Condition parse_condition(const std::string& name);
std::string to_string(Condition c);

struct Prediction {
  std::string chunk_id;
  std::string predicted;
  std::string truth;
};

struct PredictionSet {
  std::vector<Prediction> entries;
  Condition condition = Condition::Pre;
  int run_index = 0;
};

struct PairedTable {
  std::size_t a = 0;  // both correct
  std::size_t b = 0;  // pre correct, post wrong
  std::size_t c = 0;  // pre wrong, post correct
  std::size_t d = 0;  // both wrong

  std::size_t total() const noexcept { return a + b + c + d; }
  PairedTable& operator+=(const PairedTable& o) noexcept {
    a += o.a, b += o.b, c += o.c, d += o.d;
    return *this;
  }
};

struct McNemarResult {
  double chi_square = 0.0;
  double p_value = 1.0;
  double exact_p = 1.0;
};

/// Labels compared after trimming and upper-casing.
bool label_matches(const std::string& predicted, const std::string& truth);

double accuracy(const PredictionSet& preds);

/// Chi-square without continuity correction, its df = 1 upper tail, and the
/// two-sided exact binomial p-value.
McNemarResult mcnemar(const PairedTable& table);

/// Throws ValidationError listing the ids present in only one of the sets.
PairedTable pair_predictions(const PredictionSet& pre, const PredictionSet& post);

/// Reads a prediction CSV (chunk_id,predicted,truth,condition,run), one set
/// per (condition, run), ordered by condition then run.
std::vector<PredictionSet> load_predictions(const std::filesystem::path& path);
std::vector<PredictionSet> parse_predictions(const std::string& csv);

/// Accuracies per run and condition, pooled paired table and statistics.
nlohmann::json evaluation_report(const std::vector<PredictionSet>& sets);

} // namespace nes
