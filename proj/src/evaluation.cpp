#include "nes/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/math/distributions/binomial.hpp>
#include <fmt/format.h>

#include "nes/error.hpp"
#include "nes/text.hpp"

namespace nes {

using nlohmann::json;

Condition parse_condition(const std::string& name) {
  const auto n = text::trim(name);
  if (text::iequals(n, "pre")) return Condition::Pre;
  if (text::iequals(n, "post")) return Condition::Post;
  throw ParseError(fmt::format("unknown condition '{}' (expected pre or post)", name));
}

std::string to_string(Condition c) { return c == Condition::Pre ? "pre" : "post"; }

bool label_matches(const std::string& predicted, const std::string& truth) {
  return text::to_upper(text::trim(predicted)) == text::to_upper(text::trim(truth));
}

double accuracy(const PredictionSet& preds) {
  if (preds.entries.empty()) throw ValidationError("accuracy of an empty prediction set");
  const auto hits = std::count_if(preds.entries.begin(), preds.entries.end(),
                                  [](const Prediction& p) { return label_matches(p.predicted, p.truth); });
  return static_cast<double>(hits) / static_cast<double>(preds.entries.size());
}

McNemarResult mcnemar(const PairedTable& t) {
  if (t.b + t.c == 0) throw DomainError("McNemar's test is undefined when both discordant cells are zero");
  const double b = static_cast<double>(t.b), c = static_cast<double>(t.c);
  McNemarResult r;
  r.chi_square = (b - c) * (b - c) / (b + c);
  r.p_value = std::erfc(std::sqrt(r.chi_square / 2.0));
  const boost::math::binomial_distribution<double> dist(b + c, 0.5);
  r.exact_p = std::min(1.0, 2.0 * boost::math::cdf(dist, std::min(b, c)));
  return r;
}

namespace {

std::map<std::string, bool> correctness(const PredictionSet& s) {
  std::map<std::string, bool> out;
  for (const auto& p : s.entries)
    if (!out.emplace(p.chunk_id, label_matches(p.predicted, p.truth)).second)
      throw ValidationError(fmt::format("chunk id '{}' appears twice in one prediction set", p.chunk_id));
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

} // namespace

PairedTable pair_predictions(const PredictionSet& pre, const PredictionSet& post) {
  const auto a = correctness(pre);
  const auto b = correctness(post);
  std::vector<std::string> only;
  for (const auto& [id, ok] : a)
    if (!b.contains(id)) only.push_back(id);
  for (const auto& [id, ok] : b)
    if (!a.contains(id)) only.push_back(id);
  if (!only.empty())
    throw ValidationError(fmt::format("prediction sets cover different chunks; unmatched ids: {}", text::join(only, ", ")));
  PairedTable t;
  for (const auto& [id, pre_ok] : a) {
    const bool post_ok = b.at(id);
    if (pre_ok && post_ok) ++t.a;
    else if (pre_ok) ++t.b;
    else if (post_ok) ++t.c;
    else ++t.d;
  }
  return t;
}

std::vector<PredictionSet> parse_predictions(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("prediction CSV is empty");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[text::trim(header[i])] = i;
  for (const char* name : {"chunk_id", "predicted", "truth", "condition", "run"})
    if (!col.contains(name)) throw ParseError(fmt::format("prediction CSV lacks column '{}'", name));

  std::map<std::pair<Condition, int>, PredictionSet> sets;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw ParseError(fmt::format("prediction CSV line {}: wrong field count", lineno));
    int run;
    try {
      run = std::stoi(f[col["run"]]);
    } catch (const std::logic_error&) {
      throw ParseError(fmt::format("prediction CSV line {}: run is not an integer", lineno));
    }
    const auto cond = parse_condition(f[col["condition"]]);
    auto& set = sets[{cond, run}];
    set.condition = cond;
    set.run_index = run;
    set.entries.push_back({text::trim(f[col["chunk_id"]]), f[col["predicted"]], f[col["truth"]]});
  }
  std::vector<PredictionSet> out;
  for (auto& [key, s] : sets) out.push_back(std::move(s));
  return out;
}

std::vector<PredictionSet> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open prediction file '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_predictions(ss.str());
}

json evaluation_report(const std::vector<PredictionSet>& sets) {
  std::map<int, const PredictionSet*> pre, post;
  json acc{{"pre", json::object()}, {"post", json::object()}};
  for (const auto& s : sets) {
    auto& slot = s.condition == Condition::Pre ? pre : post;
    if (!slot.emplace(s.run_index, &s).second)
      throw ValidationError(fmt::format("duplicate {} run {}", to_string(s.condition), s.run_index));
  }
  for (auto [name, runs] : {std::pair{"pre", &pre}, std::pair{"post", &post}}) {
    std::vector<double> values;
    json per_run = json::object();
    for (const auto& [run, s] : *runs) {
      values.push_back(accuracy(*s));
      per_run[std::to_string(run)] = values.back();
    }
    json entry{{"runs", per_run}};
    if (!values.empty()) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      entry["mean"] = mean;
      if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        entry["sd"] = std::sqrt(ss / static_cast<double>(values.size() - 1));
      }
    }
    acc[name] = entry;
  }

  json report{{"accuracy", acc}};
  PairedTable pooled;
  json per_run = json::object();
  bool any = false;
  for (const auto& [run, p] : pre) {
    auto it = post.find(run);
    if (it == post.end()) continue;
    const auto t = pair_predictions(*p, *it->second);
    per_run[std::to_string(run)] = {{"a", t.a}, {"b", t.b}, {"c", t.c}, {"d", t.d}};
    pooled += t;
    any = true;
  }
  if (any) {
    report["paired"] = {{"a", pooled.a}, {"b", pooled.b}, {"c", pooled.c}, {"d", pooled.d},
                        {"total", pooled.total()}, {"runs", per_run}};
    if (pooled.b + pooled.c > 0) {
      const auto m = mcnemar(pooled);
      report["mcnemar"] = {{"chi_square", m.chi_square}, {"p_value", m.p_value}, {"exact_p", m.exact_p}};
    } else {
      report["mcnemar"] = nullptr;
    }
  }
  return report;
}

} // namespace nes
