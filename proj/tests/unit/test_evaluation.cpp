#include <catch2/catch_amalgamated.hpp>

#include <fmt/format.h>

#include <boost/math/distributions/binomial.hpp>

#include "nes/error.hpp"
#include "nes/evaluation.hpp"

using namespace nes;

namespace {

// Pre/post sets over a + b + c + d chunks reproducing the given paired table.
std::pair<PredictionSet, PredictionSet> sets_for(const PairedTable& t, int run = 0) {
  PredictionSet pre{{}, Condition::Pre, run}, post{{}, Condition::Post, run};
  std::size_t id = 0;
  auto add = [&](std::size_t count, bool pre_ok, bool post_ok) {
    for (std::size_t i = 0; i < count; ++i, ++id) {
      const auto cid = fmt::format("r{}-c{}", run, id);
      pre.entries.push_back({cid, pre_ok ? "amd" : "INTC", "AMD"});
      post.entries.push_back({cid, post_ok ? " AMD " : "NVDA", "AMD"});
    }
  };
  add(t.a, true, true);
  add(t.b, true, false);
  add(t.c, false, true);
  add(t.d, false, false);
  return {pre, post};
}

} // namespace

TEST_CASE("labels are compared after trim and upper-case") {
  CHECK(label_matches(" amd\n", "AMD"));
  CHECK_FALSE(label_matches("AMDX", "AMD"));
}

TEST_CASE("accuracy") {
  PredictionSet s;
  s.entries = {{"1", "A", "A"}, {"2", "B", "A"}, {"3", "a", "A"}, {"4", "A", "A"}};
  CHECK(accuracy(s) == 0.75);
  CHECK_THROWS_AS(accuracy(PredictionSet{}), ValidationError);
}

TEST_CASE("McNemar on the reported tables") {
  const auto gemini = mcnemar({1277, 760, 37, 108});
  CHECK(std::abs(gemini.chi_square - 723.0 * 723.0 / 797.0) <= 1e-9);
  CHECK(gemini.p_value < 1e-10);
  CHECK(gemini.exact_p < 1e-10);
  const auto gpt = mcnemar({1200, 738, 31, 213});
  CHECK(std::abs(gpt.chi_square - 707.0 * 707.0 / 769.0) <= 1e-9);
  CHECK(gpt.p_value < 1e-10);
}

TEST_CASE("McNemar edge cases and symmetry") {
  const auto even = mcnemar({10, 7, 7, 3});
  CHECK(even.chi_square == 0.0);
  CHECK(even.p_value == 1.0);
  CHECK(even.exact_p == 1.0);
  CHECK_THROWS_AS(mcnemar({5, 0, 0, 5}), DomainError);
  for (std::size_t b = 0; b < 15; ++b) {
    for (std::size_t c = 0; c < 15; ++c) {
      if (b + c == 0) continue;
      const auto x = mcnemar({1, b, c, 1});
      const auto y = mcnemar({1, c, b, 1});
      CHECK(x.chi_square == y.chi_square);
      CHECK(x.exact_p == Catch::Approx(y.exact_p).epsilon(1e-12));
      // Two-sided exact p by summing every outcome at most as likely as the observed one.
      const boost::math::binomial_distribution<double> bin(static_cast<double>(b + c), 0.5);
      const double observed = boost::math::pdf(bin, static_cast<double>(b));
      double p = 0.0;
      for (std::size_t k = 0; k <= b + c; ++k) {
        const double pk = boost::math::pdf(bin, static_cast<double>(k));
        if (pk <= observed * (1 + 1e-12)) p += pk;
      }
      CHECK(x.exact_p == Catch::Approx(std::min(1.0, p)).epsilon(1e-9));
    }
  }
}

TEST_CASE("paired table from prediction sets") {
  const PairedTable gemini{1277, 760, 37, 108};
  const auto [pre, post] = sets_for(gemini);
  const auto t = pair_predictions(pre, post);
  CHECK(t.a == 1277);
  CHECK(t.b == 760);
  CHECK(t.c == 37);
  CHECK(t.d == 108);
  CHECK(t.total() == 2182);
  CHECK(accuracy(pre) == Catch::Approx(static_cast<double>(t.a + t.b) / t.total()));
  CHECK(accuracy(post) == Catch::Approx(static_cast<double>(t.a + t.c) / t.total()));

  SECTION("identical all-correct sets") {
    const auto [p, q] = sets_for({5, 0, 0, 0});
    CHECK(pair_predictions(p, q).a == 5);
  }
  SECTION("mismatched ids are listed") {
    auto shifted = post;
    shifted.entries[0].chunk_id = "elsewhere";
    try {
      pair_predictions(pre, shifted);
      FAIL("expected an id mismatch");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("elsewhere") != std::string::npos);
      CHECK(msg.find("r0-c0") != std::string::npos);
    }
  }
  SECTION("duplicate ids") {
    auto dup = pre;
    dup.entries[1].chunk_id = dup.entries[0].chunk_id;
    CHECK_THROWS_AS(pair_predictions(dup, post), ValidationError);
  }
}

TEST_CASE("prediction CSV parsing") {
  const auto sets = parse_predictions(
      "chunk_id,predicted,truth,condition,run\n"
      "c1,AMD,AMD,post,1\n"
      "\"c,2\",\"INTC\",AMD,pre,1\n"
      "c1,amd,AMD,pre,1\n"
      "c1,AMD,AMD,pre,0\n");
  REQUIRE(sets.size() == 3);
  CHECK(sets[0].condition == Condition::Pre);
  CHECK(sets[0].run_index == 0);
  CHECK(sets[1].run_index == 1);
  CHECK(sets[1].entries.size() == 2);
  CHECK(sets[1].entries[0].chunk_id == "c,2");
  CHECK(sets[2].condition == Condition::Post);
  CHECK_THROWS_AS(parse_predictions("chunk_id,predicted\nc1,AMD\n"), ParseError);
  CHECK_THROWS_AS(parse_predictions("chunk_id,predicted,truth,condition,run\nc1,A,A,later,0\n"), ParseError);
}

TEST_CASE("evaluation report pools runs") {
  std::vector<PredictionSet> sets;
  for (int run = 0; run < 2; ++run) {
    const auto [pre, post] = sets_for({600 + static_cast<std::size_t>(run), 380, 18, 50}, run);
    sets.push_back(pre);
    sets.push_back(post);
  }
  const auto r = evaluation_report(sets);
  CHECK(r["paired"]["b"] == 760);
  CHECK(r["paired"]["c"] == 36);
  CHECK(r["paired"]["total"] == 2097);
  CHECK(r["accuracy"]["pre"].contains("sd"));
  CHECK(r["mcnemar"]["chi_square"].get<double>() == Catch::Approx(724.0 * 724.0 / 796.0));

  const auto single = evaluation_report({sets[0], sets[1]});
  CHECK_FALSE(single["accuracy"]["pre"].contains("sd"));
  CHECK(single["accuracy"]["pre"].contains("mean"));

  const auto [p, q] = sets_for({4, 0, 0, 1});
  CHECK(evaluation_report({p, q})["mcnemar"].is_null());
}
