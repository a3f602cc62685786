// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `--only <substring>` runs matching criteria.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "fixtures.hpp"
#include "grad_cases.hpp"
#include "oracles.hpp"
#include "s2kg/ablation.hpp"
#include "s2kg/eval.hpp"
#include "s2kg/intent_model.hpp"
#include "s2kg/kb.hpp"
#include "s2kg/semisup.hpp"

using namespace s2kg;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Verdict()> run;
};

Verdict combined_fixtures() {
  double worst = 0.0;
  for (const auto& r : oracle::automatic_table()) {
    worst = std::max(worst, std::abs(combined(r.user_f1, r.system_f1, r.success, r.bleu) - r.combined));
  }
  return {worst <= 0.0005, fmt::format("6 rows, max |diff| {:.6f} (tol 0.0005)", worst)};
}

Verdict final_fixtures() {
  double worst_final = 0.0, worst_avg = 0.0;
  for (const auto& r : oracle::human_table()) {
    const auto h = HumanRatingSummary::from_means(r.fluency, r.coherency, r.success);
    worst_avg = std::max(worst_avg, std::abs(h.average - r.average));
    worst_final = std::max(worst_final, std::abs(final_score(r.combined, r.average) - r.final_score));
  }
  return {worst_final <= 0.005 && worst_avg <= 0.005,
          fmt::format("5 rows, max |final diff| {:.5f}, max |average diff| {:.5f} (tol 0.005)", worst_final, worst_avg)};
}

Verdict bleu_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> c, r;
    std::vector<std::vector<std::string>> ct, rt;
    for (int i = 0; i < 50; ++i) {
      auto a = oracle::random_text(rng, 25);
      auto b = oracle::random_text(rng, 25);
      c.push_back(a.text);
      r.push_back(b.text);
      ct.push_back(std::move(a.tokens));
      rt.push_back(std::move(b.tokens));
    }
    worst = std::max(worst, std::abs(bleu4(c, r) - oracle::brute_bleu(ct, rt)));
  }
  SynthConfig sc = default_synth_config();
  sc.n_dialogs = 50;
  std::vector<std::string> responses;
  for (const auto& d : synthesize_corpus(sc).dialogs) {
    for (const auto& t : d.turns) responses.push_back(t.system_response);
  }
  const double identity = bleu4(responses, responses);
  return {worst < 1e-9 && std::abs(identity - 100.0) < 1e-9,
          fmt::format("20 corpora of 50 pairs, max |diff| {:.2e}; identity {:.6f}", worst, identity)};
}

Verdict threshold_oracle() {
  Rng rng(77);
  const auto grid = default_threshold_grid();
  std::size_t matched = 0, not_worse = 0;
  double worst_drop = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto inst = oracle::random_threshold_instance(rng, 10, 200);
    const auto t = search_thresholds(inst.scores, inst.gold, grid);
    matched += t == oracle::brute_thresholds(inst, grid);
    const std::vector<double> half(t.size(), 0.5);
    const double searched = oracle::micro_f1(inst, t);
    const double uniform = oracle::micro_f1(inst, half);
    if (searched >= uniform) {
      ++not_worse;
    } else {
      worst_drop = std::max(worst_drop, uniform - searched);
    }
  }
  return {matched == 100 && not_worse == 100,
          fmt::format("brute-force match {}/100; searched micro-F1 >= uniform-0.5 on {}/100 (worst drop {:.4f})",
                      matched, not_worse, worst_drop)};
}

Verdict gradient_checks() {
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0, blocks = 0;
  for (const auto& c : testing::gradient_cases()) {
    ++blocks;
    for (const auto& r : c.run()) {
      checked += r.checked;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        where = c.name + " " + r.worst;
      }
    }
  }
  return {worst < 1e-4 && checked > 0,
          fmt::format("{} blocks, {} entries, max rel error {:.2e} (tol 1e-4) at {}", blocks, checked, worst, where)};
}

Verdict fgm_property() {
  Rng rng(5);
  double worst_norm = 0.0, worst_dir = 0.0;
  bool zero_ok = true;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> g(1 + rng.below(256));
    const double scale = std::pow(10.0, 6.0 * rng.uniform() - 3.0);
    for (auto& v : g) v = rng.normal(0.0, scale);
    const double eps = 0.01 + 5.0 * rng.uniform();
    const auto r = fgm_perturb<double>(g, eps);
    double n = 0, gn = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      n += r[i] * r[i];
      gn += g[i] * g[i];
    }
    worst_norm = std::max(worst_norm, std::abs(std::sqrt(n) - eps));
    for (std::size_t i = 0; i < g.size(); ++i) {
      worst_dir = std::max(worst_dir, std::abs(r[i] / eps - g[i] / std::sqrt(gn)));
    }
    for (const double v : fgm_perturb<double>(g, 0.0)) zero_ok &= v == 0.0;
  }
  return {worst_norm <= 1e-9 && worst_dir <= 1e-9 && zero_ok,
          fmt::format("1000 gradients, max |norm - eps| {:.2e}, max direction diff {:.2e}, eps=0 zero: {}", worst_norm,
                      worst_dir, zero_ok)};
}

Verdict mlm_statistics() {
  SynthConfig sc = default_synth_config();
  sc.n_dialogs = 1500;
  const auto corpus = synthesize_corpus(sc);
  const auto vocab = nn::build_vocab(corpus, 1);
  const auto ex = build_mlm_examples(corpus, 0.15, vocab, 11);
  std::size_t masked = 0, eligible = 0;
  for (const auto& e : ex) {
    masked += e.masked_positions.size();
    for (const int id : e.tokens) eligible += !vocab.is_special(id);
  }
  eligible += masked;
  const double frac = static_cast<double>(masked) / static_cast<double>(eligible);

  // Loss probe: unmasked reference targets must not matter, masked ones must.
  nn::TransformerConfig m;
  m.d_model = 16;
  m.n_heads = 2;
  m.d_ff = 32;
  m.encoder_layers = 1;
  m.max_len = 64;
  const auto clf = IntentClassifier::create(vocab, {"x"}, IntentTask::user, m, 1);
  Rng rng(3);
  std::size_t probes = 0, invariant = 0, sensitive = 0;
  for (const auto& e : ex) {
    if (e.masked_positions.empty() || e.tokens.size() > m.max_len || probes == 200) continue;
    ++probes;
    auto ref = e.tokens;
    for (std::size_t k = 0; k < e.masked_positions.size(); ++k) ref[e.masked_positions[k]] = e.original_ids[k];
    const double base = mlm_loss(clf, e.tokens, ref, e.masked_positions);
    auto scrambled = ref;
    for (std::size_t i = 0; i < scrambled.size(); ++i) {
      if (std::find(e.masked_positions.begin(), e.masked_positions.end(), i) == e.masked_positions.end()) {
        scrambled[i] = static_cast<int>(rng.below(vocab.size()));
      }
    }
    invariant += mlm_loss(clf, e.tokens, scrambled, e.masked_positions) == base;
    auto moved = ref;
    moved[e.masked_positions[0]] = (moved[e.masked_positions[0]] + 1) % static_cast<int>(vocab.size());
    sensitive += mlm_loss(clf, e.tokens, moved, e.masked_positions) != base;
  }
  return {eligible >= 100000 && frac >= 0.14 && frac <= 0.16 && invariant == probes && sensitive == probes,
          fmt::format("mask fraction {:.4f} over {} positions; loss probe invariant {}/{}, sensitive {}/{}", frac,
                      eligible, invariant, probes, sensitive, probes)};
}

Verdict memorization() {
  const auto r = fixture::run_memorization();
  return {r.accuracy >= 0.99 && r.reproduced == 10,
          fmt::format("teacher-forced accuracy {:.4f}, greedy reproduced {}/10", r.accuracy, r.reproduced)};
}

const std::vector<std::uint64_t> kSeeds = {7, 13, 42};

Verdict ablation_direction() {
  AblationConfig config = default_ablation_config();
  config.regimes = {Regime::FT, Regime::KGFT, Regime::UNSUP_KGFT, Regime::SEMI};
  const auto lex = default_slot_lexicon();
  std::size_t gap_ok = 0, semi_wins = 0;
  std::string rows;
  for (const auto seed : kSeeds) {
    const auto r = run_ablation(config, lex, seed);
    const double ft = r.at(Regime::FT).success, kgft = r.at(Regime::KGFT).success;
    const double unsup = r.at(Regime::UNSUP_KGFT).success, semi = r.at(Regime::SEMI).success;
    gap_ok += kgft >= ft + 0.20;
    semi_wins += semi > unsup;
    rows += fmt::format("{}seed {}: FT {:.3f} KGFT {:.3f} UNSUP_KGFT {:.3f} SEMI {:.3f}", rows.empty() ? "" : "; ",
                        seed, ft, kgft, unsup, semi);
  }
  return {gap_ok == 3 && semi_wins >= 2,
          fmt::format("KGFT >= FT+0.20 in {}/3, SEMI > UNSUP_KGFT in {}/3 ({})", gap_ok, semi_wins, rows)};
}

Verdict robustness_probe() {
  const auto p = run_robustness_probe(default_ablation_config(), default_slot_lexicon(), kSeeds, 1);
  return {std::abs(p.success_change()) < 0.10,
          fmt::format("extractor recall {:.3f} -> {:.3f}; SEMI success {:.3f} -> {:.3f} (change {:+.3f}, tol 0.10)",
                      p.full_recall, p.degraded_recall, p.full_success, p.degraded_success, p.success_change())};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict end_to_end_identity() {
  const auto dir = fs::temp_directory_path() / ("s2kg_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string cli = S2KG_CLI_PATH;
  const auto corpus = (dir / "eval.json").string();
  const auto report_path = (dir / "report.json").string();
  const auto quiet = " >/dev/null 2>" + (dir / "err.txt").string();
  int rc = std::system((cli + " synth-corpus --seed 7 --n-dialogs 100 -o " + corpus + quiet).c_str());
  if (rc == 0) rc = std::system((cli + " evaluate --corpus " + corpus + " --gold -o " + report_path + quiet).c_str());
  if (rc != 0) {
    const auto err = slurp(dir / "err.txt");
    fs::remove_all(dir);
    return {false, "CLI failed: " + err};
  }
  const auto report = Json::parse(slurp(report_path));
  fs::remove_all(dir);
  const double uf1 = report.at("user_intent_f1").get<double>(), sf1 = report.at("system_intent_f1").get<double>();
  const double bleu = report.at("bleu").get<double>(), success = report.at("success").get<double>();
  const double comb = report.at("combined").get<double>();
  const bool ok = uf1 == 1.0 && sf1 == 1.0 && std::abs(bleu - 100.0) < 1e-9 && success == 1.0 &&
                  std::abs(comb - 4.0) < 1e-9;
  return {ok, fmt::format("user F1 {:.4f}, system F1 {:.4f}, BLEU {:.4f}, Success {:.4f}, Combined {:.4f} (expected 4.0)",
                          uf1, sf1, bleu, success, comb)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  std::string only;
  app.add_option("--only", only, "Run criteria whose name contains this");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {"combined-score-fixtures", 1, combined_fixtures},
      {"final-score-fixtures", 1, final_fixtures},
      {"bleu-oracle", 5, bleu_oracle},
      {"threshold-search-oracle", 30, threshold_oracle},
      {"gradient-checks", 60, gradient_checks},
      {"fgm-property", 5, fgm_property},
      {"mlm-masking-statistics", 10, mlm_statistics},
      {"memorization", 120, memorization},
      {"ablation-direction", 900, ablation_direction},
      {"pseudo-kb-robustness-probe", 900, robustness_probe},
      {"end-to-end-identity", 10, end_to_end_identity},
  };

  std::size_t failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && c.name.find(only) == std::string::npos) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = v.pass && in_budget;
    failed += !pass;
    fmt::print("{} {}: {}; {:.1f}s (budget {:.0f}s{})\n", pass ? "PASS" : "FAIL", c.name, v.detail, secs,
               c.budget_seconds, in_budget ? "" : ", exceeded");
    std::fflush(stdout);
  }
  fmt::print("{}/{} criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
