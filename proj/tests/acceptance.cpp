// Acceptance checks: one PASS/FAIL line per criterion. Tolerances are fixed
// here; the binary exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "akd/evalkit.hpp"
#include "akd/jsonl.hpp"
#include "akd/orchestrator.hpp"
#include "akd/rouge.hpp"
#include "akd/stages.hpp"
#include "support.hpp"

namespace akd {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::TempDir;

constexpr double kScoreTol = 1e-9;
constexpr double kRelativeTol = 0.01;
constexpr double kAc1MaxSeconds = 10.0;
constexpr double kAc8MaxSeconds = 60.0;

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::shared_ptr<MockScript> script() { return std::make_shared<MockScript>(); }

std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const char* sub : {"reports", "datasets"}) {
    for (const auto& e : fs::recursive_directory_iterator(dir / sub)) {
      if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Check ac1_pool_arithmetic() {
  Check c;
  TempDir dir;
  fs::copy(testing::source_dir() / "configs/desk", dir.path(), fs::copy_options::recursive);
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load_config(dir / "config.json", {"iterations=3", "n_per_iteration=6"},
                               ConfigPurpose::kLoop);
  const auto r = run(cfg, dir / "state");
  const double secs = seconds_since(t0);
  c.expect(r.seed_count == 20, fmt::format("seed count {}", r.seed_count));
  c.expect(r.train_size == 6, fmt::format("train {}", r.train_size));
  c.expect(r.cache_size == 38, fmt::format("cache {}", r.cache_size));
  c.expect(r.cumulative_trained_count == 38, fmt::format("cumulative {}", r.cumulative_trained_count));
  c.expect(secs < kAc1MaxSeconds, fmt::format("run took {:.2f}s", secs));

  auto big = cfg;
  big.n_per_iteration = 6000;
  const auto plan = plan_run(52000, big);
  c.expect(plan.cumulative_trained_count == 70000,
           fmt::format("planned cumulative {}", plan.cumulative_trained_count));
  if (c.ok) {
    c.detail = fmt::format("train 6, cache 38, cumulative 38 in {:.2f}s; planned 52000 -> {}", secs,
                           plan.cumulative_trained_count);
  }
  return c;
}

Check ac2_templates() {
  Check c;
  const char* sample = "Give three tips for staying healthy.";
  const auto golden = [](const std::string& name) {
    return read_file(testing::source_dir() / "tests/golden" / name);
  };
  const std::vector<std::pair<std::string, RenderedPrompt>> rendered = {
      {"teacher_response", render_response_prompt(sample)},
      {"referee_compare", render_referee_prompt(sample, "1. Eat vegetables.\n2. Exercise.\n3. Sleep.",
                                                "Drink water.")},
      {"gen_hard", render_hard_gen_prompt(sample)},
      {"gen_easy", render_easy_gen_prompt(sample)},
  };
  for (const auto& [stem, p] : rendered) {
    c.expect(p.system_text == golden(stem + ".system.txt"), stem + " system text differs");
    c.expect(p.user_text == golden(stem + ".user.txt"), stem + " user text differs");
  }
  if (c.ok) c.detail = "4 templates byte-equal to golden files";
  return c;
}

Check ac3_referee_calibration() {
  Check c;
  std::mt19937 rng(2023);
  StageOptions opts;
  opts.concurrency = 1;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double tq = 1 + rng() % 9, sq = 1 + rng() % 9;  // +1 bias stays <= 10
    auto plain = script(), biased = script();
    plain->on(Role::kReferee, testing::biased_referee(0.0));
    biased->on(Role::kReferee, testing::biased_referee(1.0));
    MockBackend r0(Role::kReferee, plain), r1(Role::kReferee, biased);
    const auto ins = make_instruction(fmt::format("case-{}", i), fmt::format("Case {}", i));
    const auto t = fmt::format("teacher quality={}", tq);
    const auto s = fmt::format("student quality={}", sq);
    const auto u = score_instruction(ins, t, s, r0, 1.0, opts);
    const auto b = score_instruction(ins, t, s, r1, 1.0, opts);
    worst = std::max(worst, std::abs(u.d - b.d));
    c.expect(b.label != Label::kUnscored, "biased referee output unscored");
  }
  c.expect(worst <= kScoreTol, fmt::format("max |d_biased - d_unbiased| = {}", worst));
  if (c.ok) c.detail = fmt::format("50 cases, max |d_biased - d_unbiased| = {:g}", worst);
  return c;
}

Check ac4_partition() {
  Check c;
  // Each instruction's two referee verdicts come from a fuzzed table; the
  // teacher answer is "T:<id>" and the student answer "S:<id>".
  struct Runs {
    double t1, s1, t2, s2;
  };
  std::mt19937 rng(404);
  auto half = [&] { return 1.0 + 0.5 * static_cast<double>(rng() % 19); };
  std::vector<Instruction> pool;
  std::map<std::string, Runs> table;
  int boundary = 0;
  for (int i = 0; i < 1000; ++i) {
    Runs r{half(), half(), half(), half()};
    if (i % 10 == 0) {
      // Force d == 1.0 exactly: teacher total exceeds student total by 2.
      r.t1 = 5.5;
      r.t2 = 6.0;
      r.s1 = 4.5;
      r.s2 = 5.0;
      ++boundary;
    }
    const auto id = fmt::format("f-{:04}", i);
    pool.push_back(make_instruction(id, fmt::format("Fuzz instruction {}", i)));
    table[id] = r;
  }
  auto s = script();
  s->on(Role::kTeacher, [](const MockRequest& r) {
    return "T:" + std::string(embedded_instruction(r.user_text));
  });
  s->on(Role::kStudent, [](const MockRequest& r) {
    return "S:" + std::string(embedded_instruction(r.user_text));
  });
  std::map<std::string, std::string> id_of;
  for (const auto& ins : pool) id_of[ins.text] = ins.id;
  s->on(Role::kReferee, [&](const MockRequest& r) {
    const auto first = testing::answer_block(r.user_text, 1);
    const auto& runs = table.at(id_of.at(first.substr(2)));
    return first[0] == 'T' ? format_referee_output("fuzz", runs.t1, runs.s1)
                           : format_referee_output("fuzz", runs.s2, runs.t2);
  });
  MockBackend teacher(Role::kTeacher, s), student(Role::kStudent, s), referee(Role::kReferee, s);
  StageOptions opts;
  opts.concurrency = 8;
  const auto report = discriminate(pool, teacher, student, referee, 1.0, opts);

  std::set<std::string> hard(report.hard_ids.begin(), report.hard_ids.end());
  std::size_t mismatches = 0;
  for (const auto& [id, r] : table) {
    const bool oracle_hard = (r.t1 + r.t2) / 2 - (r.s1 + r.s2) / 2 >= 1.0;
    mismatches += oracle_hard != hard.contains(id);
  }
  c.expect(report.unscored_ids.empty(), "unscored records");
  c.expect(mismatches == 0, fmt::format("{} partition mismatches", mismatches));
  for (int i = 0; i < 1000; i += 10) {
    c.expect(hard.contains(fmt::format("f-{:04}", i)), "boundary d = tau not hard");
  }
  if (c.ok) {
    c.detail = fmt::format("1000 records, {} hard, {} at d = tau all hard", hard.size(), boundary);
  }
  return c;
}

std::size_t lcs_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

Check ac5_rouge() {
  Check c;
  std::mt19937 rng(55);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f", "g", "h"};
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<std::string> x(rng() % 31), y(rng() % 31);
    const auto v = 1 + rng() % vocab.size();
    std::string xs, ys;
    for (auto& w : x) xs += (w = vocab[rng() % v]) + " ";
    for (auto& w : y) ys += (w = vocab[rng() % v]) + " ";
    double expect = 0.0;
    if (!x.empty() && !y.empty()) {
      const double l = static_cast<double>(lcs_oracle(x, y));
      if (l > 0) {
        const double p = l / x.size(), r = l / y.size();
        expect = 2 * p * r / (p + r);
      }
    }
    worst = std::max(worst, std::abs(rouge_l(xs, ys) - expect));
  }
  c.expect(worst <= kScoreTol, fmt::format("max oracle deviation {}", worst));
  const double example = rouge_l("write a poem about spring", "write a story about spring");
  c.expect(std::abs(example - 0.8) <= kScoreTol, fmt::format("worked example {}", example));

  // Every generated instruction of a mock run stays below the threshold
  // against everything that was in the cache when it was accepted.
  TempDir dir;
  const auto cfg = testing::desk_config(dir.path(), 20, 12, 3);
  run(cfg, dir / "state", testing::stub_hooks());
  const auto state = checkpoint_load(dir / "state");
  double max_overlap = 0.0;
  std::size_t generated = 0;
  const auto& cache = state.pools.cache_pool;
  for (std::size_t i = 0; i < cache.size(); ++i) {
    if (cache[i].origin == Origin::kSeed) continue;
    ++generated;
    for (std::size_t j = 0; j < i; ++j) max_overlap = std::max(max_overlap, rouge_l(cache[i].text, cache[j].text));
  }
  c.expect(generated == 36, fmt::format("{} generated instructions", generated));
  c.expect(max_overlap < 0.7, fmt::format("accepted overlap {}", max_overlap));
  if (c.ok) {
    c.detail = fmt::format("10000 pairs, max deviation {:g}; example {:.4f}; max accepted overlap {:.3f}",
                           worst, example, max_overlap);
  }
  return c;
}

Check ac6_ratio() {
  Check c;
  std::vector<std::string> parts;
  for (int n : {2, 6, 6000}) {
    const int sources = std::max(40, 4 * n);
    std::vector<ScoredInstruction> hard, easy;
    std::vector<Instruction> cache;
    for (int i = 0; i < sources; ++i) {
      hard.push_back({make_instruction(fmt::format("h{}", i), fmt::format("Hard source {}", i)), 2.0});
      easy.push_back({make_instruction(fmt::format("e{}", i), fmt::format("Easy source {}", i)), 0.0});
      cache.push_back(hard.back().instruction);
      cache.push_back(easy.back().instruction);
    }
    auto s = script();
    s->on(Role::kGenerator, "#Created Instruction#:\n{words:9}");
    MockBackend gen(Role::kGenerator, s, static_cast<std::uint64_t>(n));
    GenerationRequest req;
    req.n_total = n;
    std::mt19937_64 rng(n);
    StageOptions opts;
    opts.concurrency = 8;
    const auto r = generate_batch(hard, easy, gen, req, cache, rng, opts);
    int hard_origin = 0, easy_origin = 0;
    for (const auto& ins : r.accepted) {
      hard_origin += ins.origin == Origin::kGeneratedHard;
      easy_origin += ins.origin == Origin::kGeneratedEasy;
    }
    c.expect(!r.budget_exhausted, fmt::format("n={} budget exhausted", n));
    c.expect(hard_origin == n / 2 && easy_origin == n / 2,
             fmt::format("n={}: {} hard-derived, {} easy-derived", n, hard_origin, easy_origin));
    parts.push_back(fmt::format("n={}: {}/{}", n, hard_origin, easy_origin));
  }
  if (c.ok) c.detail = fmt::format("{}", fmt::join(parts, ", "));
  return c;
}

Check ac7_eval_arithmetic() {
  Check c;
  const std::vector<double> cand = {8, 10}, ref = {8, 9};
  const double rel = relative_score(cand, ref);
  c.expect(std::abs(rel - 105.88) <= kRelativeTol, fmt::format("relative score {}", rel));

  std::vector<McqItem> items;
  std::map<std::string, char> gold;
  std::mt19937 rng(7);
  for (int i = 0; i < 40; ++i) {
    const int n = 2 + static_cast<int>(rng() % 4);
    std::vector<std::string> choices;
    for (int k = 0; k < n; ++k) choices.push_back(fmt::format("option {}", k));
    const char g = static_cast<char>('A' + rng() % n);
    const auto q = fmt::format("Question number {}?", i);
    items.push_back(make_mcq_item(fmt::format("m{}", i), q, choices, g, i % 2 ? "odd" : "even"));
    gold[q] = g;
  }
  auto answer = [&](const MockRequest& r) {
    const std::string_view text = embedded_instruction(r.user_text);
    const auto end = text.find("\n");
    return gold.at(std::string(text.substr(3, end - 3)));
  };
  auto oracle = script(), lower = script();
  oracle->on(Role::kStudent, [&](const MockRequest& r) { return std::string(" ") + answer(r); });
  lower->on(Role::kStudent, [&](const MockRequest& r) {
    return std::string(" (") + static_cast<char>(answer(r) - 'A' + 'a') + ") is right";
  });
  MockBackend om(Role::kStudent, oracle), lm(Role::kStudent, lower);
  const auto o = eval_mcq(om, items, role_profile(Role::kStudent), 4);
  const auto l = eval_mcq(lm, items, role_profile(Role::kStudent), 4);
  c.expect(o.overall_accuracy == 100.0, fmt::format("oracle model {}%", o.overall_accuracy));
  c.expect(l.overall_accuracy == 0.0, fmt::format("lowercase model {}%", l.overall_accuracy));
  if (c.ok) {
    c.detail = fmt::format("relative {:.2f}; oracle MCQ {:.0f}%; lowercase MCQ {:.0f}%", rel,
                           o.overall_accuracy, l.overall_accuracy);
  }
  return c;
}

struct StopHere : std::runtime_error {
  StopHere() : std::runtime_error("interrupted") {}
};

Check ac8_determinism_resume() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  TempDir dir;
  const auto cfg = testing::desk_config(dir.path(), 20, 6, 3);
  const auto ref = run(cfg, dir / "a", testing::stub_hooks());
  run(cfg, dir / "b", testing::stub_hooks());
  const auto expected = artifacts(dir / "a");
  c.expect(expected == artifacts(dir / "b"), "repeated runs differ");

  int boundaries = 0;
  for (int stop = 1;; ++stop) {
    const auto sd = dir / fmt::format("cut-{}", stop);
    RunHooks hooks = testing::stub_hooks();
    int seen = 0;
    hooks.after_stage = [&](Phase, const IterationState&) {
      if (++seen == stop) throw StopHere();
    };
    try {
      run(cfg, sd, hooks);
      break;  // fewer boundaries than `stop`: all covered
    } catch (const StopHere&) {
    }
    ++boundaries;
    const auto r = resume(sd, testing::stub_hooks());
    c.expect(json(r) == json(ref), fmt::format("final report differs after stop {}", stop));
    c.expect(artifacts(sd) == expected, fmt::format("artifacts differ after stop {}", stop));
  }
  const double secs = seconds_since(t0);
  c.expect(boundaries == 14, fmt::format("{} stage boundaries", boundaries));
  c.expect(secs < kAc8MaxSeconds, fmt::format("took {:.2f}s", secs));
  if (c.ok) {
    c.detail = fmt::format("byte-identical reruns; resume after each of {} boundaries matches; {:.2f}s",
                           boundaries, secs);
  }
  return c;
}

Check ac9_ablation() {
  Check c;
  // Cache of 900 instructions with student quality spread over 1..9
  // against a teacher at 8, judged by a position-biased referee.
  std::vector<Instruction> pool;
  for (int i = 0; i < 900; ++i) {
    pool.push_back(make_instruction(fmt::format("a{:03}", i), fmt::format("Ablation item {} q{}", i, 1 + i % 9)));
  }
  auto s = script();
  s->on(Role::kTeacher, "teacher quality=8");
  s->on(Role::kStudent, [](const MockRequest& r) {
    const std::string ins(embedded_instruction(r.user_text));
    return "student quality=" + ins.substr(ins.rfind('q') + 1);
  });
  s->on(Role::kReferee, testing::biased_referee(1.0));
  s->on(Role::kGenerator, "#Created Instruction#:\n{words:9}");
  MockBackend teacher(Role::kTeacher, s), student(Role::kStudent, s), referee(Role::kReferee, s),
      generator(Role::kGenerator, s);
  StageOptions opts;

  std::string tau_curve;
  double prev = 2.0;
  for (double tau : {0.0, 0.5, 1.0, 1.5, 2.0}) {
    const auto report = discriminate(pool, teacher, student, referee, tau, opts);
    std::size_t oracle = 0;
    for (int i = 0; i < 900; ++i) oracle += 8.0 - (1 + i % 9) >= tau;
    const double frac = report.hard_fraction();
    c.expect(report.hard_ids.size() == oracle,
             fmt::format("tau {}: {} hard, expected {}", tau, report.hard_ids.size(), oracle));
    c.expect(frac <= prev, fmt::format("hard fraction rises at tau {}", tau));
    prev = frac;
    tau_curve += fmt::format(" {}:{:.2f}", tau, frac);
  }

  const auto report = discriminate(pool, teacher, student, referee, 1.0, opts);
  std::vector<ScoredInstruction> hard, easy;
  split_sources(pool, report, hard, easy);
  std::string ratio_curve;
  for (auto [rh, re] : std::vector<std::pair<int, int>>{{1, 0}, {2, 1}, {1, 1}, {1, 2}, {0, 1}}) {
    GenerationRequest req;
    req.n_total = 60;
    req.ratio_hard = rh;
    req.ratio_easy = re;
    std::mt19937_64 rng(rh * 10 + re);
    const auto g = generate_batch(hard, easy, generator, req, pool, rng, opts);
    const auto [th, te] = generation_targets(60, rh, re);
    c.expect(g.accepted_hard == th && g.accepted_easy == te,
             fmt::format("ratio {}:{} accepted {}/{}", rh, re, g.accepted_hard, g.accepted_easy));
    ratio_curve += fmt::format(" {}:{}->{}/{}", rh, re, g.accepted_hard, g.accepted_easy);
  }
  if (c.ok) c.detail = "hard fraction by tau" + tau_curve + "; accepted hard/easy" + ratio_curve;
  return c;
}

}  // namespace
}  // namespace akd

int main() {
  spdlog::set_level(spdlog::level::warn);
  using Fn = std::function<akd::Check()>;
  const std::vector<std::pair<const char*, Fn>> criteria = {
      {"AC1 pool arithmetic", akd::ac1_pool_arithmetic},
      {"AC2 template fidelity", akd::ac2_templates},
      {"AC3 referee position calibration", akd::ac3_referee_calibration},
      {"AC4 hard/easy partition", akd::ac4_partition},
      {"AC5 ROUGE-L oracle and diversity gate", akd::ac5_rouge},
      {"AC6 generation ratio", akd::ac6_ratio},
      {"AC7 evaluation arithmetic", akd::ac7_eval_arithmetic},
      {"AC8 determinism and resume", akd::ac8_determinism_resume},
      {"AC9 ablation curves", akd::ac9_ablation},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    akd::Check c;
    try {
      c = fn();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    failed += !c.ok;
    std::printf("[%s] %s: %s\n", c.ok ? "PASS" : "FAIL", name, c.detail.c_str());
  }
  std::fflush(stdout);
  return failed == 0 ? 0 : 1;
}
