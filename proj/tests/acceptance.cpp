// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner: one PASS/FAIL line per criterion.
//
// Exits 0 once every selected criterion has been evaluated, whatever the
// verdicts; --strict turns any FAIL into exit code 1.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unistd.h>

#include "m3d/binary_io.hpp"
#include "m3d/checkpoint.hpp"
#include "m3d/corpus.hpp"
#include "m3d/metrics.hpp"
#include "m3d/planner.hpp"
#include "m3d/trainer.hpp"
#include "support/gradcheck.hpp"

#ifndef M3DDM_PATH
#define M3DDM_PATH "m3ddm"
#endif

using namespace m3d;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin(), [](float x, float y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

// State shared between the toy experiment and the format checks.
struct Shared {
  fs::path workdir;
  std::string m3ddm;
  std::string checkpoint;  // reuse instead of training when set
  std::string trained_ckpt_bytes;
  std::vector<std::pair<Tensor, Tensor>> evaluated;  // (prediction, truth)
};

Verdict autodiff() {
  const auto t0 = Clock::now();
  Rng rng = make_rng(2024, 1);
  double worst = 0;
  std::string worst_layer;
  const auto cases = testing::layer_cases();
  for (const auto& layer : cases)
    for (int i = 0; i < 20; ++i) {
      auto [f, inputs] = layer.make(rng);
      const double e = testing::gradcheck(f, inputs, rng);
      if (e > worst) {
        worst = e;
        worst_layer = layer.name;
      }
    }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0, std::to_string(cases.size()) + " layers x 20 instances, worst relative error " +
                                            fmt(worst) + " (" + worst_layer + "), " + fmt(secs) + " s"};
}

Verdict schedule() {
  const auto s = NoiseSchedule::build();
  bool ok = s.steps() == 1000 && s.beta(1) == 0.00085 && s.beta(1000) == 0.012;
  for (std::size_t t = 1; t <= 1000; ++t) ok = ok && s.alpha_bar(t) < s.alpha_bar(t - 1);
  const long double a = std::sqrt(0.00085L), b = std::sqrt(0.012L);
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    const long double r = a + (b - a) * (t - 1) / 999.0L;
    prod *= 1.0L - r * r;
  }
  const double err = std::abs(s.alpha_bar(1000) - static_cast<double>(prod));
  ok = ok && err <= 1e-9;
  return {ok, "beta_1=" + fmt(s.beta(1), 17) + " beta_T=" + fmt(s.beta(1000), 17) + " alpha_bar_T error " + fmt(err)};
}

Verdict inversion() {
  const auto s = NoiseSchedule::build();
  Rng rng = make_rng(3);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = 1 + uniform_index(rng, 1000);
    const auto x0 = randn<float>({4, 1, 8, 8}, rng), eps = randn<float>({4, 1, 8, 8}, rng);
    const auto back = ddim_step(forward_sample(x0, t, eps, s), eps, t, 0, s);
    for (std::size_t i = 0; i < x0.numel(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(back.data()[i] - x0.data()[i])));
  }
  return {worst <= 1e-5, "100 draws, max abs error " + fmt(worst)};
}

Verdict guidance_algebra() {
  Rng rng = make_rng(12);
  int good = 0;
  for (int i = 0; i < 100; ++i) {
    const auto u = randn<float>({4, 1, 8, 8}, rng), c = randn<float>({4, 1, 8, 8}, rng), f = randn<float>({4, 1, 8, 8}, rng);
    good += bit_equal(combine_guidance(u, c, f, {0.0, 0.0}), u) && bit_equal(combine_guidance(u, c, f, {1.0, 1.0}), f);
  }
  return {good == 100, std::to_string(good) + "/100 tensor triples bit-exact at (0,0) and (1,1)"};
}

Verdict mask_statistics() {
  Rng rng = make_rng(2023);
  const int n = 100000;
  std::array<int, 5> strategies{};
  std::array<int, 3> cases{};
  long case3_frames = 0, case3_guides = 0;
  for (int i = 0; i < n; ++i) {
    ++strategies[static_cast<int>(sample_mask_strategy(rng, 16, 16).strategy())];
    const auto g = sample_guide_case(rng, 16);
    ++cases[static_cast<int>(g.which) - 1];
    if (g.which == GuideCase::RandomFrames)
      for (auto r : g.roles) {
        ++case3_frames;
        case3_guides += r == FrameRole::GuideRaw;
      }
  }
  double worst = 0;
  for (std::size_t i = 0; i < 5; ++i) worst = std::max(worst, std::abs(strategies[i] / double(n) - kMaskStrategyProportions[i]));
  for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, std::abs(cases[i] / double(n) - kGuideCaseProportions[i]));
  const double rate = case3_guides / double(case3_frames);

  // Leakage: hidden pixels of non-guide frames never reach context or prompt.
  // Frame values are offset from zero so a leak cannot read as 0.
  long leaks = 0;
  const int assemblies = 5000;
  for (int i = 0; i < assemblies; ++i) {
    const auto mask = sample_mask_strategy(rng, 16, 16);
    const auto guides = sample_guide_case(rng, 16);
    auto offset = [&](Shape s) {
      auto t = randn<float>(std::move(s), rng);
      std::vector<float> v(t.data().begin(), t.data().end());
      for (auto& x : v) x = 2.0f + std::abs(x);
      return Tensor(t.shape(), std::move(v));
    };
    const auto clip = offset({16, 1, 16, 16}), global = offset({4, 1, 16, 16});
    const auto cond = assemble_conditioning(clip, clip, guides.roles, mask, global, 1);
    for (std::size_t f = 0; f < 16; ++f)
      for (std::size_t p = 0; p < 256; ++p) {
        const bool shown = guides.roles[f] == FrameRole::GuideRaw || mask.visible(p / 16, p % 16);
        leaks += (cond.context.data()[f * 256 + p] != 0.0f) != shown;
        leaks += cond.mask.data()[f * 256 + p] != (shown ? 1.0f : 0.0f);
      }
    for (std::size_t g = 0; g < 4; ++g)
      for (std::size_t p = 0; p < 256; ++p)
        leaks += !mask.visible(p / 16, p % 16) && cond.global_prompt.data()[g * 512 + p] != 0.0f;
  }
  const bool ok = worst <= 0.02 && std::abs(rate - 0.5) <= 0.02 && leaks == 0;
  return {ok, "worst proportion gap " + fmt(worst) + ", case-3 guide rate " + fmt(rate, 4) + ", " +
                  std::to_string(leaks) + " leaks in " + std::to_string(assemblies) + " assemblies"};
}

// Independent plan check: each frame is produced exactly once, every guide
// slot reads an earlier call that produced that frame, strides are uniform.
bool plan_properties(const CtfPlan& plan) {
  std::vector<int> produced(plan.length, 0);
  std::map<std::size_t, std::set<std::size_t>> made_by;
  for (std::size_t i = 0; i < plan.calls.size(); ++i) {
    const auto& c = plan.calls[i];
    if (c.id != i || c.indices.size() > plan.frames || c.indices.size() != c.provenance.size()) return false;
    for (std::size_t k = 0; k < c.indices.size(); ++k) {
      if (c.indices[k] >= plan.length) return false;
      if (k && c.indices[k] - c.indices[k - 1] != c.stride) return false;
      if (!c.provenance[k]) {
        ++produced[c.indices[k]];
        made_by[i].insert(c.indices[k]);
      } else if (*c.provenance[k] >= i || !made_by[*c.provenance[k]].count(c.indices[k])) {
        return false;
      }
    }
  }
  return std::all_of(produced.begin(), produced.end(), [](int n) { return n == 1; });
}

Verdict planner() {
  const auto t0 = Clock::now();
  const auto hybrid = plan_hybrid(451, 16, kDefaultLevels);
  const auto dense = plan_dense(451, 16);
  const auto infill = plan_infill_only(451, 16, kDefaultLevels);
  bool ok = hybrid.calls.size() == 33 && chain_depth(hybrid) == 4 && dense.calls.size() == 30 &&
            chain_depth(dense) == 30 && infill.calls.front().stride == 225;
  Rng rng = make_rng(451);
  int good = 0, total = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t frames = 3 + uniform_index(rng, 18);
    const std::size_t length = frames + uniform_index(rng, 2001 - frames);
    std::vector<std::size_t> levels = {1};
    const auto extra = uniform_index(rng, 3);
    for (std::size_t i = 0; i < extra; ++i) levels.insert(levels.begin(), levels.front() * (2 + uniform_index(rng, frames - 2)));
    for (auto mode : {PlanMode::Hybrid, PlanMode::Dense, PlanMode::InfillOnly}) {
      ++total;
      const auto plan = make_plan(mode, length, frames, levels);
      bool fine = plan_properties(plan);
      try {
        validate_plan(plan);
      } catch (const std::exception&) {
        fine = false;
      }
      good += fine;
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && good == total && secs < 10.0;
  return {ok, "hybrid " + std::to_string(hybrid.calls.size()) + "/" + std::to_string(chain_depth(hybrid)) + ", dense " +
                  std::to_string(dense.calls.size()) + "/" + std::to_string(chain_depth(dense)) +
                  ", infill coarsest stride " + std::to_string(infill.calls.front().stride) + ", " +
                  std::to_string(good) + "/" + std::to_string(total) + " random plans sound, " + fmt(secs) + " s"};
}

Verdict toy_experiment(Shared& shared) {
  const auto t0 = Clock::now();
  SyntheticSpec spec;  // MovingSquare, T=32, 16x16x1
  spec.seed = 0;
  const auto train_set = generate_corpus(spec, 64);
  SyntheticSpec held_spec = spec;
  held_spec.seed = 1;
  const auto held_out = generate_corpus(held_spec, 16);

  DenoiserConfig mc;
  const auto schedule = NoiseSchedule::build(ScheduleKind::ScaledLinear, mc.train_steps);
  std::optional<Denoiser> model;
  std::string train_note;
  if (!shared.checkpoint.empty()) {
    auto ckpt = load_checkpoint(shared.checkpoint);
    model.emplace(DenoiserConfig::from_header(ckpt.header), std::move(ckpt.params));
    train_note = "loaded " + shared.checkpoint;
  } else {
    model.emplace(Denoiser::init(mc, 0));
    TrainConfig tc;
    tc.steps = 2000;
    tc.batch = 8;
    tc.adam.lr = 2e-3;
    tc.adam.warmup_steps = 100;
    tc.seed = 0;
    const auto losses = train(*model, train_set, schedule, tc, [](std::size_t step, double loss) {
      if ((step + 1) % 250 == 0) std::cerr << "  train step " << step + 1 << " loss " << loss << std::endl;
    });
    const std::span<const double> l(losses);
    train_note = "loss " + fmt(std::accumulate(l.begin(), l.begin() + 50, 0.0) / 50) + " -> " +
                 fmt(std::accumulate(l.end() - 50, l.end(), 0.0) / 50);
    save_checkpoint(shared.workdir / "toy.ckpt", model->params(), model->config().to_header());
    write_file_atomic(shared.workdir / "toy_loss.csv", loss_csv(losses));
  }
  shared.trained_ckpt_bytes = encode_checkpoint(model->params(), model->config().to_header());
  const double train_secs = seconds_since(t0);

  const auto hybrid = make_plan(PlanMode::Hybrid, spec.frames, model->config().frames, {2, 1});
  const auto dense = make_plan(PlanMode::Dense, spec.frames, model->config().frames, {1});
  ExecuteOptions opts;
  opts.threads = worker_count();
  std::size_t wins = 0;
  double jitter_h = 0, jitter_d = 0, mse_h = 0, mse_b = 0;
  std::size_t jitter_n = 0;
  std::ostringstream rows;
  rows << "video,side,hybrid_mse,dense_mse,baseline_mse,hybrid_jitter,dense_jitter\n";
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    const auto truth = held_out[i].to_tensor();
    const auto side = static_cast<Side>(i % 4);
    const auto mask = MaskSpec::single(side, 0.5, spec.height, spec.width);
    opts.outpaint.seed = 100 + i;
    const auto h = execute_plan(*model, schedule, hybrid, truth, mask, opts);
    const auto d = execute_plan(*model, schedule, dense, truth, mask, opts);
    const auto base = border_replication(truth, mask);
    const auto mh = evaluate(h.video, truth, mask, Region::HiddenOnly);
    const auto md = evaluate(d.video, truth, mask, Region::HiddenOnly);
    const auto mb = evaluate(base, truth, mask, Region::HiddenOnly);
    wins += *mh.mse < *mb.mse;
    // Absent when the truth never changes in the hidden region.
    if (mh.jitter_ratio && md.jitter_ratio) {
      jitter_h += *mh.jitter_ratio;
      jitter_d += *md.jitter_ratio;
      ++jitter_n;
    }
    mse_h += *mh.mse;
    mse_b += *mb.mse;
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v, 9) : std::string(); };
    rows << i << ',' << static_cast<int>(side) << ',' << *mh.mse << ',' << *md.mse << ',' << *mb.mse << ','
         << opt(mh.jitter_ratio) << ',' << opt(md.jitter_ratio) << '\n';
    shared.evaluated.emplace_back(h.video, truth);
    shared.evaluated.emplace_back(d.video, truth);
    shared.evaluated.emplace_back(base, truth);
  }
  write_file_atomic(shared.workdir / "toy_results.csv", rows.str());
  const double n = static_cast<double>(held_out.size());
  const double secs = seconds_since(t0);
  const double jn = static_cast<double>(std::max<std::size_t>(jitter_n, 1));
  const bool ok = wins >= static_cast<std::size_t>(std::ceil(0.8 * n)) && jitter_n > 0 && jitter_h / jn <= jitter_d / jn;
  return {ok, train_note + "; model beats baseline on " + std::to_string(wins) + "/16 (mean hidden mse " + fmt(mse_h / n) +
                  " vs " + fmt(mse_b / n) + "); mean jitter hybrid " + fmt(jitter_h / jn) + " vs dense " +
                  fmt(jitter_d / jn) + " over " + std::to_string(jitter_n) + " videos with hidden motion" + "; train " + fmt(train_secs, 4) + " s, total " + fmt(secs, 4) + " s"};
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return files;
}

Verdict cli_determinism(const Shared& shared) {
  const auto root = shared.workdir / "cli";
  fs::remove_all(root);
  const std::string bin = shared.m3ddm;
  const std::string corpus = (root / "data" / "corpus.m3dv").string();
  const std::string ckpt = (root / "model" / "model.ckpt").string();
  if (std::system((bin + " gen-corpus --out " + (root / "data").string() + " --count 6 --seed 5 > /dev/null").c_str()) != 0)
    return {false, "could not prepare a corpus"};
  if (std::system((bin + " train --corpus " + corpus + " --out " + (root / "model").string() +
                   " --steps 3 --batch 2 --widths 8,16 --global-frames 4 --log-every 0 > /dev/null")
                      .c_str()) != 0)
    return {false, "could not prepare a checkpoint"};

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-corpus", "gen-corpus --count 6 --seed 5 --motif moving-gradient"},
      {"train", "train --corpus " + corpus + " --steps 3 --batch 2 --widths 8,16 --global-frames 4 --seed 2"},
      {"plan", "plan --length 451"},
      {"outpaint", "outpaint --checkpoint " + ckpt + " --video " + corpus +
                       " --index 1 --levels 2,1 --sample-steps 4 --mask-strategy random --seed 3"},
      {"eval", "eval --pred " + corpus + " --truth " + corpus + " --mask-strategy bi"},
  };
  std::vector<std::string> identical, differing;
  for (const auto& [name, args] : commands) {
    std::map<std::string, std::string> runs[2];
    bool ran = true;
    for (int k = 0; k < 2; ++k) {
      const auto dir = root / (name + "_" + std::to_string(k));
      const auto cmd = bin + " " + args + " --out " + dir.string() + " > /dev/null";
      ran = ran && std::system(cmd.c_str()) == 0;
      if (ran) runs[k] = tree(dir);
      runs[k].erase("timing.csv");
    }
    (ran && !runs[0].empty() && runs[0] == runs[1] ? identical : differing).push_back(name);
  }
  std::string detail = std::to_string(identical.size()) + "/" + std::to_string(commands.size()) +
                       " subcommands byte-identical on rerun";
  for (const auto& d : differing) detail += "; differs: " + d;
  return {differing.empty(), detail};
}

Verdict formats(const Shared& shared) {
  SyntheticSpec spec;
  spec.motif = Motif::PanningTexture;
  spec.channels = 3;
  const auto videos = generate_corpus(spec, 8);
  const auto bytes = encode_corpus(videos);
  bool ok = encode_corpus(decode_corpus(bytes)) == bytes && decode_corpus(bytes) == videos;

  std::string ckpt = shared.trained_ckpt_bytes;
  if (ckpt.empty()) {
    const auto model = Denoiser::init(DenoiserConfig{}, 7);
    ckpt = encode_checkpoint(model.params(), model.config().to_header());
  }
  const auto back = decode_checkpoint(ckpt);
  ok = ok && encode_checkpoint(back.params, back.header) == ckpt;
  ok = ok && psnr(0.01) == 20.0;

  double worst = 0;
  std::size_t pairs = 0;
  for (const auto& [pred, truth] : shared.evaluated) {
    for (const auto* x : {&pred, &truth}) {
      const auto r = evaluate(*x, *x, MaskSpec::all_hidden(x->dim(2), x->dim(3)), Region::FullFrame);
      worst = std::max(worst, std::abs(r.ssim - 1.0));
      ok = ok && *r.mse == 0.0;
      ++pairs;
    }
  }
  ok = ok && worst <= 1e-12;
  return {ok, "corpus and checkpoint round-trip, psnr(0.01)=" + fmt(psnr(0.01), 17) + ", ssim(x,x) worst gap " +
                  fmt(worst) + " over " + std::to_string(pairs) + " evaluated videos"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"m3d acceptance runner", "m3d_acceptance"};
  std::vector<int> only;
  bool strict = false;
  Shared shared;
  shared.m3ddm = M3DDM_PATH;
  std::string workdir;
  app.add_option("--only", only, "criteria to run")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_flag("--strict", strict, "exit 1 when any criterion fails");
  app.add_option("--m3ddm", shared.m3ddm, "path to the m3ddm binary")->capture_default_str();
  app.add_option("--workdir", workdir, "scratch directory (default: a fresh temp dir)");
  app.add_option("--checkpoint", shared.checkpoint, "reuse a trained toy checkpoint instead of training");
  CLI11_PARSE(app, argc, argv);

  shared.workdir = workdir.empty() ? fs::temp_directory_path() / ("m3d_acceptance_" + std::to_string(::getpid()))
                                   : fs::path(workdir);
  fs::create_directories(shared.workdir);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"autodiff", autodiff},
      {"schedule", schedule},
      {"forward/inverse identity", inversion},
      {"guidance algebra", guidance_algebra},
      {"mask statistics", mask_statistics},
      {"planner", planner},
      {"toy experiment", [&] { return toy_experiment(shared); }},
      {"determinism", [&] { return cli_determinism(shared); }},
      {"formats", [&] { return formats(shared); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& ex) {
      v = {false, std::string("error: ") + ex.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << v.detail
              << std::endl;
  }
  if (workdir.empty()) fs::remove_all(shared.workdir);
  return strict && failed ? 1 : 0;
}
