// SPDX-License-Identifier: Apache-2.0

#include "m3d/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "m3d/ops.hpp"

namespace m3d {

std::string to_string(PlanMode m) {
  switch (m) {
    case PlanMode::Hybrid: return "hybrid";
    case PlanMode::Dense: return "dense";
    case PlanMode::InfillOnly: return "infill-only";
  }
  return "?";
}

PlanMode parse_plan_mode(const std::string& name) {
  if (name == "hybrid" || name == "ctf") return PlanMode::Hybrid;
  if (name == "dense") return PlanMode::Dense;
  if (name == "infill-only") return PlanMode::InfillOnly;
  throw std::invalid_argument("unknown plan mode '" + name + "' (expected hybrid|ctf|dense|infill-only)");
}

std::vector<std::size_t> InferenceCall::guide_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < provenance.size(); ++i)
    if (provenance[i]) out.push_back(i);
  return out;
}

std::vector<std::size_t> InferenceCall::new_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < provenance.size(); ++i)
    if (!provenance[i]) out.push_back(i);
  return out;
}

std::vector<FrameRole> InferenceCall::roles() const {
  std::vector<FrameRole> out;
  for (const auto& p : provenance) out.push_back(p ? FrameRole::GuideRaw : FrameRole::ContextOnly);
  return out;
}

namespace {

[[noreturn]] void plan_error(const std::string& what) { throw std::invalid_argument("plan: " + what); }

void check_levels(std::size_t length, std::size_t frames, const std::vector<std::size_t>& levels) {
  if (frames < 2) plan_error("frames per call must be at least 2");
  if (length < frames) {
    plan_error("video length " + std::to_string(length) + " is shorter than the clip length " +
               std::to_string(frames));
  }
  if (levels.empty()) plan_error("at least one level is required");
  if (levels.back() != 1) plan_error("the finest level must have stride 1");
  for (std::size_t k = 1; k < levels.size(); ++k) {
    if (levels[k] >= levels[k - 1]) plan_error("levels must be strictly decreasing");
    if (levels[k - 1] % levels[k] != 0) {
      plan_error("stride " + std::to_string(levels[k]) + " does not divide " + std::to_string(levels[k - 1]));
    }
    if (levels[k - 1] / levels[k] > frames - 1) {
      plan_error("stride ratio " + std::to_string(levels[k - 1] / levels[k]) + " exceeds frames - 1 = " +
                 std::to_string(frames - 1));
    }
  }
}

}  // namespace

CtfPlan plan_hybrid(std::size_t length, std::size_t frames, const std::vector<std::size_t>& levels) {
  check_levels(length, frames, levels);
  CtfPlan plan;
  plan.length = length;
  plan.frames = frames;
  plan.levels = levels;
  std::vector<std::optional<std::size_t>> producer(length);

  for (std::size_t lv = 0; lv < levels.size(); ++lv) {
    const auto s = levels[lv];
    const auto n = (length - 1) / s + 1;  // grid points 0, s, 2s, ...
    const auto w = std::min(frames, n);
    const std::size_t ratio = lv == 0 ? 0 : levels[lv - 1] / s;
    auto first_missing = [&] {
      std::size_t p = 0;
      while (p < n && producer[p * s]) ++p;
      return p;
    };
    std::size_t pos = 0;
    for (auto p = first_missing(); p < n; p = first_missing()) {
      const auto start = std::min(pos, n - w);
      InferenceCall call;
      call.id = plan.calls.size();
      call.level = lv;
      call.stride = s;
      for (std::size_t j = start; j < start + w; ++j) {
        call.indices.push_back(j * s);
        call.provenance.push_back(producer[j * s]);
      }
      for (std::size_t j = 0; j < w; ++j)
        if (!call.provenance[j]) producer[call.indices[j]] = call.id;
      plan.calls.push_back(std::move(call));
      p = first_missing();
      pos = lv == 0 ? (p == 0 ? 0 : p - 1) : (p / ratio) * ratio;
    }
  }
  return plan;
}

CtfPlan plan_dense(std::size_t length, std::size_t frames) {
  auto plan = plan_hybrid(length, frames, {1});
  plan.mode = PlanMode::Dense;
  return plan;
}

std::vector<std::size_t> infill_only_levels(const std::vector<std::size_t>& levels, std::size_t frames) {
  if (levels.empty() || frames < 3) plan_error("infill-only needs levels and at least 3 frames per call");
  std::size_t first = levels.size() - 1;
  while (first > 0 && levels[first] * (frames - 1) == levels[first - 1]) --first;
  std::vector<std::size_t> out(levels.begin() + static_cast<std::ptrdiff_t>(first), levels.end());
  out.insert(out.begin(), out.front() * (frames - 1));
  return out;
}

CtfPlan plan_infill_only(std::size_t length, std::size_t frames, const std::vector<std::size_t>& levels) {
  auto plan = plan_hybrid(length, frames, infill_only_levels(levels, frames));
  plan.mode = PlanMode::InfillOnly;
  return plan;
}

CtfPlan make_plan(PlanMode mode, std::size_t length, std::size_t frames, const std::vector<std::size_t>& levels) {
  switch (mode) {
    case PlanMode::Hybrid: return plan_hybrid(length, frames, levels);
    case PlanMode::Dense: return plan_dense(length, frames);
    case PlanMode::InfillOnly: return plan_infill_only(length, frames, levels);
  }
  plan_error("unknown mode");
}

void validate_plan(const CtfPlan& plan) {
  if (plan.levels.empty() || plan.levels.back() != 1) plan_error("final level must have stride 1");
  std::vector<std::optional<std::size_t>> producer(plan.length);
  for (std::size_t c = 0; c < plan.calls.size(); ++c) {
    const auto& call = plan.calls[c];
    const auto tag = "call " + std::to_string(c);
    if (call.id != c) plan_error(tag + " has id " + std::to_string(call.id));
    if (call.level >= plan.levels.size() || call.stride != plan.levels[call.level]) {
      plan_error(tag + " stride does not match its level");
    }
    if (call.indices.empty() || call.indices.size() > plan.frames || call.provenance.size() != call.indices.size()) {
      plan_error(tag + " has an invalid window size");
    }
    for (std::size_t j = 0; j < call.indices.size(); ++j) {
      if (call.indices[j] >= plan.length) plan_error(tag + " reads index " + std::to_string(call.indices[j]));
      if (j > 0 && call.indices[j] != call.indices[j - 1] + call.stride) plan_error(tag + " has a non-uniform stride");
    }
    for (std::size_t j = 0; j < call.indices.size(); ++j) {
      const auto idx = call.indices[j];
      if (const auto& src = call.provenance[j]) {
        if (*src >= c) plan_error(tag + " depends on call " + std::to_string(*src) + " which does not precede it");
        if (producer[idx] != src) plan_error(tag + " guide " + std::to_string(idx) + " has wrong provenance");
      } else if (producer[idx]) {
        plan_error(tag + " regenerates index " + std::to_string(idx));
      }
    }
    for (std::size_t j = 0; j < call.indices.size(); ++j)
      if (!call.provenance[j]) producer[call.indices[j]] = c;
  }
  for (std::size_t i = 0; i < plan.length; ++i)
    if (!producer[i]) plan_error("index " + std::to_string(i) + " is never generated");
}

std::vector<std::size_t> call_depths(const CtfPlan& plan) {
  const auto n = plan.calls.size();
  std::vector<std::vector<std::size_t>> deps(n);
  for (std::size_t c = 0; c < n; ++c)
    for (const auto& p : plan.calls[c].provenance) {
      if (!p) continue;
      if (*p >= n) plan_error("call " + std::to_string(c) + " depends on missing call " + std::to_string(*p));
      deps[c].push_back(*p);
    }
  // Iterative DFS; state 1 = on stack, 2 = finished.
  std::vector<int> state(n, 0);
  std::vector<std::size_t> depth(n, 0);
  for (std::size_t root = 0; root < n; ++root) {
    if (state[root]) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
    state[root] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < deps[node].size()) {
        const auto d = deps[node][next++];
        if (state[d] == 1) plan_error("dependency cycle through call " + std::to_string(d));
        if (state[d] == 0) {
          state[d] = 1;
          stack.emplace_back(d, 0);
        }
        continue;
      }
      std::size_t best = 0;
      for (auto d : deps[node]) best = std::max(best, depth[d]);
      depth[node] = best + 1;
      state[node] = 2;
      stack.pop_back();
    }
  }
  return depth;
}

std::size_t chain_depth(const CtfPlan& plan) {
  const auto d = call_depths(plan);
  return d.empty() ? 0 : *std::max_element(d.begin(), d.end());
}

std::string plan_table(const CtfPlan& plan) {
  const auto depths = call_depths(plan);
  std::ostringstream os;
  os << "mode=" << to_string(plan.mode) << " length=" << plan.length << " frames=" << plan.frames << " levels=";
  for (std::size_t i = 0; i < plan.levels.size(); ++i) os << (i ? "," : "") << plan.levels[i];
  os << '\n' << std::left << std::setw(6) << "call" << std::setw(7) << "level" << std::setw(8) << "stride"
     << std::setw(7) << "depth" << "indices (guide<-call)\n";
  for (const auto& c : plan.calls) {
    os << std::setw(6) << c.id << std::setw(7) << c.level << std::setw(8) << c.stride << std::setw(7)
       << depths[c.id];
    for (std::size_t j = 0; j < c.indices.size(); ++j) {
      os << (j ? " " : "") << c.indices[j];
      if (c.provenance[j]) os << "<-" << *c.provenance[j];
    }
    os << '\n';
  }
  os << "calls=" << plan.calls.size() << " chain_depth=" << chain_depth(plan) << '\n';
  return os.str();
}

std::string plan_depth_csv(const CtfPlan& plan) {
  const auto depths = call_depths(plan);
  std::ostringstream os;
  os << "call_id,depth\n";
  for (std::size_t c = 0; c < depths.size(); ++c) os << c << ',' << depths[c] << '\n';
  return os.str();
}

std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("M3DDM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw std::invalid_argument(std::string("M3DDM_THREADS must be a positive integer, got '") + env + "'");
    }
    n = static_cast<std::size_t>(v);
  }
  return n;
}

std::vector<std::size_t> global_frame_indices(std::size_t length, std::size_t count) {
  if (length == 0 || count == 0) throw std::invalid_argument("global_frame_indices: empty video or count");
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = count == 1 ? 0 : (i * (length - 1) * 2 + (count - 1)) / (2 * (count - 1));
  }
  return out;
}

namespace {

Tensor gather_frames(const std::vector<float>& store, const Shape& frame_shape, const std::vector<std::size_t>& idx) {
  const auto plane = shape_numel(frame_shape);
  std::vector<float> out(idx.size() * plane);
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(store.begin() + static_cast<std::ptrdiff_t>(idx[k] * plane), plane,
                out.begin() + static_cast<std::ptrdiff_t>(k * plane));
  Shape s{idx.size()};
  s.insert(s.end(), frame_shape.begin(), frame_shape.end());
  return Tensor(s, std::move(out));
}

}  // namespace

PlanResult execute_plan(const Denoiser& model, const NoiseSchedule& schedule, const CtfPlan& plan, const Tensor& video,
                        const MaskSpec& mask, const ExecuteOptions& options, bool has_truth) {
  validate_plan(plan);
  if (video.rank() != 4 || video.dim(0) != plan.length) {
    throw std::invalid_argument("execute_plan: video " + shape_str(video.shape()) + " does not match plan length " +
                                std::to_string(plan.length));
  }
  const auto c = video.dim(1), h = video.dim(2), w = video.dim(3);
  if (mask.height() != h || mask.width() != w) throw std::invalid_argument("execute_plan: mask size mismatch");
  const Shape frame_shape{c, h, w};
  const auto plane = c * h * w;

  // Observed input: hidden pixels are never visible to the sampler.
  std::vector<float> observed(video.data().begin(), video.data().end());
  for (std::size_t f = 0; f < plan.length; ++f)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          if (!mask.visible(y, x)) observed[f * plane + (ch * h + y) * w + x] = 0.0f;

  const auto global = gather_frames(observed, frame_shape, global_frame_indices(plan.length, model.config().global_frames));
  const std::vector<float> truth_store(video.data().begin(), video.data().end());
  std::vector<float> store(observed.size(), 0.0f);
  const auto depths = call_depths(plan);
  std::vector<CallRecord> records(plan.calls.size());

  std::map<std::size_t, std::vector<std::size_t>> waves;
  for (std::size_t i = 0; i < depths.size(); ++i) waves[depths[i]].push_back(i);

  auto run_call = [&](std::size_t id) {
    const auto& call = plan.calls[id];
    ClipRequest req;
    req.frames = gather_frames(observed, frame_shape, call.indices);
    req.roles = call.roles();
    for (auto slot : call.guide_slots()) {
      req.guides[slot] = reshape(gather_frames(store, frame_shape, {call.indices[slot]}), frame_shape);
    }
    req.mask = mask;
    req.global_frames = global;
    req.fps = static_cast<int>(std::clamp<std::size_t>(call.stride, 1, 30));
    auto opts = options.outpaint;
    opts.stream = id;
    const auto began = std::chrono::steady_clock::now();
    const auto out = outpaint_clip(model, schedule, req, opts);

    CallRecord rec;
    rec.call_id = id;
    rec.level = call.level;
    rec.stride = call.stride;
    rec.fps = req.fps;
    rec.depth = depths[id];
    rec.indices = call.indices;
    if (has_truth) {
      const auto truth = gather_frames(truth_store, frame_shape, call.indices);
      rec.hidden_mse = hidden_region_mse(out, truth, mask, req.roles);
    }
    // Each index is produced by exactly one call, so new-slot writes never overlap.
    for (auto slot : call.new_slots())
      std::copy_n(out.data().begin() + static_cast<std::ptrdiff_t>(slot * plane), plane,
                  store.begin() + static_cast<std::ptrdiff_t>(call.indices[slot] * plane));
    rec.frames = out;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - began).count();
    records[id] = std::move(rec);
  };

  const auto threads = std::max<std::size_t>(1, options.threads);
  for (const auto& [depth, ids] : waves) {
    if (threads == 1 || ids.size() == 1) {
      for (auto id : ids) run_call(id);
      continue;
    }
    std::size_t next = 0;
    std::mutex mu;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, ids.size()); ++t) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t id;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= ids.size() || failure) return;
            id = ids[next++];
          }
          try {
            run_call(id);
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  return PlanResult{Tensor(video.shape(), std::move(store)), std::move(records)};
}

std::string call_records_csv(const std::vector<CallRecord>& records) {
  std::ostringstream os;
  os << "call_id,level,stride,fps,depth,first,last,hidden_mse\n";
  os << std::setprecision(9);
  for (const auto& r : records) {
    os << r.call_id << ',' << r.level << ',' << r.stride << ',' << r.fps << ',' << r.depth << ','
       << r.indices.front() << ',' << r.indices.back() << ',';
    if (r.hidden_mse) os << *r.hidden_mse;
    os << '\n';
  }
  return os.str();
}

}  // namespace m3d
