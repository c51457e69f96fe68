// SPDX-License-Identifier: Apache-2.0
//
// Coarse-to-fine outpainting plans.
//
// Level k covers the grid of frame indices that are multiples of levels[k].
// Windows of up to F consecutive grid points slide along the grid; grid points
// produced by earlier calls become guide slots and the rest are generated.
// Coarsest-level windows overlap the previous window by one keyframe, finer
// levels start each window at the last coarser keyframe at or before the
// first missing index, and a window that would run past the end is
// right-aligned so every call keeps a uniform stride.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "m3d/denoiser.hpp"
#include "m3d/diffusion.hpp"
#include "m3d/guidance.hpp"
#include "m3d/mask.hpp"

namespace m3d {

enum class PlanMode { Hybrid, Dense, InfillOnly };
std::string to_string(PlanMode m);
PlanMode parse_plan_mode(const std::string& name);

inline const std::vector<std::size_t> kDefaultLevels = {30, 15, 1};

struct InferenceCall {
  std::size_t id = 0;
  std::size_t level = 0;
  std::size_t stride = 1;
  std::vector<std::size_t> indices;  // strictly increasing global frame indices
  // Per slot: the call that generated the frame, or empty for a new slot.
  std::vector<std::optional<std::size_t>> provenance;

  std::vector<std::size_t> guide_slots() const;
  std::vector<std::size_t> new_slots() const;
  std::vector<FrameRole> roles() const;
};

struct CtfPlan {
  PlanMode mode = PlanMode::Hybrid;
  std::size_t length = 0;
  std::size_t frames = 0;
  std::vector<std::size_t> levels;
  std::vector<InferenceCall> calls;
};

// Throws std::invalid_argument when L < F, F < 2, or the levels are not
// strictly decreasing, end in 1, divide each other, and step by at most F - 1.
CtfPlan plan_hybrid(std::size_t length, std::size_t frames, const std::vector<std::size_t>& levels);
CtfPlan plan_dense(std::size_t length, std::size_t frames);
// Keeps the longest tail of `levels` whose ratios equal F - 1 and prepends a
// coarsest stride (F - 1) times larger, so every window is guided only by its
// first and last frame.
std::vector<std::size_t> infill_only_levels(const std::vector<std::size_t>& levels, std::size_t frames);
CtfPlan plan_infill_only(std::size_t length, std::size_t frames, const std::vector<std::size_t>& levels);
CtfPlan make_plan(PlanMode mode, std::size_t length, std::size_t frames, const std::vector<std::size_t>& levels);

// Checks coverage, uniqueness, uniform strides, level strides and that every
// guide's provenance precedes its reader and produced that index. Throws
// std::invalid_argument naming the first violation.
void validate_plan(const CtfPlan& plan);

// Longest path (in calls) through the dependency DAG; throws
// std::invalid_argument on a cycle or a dangling provenance.
std::size_t chain_depth(const CtfPlan& plan);
// Depth of every call, in call order.
std::vector<std::size_t> call_depths(const CtfPlan& plan);

// Text table ending with "calls=N chain_depth=D".
std::string plan_table(const CtfPlan& plan);
// "call_id,depth" rows.
std::string plan_depth_csv(const CtfPlan& plan);

// Worker cap from M3DDM_THREADS, else the hardware concurrency.
std::size_t worker_count();

struct ExecuteOptions {
  OutpaintOptions outpaint;  // stream is replaced by the call id
  std::size_t threads = 1;
};

struct CallRecord {
  std::size_t call_id = 0;
  std::size_t level = 0;
  std::size_t stride = 0;
  int fps = 1;
  std::size_t depth = 0;
  std::vector<std::size_t> indices;
  std::optional<double> hidden_mse;
  Tensor frames;         // composited call output
  double seconds = 0.0;  // wall time, informational only
};

struct PlanResult {
  Tensor video;  // (L, C, H, W) in [0, 1]
  std::vector<CallRecord> records;
};

// `video` (L, C, H, W) supplies the visible region; hidden pixels are zeroed
// before use and only read again, as ground truth, for the per-call error
// when `has_truth` is set. Calls run in waves of equal dependency depth.
PlanResult execute_plan(const Denoiser& model, const NoiseSchedule& schedule, const CtfPlan& plan, const Tensor& video,
                        const MaskSpec& mask, const ExecuteOptions& options, bool has_truth = true);

// g indices spread evenly over [0, L).
std::vector<std::size_t> global_frame_indices(std::size_t length, std::size_t count);

// "call_id,level,stride,fps,depth,first,last,hidden_mse" rows.
std::string call_records_csv(const std::vector<CallRecord>& records);

}  // namespace m3d
