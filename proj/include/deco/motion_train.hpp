#pragma once

// Photometric warm-up of the motion network.

#include "deco/decouple.hpp"
#include "deco/optim.hpp"

#include <cstdint>
#include <vector>

namespace deco {

/// Stacks [3,T,H,W] clips into a [N,3,T,H,W] batch.
TensorF stack_clips(const std::vector<TensorF>& clips);

/// Draws `batch` clip indices uniformly with replacement.
TensorF sample_batch(const std::vector<TensorF>& clips, Index batch, Rng& rng);

/// mean |warp(x_0, M(x_t, x_0)) - x_t| over a batch.
TensorF warp_l1(const MotionNet<float>& net, const TensorF& batch);

/// mean |x_0 - x_t|: the error of predicting every frame by the keyframe.
double copy_keyframe_l1(const TensorF& batch);

/// One Adam step on the motion_net group. Returns the loss before the update.
/// Throws RuntimeAbort with the step index on a non-finite loss.
double motion_warmup_step(const MotionNet<float>& net, ParameterStore<float>& store, OptimizerState& opt,
                          const TensorF& batch, double clip_norm, std::int64_t step_index);

/// Runs `steps` warm-up steps on batches drawn from `clips`.
void pretrain_motion(const MotionNet<float>& net, ParameterStore<float>& store, const std::vector<TensorF>& clips,
                     std::int64_t steps, const AdamConfig& adam, Rng& rng, Index batch = 4, double clip_norm = 1.0);

}  // namespace deco
