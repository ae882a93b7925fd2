#pragma once

// Keyframe / motion / residual decomposition of a clip and its inverse.

#include "deco/motion.hpp"

namespace deco {

/// All stacks are [N, 3, T, H, W].
template <typename S>
struct DecoupledComponents {
  Tensor<S> keyframe;        // x_0 as [N, 3, H, W]
  Tensor<S> keyframe_stack;  // x_0 replicated over T
  Tensor<S> motion;          // m_t, including m_0
  Tensor<S> residual;        // x_t - warp(x_0, m_t)
};

/// First frame of a [N, 3, T, H, W] batch as [N, 3, H, W].
template <typename S>
Tensor<S> first_frame(const Tensor<S>& video) {
  if (video.rank() != 5) throw ValidationError("first_frame: expected [N,3,T,H,W], got " + shape_str(video.shape()));
  return reshape(slice(video, 2, 0, 1), {video.dim(0), video.dim(1), video.dim(3), video.dim(4)});
}

/// Decomposition with a given motion stack, bypassing the network.
template <typename S>
DecoupledComponents<S> decouple_with_motion(const Tensor<S>& video, const Tensor<S>& motion) {
  if (video.rank() != 5 || video.dim(1) != 3)
    throw ValidationError("decouple: video must be [N,3,T,H,W], got " + shape_str(video.shape()));
  if (motion.shape() != video.shape())
    throw ValidationError("decouple: motion " + shape_str(motion.shape()) + " does not match video " +
                          shape_str(video.shape()));
  DecoupledComponents<S> out;
  out.keyframe = first_frame(video);
  out.keyframe_stack = repeat(slice(video, 2, 0, 1), 2, video.dim(2));
  out.motion = motion;
  out.residual = sub(video, warp(build_pyramid(out.keyframe), motion));
  return out;
}

/// Runs the motion net on every (x_t, x_0) pair, then decomposes.
template <typename S>
DecoupledComponents<S> decouple(const Tensor<S>& video, const MotionNet<S>& net) {
  if (video.rank() != 5 || video.dim(1) != 3)
    throw ValidationError("decouple: video must be [N,3,T,H,W], got " + shape_str(video.shape()));
  return decouple_with_motion(video, net(video, first_frame(video)));
}

/// x_t = warp(x_0, m_t) + r_t for every frame; not clamped.
template <typename S>
Tensor<S> recouple(const Tensor<S>& keyframe, const Tensor<S>& motion, const Tensor<S>& residual) {
  if (motion.shape() != residual.shape())
    throw ValidationError("recouple: motion " + shape_str(motion.shape()) + " and residual " +
                          shape_str(residual.shape()) + " differ");
  return add(warp(keyframe, motion), residual);
}

/// Adds a leading batch axis to a [3, T, H, W] clip.
template <typename S>
Tensor<S> as_batch(const Tensor<S>& clip) {
  Shape s = clip.shape();
  s.insert(s.begin(), 1);
  return reshape(clip, s);
}

}  // namespace deco
