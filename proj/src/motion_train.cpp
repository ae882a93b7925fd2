#include "deco/motion_train.hpp"

#include <cmath>

namespace deco {

TensorF stack_clips(const std::vector<TensorF>& clips) {
  if (clips.empty()) throw ValidationError("stack_clips: no clips");
  const Shape& s = clips.front().shape();
  TensorF::Vector v(static_cast<Index>(clips.size()) * clips.front().size());
  Index offset = 0;
  for (const auto& c : clips) {
    if (c.shape() != s) throw ValidationError("stack_clips: clip shapes differ");
    v.segment(offset, c.size()) = c.values();
    offset += c.size();
  }
  Shape out = s;
  out.insert(out.begin(), static_cast<Index>(clips.size()));
  return TensorF(out, std::move(v));
}

TensorF sample_batch(const std::vector<TensorF>& clips, Index batch, Rng& rng) {
  if (clips.empty()) throw ValidationError("sample_batch: dataset is empty");
  std::vector<TensorF> picked;
  for (Index i = 0; i < batch; ++i)
    picked.push_back(clips[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(clips.size()) - 1))]);
  return stack_clips(picked);
}

TensorF warp_l1(const MotionNet<float>& net, const TensorF& batch) {
  const TensorF keyframe = first_frame(batch);
  const TensorF predicted = warp(build_pyramid(keyframe), net(batch, keyframe));
  return mean(abs(sub(predicted, batch)));
}

double copy_keyframe_l1(const TensorF& batch) {
  const TensorF keyframe = repeat(slice(batch, 2, 0, 1), 2, batch.dim(2));
  return static_cast<double>(mean(abs(sub(keyframe, batch))).item());
}

double motion_warmup_step(const MotionNet<float>& net, ParameterStore<float>& store, OptimizerState& opt,
                          const TensorF& batch, double clip_norm, std::int64_t step_index) {
  const TensorF loss = warp_l1(net, batch);
  const double value = loss.item();
  if (!std::isfinite(value))
    throw RuntimeAbort("motion warm-up: non-finite loss at step " + std::to_string(step_index));
  store.zero_grad();
  loss.backward();
  std::vector<ParameterStore<float>::Entry> entries;
  for (const auto& e : store.entries())
    if (e.group == MotionNet<float>::kGroup) entries.push_back(e);
  clip_grad_norm(entries, clip_norm);
  adam_step(store, opt, {}, {MotionNet<float>::kGroup});
  return value;
}

void pretrain_motion(const MotionNet<float>& net, ParameterStore<float>& store, const std::vector<TensorF>& clips,
                     std::int64_t steps, const AdamConfig& adam, Rng& rng, Index batch, double clip_norm) {
  if (clips.empty()) throw ValidationError("pretrain_motion: dataset is empty");
  OptimizerState opt{adam, {}};
  for (std::int64_t s = 0; s < steps; ++s) motion_warmup_step(net, store, opt, sample_batch(clips, batch, rng), clip_norm, s);
}

}  // namespace deco
