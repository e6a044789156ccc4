#pragma once

#include <torch/torch.h>

#include "neuralmat/brdf.hpp"

namespace neuralmat {

/// Differentiable flash rendering of decoder output.
///
/// maps: [N, 6, H, W] in the decoder channel layout. angles: [N, 2]
/// (horizontal, vertical) radians added to the base geometry rotation, or an
/// undefined tensor for none. Returns linear radiance [N, 3, H, W]. The map
/// gradient is the analytic one of shade_gradient; the angle gradient uses
/// central differences with step kAngleStep.
torch::Tensor render_maps(const torch::Tensor& maps, const torch::Tensor& angles, const CaptureGeometry& geometry,
                          const RenderOptions& options = {});

/// Differentiable gamma 2.2 encode, clamped to [0, 1].
torch::Tensor srgb_encode(const torch::Tensor& linear);

constexpr double kAngleStep = 1e-4;

}  // namespace neuralmat
