#pragma once

#include "inatlas/volume.hpp"

namespace inatlas::metrics {

// 10*log10(1/MSE) over masked voxels of channel `channel`, data range [0,1].
// Identical inputs return +infinity.
double psnr(const Volume& a, const Volume& b, const Mask& m, int channel = 0);

// Structural similarity with a 3D Gaussian window (size 11, sigma 1.5) and
// stabilizers C1=(0.01)^2, C2=(0.03)^2, averaged over masked voxels. Windows
// are truncated and renormalized at the volume border; the mask selects which
// window centers enter the average.
double ssim3d(const Volume& a, const Volume& b, const Mask& m, int channel = 0);

// Dice overlap 2|A^B| / (|A|+|B|) of class k. Both classes empty -> 1,
// exactly one empty -> 0.
double dice(const LabelMap& a, const LabelMap& b, int k);

// Mean Dice over classes [1, num_classes).
double mean_foreground_dice(const LabelMap& a, const LabelMap& b, int num_classes);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace inatlas::metrics
