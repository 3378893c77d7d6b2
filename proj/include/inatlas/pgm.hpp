#pragma once

#include <string>

#include "inatlas/volume.hpp"

namespace inatlas::pgm {

// Writes the axial/coronal/sagittal mid-slices of one channel as 8-bit
// binary PGM (P5) files named <prefix>_{axial,coronal,sagittal}.pgm.
// Values are clamped to [0,1] and scaled to [0,255].
void export_mid_slices(const Volume& v, int channel, const std::string& prefix);

}  // namespace inatlas::pgm
