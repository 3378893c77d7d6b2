#pragma once

#include <string>
#include <variant>

#include "inatlas/volume.hpp"

namespace inatlas::nifti {

// NIfTI-1 single-file (.nii) subset: little-endian, datatype float32 (16)
// or uint8 (2), identity orientation with spacing from pixdim, payload at
// vox_offset 352. Multi-channel volumes use dim[0]=4 with dim[4]=channels.

using ReadResult = std::variant<Volume, LabelMap>;

ReadResult read(const std::string& path);

Volume read_volume(const std::string& path);
LabelMap read_labels(const std::string& path);
Mask read_mask(const std::string& path);  // uint8 payload, nonzero = inside

void write(const Volume& v, const std::string& path);
void write(const LabelMap& l, const std::string& path);
void write(const Mask& m, const std::string& path);

}  // namespace inatlas::nifti
