#include "inatlas/nifti.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "inatlas/errors.hpp"

namespace inatlas::nifti {

namespace {

constexpr int kHeaderSize = 348;
constexpr float kVoxOffset = 352.0f;
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtFloat32 = 16;

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1;
  float intent_p2;
  float intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax;
  std::int32_t glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b;
  float quatern_c;
  float quatern_d;
  float qoffset_x;
  float qoffset_y;
  float qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == kHeaderSize, "NIfTI-1 header must be 348 bytes");

Nifti1Header make_header(const Dims& dims, const Spacing& spacing, int channels,
                         std::int16_t datatype) {
  Nifti1Header h;
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = kHeaderSize;
  h.regular = 'r';
  h.dim[0] = channels > 1 ? 4 : 3;
  h.dim[1] = static_cast<std::int16_t>(dims[0]);
  h.dim[2] = static_cast<std::int16_t>(dims[1]);
  h.dim[3] = static_cast<std::int16_t>(dims[2]);
  h.dim[4] = static_cast<std::int16_t>(channels > 1 ? channels : 1);
  for (int i = 5; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = datatype == kDtFloat32 ? 32 : 8;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(spacing[0]);
  h.pixdim[2] = static_cast<float>(spacing[1]);
  h.pixdim[3] = static_cast<float>(spacing[2]);
  h.pixdim[4] = 1.0f;
  h.vox_offset = kVoxOffset;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // millimeters
  h.magic[0] = 'n';
  h.magic[1] = '+';
  h.magic[2] = '1';
  h.magic[3] = '\0';
  return h;
}

void write_file(const Dims& dims, const Spacing& spacing, int channels,
                std::int16_t datatype, const void* payload, std::size_t payload_bytes,
                const std::string& path) {
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    throw ShapeError("nifti::write: non-positive dims");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("nifti::write: cannot open " + path);

  const Nifti1Header h = make_header(dims, spacing, channels, datatype);
  f.write(reinterpret_cast<const char*>(&h), sizeof(h));
  const char pad[4] = {0, 0, 0, 0};  // extension flag, all zero
  f.write(pad, 4);
  f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
  if (!f) throw IoError("nifti::write: short write to " + path);
}

struct RawFile {
  Nifti1Header header;
  std::vector<char> payload;
};

RawFile read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("nifti::read: cannot open " + path);

  RawFile raw;
  f.read(reinterpret_cast<char*>(&raw.header), sizeof(raw.header));
  if (f.gcount() != kHeaderSize) throw IoError("nifti::read: truncated header in " + path);

  const Nifti1Header& h = raw.header;
  if (h.sizeof_hdr != kHeaderSize)
    throw FormatError("nifti::read: sizeof_hdr != 348 (big-endian or not NIfTI-1): " + path);
  if (std::strncmp(h.magic, "n+1", 4) != 0)
    throw FormatError("nifti::read: magic \"n+1\" absent in " + path);
  if (h.datatype != kDtUint8 && h.datatype != kDtFloat32)
    throw UnsupportedError("nifti::read: unsupported datatype " + std::to_string(h.datatype) +
                           " in " + path);
  if (h.dim[0] < 3 || h.dim[0] > 4)
    throw UnsupportedError("nifti::read: only 3D/4D images supported, dim[0]=" +
                           std::to_string(h.dim[0]));
  if (h.dim[1] <= 0 || h.dim[2] <= 0 || h.dim[3] <= 0)
    throw FormatError("nifti::read: non-positive spatial dims in " + path);

  const int channels = h.dim[0] == 4 ? std::max<int>(1, h.dim[4]) : 1;
  const std::size_t nvox = static_cast<std::size_t>(h.dim[1]) * h.dim[2] * h.dim[3];
  const std::size_t bytes_per = h.datatype == kDtFloat32 ? 4 : 1;
  const std::size_t payload_bytes = nvox * channels * bytes_per;

  const auto offset = static_cast<std::streamoff>(h.vox_offset);
  f.seekg(offset, std::ios::beg);
  raw.payload.resize(payload_bytes);
  f.read(raw.payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (static_cast<std::size_t>(f.gcount()) != payload_bytes)
    throw IoError("nifti::read: truncated payload in " + path);
  return raw;
}

Spacing spacing_of(const Nifti1Header& h) {
  return {h.pixdim[1], h.pixdim[2], h.pixdim[3]};
}

Dims dims_of(const Nifti1Header& h) {
  return {h.dim[1], h.dim[2], h.dim[3]};
}

}  // namespace

ReadResult read(const std::string& path) {
  RawFile raw = read_file(path);
  const Nifti1Header& h = raw.header;
  if (h.datatype == kDtFloat32) {
    const int channels = h.dim[0] == 4 ? std::max<int>(1, h.dim[4]) : 1;
    Volume v(dims_of(h), channels, spacing_of(h));
    std::memcpy(v.data.data(), raw.payload.data(), raw.payload.size());
    return v;
  }
  LabelMap l(dims_of(h), 1, spacing_of(h));
  std::memcpy(l.labels.data(), raw.payload.data(), raw.payload.size());
  int max_label = 0;
  for (auto v : l.labels) max_label = std::max<int>(max_label, v);
  l.num_classes = max_label + 1;
  return l;
}

Volume read_volume(const std::string& path) {
  ReadResult r = read(path);
  if (auto* v = std::get_if<Volume>(&r)) return std::move(*v);
  throw FormatError("nifti::read_volume: " + path + " holds integer data, expected float32");
}

LabelMap read_labels(const std::string& path) {
  ReadResult r = read(path);
  if (auto* l = std::get_if<LabelMap>(&r)) return std::move(*l);
  throw FormatError("nifti::read_labels: " + path + " holds float data, expected uint8");
}

Mask read_mask(const std::string& path) {
  LabelMap l = read_labels(path);
  Mask m(l.dims, l.spacing);
  for (std::size_t i = 0; i < l.labels.size(); ++i) m.inside[i] = l.labels[i] ? 1 : 0;
  return m;
}

void write(const Volume& v, const std::string& path) {
  write_file(v.dims, v.spacing, v.channels, kDtFloat32, v.data.data(),
             v.data.size() * sizeof(float), path);
}

void write(const LabelMap& l, const std::string& path) {
  write_file(l.dims, l.spacing, 1, kDtUint8, l.labels.data(), l.labels.size(), path);
}

void write(const Mask& m, const std::string& path) {
  write_file(m.dims, m.spacing, 1, kDtUint8, m.inside.data(), m.inside.size(), path);
}

}  // namespace inatlas::nifti
