// SPDX-License-Identifier: Apache-2.0

#include "m3d/checkpoint.hpp"

#include "m3d/binary_io.hpp"

namespace m3d {

std::string encode_checkpoint(const ParamStore& params, std::string_view header) {
  ByteWriter w;
  w.bytes("M3DT");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (float v : t.data()) w.f32(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  if (r.bytes(4) != "M3DT") r.fail("bad magic, expected M3DT");
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.header = std::string(r.bytes(r.u32()));
  const auto count = r.u32();
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name(r.bytes(r.u32()));
    const auto rank = r.u32();
    if (rank == 0) r.fail("entry '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& d : shape) {
      const auto v = r.u64();
      if (v == 0) r.fail("entry '" + name + "' has a zero dimension");
      d = static_cast<std::size_t>(v);
    }
    const auto n = shape_numel(shape);
    if (r.remaining() / 4 < n) r.fail("entry '" + name + "' payload truncated");
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32();
    ck.params.add(name, Tensor(std::move(shape), std::move(values), true));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last entry");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, std::string_view header) {
  write_file_atomic(path, encode_checkpoint(params, header));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace m3d
