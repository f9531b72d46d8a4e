#include <fstream>
#include <set>
#include <sstream>

#include "knotseg/binio.hpp"
#include "knotseg/volume.hpp"

namespace knotseg {

// KVOL v1 layout:
//   "KVOL" | u32 version | u8 payload_kind | u16 T H W | f32 pixel_pitch_mm
//   | f32 slice_pitch_mm | u32 tree_id | f32 z_offset_mm | payload | crc64
// payload_kind 0: bit-packed contour stack then knot stack (LSB-first,
// row-major voxel order). payload_kind 1: raw f32 probability stack.
namespace {

constexpr char kMagic[4] = {'K', 'V', 'O', 'L'};
constexpr std::uint32_t kVersion = 1;

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint8_t> out((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
  }
  return out;
}

std::vector<std::uint8_t> unpack_bits(const std::uint8_t* packed,
                                      std::size_t voxels) {
  std::vector<std::uint8_t> out(voxels);
  for (std::size_t i = 0; i < voxels; ++i) {
    out[i] = (packed[i >> 3] >> (i & 7)) & 1u;
  }
  return out;
}

struct Header {
  std::uint8_t kind;
  int t, h, w;
  float px, sz, zoff;
  std::uint32_t tree_id;
};

void put_header(ByteWriter& bw, const Header& hd) {
  bw.put_bytes(kMagic, 4);
  bw.put_u32(kVersion);
  bw.put_u8(hd.kind);
  bw.put_u16(static_cast<std::uint16_t>(hd.t));
  bw.put_u16(static_cast<std::uint16_t>(hd.h));
  bw.put_u16(static_cast<std::uint16_t>(hd.w));
  bw.put_f32(hd.px);
  bw.put_f32(hd.sz);
  bw.put_u32(hd.tree_id);
  bw.put_f32(hd.zoff);
}

Header get_header(ByteReader& br, const std::string& source,
                  std::uint8_t want_kind) {
  char magic[4];
  br.get_bytes(magic, 4);
  const std::uint32_t version = br.get_u32();
  if (version != kVersion) {
    fail_runtime(source, ": KVOL version mismatch (found ", version,
                 ", expected ", kVersion, ")");
  }
  Header hd;
  hd.kind = br.get_u8();
  if (hd.kind != want_kind) {
    fail_runtime(source, ": payload kind ", int(hd.kind), ", expected ",
                 int(want_kind),
                 want_kind == 0 ? " (binary mask pair)" : " (probabilities)");
  }
  hd.t = br.get_u16();
  hd.h = br.get_u16();
  hd.w = br.get_u16();
  hd.px = br.get_f32();
  hd.sz = br.get_f32();
  hd.tree_id = br.get_u32();
  hd.zoff = br.get_f32();
  return hd;
}

}  // namespace

void write_volume(const VolumeSample& sample, const std::filesystem::path& p) {
  sample.validate();
  ByteWriter bw;
  put_header(bw, {0, sample.t, sample.h, sample.w, sample.pixel_pitch_mm,
                  sample.slice_pitch_mm, sample.z_offset_mm, sample.tree_id});
  const auto cbits = pack_bits(sample.contour);
  const auto kbits = pack_bits(sample.knots);
  bw.put_bytes(cbits.data(), cbits.size());
  bw.put_bytes(kbits.data(), kbits.size());
  bw.put_trailing_crc();
  write_file_atomic(p, bw.bytes());
}

VolumeSample read_volume(const std::filesystem::path& p) {
  const auto bytes = read_file_checked(p, kMagic);
  ByteReader br(bytes.data(), bytes.size(), p.string());
  const Header hd = get_header(br, p.string(), 0);
  VolumeSample s;
  s.t = hd.t;
  s.h = hd.h;
  s.w = hd.w;
  s.pixel_pitch_mm = hd.px;
  s.slice_pitch_mm = hd.sz;
  s.tree_id = hd.tree_id;
  s.z_offset_mm = hd.zoff;
  const std::size_t voxels = static_cast<std::size_t>(s.voxels());
  const std::size_t packed = (voxels + 7) / 8;
  std::vector<std::uint8_t> buf(packed);
  br.get_bytes(buf.data(), packed);
  s.contour = unpack_bits(buf.data(), voxels);
  br.get_bytes(buf.data(), packed);
  s.knots = unpack_bits(buf.data(), voxels);
  s.validate();
  return s;
}

void write_prob_volume(const ProbVolume& v, const std::filesystem::path& p) {
  require(v.probs.size() ==
              static_cast<std::size_t>(v.t) * v.h * v.w,
          "prob volume: payload size disagrees with extents");
  ByteWriter bw;
  put_header(bw, {1, v.t, v.h, v.w, v.pixel_pitch_mm, v.slice_pitch_mm,
                  v.z_offset_mm, v.tree_id});
  bw.put_bytes(v.probs.data(), v.probs.size() * sizeof(float));
  bw.put_trailing_crc();
  write_file_atomic(p, bw.bytes());
}

ProbVolume read_prob_volume(const std::filesystem::path& p) {
  const auto bytes = read_file_checked(p, kMagic);
  ByteReader br(bytes.data(), bytes.size(), p.string());
  const Header hd = get_header(br, p.string(), 1);
  ProbVolume v;
  v.t = hd.t;
  v.h = hd.h;
  v.w = hd.w;
  v.pixel_pitch_mm = hd.px;
  v.slice_pitch_mm = hd.sz;
  v.tree_id = hd.tree_id;
  v.z_offset_mm = hd.zoff;
  v.probs.resize(static_cast<std::size_t>(v.t) * v.h * v.w);
  br.get_bytes(v.probs.data(), v.probs.size() * sizeof(float));
  return v;
}

std::vector<const ManifestEntry*> Manifest::fold_entries(
    const std::string& fold) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.fold == fold) out.push_back(&e);
  }
  return out;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::set<std::uint32_t> seen;
  for (const auto& e : m.entries) {
    if (!seen.insert(e.tree_id).second) {
      fail("manifest: duplicate tree_id ", e.tree_id);
    }
  }
  std::ostringstream os;
  os << "# knotseg dataset manifest: tree_id species fold files...\n";
  for (const auto& e : m.entries) {
    os << e.tree_id << ' ' << e.species << ' ' << e.fold;
    for (const auto& f : e.files) os << ' ' << f;
    os << '\n';
  }
  const std::string text = os.str();
  std::vector<unsigned char> bytes(text.begin(), text.end());
  write_file_atomic(path, bytes);
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail_runtime(path.string(), ": cannot open manifest");
  Manifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path()
                                      : std::filesystem::path(".");
  std::set<std::uint32_t> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    ManifestEntry e;
    if (!(is >> e.tree_id >> e.species >> e.fold)) {
      fail_runtime(path.string(), ":", lineno, ": malformed manifest record");
    }
    if (e.species != "fir" && e.species != "spruce") {
      fail_runtime(path.string(), ":", lineno, ": unknown species '",
                   e.species, "'");
    }
    if (e.fold != "train" && e.fold != "val" && e.fold != "test") {
      fail_runtime(path.string(), ":", lineno, ": unknown fold '", e.fold,
                   "'");
    }
    // one record per tree keeps fold assignment per-tree; a duplicate id
    // would let a tree leak across folds
    if (!seen.insert(e.tree_id).second) {
      fail_runtime(path.string(), ":", lineno, ": tree ", e.tree_id,
                   " appears in more than one record");
    }
    std::string f;
    while (is >> f) e.files.push_back(f);
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace knotseg
