#pragma once

#include "ltrack/datamodel.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ltrack::io {

// PGRM: "PGRM", u16 version, f64 pitch_min, f64 pitch_max, f64 bin_cents,
// f64 hop_s, u32 n_bins, u32 n_frames, then n_bins*n_frames f32 row-major.
// Everything little-endian.
inline constexpr std::uint16_t kPgrmVersion = 1;

void write_pgrm(std::ostream& out, const Pitchogram& p);
Pitchogram read_pgrm(std::istream& in);
void save_pgrm(const std::filesystem::path& path, const Pitchogram& p);
Pitchogram load_pgrm(const std::filesystem::path& path);
/// Several records back to back in one file.
void save_pgrm_records(const std::filesystem::path& path, std::span<const Pitchogram> records);
std::vector<Pitchogram> load_pgrm_records(const std::filesystem::path& path);

/// JSON array of {"id", "duration_s", "notes": [[pitch, onset, offset], ...]}.
std::string annotations_to_json(std::span<const TrackAnnotation> tracks);
std::vector<TrackAnnotation> annotations_from_json(std::string_view text);
void save_annotations(const std::filesystem::path& path, std::span<const TrackAnnotation> tracks);
std::vector<TrackAnnotation> load_annotations(const std::filesystem::path& path);

/// One JSON object per line: {"frames":[...], "bins":[...], "acts":[...]}.
std::string ridges_to_jsonl(std::span<const Ridge> ridges);
std::vector<Ridge> ridges_from_jsonl(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// 64-bit FNV-1a; used for content addressing, not security.
class Hasher {
 public:
  Hasher& bytes(const void* data, std::size_t n);
  Hasher& str(std::string_view s);
  Hasher& f64(double v);
  Hasher& i64(std::int64_t v);
  template <typename T>
  Hasher& pod_span(std::span<const T> v) {
    i64(static_cast<std::int64_t>(v.size()));
    return bytes(v.data(), v.size_bytes());
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 14695981039346656037ull;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace ltrack::io
