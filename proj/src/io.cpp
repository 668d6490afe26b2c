#include "ltrack/io.hpp"

#include "ltrack/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace ltrack::io {

using nlohmann::json;

namespace {

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error("pgrm: truncated header");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_pgrm(std::ostream& out, const Pitchogram& p) {
  out.write("PGRM", 4);
  put_le<std::uint16_t>(out, kPgrmVersion);
  put_le<double>(out, p.grid.pitch_min_midi);
  put_le<double>(out, p.grid.pitch_max_midi);
  put_le<double>(out, p.grid.bin_cents);
  put_le<double>(out, p.grid.hop_s);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.values.rows()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.values.cols()));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(p.values.data()),
              static_cast<std::streamsize>(p.values.size() * sizeof(float)));
  } else {
    for (Eigen::Index i = 0; i < p.values.size(); ++i) put_le<float>(out, p.values.data()[i]);
  }
  if (!out) throw Error("pgrm: write failed");
}

Pitchogram read_pgrm(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "PGRM", 4) != 0) throw Error("pgrm: bad magic");
  const auto version = get_le<std::uint16_t>(in);
  if (version != kPgrmVersion) throw Error("pgrm: unsupported version " + std::to_string(version));
  Pitchogram p;
  p.grid.pitch_min_midi = get_le<double>(in);
  p.grid.pitch_max_midi = get_le<double>(in);
  p.grid.bin_cents = get_le<double>(in);
  p.grid.hop_s = get_le<double>(in);
  const auto n_bins = get_le<std::uint32_t>(in);
  const auto n_frames = get_le<std::uint32_t>(in);
  p.values.resize(n_bins, n_frames);
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(p.values.data()),
                 static_cast<std::streamsize>(p.values.size() * sizeof(float)))) {
      throw Error("pgrm: truncated payload");
    }
  } else {
    for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values.data()[i] = get_le<float>(in);
  }
  return p;
}

void save_pgrm(const std::filesystem::path& path, const Pitchogram& p) {
  save_pgrm_records(path, std::span<const Pitchogram>(&p, 1));
}

Pitchogram load_pgrm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_pgrm(in);
}

void save_pgrm_records(const std::filesystem::path& path, std::span<const Pitchogram> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) write_pgrm(out, r);
}

std::vector<Pitchogram> load_pgrm_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Pitchogram> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_pgrm(in));
  return out;
}

std::string annotations_to_json(std::span<const TrackAnnotation> tracks) {
  json arr = json::array();
  for (const auto& t : tracks) {
    json notes = json::array();
    for (const auto& n : t.notes) notes.push_back({n.pitch_midi, n.onset_s, n.offset_s});
    arr.push_back({{"id", t.track_id}, {"duration_s", t.duration_s}, {"notes", std::move(notes)}});
  }
  return arr.dump(1);
}

std::vector<TrackAnnotation> annotations_from_json(std::string_view text) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("annotation JSON: ") + e.what());
  }
  if (!arr.is_array()) throw ConfigError("annotation JSON: top level must be an array of tracks");
  std::vector<TrackAnnotation> out;
  for (const auto& jt : arr) {
    TrackAnnotation t;
    try {
      t.track_id = jt.at("id").get<std::string>();
      t.duration_s = jt.at("duration_s").get<double>();
      for (const auto& jn : jt.at("notes")) {
        if (!jn.is_array() || jn.size() != 3) throw ConfigError("note must be [pitch, onset, offset]");
        t.notes.push_back({jn[0].get<double>(), jn[1].get<double>(), jn[2].get<double>()});
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("annotation JSON: ") + e.what());
    }
    sort_notes(t.notes);
    validate(t);
    out.push_back(std::move(t));
  }
  return out;
}

void save_annotations(const std::filesystem::path& path, std::span<const TrackAnnotation> tracks) {
  write_file(path, annotations_to_json(tracks));
}

std::vector<TrackAnnotation> load_annotations(const std::filesystem::path& path) {
  return annotations_from_json(read_file(path));
}

std::string ridges_to_jsonl(std::span<const Ridge> ridges) {
  std::string out;
  for (const auto& r : ridges) {
    json j = {{"frames", r.frames}, {"bins", r.pitch_bins}, {"acts", r.activations}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Ridge> ridges_from_jsonl(std::string_view text) {
  std::vector<Ridge> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Ridge r;
    r.frames = j.at("frames").get<std::vector<int>>();
    r.pitch_bins = j.at("bins").get<std::vector<double>>();
    r.activations = j.at("acts").get<std::vector<double>>();
    out.push_back(std::move(r));
  }
  return out;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw Error("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        v[k] = 0;
        ++pad;
      } else {
        v[k] = value(c);
        if (v[k] < 0 || pad > 0) throw Error("base64: invalid character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((w >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w & 0xff));
  }
  return out;
}

Hasher& Hasher::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    state_ ^= p[i];
    state_ *= 1099511628211ull;
  }
  return *this;
}

Hasher& Hasher::str(std::string_view s) {
  i64(static_cast<std::int64_t>(s.size()));
  return bytes(s.data(), s.size());
}

Hasher& Hasher::f64(double v) { return bytes(&v, sizeof v); }

Hasher& Hasher::i64(std::int64_t v) { return bytes(&v, sizeof v); }

std::string Hasher::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace ltrack::io
