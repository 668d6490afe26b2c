#include "ltrack/pipeline.hpp"

#include <cstdio>
#include <sstream>

namespace ltrack::pipeline {

namespace {

constexpr double kPxPerFrame = 2.0;
constexpr double kPxPerBin = 0.8;
constexpr int kCellFrames = 2;
constexpr int kCellBins = 4;
constexpr double kMargin = 40.0;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string render_figure_svg(const TrackContext& ctx, const Pitchogram& framewise, const TrackEstimates& est) {
  const GridSpec& g = framewise.grid;
  const int nb = framewise.n_bins();
  const int nf = framewise.n_frames();
  const double w = nf * kPxPerFrame;
  const double h = nb * kPxPerBin;
  auto x = [&](double frame) { return num(kMargin + frame * kPxPerFrame); };
  auto y = [&](double bin) { return num(kMargin + h - bin * kPxPerBin); };
  auto frame_of = [&](double t) { return time_to_frame(t, g); };
  auto bin_of = [&](double p) { return pitch_to_bin(p, g); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w + 2 * kMargin) << "\" height=\""
    << num(h + 2 * kMargin) << "\">\n";
  s << "<title>" << ctx.track_id << "</title>\n";
  s << "<rect x=\"" << num(kMargin) << "\" y=\"" << num(kMargin) << "\" width=\"" << num(w) << "\" height=\""
    << num(h) << "\" fill=\"white\" stroke=\"black\"/>\n";

  // Framewise activation, block-averaged; faint cells are skipped.
  s << "<g id=\"framewise\" stroke=\"none\">\n";
  for (int f0 = 0; f0 < nf; f0 += kCellFrames) {
    for (int b0 = 0; b0 < nb; b0 += kCellBins) {
      const int fw = std::min(kCellFrames, nf - f0);
      const int bw = std::min(kCellBins, nb - b0);
      const double v = framewise.values.block(b0, f0, bw, fw).maxCoeff();
      if (v < 0.1) continue;
      const int level = static_cast<int>(255.0 * (1.0 - std::min(1.0, v)));
      s << "<rect x=\"" << x(f0) << "\" y=\"" << y(b0 + bw) << "\" width=\"" << num(fw * kPxPerFrame)
        << "\" height=\"" << num(bw * kPxPerBin) << "\" fill=\"rgb(" << level << "," << level << "," << level
        << ")\"/>\n";
    }
  }
  s << "</g>\n";

  s << "<g id=\"ridges\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\">\n";
  for (const auto& r : est.ridges) {
    s << "<polyline points=\"";
    for (std::size_t i = 0; i < r.size(); ++i) s << (i ? " " : "") << x(r.frames[i]) << "," << y(r.pitch_bins[i]);
    s << "\"/>\n";
  }
  s << "</g>\n";

  s << "<g id=\"reference\" fill=\"none\" stroke=\"green\" stroke-width=\"2\" opacity=\"0.6\">\n";
  for (const auto& n : ctx.annotation.notes) {
    s << "<line x1=\"" << x(frame_of(n.onset_s)) << "\" y1=\"" << y(bin_of(n.pitch_midi)) << "\" x2=\""
      << x(frame_of(n.offset_s)) << "\" y2=\"" << y(bin_of(n.pitch_midi)) << "\"/>\n";
  }
  s << "</g>\n";

  const auto& notes = !est.step3.empty() ? est.step3 : est.step2;
  s << "<g id=\"onsets\" fill=\"red\">\n";
  for (const auto& n : notes)
    s << "<circle cx=\"" << x(frame_of(n.onset_s)) << "\" cy=\"" << y(bin_of(n.pitch_midi)) << "\" r=\"3\"/>\n";
  s << "</g>\n";
  s << "<g id=\"offsets\" stroke=\"red\" stroke-width=\"1.5\">\n";
  for (const auto& n : notes) {
    const double fx = kMargin + frame_of(n.offset_s) * kPxPerFrame;
    const double fy = kMargin + h - bin_of(n.pitch_midi) * kPxPerBin;
    s << "<path d=\"M" << num(fx - 3) << " " << num(fy - 3) << "L" << num(fx + 3) << " " << num(fy + 3) << "M"
      << num(fx - 3) << " " << num(fy + 3) << "L" << num(fx + 3) << " " << num(fy - 3) << "\"/>\n";
  }
  s << "</g>\n";
  s << "<g id=\"direct-onsets\" fill=\"orange\">\n";
  for (const auto& e : est.direct_onsets) {
    const double fx = kMargin + frame_of(e.time_s) * kPxPerFrame;
    const double fy = kMargin + h - bin_of(e.pitch_midi) * kPxPerBin;
    s << "<path d=\"M" << num(fx) << " " << num(fy - 4) << "L" << num(fx + 3.5) << " " << num(fy + 2.5) << "L"
      << num(fx - 3.5) << " " << num(fy + 2.5) << "Z\"/>\n";
  }
  s << "</g>\n";

  s << "<g font-family=\"sans-serif\" font-size=\"10\">\n";
  for (double p = 36; p <= g.pitch_max_midi; p += 12)
    s << "<text x=\"4\" y=\"" << y(bin_of(p)) << "\">" << static_cast<int>(p) << "</text>\n";
  for (double t = 0; t <= ctx.annotation.duration_s; t += 1.0)
    s << "<text x=\"" << x(frame_of(t)) << "\" y=\"" << num(h + 2 * kMargin - 12) << "\">" << num(t) << " s</text>\n";
  s << "</g>\n</svg>\n";
  return s.str();
}

}  // namespace ltrack::pipeline
