#include "liftuq/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "liftuq/calibmetrics.hpp"
#include "liftuq/text.hpp"

namespace liftuq {

FieldSelector parse_selector(const std::string& s) {
  if (s == "residual") return FieldSelector::Residual;
  if (s == "sigma") return FieldSelector::Sigma;
  if (s == "band") return FieldSelector::Band;
  if (s == "coverage-mask") return FieldSelector::CoverageMask;
  if (s == "input") return FieldSelector::Input;
  if (s == "truth") return FieldSelector::Truth;
  if (s == "mean") return FieldSelector::Mean;
  throw ConfigError("unknown field '" + s +
                    "' (expected residual, sigma, band, coverage-mask, input, truth or mean)");
}

std::string selector_name(FieldSelector s) {
  switch (s) {
    case FieldSelector::Residual: return "residual";
    case FieldSelector::Sigma: return "sigma";
    case FieldSelector::Band: return "band";
    case FieldSelector::CoverageMask: return "coverage-mask";
    case FieldSelector::Input: return "input";
    case FieldSelector::Truth: return "truth";
    case FieldSelector::Mean: return "mean";
  }
  return "?";
}

std::array<std::uint8_t, 3> ramp_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto byte = [](double s) { return static_cast<std::uint8_t>(std::lround(255.0 * s)); };
  if (t <= 0.5) {
    const std::uint8_t w = byte(2.0 * t);
    return {w, w, 255};
  }
  const std::uint8_t w = byte(2.0 * (1.0 - t));
  return {255, w, w};
}

std::vector<std::uint8_t> render_ppm(const Field& f, const ColorRange& range) {
  std::vector<std::size_t> bad;
  for (std::size_t n = 0; n < f.points(); ++n) {
    if (std::isnan(f.at(n, 0))) bad.push_back(n);
  }
  if (!bad.empty()) {
    std::string list;
    for (std::size_t i = 0; i < bad.size() && i < 20; ++i) {
      list += (i ? "," : "") + std::to_string(bad[i]);
    }
    if (bad.size() > 20) list += ",...";
    throw NumericalError("field has NaN at point indices " + list);
  }
  double lo = 0.0, hi = 0.0;
  if (range.min && range.max) {
    lo = *range.min;
    hi = *range.max;
    if (!(lo < hi)) throw ConfigError("color range needs min < max");
  } else {
    double fmin = f.at(0, 0), fmax = f.at(0, 0);
    for (std::size_t n = 0; n < f.points(); ++n) {
      fmin = std::min(fmin, f.at(n, 0));
      fmax = std::max(fmax, f.at(n, 0));
    }
    lo = range.min.value_or(fmin);
    hi = range.max.value_or(fmax);
    if (lo == hi) {
      lo -= 1.0;
      hi += 1.0;
    }
    if (!(lo < hi)) throw ConfigError("color range needs min < max");
  }
  const Grid2D& g = f.grid();
  const std::string header =
      "P6\n" + std::to_string(g.nx()) + " " + std::to_string(g.ny()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * f.points());
  for (int iy = g.ny() - 1; iy >= 0; --iy) {
    for (int ix = 0; ix < g.nx(); ++ix) {
      const auto c = ramp_color((f.at(g.index(ix, iy), 0) - lo) / (hi - lo));
      out.insert(out.end(), c.begin(), c.end());
    }
  }
  return out;
}

Field miss_mask_field(const Field& residual, const Field& band) {
  const auto ind = coverage_indicator(residual, band);
  Field m(residual.grid(), 1);
  for (std::size_t n = 0; n < ind.size(); ++n) m.at(n, 0) = ind[n] ? 0.0 : 1.0;
  return m;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace liftuq
