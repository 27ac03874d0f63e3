#include "condredact/plot.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "condredact/report.hpp"
#include "condredact/rng.hpp"

namespace condredact {

namespace {

const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44",
                          "#66ccee", "#aa3377", "#bbbbbb", "#000000",
                          "#e69f00", "#56b4e9", "#009e73", "#f0e442",
                          "#0072b2", "#d55e00", "#cc79a7"};
constexpr int kPaletteSize = 15;
constexpr double kPanelSize = 320.0;
constexpr double kMargin = 24.0;
constexpr double kWorldExtent = 1.8;  // plotted world range [-e, e]

double px(double x) {
  return kMargin + (x + kWorldExtent) / (2.0 * kWorldExtent) * kPanelSize;
}
double py(double y) {
  return kMargin + (kWorldExtent - y) / (2.0 * kWorldExtent) * kPanelSize;
}

void panel(std::ostringstream& svg, double x_offset, const std::string& title,
           const Generator& g, const SyntheticTask& task,
           const std::vector<Conditional>& conditionals, int n,
           std::uint64_t seed) {
  svg << "<g transform=\"translate(" << x_offset << ",0)\">\n";
  svg << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\""
      << kPanelSize << "\" height=\"" << kPanelSize
      << "\" fill=\"white\" stroke=\"#333333\"/>\n";
  svg << "<text x=\"" << kMargin + kPanelSize / 2 << "\" y=\"" << kMargin - 8
      << "\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";

  NoGradGuard guard;
  for (std::size_t ci = 0; ci < conditionals.size(); ++ci) {
    const auto& c = conditionals[ci];
    const char* color = kPalette[ci % kPaletteSize];
    Rng zrng(derive_seed(seed, "plot:" + conditional_key(c)));
    for (int i = 0; i < n; ++i) {
      Tensor z = sample_latent(g, zrng);
      auto out = g.generate(z, c).values_copy();
      const double cx = std::clamp(out[0], -kWorldExtent, kWorldExtent);
      const double cy = std::clamp(out[1], -kWorldExtent, kWorldExtent);
      svg << "<circle cx=\"" << format_double(px(cx)) << "\" cy=\""
          << format_double(py(cy)) << "\" r=\"2\" fill=\"" << color
          << "\" fill-opacity=\"0.55\"/>\n";
    }
    const auto mu = conditional_mean(task, c);
    const double mx = px(mu[0]);
    const double my = py(mu[1]);
    svg << "<path d=\"M" << mx - 5 << " " << my << " H" << mx + 5 << " M" << mx
        << " " << my - 5 << " V" << my + 5 << "\" stroke=\"" << color
        << "\" stroke-width=\"1.8\"/>\n";
  }
  svg << "</g>\n";
}

void write_svg(const std::string& path, const std::string& body, int panels) {
  const double width = panels * (kPanelSize + 2 * kMargin);
  const double height = kPanelSize + 2 * kMargin;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("plot: cannot write " + path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n"
      << body << "</svg>\n";
}

void require_planar(const SyntheticTask& task) {
  if (task.out_dim != 2) {
    throw std::invalid_argument(
        "plot: task output is " + std::to_string(task.out_dim) +
        "-D; project the samples to 2-D before plotting");
  }
}

}  // namespace

void plot_samples(const Generator& g, const SyntheticTask& task,
                  const std::vector<Conditional>& conditionals, int n,
                  std::uint64_t seed, const std::string& path) {
  require_planar(task);
  std::ostringstream body;
  panel(body, 0.0, "samples", g, task, conditionals, n, seed);
  write_svg(path, body.str(), 1);
}

void plot_comparison(const Generator& teacher, const Generator& edited,
                     const SyntheticTask& task,
                     const std::vector<Conditional>& conditionals, int n,
                     std::uint64_t seed, const std::string& path) {
  require_planar(task);
  std::ostringstream body;
  panel(body, 0.0, "teacher", teacher, task, conditionals, n, seed);
  panel(body, kPanelSize + 2 * kMargin, "redacted", edited, task, conditionals,
        n, seed);
  write_svg(path, body.str(), 2);
}

}  // namespace condredact
