#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "condredact/toymodels.hpp"

namespace condredact {

// Scatter of generated samples per conditional with the analytic means
// marked, written as standalone SVG. Only 2-D output tasks can be plotted.
void plot_samples(const Generator& g, const SyntheticTask& task,
                  const std::vector<Conditional>& conditionals, int n,
                  std::uint64_t seed, const std::string& path);

// Two panels sharing axes: teacher on the left, edited model on the right.
void plot_comparison(const Generator& teacher, const Generator& edited,
                     const SyntheticTask& task,
                     const std::vector<Conditional>& conditionals, int n,
                     std::uint64_t seed, const std::string& path);

}  // namespace condredact
