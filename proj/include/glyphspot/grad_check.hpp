#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "glyphspot/autodiff.hpp"

namespace glyphspot {

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  bool empty() const { return entries.empty(); }
};

/// Relative error with a small absolute floor so that two near-zero
/// gradients do not blow up the ratio.
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares tape gradients of `loss_fn` against central differences with step
/// `h` on up to `samples` parameter elements drawn uniformly (seeded).
/// `loss_fn` builds the loss on the given tape and returns its scalar node.
inline GradCheckReport grad_check(ParameterSet<double>& params,
                                  const std::function<Var(Tape<double>&)>& loss_fn,
                                  double h = 1e-3, std::size_t samples = 100,
                                  std::uint64_t seed = 0) {
  GradCheckReport report;
  const std::size_t total = params.element_count();
  if (total == 0) return report;

  params.zero_grad();
  {
    Tape<double> tape(true);
    Var loss = loss_fn(tape);
    if (!std::isfinite(tape.value(loss)[0])) throw std::runtime_error("grad_check: non-finite loss");
    tape.backward(loss);
  }

  auto eval = [&]() {
    Tape<double> tape(false);
    const double v = tape.value(loss_fn(tape))[0];
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss");
    return v;
  };

  std::vector<std::size_t> picks;
  if (total <= samples) {
    for (std::size_t i = 0; i < total; ++i) picks.push_back(i);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> dist(0, total - 1);
    while (picks.size() < samples) {
      const std::size_t p = dist(rng);
      if (std::find(picks.begin(), picks.end(), p) == picks.end()) picks.push_back(p);
    }
    std::sort(picks.begin(), picks.end());
  }

  std::size_t offset = 0, next = 0;
  for (auto& p : params) {
    for (; next < picks.size() && picks[next] < offset + p.value.size(); ++next) {
      const std::size_t i = picks[next] - offset;
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = eval();
      p.value[i] = orig - h;
      const double down = eval();
      p.value[i] = orig;
      GradCheckEntry e{p.name, i, p.grad[i], (up - down) / (2 * h), 0};
      e.rel_error = relative_error(e.analytic, e.numeric);
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.entries.push_back(e);
    }
    offset += p.value.size();
  }
  return report;
}

}  // namespace glyphspot
