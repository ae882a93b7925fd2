#pragma once

// Registered finite-difference checks, run by the `gradcheck` subcommand.

#include "deco/gradcheck.hpp"

#include <functional>
#include <string>
#include <vector>

namespace deco {

struct GradCheckCase {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed)> run;
};

const std::vector<GradCheckCase>& gradcheck_cases();

/// Every registered case on every seed, in registration order.
std::vector<GradCheckReport> run_gradcheck_suite(const std::vector<std::uint64_t>& seeds);

}  // namespace deco
