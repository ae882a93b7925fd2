#pragma once

namespace deco {

/// Exit codes: 0 success, 1 usage or validation error, 2 runtime abort.
int run_cli(int argc, char** argv);

}  // namespace deco
