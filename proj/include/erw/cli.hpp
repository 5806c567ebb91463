// Command-line front end. Exit codes: 0 success/pass, 1 verification
// failure, 2 configuration error.
#pragma once

#include <string>
#include <vector>

#include "erw/walk.hpp"

namespace erw {

int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // without argv[0]

// Stop-condition mini-grammar used by `simulate --stop`:
//   hit:LEVEL | horizon:N | visits:SITE,COUNT | cookies:COUNT |
//   second:R,S | first(SPEC;SPEC;...)
StoppingCondition parse_stop(const std::string& text);

}  // namespace erw
