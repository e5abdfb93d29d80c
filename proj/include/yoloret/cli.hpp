// Command-line front end, callable in-process. Subcommands: detect, eval,
// bench, truncate, train-toy, flops. Reports are UTF-8 JSON on `out` (or a
// file via --out). Returns the process exit code: 0 success, 1 validation
// error, 2 I/O error.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace yoloret {
namespace cli {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cli
}  // namespace yoloret
