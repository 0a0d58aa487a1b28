#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace retina::cli {

/// Runs one `retina_screen` invocation. `args` excludes the program name.
/// Returns the process exit code: 0 on success, 1 when some item failed,
/// 2 for usage, configuration or input errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace retina::cli
