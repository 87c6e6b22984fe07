#pragma once

#include <optional>
#include <ostream>
#include <string>

namespace deepwound::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kModelError = 3 };

/// Entry point behind the `deepwound` executable. Results go to `out`,
/// diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Side length recorded by `preprocess` next to a manifest it wrote, if any.
std::optional<int> preprocessed_side(const std::string& manifest_path);

}  // namespace deepwound::cli
