#pragma once

#include <filesystem>
#include <string>

#include "gridmpc/case.hpp"

namespace gridmpc {

/// Parses a gridmpc case file (sections [buses], [lines], [generators],
/// [loads], [svc], [ltc], [ls], [avc]; whitespace-delimited rows; '#'
/// comments). The returned case is validated. Throws ParseError with the
/// offending line number, or ContractError from validation.
PowerSystemCase load_case(const std::filesystem::path& path);

/// Writes the persisted fields in the same format; load_case(write_case(c))
/// reproduces c.
void write_case(const PowerSystemCase& c, const std::filesystem::path& path);

/// Resolves "9bus"/"39bus" (or any name) against GRIDMPC_CASE_DIR, the
/// built-in case directory, and ./cases; literal paths pass through.
std::filesystem::path resolve_case_path(const std::string& name_or_path);

}  // namespace gridmpc
