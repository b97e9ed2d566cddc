#pragma once

namespace vto::cli {

/// Runs one subcommand. Returns 0 on success, 1 on usage errors, 2 on runtime errors.
int dispatch(int argc, char** argv);

}  // namespace vto::cli
