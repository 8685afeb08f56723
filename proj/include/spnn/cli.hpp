#pragma once

namespace spnn::cli {

// Exit codes: 0 success, 1 verification failure, 2 usage error, 3 numerical
// abort.
int cli_main(int argc, const char* const* argv);

}  // namespace spnn::cli
