#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace edsam::cli {

// Exit codes, one per failure class.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInvalidArgument = 2,
  kMissingFile = 3,
  kMalformedInput = 4,
  kVersionMismatch = 5,
  kOutputExists = 6,
  kCheckFailed = 7,
};

// Runs one invocation; args excludes the program name. Diagnostics go to err,
// reports and help text to out.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// Thin wrappers running a single subcommand with the given flags.
int cmd_gen_data(const std::vector<std::string>& args);
int cmd_train_diffusion(const std::vector<std::string>& args);
int cmd_verify_transport(const std::vector<std::string>& args);
int cmd_gen_adv(const std::vector<std::string>& args);
int cmd_train_clip(const std::vector<std::string>& args);
int cmd_eval(const std::vector<std::string>& args);
int cmd_experiment(const std::vector<std::string>& args);

}  // namespace edsam::cli
