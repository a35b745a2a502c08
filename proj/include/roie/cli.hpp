#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace roie {

// Fixed training profile for the 8-preset ablation sweep.
struct AblationProfile {
  std::string name;
  std::vector<int64_t> filter_widths;
  int input_size = 0;
  int64_t epochs = 0;
  double learning_rate = 0;
  int64_t batch_size = 0;
  int fps_warmup = 0;
  int fps_iters = 0;
};

// "desk" or "full"; ConfigError otherwise.
AblationProfile ablation_profile(const std::string& scale);

// Entry point behind the roie_net binary. args excludes the program name.
// Returns the process exit code; on failure the last line written to err is
// "error: <kind>: <message>".
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace roie
