#pragma once

// The vseg command-line tool as a library: argument parsing, the run
// manifest and the helpers shared by the subcommands.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "vseg/autodiff.hpp"
#include "vseg/metrics.hpp"
#include "vseg/net_config.hpp"
#include "vseg/phantom.hpp"
#include "vseg/trainer.hpp"

namespace vseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // failed check or invalid input
inline constexpr int kExitIo = 2;

std::string tool_version();

// Parses argv (argv[0] is the program name) and runs one subcommand.
// Errors are reported on `err`; the return value is the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Written to <out_dir>/manifest.txt before a command does any work. The
// header lines are '#' comments; the body is the resolved config text, so a
// manifest can be passed back as --config (or --spec) to repeat the run.
struct RunManifest {
  std::string command;
  std::string config_text;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  std::string version = tool_version();
  bool deterministic = true;
  std::vector<std::pair<std::string, std::string>> extra;  // more header keys

  std::string to_text() const;  // includes a UTC creation timestamp
};
inline constexpr const char* kManifestName = "manifest.txt";
void write_manifest(const RunManifest& m);

// Canonical key=value text for a phantom spec; same rules as NetConfig.
std::string phantom_spec_to_text(const PhantomSpec& s);
PhantomSpec phantom_spec_from_text(std::string_view text);

// Every *.vvol file in `dir`, sorted by file name; ids are the file stems.
std::vector<LabeledSample> load_dataset(const std::filesystem::path& dir);

// Central-difference check of a whole network on an 8^3 input under the
// combined loss, after randomize_offsets. Enforces base_channels <= 4.
GradCheckReport check_network(const NetConfig& cfg, const GradCheckOptions& opts, std::uint64_t seed);
inline constexpr Real kGradTolerance = 1e-4;

struct AblationRow {
  std::string label;
  MetricsSummary lung;
  MetricsSummary lesion;
};
inline constexpr const char* kAblationHeader =
    "config\tlung_dice\tlung_sensitivity\tlung_precision\tlesion_dice\tlesion_sensitivity\tlesion_precision";
void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace vseg::cli
