#pragma once

// The chimle command-line tool: gen, train, bench-efficiency, eval, ablate,
// diffusion-demo. Everything here is reachable from run_cli so tests can drive
// the commands in-process as well as through the binary.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chimle/data_synth.hpp"
#include "chimle/imle.hpp"
#include "chimle/tim_model.hpp"

namespace chimle {

/// Returns the exit code. Failures print one "error: ..." line to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Shortest decimal that reads back to the same double; "inf"/"-inf"/"nan" otherwise.
std::string format_number(double v);
/// RFC 4180 quoting when the field contains a comma, quote, CR or LF.
std::string csv_field(const std::string& s);

/// Rows terminated by CRLF.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  void row(const std::vector<std::string>& fields);
  std::string str() const { return text_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::size_t columns_;
  std::string text_;
};

/// Flag, then config file, then CHIMLE_SEED, then 0.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config);

/// Strict config file for train / ablate: {"task", "model", "train"}, all optional.
struct RunConfig {
  TaskSpec task;
  TimConfig model;
  TrainConfig train;
  std::optional<std::uint64_t> seed;  // train.seed when given in the file

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Adapts a model config to a dataset's channels and checks the output side.
TimConfig fit_model_to_task(TimConfig model, const TaskSpec& task);

}  // namespace chimle
