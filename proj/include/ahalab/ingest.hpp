#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ahalab/trace_model.hpp"

namespace ahalab {

struct RunDataset {
  Domain domain = Domain::math;
  std::string model = "model";
  int g = 8;  // declared samples per (problem, step, temperature, pass) cell
  std::vector<int> checkpoint_grid;     // sorted, unique, inferred from data
  std::vector<double> temperatures;     // sorted, unique
  std::vector<TraceRecord> records;
};

// innermost content of the first well-formed <tag>...</tag> pair; nullopt
// when no complete pair exists
std::optional<std::string> extract_tagged_block(const std::string& text,
                                                const std::string& tag);

// fraction of the four scaffold tags present, in {0, .25, .5, .75, 1}
double tag_factor(const std::string& completion);

// number of whitespace-separated tokens, the unit for length shaping
std::size_t approx_token_count(const std::string& text);

// one JSONL line -> record; explicit "step" field wins over default_step
// (the value recovered from a stepNNN filename)
TraceRecord parse_trace_line(const std::string& json_line,
                             std::optional<int> default_step = std::nullopt);

std::string record_to_json_line(const TraceRecord& r);

// step number encoded in a filename like "step150.jsonl"; nullopt if absent
std::optional<int> step_from_filename(const std::string& filename);

// reads raw trace files (one problem set, one domain) into a validated
// dataset: duplicate (problem, step, temp, sample, pass) keys are rejected,
// grid and temperature list are inferred and sorted
RunDataset load_run(const std::vector<std::filesystem::path>& files, Domain domain,
                    const std::string& model, int g);

// dataset container format: header line + one record per line
void save_dataset(const RunDataset& ds, const std::filesystem::path& path);
RunDataset load_dataset(const std::filesystem::path& path);

}  // namespace ahalab
