#include "ahalab/ingest.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <tuple>

#include "ahalab/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace ahalab {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::string data = read_file(path);
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= data.size()) {
    size_t nl = data.find('\n', start);
    if (nl == std::string::npos) {
      if (start < data.size()) lines.push_back(data.substr(start));
      break;
    }
    std::string line = data.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  return lines;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::uint64_t hash_file(const fs::path& path) { return fnv1a64(read_file(path)); }

std::optional<std::string> extract_tagged_block(const std::string& text,
                                                const std::string& tag) {
  const std::string open = "<" + tag + ">";
  const std::string close = "</" + tag + ">";
  size_t search_from = 0;
  while (true) {
    size_t c = text.find(close, search_from);
    if (c == std::string::npos) return std::nullopt;
    // innermost open before this close
    size_t o = text.rfind(open, c);
    if (o != std::string::npos) {
      size_t begin = o + open.size();
      std::string block = text.substr(begin, c - begin);
      // think blocks are capped at the judged-span limit; answers stay whole
      if (tag == "think" && block.size() > 4096) block.resize(4096);
      return block;
    }
    search_from = c + close.size();
  }
}

double tag_factor(const std::string& completion) {
  static const char* tags[4] = {"<think>", "</think>", "<answer>", "</answer>"};
  int present = 0;
  for (const char* t : tags)
    if (completion.find(t) != std::string::npos) ++present;
  return present / 4.0;
}

std::size_t approx_token_count(const std::string& text) {
  std::size_t n = 0;
  bool in_tok = false;
  for (unsigned char c : text) {
    bool ws = std::isspace(c);
    if (!ws && !in_tok) ++n;
    in_tok = !ws;
  }
  return n;
}

std::optional<int> step_from_filename(const std::string& filename) {
  std::string base = fs::path(filename).filename().string();
  size_t pos = base.find("step");
  while (pos != std::string::npos) {
    size_t d = pos + 4;
    if (d < base.size() && std::isdigit(static_cast<unsigned char>(base[d]))) {
      long v = 0;
      while (d < base.size() && std::isdigit(static_cast<unsigned char>(base[d]))) {
        v = v * 10 + (base[d] - '0');
        ++d;
      }
      return static_cast<int>(v);
    }
    pos = base.find("step", pos + 1);
  }
  return std::nullopt;
}

namespace {

Span span_from_json(const json& j, const char* name) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() || !j[1].is_number_unsigned())
    throw InvalidRecord(name, "expected [begin, end] with non-negative integers");
  return Span{j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

ShiftVerdict verdict_from_json(const json& j) {
  if (!j.is_object()) throw InvalidRecord("shift", "expected an object");
  ShiftVerdict v;
  if (!j.contains("label") || !j["label"].is_boolean())
    throw InvalidRecord("shift.label", "expected a boolean");
  v.label = j["label"].get<bool>();
  if (j.contains("detector")) v.detector = detector_from_name(j["detector"].get<std::string>());
  if (j.contains("confidence")) {
    auto c = confidence_from_name(j["confidence"].get<std::string>());
    if (!c) throw InvalidRecord("shift.confidence", "expected low|medium|high");
    v.confidence = *c;
  }
  if (j.contains("markers")) {
    if (!j["markers"].is_array()) throw InvalidRecord("shift.markers", "expected an array");
    for (const auto& m : j["markers"]) v.markers.push_back(m.get<std::string>());
  }
  if (j.contains("first_marker_index")) v.first_marker_index = j["first_marker_index"].get<int>();
  if (j.contains("before_excerpt")) v.before_excerpt = j["before_excerpt"].get<std::string>();
  if (j.contains("after_excerpt")) v.after_excerpt = j["after_excerpt"].get<std::string>();
  if (j.contains("explanation")) v.explanation = j["explanation"].get<std::string>();
  return v;
}

json verdict_to_json(const ShiftVerdict& v) {
  json j;
  j["label"] = v.label;
  j["detector"] = detector_name(v.detector);
  j["confidence"] = confidence_name(v.confidence);
  j["markers"] = v.markers;
  j["first_marker_index"] = v.first_marker_index;
  j["before_excerpt"] = v.before_excerpt;
  j["after_excerpt"] = v.after_excerpt;
  j["explanation"] = v.explanation;
  return j;
}

}  // namespace

TraceRecord parse_trace_line(const std::string& json_line, std::optional<int> default_step) {
  json j;
  try {
    j = json::parse(json_line);
  } catch (const json::exception& e) {
    throw MalformedJson(std::string("trace line is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw MalformedJson("trace line must be a JSON object");

  TraceRecord r;
  try {
    if (!j.contains("problem_id")) throw MissingField("problem_id");
    r.problem_id = j["problem_id"].is_string() ? j["problem_id"].get<std::string>()
                                               : j["problem_id"].dump();
    if (j.contains("step"))
      r.checkpoint_step = j["step"].get<int>();
    else if (default_step)
      r.checkpoint_step = *default_step;
    else
      throw MissingField("step");
    if (!j.contains("temperature")) throw MissingField("temperature");
    r.temperature = j["temperature"].get<double>();
    if (!j.contains("sample")) throw MissingField("sample");
    r.sample_index = j["sample"].get<int>();
    if (!j.contains("pass")) throw MissingField("pass");
    r.pass = j["pass"].is_number() ? pass_from_value(std::to_string(j["pass"].get<int>()))
                                   : pass_from_value(j["pass"].get<std::string>());
    if (!j.contains("completion")) throw MissingField("completion");
    r.completion = j["completion"].get<std::string>();
    if (!j.contains("gold")) throw MissingField("gold");
    r.gold_answer = j["gold"].is_string() ? j["gold"].get<std::string>() : j["gold"].dump();
    if (j.contains("board")) r.board = j["board"].get<std::string>();
    if (j.contains("token_entropies")) {
      if (!j["token_entropies"].is_array())
        throw InvalidRecord("token_entropies", "expected an array of numbers");
      for (const auto& e : j["token_entropies"]) r.token_entropies.push_back(e.get<double>());
    }
    if (j.contains("think_span")) r.think_span = span_from_json(j["think_span"], "think_span");
    if (j.contains("answer_span")) r.answer_span = span_from_json(j["answer_span"], "answer_span");
    if (j.contains("correct")) r.correct = j["correct"].get<bool>();
    if (j.contains("shift")) r.shift = verdict_from_json(j["shift"]);
  } catch (const json::exception& e) {
    throw InvalidRecord("(type)", e.what());
  }
  return r;
}

std::string record_to_json_line(const TraceRecord& r) {
  json j;
  j["problem_id"] = r.problem_id;
  j["step"] = r.checkpoint_step;
  j["temperature"] = r.temperature;
  j["sample"] = r.sample_index;
  j["pass"] = pass_name(r.pass);
  j["completion"] = r.completion;
  j["gold"] = r.gold_answer;
  if (r.board) j["board"] = *r.board;
  if (!r.token_entropies.empty()) j["token_entropies"] = r.token_entropies;
  if (r.think_span) j["think_span"] = {r.think_span->begin, r.think_span->end};
  if (r.answer_span) j["answer_span"] = {r.answer_span->begin, r.answer_span->end};
  if (r.correct) j["correct"] = *r.correct;
  if (r.shift) j["shift"] = verdict_to_json(*r.shift);
  return j.dump();
}

namespace {

struct RecordKey {
  std::string problem;
  int step;
  std::uint64_t temp_bits;
  int sample;
  int pass;
  auto operator<=>(const RecordKey&) const = default;
};

RecordKey key_of(const TraceRecord& r) {
  std::uint64_t bits;
  double t = r.temperature;
  std::memcpy(&bits, &t, sizeof bits);
  return RecordKey{r.problem_id, r.checkpoint_step, bits, r.sample_index,
                   r.pass == Pass::pass1 ? 1 : 2};
}

void finalize_dataset(RunDataset& ds) {
  std::map<RecordKey, size_t> seen;
  for (size_t i = 0; i < ds.records.size(); ++i) {
    auto [it, fresh] = seen.emplace(key_of(ds.records[i]), i);
    if (!fresh)
      throw DuplicateKey("duplicate trace key: problem '" + ds.records[i].problem_id +
                         "' step " + std::to_string(ds.records[i].checkpoint_step) +
                         " sample " + std::to_string(ds.records[i].sample_index));
  }
  std::sort(ds.records.begin(), ds.records.end(),
            [](const TraceRecord& a, const TraceRecord& b) { return key_of(a) < key_of(b); });
  ds.checkpoint_grid.clear();
  ds.temperatures.clear();
  for (const auto& r : ds.records) {
    ds.checkpoint_grid.push_back(r.checkpoint_step);
    ds.temperatures.push_back(r.temperature);
  }
  auto uniq = [](auto& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(ds.checkpoint_grid);
  uniq(ds.temperatures);
}

}  // namespace

RunDataset load_run(const std::vector<fs::path>& files, Domain domain,
                    const std::string& model, int g) {
  RunDataset ds;
  ds.domain = domain;
  ds.model = model;
  ds.g = g;
  std::vector<fs::path> ordered = files;
  std::sort(ordered.begin(), ordered.end(), [](const fs::path& a, const fs::path& b) {
    auto sa = step_from_filename(a.string()), sb = step_from_filename(b.string());
    int ka = sa.value_or(-1), kb = sb.value_or(-1);
    if (ka != kb) return ka < kb;
    return a.string() < b.string();
  });
  for (const auto& f : ordered) {
    auto def_step = step_from_filename(f.string());
    auto lines = read_lines(f);
    for (size_t i = 0; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) continue;
      TraceRecord r;
      try {
        r = parse_trace_line(lines[i], def_step);
      } catch (const Error& e) {
        throw Error(f.string() + ":" + std::to_string(i + 1) + ": " + e.what());
      }
      validate_record(r, g);
      ds.records.push_back(std::move(r));
    }
  }
  finalize_dataset(ds);
  return ds;
}

void save_dataset(const RunDataset& ds, const fs::path& path) {
  json header;
  header["ahalab_dataset"] = 1;
  header["domain"] = domain_name(ds.domain);
  header["model"] = ds.model;
  header["g"] = ds.g;
  header["checkpoint_grid"] = ds.checkpoint_grid;
  header["temperatures"] = ds.temperatures;
  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& r : ds.records) {
    out += record_to_json_line(r);
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

RunDataset load_dataset(const fs::path& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw MalformedJson("empty dataset file " + path.string());
  json header;
  try {
    header = json::parse(lines[0]);
  } catch (const json::exception& e) {
    throw MalformedJson("bad dataset header: " + std::string(e.what()));
  }
  if (!header.is_object() || !header.contains("ahalab_dataset"))
    throw MalformedJson(path.string() + " is not a dataset file (missing header line)");
  RunDataset ds;
  ds.domain = domain_from_name(header["domain"].get<std::string>());
  ds.model = header.value("model", std::string("model"));
  ds.g = header.value("g", 8);
  for (size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    TraceRecord r;
    try {
      r = parse_trace_line(lines[i], std::nullopt);
    } catch (const Error& e) {
      throw Error(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    validate_record(r, ds.g);
    ds.records.push_back(std::move(r));
  }
  finalize_dataset(ds);
  // a declared grid must cover every observed step
  if (header.contains("checkpoint_grid")) {
    std::vector<int> declared = header["checkpoint_grid"].get<std::vector<int>>();
    for (int s : ds.checkpoint_grid)
      if (std::find(declared.begin(), declared.end(), s) == declared.end())
        throw InvalidRecord("step", "step " + std::to_string(s) + " not in declared grid");
  }
  return ds;
}

}  // namespace ahalab
