#include "vegas/synthworld/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace vegas::synth {

namespace {

using nlohmann::json;

void put_float(std::string& out, float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  out += buf;
}

void put_matrix(std::string& out, const Matrix<float>& m) {
  out += '[';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (i) out += ',';
    out += '[';
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      put_float(out, m(i, j));
    }
    out += ']';
  }
  out += ']';
}

void put_key(std::string& out, const SeedKey& k) {
  out += '[' + std::to_string(k.seed) + ',' + std::to_string(k.stream) + ',' + std::to_string(k.index) + ']';
}

Matrix<float> get_matrix(const json& j, const char* name, Eigen::Index width_hint = -1) {
  const auto& a = j.at(name);
  if (!a.is_array()) throw InputError(std::string(name) + " is not an array");
  const auto rows = static_cast<Eigen::Index>(a.size());
  Eigen::Index cols = rows ? static_cast<Eigen::Index>(a[0].size()) : std::max<Eigen::Index>(width_hint, 0);
  Matrix<float> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = a[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols)
      throw InputError(std::string(name) + " has ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r[static_cast<std::size_t>(c)].get<float>();
  }
  return m;
}

SeedKey get_key(const json& j) {
  const auto& a = j.at("seed_key");
  if (!a.is_array() || a.size() != 3) throw InputError("seed_key must be a 3-element array");
  return SeedKey{a[0].get<std::uint64_t>(), a[1].get<std::uint64_t>(), a[2].get<std::uint64_t>()};
}

template <typename F>
void for_each_line(const std::string& path, F&& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    fn(text, line);
  }
  if (in.bad()) throw IoError("read failed: " + path);
}

void write_lines(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << body;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

std::string scenario_to_json(const Scenario& s) {
  std::string out;
  out.reserve(static_cast<std::size_t>(s.frames.size()) * 14 + 1024);
  out += "{\"kind\":\"" + kind_name(s.kind) + "\",\"frames\":";
  put_matrix(out, s.frames);
  out += ",\"hint\":";
  put_matrix(out, s.hint);
  out += ",\"options\":";
  put_matrix(out, s.options);
  out += ",\"answer_idx\":" + std::to_string(s.answer_idx) + ",\"relevant_mask\":[";
  for (std::size_t i = 0; i < s.relevant_mask.size(); ++i) {
    if (i) out += ',';
    out += s.relevant_mask[i] ? "true" : "false";
  }
  out += "],\"subtitle\":";
  put_matrix(out, s.subtitle);
  out += ",\"bias_applied\":";
  out += s.bias_applied ? "true" : "false";
  out += ",\"seed_key\":";
  put_key(out, s.seed_key);
  if (s.kind == Kind::nuanced) {
    out += ",\"caption\":[";
    for (std::size_t i = 0; i < s.caption.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(s.caption[i]);
    }
    out += ']';
  }
  out += '}';
  return out;
}

Scenario scenario_from_json(const std::string& text, std::size_t line) {
  try {
    auto j = json::parse(text);
    if (!j.is_object()) throw ParseError(line, "record is not a JSON object");
    Scenario s;
    s.kind = parse_kind(j.at("kind").get<std::string>());
    s.frames = get_matrix(j, "frames");
    s.hint = get_matrix(j, "hint");
    s.options = get_matrix(j, "options");
    s.subtitle = get_matrix(j, "subtitle", s.hint.cols());
    s.answer_idx = j.at("answer_idx").get<int>();
    for (const auto& b : j.at("relevant_mask")) s.relevant_mask.push_back(b.get<bool>());
    s.bias_applied = j.at("bias_applied").get<bool>();
    s.seed_key = get_key(j);
    if (j.contains("caption")) s.caption = j.at("caption").get<std::vector<int>>();
    s.validate();
    return s;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(line, e.what());
  }
}

void write_dataset(const std::string& path, const std::vector<Scenario>& scenarios) {
  std::string body;
  for (const auto& s : scenarios) {
    body += scenario_to_json(s);
    body += '\n';
  }
  write_lines(path, body);
}

std::vector<Scenario> read_dataset(const std::string& path) {
  std::vector<Scenario> out;
  for_each_line(path, [&](const std::string& text, std::size_t line) { out.push_back(scenario_from_json(text, line)); });
  return out;
}

void write_emotion_dataset(const std::string& path, const std::vector<EmotionSample>& samples) {
  std::string body;
  for (const auto& e : samples) {
    body += "{\"kind\":\"emotion\",\"feature\":";
    put_matrix(body, e.feature);
    body += ",\"label\":" + std::to_string(e.label) + ",\"concept\":" + std::to_string(e.concept_id) + ",\"seed_key\":";
    put_key(body, e.seed_key);
    body += "}\n";
  }
  write_lines(path, body);
}

std::vector<EmotionSample> read_emotion_dataset(const std::string& path) {
  std::vector<EmotionSample> out;
  for_each_line(path, [&](const std::string& text, std::size_t line) {
    try {
      auto j = json::parse(text);
      if (j.at("kind").get<std::string>() != "emotion") throw InputError("not an emotion record");
      EmotionSample e;
      e.feature = get_matrix(j, "feature");
      if (e.feature.rows() != 1) throw InputError("feature must be a single row");
      e.label = j.at("label").get<int>();
      if (e.label < 0) throw InputError("negative label");
      e.concept_id = j.at("concept").get<int>();
      e.seed_key = get_key(j);
      out.push_back(std::move(e));
    } catch (const std::exception& e) {
      throw ParseError(line, e.what());
    }
  });
  return out;
}

}  // namespace vegas::synth
