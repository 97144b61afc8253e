#pragma once

#include <string>
#include <vector>

#include "vegas/synthworld/generators.hpp"

namespace vegas::synth {

/// One JSON object per line; floats with 9 significant digits, which
/// round-trips float32 exactly.
void write_dataset(const std::string& path, const std::vector<Scenario>& scenarios);
std::vector<Scenario> read_dataset(const std::string& path);

std::string scenario_to_json(const Scenario& s);
/// `line` is only used for error messages.
Scenario scenario_from_json(const std::string& text, std::size_t line);

void write_emotion_dataset(const std::string& path, const std::vector<EmotionSample>& samples);
std::vector<EmotionSample> read_emotion_dataset(const std::string& path);

}  // namespace vegas::synth
