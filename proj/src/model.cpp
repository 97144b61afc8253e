#include "vegas/pipeline/model.hpp"

namespace vegas::pipeline {

void ModelDims::validate() const {
  if (n < 1 || k < 1 || k > n) throw ConfigError("dims: need 1 <= k <= n");
  if (d_raw < 1 || d_text < 1 || d < 1 || d_model < 1) throw ConfigError("dims: widths must be >= 1");
  if (heads < 1) throw ConfigError("dims: heads must be >= 1");
  if (d_model % heads != 0) throw ConfigError("dims: d_model not divisible by heads");
  if (d_raw % heads != 0) throw ConfigError("dims: d_raw not divisible by heads");
  if (d % heads != 0) throw ConfigError("dims: d not divisible by heads");
  if (P < 1 || num_emotions < 2) throw ConfigError("dims: P >= 1 and num_emotions >= 2 required");
  if (!(slot_scale >= 0)) throw ConfigError("dims: slot_scale must be >= 0");
  if (!(align_gain > 0)) throw ConfigError("dims: align_gain must be > 0");
}

std::string mask_name(Mask m) {
  switch (m) {
    case Mask::A: return "A";
    case Mask::QA: return "QA";
    case Mask::QAV: return "QAV";
    case Mask::QAVS: return "QAVS";
  }
  throw ConfigError("unknown mask");
}

Mask parse_mask(const std::string& s) {
  for (Mask m : {Mask::A, Mask::QA, Mask::QAV, Mask::QAVS})
    if (mask_name(m) == s) return m;
  throw ConfigError("unknown mask '" + s + "' (expected A, QA, QAV or QAVS; masks without the question are not supported)");
}

}  // namespace vegas::pipeline
