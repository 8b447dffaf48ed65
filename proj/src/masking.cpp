// SPDX-License-Identifier: Apache-2.0

#include "msq/masking.hpp"

#include <cmath>

#include "msq/error.hpp"
#include "msq/rng.hpp"

namespace msq {

std::string to_string(MaskSelection m) {
  switch (m) {
    case MaskSelection::TextOnly:
      return "text";
    case MaskSelection::SpeechOnly:
      return "speech";
    case MaskSelection::Both:
      return "both";
  }
  return "?";
}

MaskSelection parse_mask(std::string_view s) {
  if (s == "text" || s == "tts") return MaskSelection::TextOnly;
  if (s == "speech" || s == "vc") return MaskSelection::SpeechOnly;
  if (s == "both" || s == "hybrid") return MaskSelection::Both;
  throw ConfigError("unknown mask selection: " + std::string(s));
}

void MaskPolicy::validate() const {
  if (!(p_text >= 0.0 && p_speech >= 0.0 && p_both >= 0.0)) {
    throw ConfigError("mask probabilities must be non-negative");
  }
  if (std::abs(p_text + p_speech + p_both - 1.0) > 1e-9) {
    throw ConfigError("mask probabilities must sum to 1");
  }
}

MaskSelection sample_mask(const MaskPolicy& policy, Rng& rng) {
  policy.validate();
  const double u = rng.uniform();
  if (u < policy.p_text) return MaskSelection::TextOnly;
  if (u < policy.p_text + policy.p_speech) return MaskSelection::SpeechOnly;
  // Guard against a zero-probability tail swallowing u near 1.
  if (policy.p_both == 0.0) {
    return policy.p_speech > 0.0 ? MaskSelection::SpeechOnly : MaskSelection::TextOnly;
  }
  return MaskSelection::Both;
}

MaskedContexts apply_mask(const Array& c_text, const Array& c_speech, MaskSelection mask) {
  MaskedContexts out{c_text, c_speech};
  if (!uses_text(mask)) out.text.set_zero();
  if (!uses_speech(mask)) out.speech.set_zero();
  return out;
}

}  // namespace msq
