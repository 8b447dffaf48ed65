// SPDX-License-Identifier: Apache-2.0
//
// Random input selection: per utterance, choose which encoder(s) feed the
// decoder and zero the context of the unused one(s).

#pragma once

#include <string>
#include <string_view>

#include "msq/array.hpp"

namespace msq {

class Rng;

enum class MaskSelection { TextOnly, SpeechOnly, Both };

inline bool uses_text(MaskSelection m) { return m != MaskSelection::SpeechOnly; }
inline bool uses_speech(MaskSelection m) { return m != MaskSelection::TextOnly; }

std::string to_string(MaskSelection m);
/// Accepts "text"/"tts", "speech"/"vc", "both"/"hybrid".
MaskSelection parse_mask(std::string_view s);

struct MaskPolicy {
  double p_text = 1.0 / 3.0;
  double p_speech = 1.0 / 3.0;
  double p_both = 1.0 / 3.0;

  /// Throws ConfigError for negative entries or a sum off 1 by more than 1e-9.
  void validate() const;
};

/// One draw from `policy`; consumes exactly one uniform from `rng`.
MaskSelection sample_mask(const MaskPolicy& policy, Rng& rng);

struct MaskedContexts {
  Array text;
  Array speech;
};

/// Zero the context(s) of the unused input type(s).
MaskedContexts apply_mask(const Array& c_text, const Array& c_speech, MaskSelection mask);

}  // namespace msq
