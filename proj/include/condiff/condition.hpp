// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "condiff/numerics.hpp"

namespace condiff {

/// Conditioning passed to the denoiser: the masked background (concatenated
/// with the noisy state at the input), identity embeddings and an expression
/// embedding (both attended to through cross-attention).
///
/// masked_bkg has the face region set to the fill value; each identity
/// embedding is unit-norm. `id_embeds` may hold fewer than three entries when a
/// model is trained with a reduced identity compound.
struct ConditionBundle {
  Array masked_bkg;
  std::vector<Array> id_embeds;
  Array exp_embed;
};

}  // namespace condiff
