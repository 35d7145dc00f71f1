// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "condiff/checkpoint.hpp"
#include "condiff/condition.hpp"
#include "condiff/config.hpp"
#include "condiff/denoiser.hpp"
#include "condiff/error.hpp"
#include "condiff/numerics.hpp"
#include "condiff/persistence.hpp"
#include "condiff/samplers.hpp"
#include "condiff/schedule.hpp"
#include "condiff/study.hpp"
#include "condiff/training.hpp"
#include "condiff/world.hpp"
