// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "nn3a/agc.hpp"
#include "nn3a/audio.hpp"
#include "nn3a/delay.hpp"
#include "nn3a/dfsmn.hpp"
#include "nn3a/error.hpp"
#include "nn3a/metrics.hpp"
#include "nn3a/pipeline.hpp"
#include "nn3a/simulation.hpp"
#include "nn3a/training.hpp"
#include "nn3a/wav.hpp"
#include "nn3a/wrls.hpp"
