#pragma once

// Umbrella header for the whole library.

#include "rdlt/app.hpp"
#include "rdlt/attacks.hpp"
#include "rdlt/checkpoint.hpp"
#include "rdlt/config.hpp"
#include "rdlt/data.hpp"
#include "rdlt/diagnostics.hpp"
#include "rdlt/engine.hpp"
#include "rdlt/format.hpp"
#include "rdlt/layers.hpp"
#include "rdlt/linalg.hpp"
#include "rdlt/metrics.hpp"
#include "rdlt/random.hpp"
#include "rdlt/regularizer.hpp"
#include "rdlt/verify.hpp"
