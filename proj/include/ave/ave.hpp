#pragma once

// Umbrella header for the adaptive video evaluator library.

#include "ave/backend.hpp"
#include "ave/dataset.hpp"
#include "ave/errors.hpp"
#include "ave/harness.hpp"
#include "ave/judge.hpp"
#include "ave/matching.hpp"
#include "ave/metrics.hpp"
#include "ave/optimizer.hpp"
#include "ave/taxonomy.hpp"
#include "ave/util.hpp"
