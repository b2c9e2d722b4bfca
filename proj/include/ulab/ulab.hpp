#pragma once

// Umbrella header for the unlearning laboratory.

#include "ulab/adapters.hpp"
#include "ulab/checkpoint.hpp"
#include "ulab/common.hpp"
#include "ulab/corpus.hpp"
#include "ulab/fisher.hpp"
#include "ulab/harness.hpp"
#include "ulab/matrix.hpp"
#include "ulab/metrics.hpp"
#include "ulab/model.hpp"
#include "ulab/objectives.hpp"
#include "ulab/rng.hpp"
#include "ulab/svd.hpp"
#include "ulab/threading.hpp"
#include "ulab/types.hpp"
