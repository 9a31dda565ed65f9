#pragma once
// Umbrella header.

#include "percdf/cli.hpp"
#include "percdf/config.hpp"
#include "percdf/data.hpp"
#include "percdf/memscale.hpp"
#include "percdf/metrics.hpp"
#include "percdf/model.hpp"
#include "percdf/svg.hpp"
#include "percdf/training.hpp"
