#pragma once

// Umbrella header.

#include "numerics.hpp"
#include "dataset.hpp"
#include "models.hpp"
#include "heterogeneity.hpp"
#include "analysis.hpp"
#include "report.hpp"
