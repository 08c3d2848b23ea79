#pragma once

#include "fier/baselines.hpp"
#include "fier/core.hpp"
#include "fier/evalharness.hpp"
#include "fier/half.hpp"
#include "fier/io.hpp"
#include "fier/quant1bit.hpp"
#include "fier/retrieval.hpp"
#include "fier/workload.hpp"
