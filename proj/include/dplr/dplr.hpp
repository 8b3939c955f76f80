#pragma once

#include "dplr/common.hpp"
#include "dplr/dataset.hpp"
#include "dplr/distributions.hpp"
#include "dplr/features.hpp"
#include "dplr/hilr.hpp"
#include "dplr/ilr.hpp"
#include "dplr/mathutils.hpp"
#include "dplr/metrics.hpp"
#include "dplr/random.hpp"
#include "dplr/serialize.hpp"
