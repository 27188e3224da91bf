#pragma once

#include "bevloc/error.hpp"
#include "bevloc/raster.hpp"
#include "bevloc/image_io.hpp"
#include "bevloc/homography.hpp"
#include "bevloc/geometry.hpp"
#include "bevloc/georef.hpp"
#include "bevloc/correlation.hpp"
#include "bevloc/estimator.hpp"
#include "bevloc/losses_metrics.hpp"
#include "bevloc/synth.hpp"
#include "bevloc/bench.hpp"
