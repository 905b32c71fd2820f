#pragma once

#include "fibag/error.hpp"
#include "fibag/numeric.hpp"
#include "fibag/quadrature.hpp"
#include "fibag/parallel.hpp"
#include "fibag/data_model.hpp"
#include "fibag/gp_mechanistic.hpp"
#include "fibag/calibration.hpp"
#include "fibag/cbvs.hpp"
#include "fibag/selection_fdr.hpp"
#include "fibag/sim_bench.hpp"
#include "fibag/report.hpp"
