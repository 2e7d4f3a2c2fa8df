#pragma once

#include "mfbalance/balancing.hpp"
#include "mfbalance/error.hpp"
#include "mfbalance/fractal_analysis.hpp"
#include "mfbalance/ids_core.hpp"
#include "mfbalance/metrics.hpp"
#include "mfbalance/node_model.hpp"
#include "mfbalance/rng.hpp"
#include "mfbalance/sim_engine.hpp"
#include "mfbalance/traffic_model.hpp"
#include "mfbalance/types.hpp"
