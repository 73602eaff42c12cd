#pragma once

// Umbrella header: mixture return models, tail-risk evaluation and
// optimization, equilibrium blending, data handling, and backtesting.

#include "mixcvar/backtest.hpp"
#include "mixcvar/bl.hpp"
#include "mixcvar/core.hpp"
#include "mixcvar/data.hpp"
#include "mixcvar/distn.hpp"
#include "mixcvar/fit.hpp"
#include "mixcvar/market_data.hpp"
#include "mixcvar/optimize.hpp"
#include "mixcvar/risk.hpp"
#include "mixcvar/rng.hpp"
