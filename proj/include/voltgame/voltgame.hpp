#pragma once

// Umbrella header for the voltgame library: a simulator and solver for
// reactive power procurement as a single-leader multi-follower game between
// a transmission operator and distribution operators, closed in feedback
// over an AC power flow plant.

#include "voltgame/bundled_data.hpp"
#include "voltgame/dso_agents.hpp"
#include "voltgame/errors.hpp"
#include "voltgame/grid_model.hpp"
#include "voltgame/oracles.hpp"
#include "voltgame/orchestrator.hpp"
#include "voltgame/parallel.hpp"
#include "voltgame/scenario.hpp"
#include "voltgame/schedule.hpp"
#include "voltgame/trace_io.hpp"
#include "voltgame/tso_controller.hpp"
