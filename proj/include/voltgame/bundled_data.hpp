#pragma once

#include <string_view>

namespace voltgame {

/// Text of the bundled five-bus network file. The copy shipped at
/// data/five_bus.network is byte-identical; tests enforce that.
inline constexpr std::string_view five_bus_network_text =
    R"(# PJM-style 5-bus transmission test system at 230 kV.
# Impedances in per unit on the system MVA base.

base_mva = 100
base_kv = 230

# bus = <id> <type: slack|pq> [v_set p.u., slack only]
bus = 1 slack 0.98
bus = 2 pq
bus = 3 pq
bus = 4 pq
bus = 5 pq

# line = <from> <to> <r> <x> <b>
line = 1 2 0.00281 0.0281 0.00712
line = 1 4 0.00304 0.0304 0.00658
line = 1 5 0.00064 0.0064 0.03126
line = 2 3 0.00108 0.0108 0.01852
line = 3 4 0.00297 0.0297 0.00674
line = 4 5 0.00297 0.0297 0.00674
)";

/// Text of the bundled five-bus scenario. data/five_bus.scenario is
/// byte-identical; tests enforce that.
inline constexpr std::string_view five_bus_scenario_text =
    R"(# Reactive power procurement on the bundled five-bus network.
# Heavy active load sags two buses below the 0.96 p.u. lower bound; the
# incentive controller steers all four DSO buses back into the secure band.
# Mid-run, DSO 1's injection capacity is cut to 0.40 p.u. (40 MVar on the
# 100 MVA base); the remaining DSOs take over the voltage support and the
# payments redistribute accordingly.

[network]
file = five_bus.network

[loads]
# active power demand (p.u.) per non-slack bus, in bus-id order: 2 3 4 5
p = 7.0 4.6 2.6 2.4

[dsos]
# dso = <bus> <cost|rand> <q_min> <q_max>
dso = 2 rand -3.0 3.0
dso = 3 rand -3.0 3.0
dso = 4 rand -3.0 3.0
dso = 5 rand -3.0 3.0
cost_range = 0.2 0.8

[incentive]
gamma = 6.0
rho = 1.0e5
v_lo = 0.96
v_hi = 1.04
v_ref_init = 1.0

[inner]
eta = 1.0e-3
# slow geometric decay keeps the post-disturbance warm restarts feasible
sigma = geometric 1.0e-3 0.999 1.0e-6
max_inner = 60000

[outer]
# decaying step freezes the incentive once the band is recovered
epsilon = harmonic 1.0e-4 300
iterations = 420
grad_tol = 1.0e-6

[disturbances]
# disturbance = <at_outer_iter> <dso index, 1-based> <new_q_min> <new_q_max>
disturbance = 180 1 -0.40 3.0

[run]
mode = feedback
seed = 153
threads = 1
)";

}  // namespace voltgame
