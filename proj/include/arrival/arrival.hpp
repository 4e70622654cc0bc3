#pragma once

/// Umbrella header for the library. The command layer (arrival/cli.hpp)
/// is not included; it needs the vendored json.hpp.

#include "arrival/analytic.hpp"
#include "arrival/detection.hpp"
#include "arrival/flow.hpp"
#include "arrival/parallel.hpp"
#include "arrival/quadrature.hpp"
#include "arrival/spacetime.hpp"
#include "arrival/special.hpp"
#include "arrival/verify.hpp"
#include "arrival/wavepacket.hpp"
