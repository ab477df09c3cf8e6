#pragma once

// Umbrella header for the whole library.

#include "fybrr/config.hpp"
#include "fybrr/core.hpp"
#include "fybrr/event_log.hpp"
#include "fybrr/heartbeat.hpp"
#include "fybrr/metrics.hpp"
#include "fybrr/overlay.hpp"
#include "fybrr/scoring.hpp"
#include "fybrr/service.hpp"
#include "fybrr/sim.hpp"
#include "fybrr/wire.hpp"
