#pragma once

// Umbrella header for the whole library.
#include "sawsps/analysis.hpp"
#include "sawsps/cascade.hpp"
#include "sawsps/config.hpp"
#include "sawsps/core.hpp"
#include "sawsps/detector.hpp"
#include "sawsps/emitter.hpp"
#include "sawsps/parallel.hpp"
#include "sawsps/random.hpp"
#include "sawsps/scenario.hpp"
#include "sawsps/transport.hpp"
