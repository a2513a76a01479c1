#pragma once

#include "faasmeter/attribution.hpp"
#include "faasmeter/capping.hpp"
#include "faasmeter/disagg.hpp"
#include "faasmeter/error.hpp"
#include "faasmeter/kalman.hpp"
#include "faasmeter/manifest.hpp"
#include "faasmeter/nnls.hpp"
#include "faasmeter/pipeline.hpp"
#include "faasmeter/random.hpp"
#include "faasmeter/scenario.hpp"
#include "faasmeter/signal.hpp"
#include "faasmeter/simulator.hpp"
#include "faasmeter/trace.hpp"
#include "faasmeter/validation.hpp"
