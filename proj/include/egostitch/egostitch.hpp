#pragma once

#include "egostitch/errors.hpp"
#include "egostitch/core.hpp"
#include "egostitch/chunking.hpp"
#include "egostitch/parallel.hpp"
#include "egostitch/ingest.hpp"
#include "egostitch/dynamic_prior.hpp"
#include "egostitch/token_gate.hpp"
#include "egostitch/kdtree.hpp"
#include "egostitch/stitcher.hpp"
#include "egostitch/metrics.hpp"
#include "egostitch/synth.hpp"
#include "egostitch/pipeline.hpp"
