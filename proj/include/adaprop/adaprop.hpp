#pragma once

#include "adaprop/baselines.hpp"
#include "adaprop/common.hpp"
#include "adaprop/config.hpp"
#include "adaprop/diagnostics.hpp"
#include "adaprop/evaluator.hpp"
#include "adaprop/kg.hpp"
#include "adaprop/model.hpp"
#include "adaprop/optim.hpp"
#include "adaprop/propagation.hpp"
#include "adaprop/rng.hpp"
#include "adaprop/sampler.hpp"
#include "adaprop/tape.hpp"
#include "adaprop/trainer.hpp"
