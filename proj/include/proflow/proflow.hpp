#pragma once

#include "proflow/checks.hpp"
#include "proflow/core.hpp"
#include "proflow/data.hpp"
#include "proflow/evaluation.hpp"
#include "proflow/experiment.hpp"
#include "proflow/mala.hpp"
#include "proflow/model.hpp"
#include "proflow/particle_sampler.hpp"
#include "proflow/prior.hpp"
#include "proflow/scoring.hpp"
