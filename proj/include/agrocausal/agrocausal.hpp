#pragma once

#include "agrocausal/agro_rules.hpp"
#include "agrocausal/causal_graph.hpp"
#include "agrocausal/csv.hpp"
#include "agrocausal/dataset.hpp"
#include "agrocausal/date.hpp"
#include "agrocausal/error.hpp"
#include "agrocausal/estimators.hpp"
#include "agrocausal/forecast.hpp"
#include "agrocausal/forest.hpp"
#include "agrocausal/inference.hpp"
#include "agrocausal/log.hpp"
#include "agrocausal/pipeline.hpp"
#include "agrocausal/random.hpp"
#include "agrocausal/scm.hpp"
